"""Command line front end: fit, train, account, report, schedule-dump.

Exit codes: 0 on success, 2 for configuration problems (including usage
errors), 3 for runtime failures.  Outputs land in the --out directory (or the
config's out_dir) with fixed names, so a train directory doubles as the
bundle consumed by report.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

from .accountant import AccountantConfig, final_report, read_ledgers, write_ledgers
from .config import GridConfig, RunConfig, parse_config
from .curvefit import (FitResult, GridSpec, ProxySimConfig, curve_samples, fit_quadratic,
                       iqr_filter, monotone_project, read_fit, select_optimal,
                       simulate_grid, write_fit, write_matrix_csv)
from .data import LocalDataset, gen_synthetic, load_csv, partition_noniid
from .errors import CalibrationError, ConfigError, FitError, SimulationError
from .federation import (BudgetClipPolicy, FederationConfig, FixedClipPolicy,
                         QuantileClipPolicy, communication_report, make_clients,
                         run_training)
from .models import ModelSpec
from .reporting import fmt9, read_history_csv, write_history_csv, write_json
from .schedule import ScheduleParams, round_scale

__all__ = ["main"]


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _build_dataset(cfg: RunConfig) -> LocalDataset:
    recipe = cfg.dataset
    if recipe.task == "csv":
        data = load_csv(recipe.path)
        _check_data_matches_model(cfg.model, data)
        if cfg.num_clients > len(data):
            raise ConfigError(
                f"federation.num_clients: must be <= loaded dataset size {len(data)}")
        return data
    return gen_synthetic(recipe.task, recipe.n, recipe.feature_dim, recipe.seed)


def _check_data_matches_model(model: ModelSpec, data: LocalDataset) -> None:
    if model.kind == "quadratic":
        return
    problems = []
    if data.feature_dim != model.input_dim:
        problems.append(
            f"model.input_dim: dataset has width {data.feature_dim}, got {model.input_dim}")
    if data.is_classification:
        k = 2 if model.kind == "logistic-binary" else model.num_classes
        if model.kind != "linear-regression" and data.labels.max() >= k:
            problems.append(
                f"model.num_classes: dataset uses labels up to {int(data.labels.max())}")
    if problems:
        raise ConfigError(problems)


def _build_policy(cfg: RunConfig, fit_path: str | None):
    policy = cfg.policy
    if policy.kind == "fixed":
        return FixedClipPolicy(policy.clip)
    if policy.kind == "quantile":
        return QuantileClipPolicy(policy.target_quantile, policy.clip_init,
                                  policy.quantile_lr)
    path = fit_path or policy.fit_file
    if not path:
        raise ConfigError(
            "policy.fit_file: the pacdp policy needs a fit file (or pass --fit)")
    fit = read_fit(path)
    schedule = ScheduleParams(total_rounds=cfg.rounds, plateau_frac=cfg.plateau_frac,
                              floor=cfg.floor)
    return BudgetClipPolicy(fit, schedule)


def cmd_fit(cfg: RunConfig) -> int:
    """Grid-simulate the proxy, select per-budget clips, fit the quadratic."""
    if cfg.grid is None:
        raise ConfigError("grid: section is required for the fit command")
    grid_cfg: GridConfig = cfg.grid
    if cfg.model.kind == "quadratic":
        raise ConfigError("model.kind: grid fitting needs a classification model")
    if grid_cfg.proxy_dim != cfg.model.input_dim:
        raise ConfigError(
            f"grid.proxy_dim: must match model.input_dim ({cfg.model.input_dim})")
    out = _ensure_out(cfg.out_dir)
    proxy = gen_synthetic(grid_cfg.proxy_task, grid_cfg.proxy_n, grid_cfg.proxy_dim,
                          grid_cfg.proxy_seed)
    spec = GridSpec(
        eps_values=grid_cfg.eps_values,
        clip_values=grid_cfg.clip_values,
        sim=ProxySimConfig(
            model=cfg.model, rounds=grid_cfg.rounds, num_clients=grid_cfg.num_clients,
            sample_size=grid_cfg.sample_size, local_steps=grid_cfg.local_steps,
            batch_size=grid_cfg.batch_size, learning_rate=grid_cfg.learning_rate,
            seeds_per_cell=grid_cfg.seeds_per_cell, partition_skew=grid_cfg.partition_skew,
            delta=cfg.delta, master_seed=cfg.master_seed,
            eval_fraction=grid_cfg.eval_fraction))
    matrix = simulate_grid(proxy, spec)
    selected = select_optimal(matrix)
    kept, skipped = iqr_filter(selected)
    fit = fit_quadratic(
        kept, clamp_floor=min(grid_cfg.clip_values),
        provenance={
            "selected": [[e, c] for e, c in selected],
            "iqr_skipped": skipped,
            "master_seed": cfg.master_seed,
            "seeds_per_cell": grid_cfg.seeds_per_cell,
            "failed_cells": matrix.provenance["failed_cells"],
        })
    if grid_cfg.monotone:
        fit = monotone_project(fit, (min(grid_cfg.eps_values), max(grid_cfg.eps_values)))
    write_matrix_csv(matrix, os.path.join(out, "matrix.csv"))
    write_fit(fit, os.path.join(out, "fit.json"))
    print(f"fit: alpha={fmt9(fit.alpha)} beta={fmt9(fit.beta)} gamma={fmt9(fit.gamma)} "
          f"r2={fmt9(fit.r2)} support={len(fit.support)} iqr_skipped={skipped}")
    return 0


def cmd_train(cfg: RunConfig, fit_path: str | None) -> int:
    """Run federated training and write history, ledger, and summary files."""
    out = _ensure_out(cfg.out_dir)
    policy = _build_policy(cfg, fit_path)
    data = _build_dataset(cfg)
    shards = partition_noniid(data, cfg.num_clients, cfg.dataset.partition_skew,
                              cfg.master_seed)
    fed = FederationConfig(
        model=cfg.model, num_clients=cfg.num_clients, sample_size=cfg.sample_size,
        rounds=cfg.rounds, local_steps=cfg.local_steps, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, delta=cfg.delta, master_seed=cfg.master_seed,
        renormalize_weights=cfg.renormalize_weights)
    acct = AccountantConfig(alphas=cfg.alphas, delta=cfg.delta)
    clients = make_clients(shards, list(cfg.budgets), fed, acct)
    result = run_training(fed, clients, policy)
    report = final_report(result.ledgers, acct)
    comm = communication_report(result.history)

    write_history_csv(result.history, os.path.join(out, "history.csv"))
    write_ledgers(result.ledgers, os.path.join(out, "ledger.csv"))
    if isinstance(policy, BudgetClipPolicy):
        write_fit(policy.fit, os.path.join(out, "fit_used.json"))
    last = result.history[-1]
    summary = {
        "rounds": cfg.rounds,
        "num_clients": cfg.num_clients,
        "sample_size": cfg.sample_size,
        "master_seed": cfg.master_seed,
        "policy": {"kind": cfg.policy.kind},
        "final_loss": last.loss,
        "final_accuracy": last.accuracy,
        "privacy": {
            "delta": cfg.delta,
            "eps_min": report.eps_min,
            "eps_median": report.eps_median,
            "eps_max": report.eps_max,
            "per_client": [
                {"client_id": c.client_id, "epsilon": c.epsilon,
                 "alpha_star": c.alpha_star}
                for c in report.clients],
        },
        "communication": {
            "total_messages": comm.total_messages,
            "total_floats": comm.total_floats,
            "mean_messages_per_round": comm.mean_messages_per_round,
            "mean_floats_per_round": comm.mean_floats_per_round,
        },
    }
    write_json(summary, os.path.join(out, "summary.json"))
    print(f"train: rounds={cfg.rounds} final_loss={fmt9(last.loss)} "
          f"final_accuracy={fmt9(last.accuracy)} eps_max={fmt9(report.eps_max)}")
    return 0


def cmd_account(ledger_path: str, delta: float, alphas: tuple[int, ...],
                out_dir: str | None) -> int:
    """Account a ledger file: per-client epsilon table plus min/median/max footer."""
    if not os.path.exists(ledger_path):
        raise FileNotFoundError(f"ledger file not found: {ledger_path}")
    ledgers = read_ledgers(ledger_path)
    lines = ["client_id,epsilon,alpha_star"]
    if not ledgers:
        print("warning: ledger file is empty; nothing to account", file=sys.stderr)
    else:
        report = final_report(ledgers, AccountantConfig(alphas=alphas, delta=delta))
        for c in report.clients:
            lines.append(f"{c.client_id},{fmt9(c.epsilon)},{c.alpha_star}")
        lines.append(f"min,{fmt9(report.eps_min)},")
        lines.append(f"median,{fmt9(report.eps_median)},")
        lines.append(f"max,{fmt9(report.eps_max)},")
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    if out_dir:
        with open(os.path.join(_ensure_out(out_dir), "accounting.csv"), "w") as fh:
            fh.write(table)
    return 0


def cmd_report(bundle_dir: str) -> int:
    """Consolidate a train bundle into report.json; rereads are idempotent."""
    history_path = os.path.join(bundle_dir, "history.csv")
    summary_path = os.path.join(bundle_dir, "summary.json")
    history = read_history_csv(history_path)
    if not os.path.exists(summary_path):
        raise FileNotFoundError(f"summary file not found: {summary_path}")
    with open(summary_path) as fh:
        summary = json.load(fh)
    payload = {
        "accuracy_vs_round": [[row["round"], row["accuracy"]] for row in history],
        "loss_vs_round": [[row["round"], row["loss"]] for row in history],
        "mean_clip_vs_round": [[row["round"], row["mean_clip"]] for row in history],
        "summary": summary,
        "curve": None,
    }
    fit_path = os.path.join(bundle_dir, "fit_used.json")
    if not os.path.exists(fit_path):
        fit_path = os.path.join(bundle_dir, "fit.json")
    if os.path.exists(fit_path):
        fit = read_fit(fit_path)
        lo = min(e for e, _ in fit.support)
        hi = max(e for e, _ in fit.support)
        payload["curve"] = {
            "coefficients": {"alpha": fit.alpha, "beta": fit.beta, "gamma": fit.gamma},
            "r2": fit.r2,
            "clamp_floor": fit.clamp_floor,
            "support": [[e, c] for e, c in fit.support],
            "samples": [[e, v] for e, v in curve_samples(fit, lo, hi, count=100)],
        }
    out_path = os.path.join(bundle_dir, "report.json")
    write_json(payload, out_path)
    print(f"report: wrote {out_path}")
    return 0


def cmd_schedule_dump(params: ScheduleParams, out_dir: str | None) -> int:
    """Dump the full round-scale table; full precision so it round-trips."""
    lines = ["round,scale"]
    for t in range(params.total_rounds):
        lines.append(f"{t},{repr(round_scale(t, params))}")
    table = "\n".join(lines) + "\n"
    if out_dir:
        with open(os.path.join(_ensure_out(out_dir), "schedule.csv"), "w") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    return 0


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if getattr(args, "delta", None) is not None:
        if not 0.0 < args.delta < 1.0:
            raise ConfigError(f"--delta: must lie in (0, 1), got {args.delta}")
        cfg = dataclasses.replace(cfg, delta=args.delta)
    if getattr(args, "policy", None):
        cfg = dataclasses.replace(
            cfg, policy=dataclasses.replace(cfg.policy, kind=args.policy))
    if getattr(args, "clip", None) is not None:
        if args.clip <= 0:
            raise ConfigError(f"--clip: must be positive, got {args.clip}")
        cfg = dataclasses.replace(
            cfg, policy=dataclasses.replace(cfg.policy, clip=args.clip))
    if cfg.policy.kind == "fixed" and cfg.policy.clip <= 0.0:
        raise ConfigError("policy.clip: required for the fixed policy (or pass --clip)")
    if cfg.policy.kind == "quantile" and cfg.policy.clip_init <= 0.0:
        raise ConfigError("policy.clip_init: required for the quantile policy")
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpfedsim",
        description="Differentially private federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True):
        p.add_argument("--config", required=config_required, help="TOML run config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="override output directory")

    p_fit = sub.add_parser("fit", help="grid-simulate a proxy and fit the budget curve")
    common(p_fit)

    p_train = sub.add_parser("train", help="run federated training")
    common(p_train)
    p_train.add_argument("--fit", default=None, help="fit file for the pacdp policy")
    p_train.add_argument("--policy", choices=("pacdp", "fixed", "quantile"),
                         default=None, help="override the clipping policy")
    p_train.add_argument("--clip", type=float, default=None,
                         help="clip bound for the fixed policy")
    p_train.add_argument("--delta", type=float, default=None, help="override delta")

    p_account = sub.add_parser("account", help="account a ledger file")
    p_account.add_argument("--ledger", required=True, help="ledger CSV to account")
    p_account.add_argument("--delta", type=float, default=1e-5)
    p_account.add_argument("--out", default=None, help="also write accounting.csv here")

    p_report = sub.add_parser("report", help="consolidate a train bundle")
    p_report.add_argument("--out", required=True, help="bundle directory to read and extend")

    p_sched = sub.add_parser("schedule-dump", help="dump the clip scale table")
    p_sched.add_argument("--config", default=None, help="TOML run config")
    p_sched.add_argument("--rounds", type=int, default=None, help="override total rounds")
    p_sched.add_argument("--plateau-frac", type=float, default=None)
    p_sched.add_argument("--floor", type=float, default=None)
    p_sched.add_argument("--out", default=None, help="write schedule.csv here")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "fit":
        return cmd_fit(_load_config(args))
    if args.command == "train":
        return cmd_train(_load_config(args), args.fit)
    if args.command == "account":
        if not 0.0 < args.delta < 1.0:
            raise ConfigError(f"--delta: must lie in (0, 1), got {args.delta}")
        return cmd_account(args.ledger, args.delta, tuple(range(2, 65)), args.out)
    if args.command == "report":
        return cmd_report(args.out)
    if args.command == "schedule-dump":
        rounds, plateau, floor = args.rounds, args.plateau_frac, args.floor
        if args.config:
            cfg = parse_config(args.config)
            rounds = rounds if rounds is not None else cfg.rounds
            plateau = plateau if plateau is not None else cfg.plateau_frac
            floor = floor if floor is not None else cfg.floor
        if rounds is None:
            raise ConfigError("schedule-dump needs --rounds or --config")
        try:
            params = ScheduleParams(total_rounds=rounds,
                                    plateau_frac=plateau if plateau is not None else 0.6,
                                    floor=floor if floor is not None else 0.1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cmd_schedule_dump(params, args.out)
    raise SimulationError(f"unknown command {args.command}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 2
    except (FitError, CalibrationError, SimulationError, FileNotFoundError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
