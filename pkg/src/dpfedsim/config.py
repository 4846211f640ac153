"""Run configuration: one strict TOML file with nested sections.

Unknown sections or keys, duplicate keys, wrong types, and out-of-range values
are all rejected, and every violation found is reported at once with its
dotted path.  The only silent defaults are the documented ones: schedule
(plateau_frac 0.6, floor 0.1), privacy (delta 1e-5, alpha grid 2..64), and a
handful of structural knobs listed in the README.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import SYNTHETIC_TASKS
from .errors import ConfigError
from .models import MODEL_KINDS, ModelSpec
from .streams import stream

__all__ = [
    "DatasetRecipe",
    "PolicyConfig",
    "GridConfig",
    "RunConfig",
    "parse_config",
    "assign_budgets",
]


@dataclass(frozen=True)
class DatasetRecipe:
    task: str
    n: int = 0
    feature_dim: int = 0
    seed: int = 0
    path: str = ""
    partition_skew: float = 0.0


@dataclass(frozen=True)
class PolicyConfig:
    kind: str
    clip: float = 0.0
    target_quantile: float = 0.0
    clip_init: float = 0.0
    quantile_lr: float = 0.0
    fit_file: str = ""


@dataclass(frozen=True)
class GridConfig:
    eps_values: tuple[float, ...]
    clip_values: tuple[float, ...]
    rounds: int
    num_clients: int
    sample_size: int
    local_steps: int
    batch_size: int
    learning_rate: float
    seeds_per_cell: int
    partition_skew: float
    proxy_task: str
    proxy_n: int
    proxy_dim: int
    proxy_seed: int
    monotone: bool
    eval_fraction: float


@dataclass(frozen=True)
class RunConfig:
    out_dir: str
    master_seed: int
    dataset: DatasetRecipe
    model: ModelSpec
    num_clients: int
    sample_size: int
    rounds: int
    local_steps: int
    batch_size: int
    learning_rate: float
    renormalize_weights: bool
    delta: float
    alphas: tuple[int, ...]
    budgets: tuple[float, ...]
    policy: PolicyConfig
    plateau_frac: float
    floor: float
    grid: GridConfig | None


class _Section:
    """Typed key extraction over one TOML table, accumulating violations."""

    def __init__(self, name: str, table: dict, errors: list[str]):
        self.name = name
        self.table = table
        self.errors = errors
        self.seen: set[str] = set()

    def get(self, key: str, kind, default=None, required: bool = False,
            check=None, describe: str = ""):
        self.seen.add(key)
        if key not in self.table:
            if required:
                self.errors.append(f"{self.name}.{key}: required key is missing")
            return default
        value = self.table[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool):
            self.errors.append(f"{self.name}.{key}: expected an integer, got a boolean")
            return default
        if not isinstance(value, kind):
            self.errors.append(
                f"{self.name}.{key}: expected {kind.__name__}, got {type(value).__name__}")
            return default
        if check is not None and not check(value):
            self.errors.append(f"{self.name}.{key}: {describe}, got {value!r}")
            return default
        return value

    def finish(self):
        for key in sorted(set(self.table) - self.seen):
            self.errors.append(f"{self.name}.{key}: unknown key")


def _positive(v) -> bool:
    return isinstance(v, (int, float)) and math.isfinite(v) and v > 0


def _float_list(section: _Section, key: str, required: bool = False):
    raw = section.get(key, list, required=required)
    if raw is None:
        return None
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not _positive(v):
            section.errors.append(
                f"{section.name}.{key}[{i}]: entries must be positive numbers, got {v!r}")
            return None
        out.append(float(v))
    return tuple(out)


def assign_budgets(levels: tuple[float, ...], proportions: tuple[float, ...],
                   num_clients: int) -> tuple[float, ...]:
    """Per-client budgets from levels and proportions via largest remainder.

    Client order follows the level order: the first block of clients gets
    levels[0], the next block levels[1], and so on.
    """
    exact = [p * num_clients for p in proportions]
    counts = [int(math.floor(x)) for x in exact]
    remainder = num_clients - sum(counts)
    by_frac = sorted(range(len(levels)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in by_frac[:remainder]:
        counts[i] += 1
    budgets: list[float] = []
    for level, count in zip(levels, counts):
        budgets.extend([level] * count)
    return tuple(budgets)


def _parse_dataset(table: dict, errors: list[str]) -> DatasetRecipe:
    sec = _Section("dataset", table, errors)
    task = sec.get("task", str, required=True,
                   check=lambda t: t in SYNTHETIC_TASKS + ("csv",),
                   describe=f"must be one of {SYNTHETIC_TASKS + ('csv',)}")
    skew = sec.get("partition_skew", float, default=0.0,
                   check=lambda v: 0.0 <= v <= 1.0, describe="must lie in [0, 1]")
    if task == "csv":
        path = sec.get("path", str, required=True, default="")
        recipe = DatasetRecipe(task="csv", path=path or "", partition_skew=skew or 0.0)
    else:
        n = sec.get("n", int, required=True, default=1,
                    check=lambda v: v >= 1, describe="must be >= 1")
        dim = sec.get("feature_dim", int, required=True, default=1,
                      check=lambda v: v >= 1, describe="must be >= 1")
        seed = sec.get("seed", int, default=0, check=lambda v: v >= 0,
                       describe="must be >= 0")
        recipe = DatasetRecipe(task=task or "gauss-blobs", n=n or 1,
                               feature_dim=dim or 1, seed=seed or 0,
                               partition_skew=skew or 0.0)
    sec.finish()
    return recipe


def _parse_model(table: dict, errors: list[str], dataset: DatasetRecipe) -> ModelSpec | None:
    sec = _Section("model", table, errors)
    kind = sec.get("kind", str, required=True,
                   check=lambda k: k in MODEL_KINDS,
                   describe=f"must be one of {MODEL_KINDS}")
    spec = None
    if kind == "quadratic":
        dim = sec.get("quad_dim", int, required=True, default=2,
                      check=lambda v: v >= 1, describe="must be >= 1")
        seed = sec.get("quad_seed", int, default=0, check=lambda v: v >= 0,
                       describe="must be >= 0")
        if not errors:
            rng = stream(seed or 0, "quadratic-oracle")
            spec = ModelSpec(kind="quadratic",
                             quad_matrix=np.diag(rng.uniform(0.5, 2.0, size=dim)),
                             quad_linear=rng.standard_normal(dim))
    elif kind is not None:
        dim = sec.get("input_dim", int, required=True, default=1,
                      check=lambda v: v >= 1, describe="must be >= 1")
        classes = sec.get("num_classes", int, default=2,
                          check=lambda v: v >= 2, describe="must be >= 2")
        hidden = sec.get("hidden_dim", int,
                         default=1 if kind == "mlp-1hidden" else 0,
                         check=lambda v: v >= 1, describe="must be >= 1")
        if kind == "mlp-1hidden" and "hidden_dim" not in table:
            errors.append("model.hidden_dim: required key is missing")
        if dataset.task != "csv" and dim is not None and dim != dataset.feature_dim:
            errors.append(
                f"model.input_dim: must match dataset.feature_dim "
                f"({dataset.feature_dim}), got {dim}")
        if not errors:
            spec = ModelSpec(kind=kind, input_dim=dim, num_classes=classes or 2,
                             hidden_dim=hidden or 0)
    sec.finish()
    return spec


def _parse_policy(table: dict, errors: list[str]) -> PolicyConfig:
    sec = _Section("policy", table, errors)
    kind = sec.get("kind", str, required=True,
                   check=lambda k: k in ("pacdp", "fixed", "quantile"),
                   describe="must be one of ('pacdp', 'fixed', 'quantile')")
    clip = sec.get("clip", float, default=0.0, check=_positive, describe="must be positive")
    quantile = sec.get("target_quantile", float, default=0.0,
                       check=lambda v: 0.0 < v < 1.0, describe="must lie in (0, 1)")
    clip_init = sec.get("clip_init", float, default=0.0, check=_positive,
                        describe="must be positive")
    q_lr = sec.get("quantile_lr", float, default=0.0, check=_positive,
                   describe="must be positive")
    fit_file = sec.get("fit_file", str, default="")
    if kind == "fixed" and "clip" not in table:
        errors.append("policy.clip: required for the fixed policy")
    if kind == "quantile":
        for key in ("target_quantile", "clip_init", "quantile_lr"):
            if key not in table:
                errors.append(f"policy.{key}: required for the quantile policy")
    sec.finish()
    return PolicyConfig(kind=kind or "fixed", clip=clip or 0.0,
                        target_quantile=quantile or 0.0, clip_init=clip_init or 0.0,
                        quantile_lr=q_lr or 0.0, fit_file=fit_file or "")


def _parse_grid(table: dict, errors: list[str]) -> GridConfig | None:
    sec = _Section("grid", table, errors)
    eps_values = _float_list(sec, "eps_values", required=True)
    clip_values = _float_list(sec, "clip_values", required=True)
    for name, values, minimum in (("eps_values", eps_values, 3),
                                  ("clip_values", clip_values, 2)):
        if values is not None:
            if len(values) < minimum:
                errors.append(f"grid.{name}: need at least {minimum} entries")
            elif list(values) != sorted(set(values)):
                errors.append(f"grid.{name}: must be strictly increasing")
    rounds = sec.get("rounds", int, required=True, default=1,
                     check=lambda v: v >= 1, describe="must be >= 1")
    n_clients = sec.get("num_clients", int, required=True, default=1,
                        check=lambda v: v >= 1, describe="must be >= 1")
    k = sec.get("sample_size", int, required=True, default=1,
                check=lambda v: v >= 1, describe="must be >= 1")
    steps = sec.get("local_steps", int, default=1, check=lambda v: v >= 1,
                    describe="must be >= 1")
    batch = sec.get("batch_size", int, required=True, default=1,
                    check=lambda v: v >= 1, describe="must be >= 1")
    lr = sec.get("learning_rate", float, required=True, default=0.1,
                 check=_positive, describe="must be positive")
    seeds = sec.get("seeds_per_cell", int, default=3, check=lambda v: v >= 1,
                    describe="must be >= 1")
    skew = sec.get("partition_skew", float, default=0.0,
                   check=lambda v: 0.0 <= v <= 1.0, describe="must lie in [0, 1]")
    task = sec.get("proxy_task", str, required=True,
                   check=lambda t: t in SYNTHETIC_TASKS,
                   describe=f"must be one of {SYNTHETIC_TASKS}")
    proxy_n = sec.get("proxy_n", int, required=True, default=1,
                      check=lambda v: v >= 1, describe="must be >= 1")
    proxy_dim = sec.get("proxy_dim", int, required=True, default=1,
                        check=lambda v: v >= 1, describe="must be >= 1")
    proxy_seed = sec.get("proxy_seed", int, default=0, check=lambda v: v >= 0,
                         describe="must be >= 0")
    monotone = sec.get("monotone", bool, default=False)
    eval_frac = sec.get("eval_fraction", float, default=0.25,
                        check=lambda v: 0.0 < v < 1.0, describe="must lie in (0, 1)")
    if n_clients is not None and k is not None and k > n_clients:
        errors.append("grid.sample_size: must be <= grid.num_clients")
    sec.finish()
    if errors:
        return None
    return GridConfig(
        eps_values=eps_values, clip_values=clip_values, rounds=rounds,
        num_clients=n_clients, sample_size=k, local_steps=steps, batch_size=batch,
        learning_rate=lr, seeds_per_cell=seeds, partition_skew=skew,
        proxy_task=task, proxy_n=proxy_n, proxy_dim=proxy_dim,
        proxy_seed=proxy_seed, monotone=monotone, eval_fraction=eval_frac)


KNOWN_SECTIONS = ("run", "dataset", "model", "federation", "privacy", "policy",
                  "schedule", "grid")


def parse_config(path: str) -> RunConfig:
    """Parse and validate a run configuration file.

    Raises ConfigError carrying the full list of violations; a returned config
    satisfies every structural invariant the modules can check before data is
    materialized.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None

    errors: list[str] = []
    for section in raw:
        if section not in KNOWN_SECTIONS:
            errors.append(f"{section}: unknown section")
    for section in ("dataset", "model", "federation", "privacy", "policy"):
        if section not in raw:
            errors.append(f"{section}: required section is missing")
        elif not isinstance(raw[section], dict):
            errors.append(f"{section}: must be a table")
    if errors:
        raise ConfigError(errors)

    run = _Section("run", raw.get("run", {}), errors)
    out_dir = run.get("out_dir", str, default="out")
    master_seed = run.get("master_seed", int, default=0,
                          check=lambda v: 0 <= v < 2 ** 64,
                          describe="must be an unsigned 64-bit integer")
    run.finish()

    dataset = _parse_dataset(raw["dataset"], errors)
    model = _parse_model(raw["model"], errors, dataset)

    fed = _Section("federation", raw["federation"], errors)
    num_clients = fed.get("num_clients", int, required=True, default=1,
                          check=lambda v: v >= 1, describe="must be >= 1")
    sample_size = fed.get("sample_size", int, required=True, default=1,
                          check=lambda v: v >= 1, describe="must be >= 1")
    rounds = fed.get("rounds", int, required=True, default=1,
                     check=lambda v: v >= 1, describe="must be >= 1")
    local_steps = fed.get("local_steps", int, required=True, default=1,
                          check=lambda v: v >= 1, describe="must be >= 1")
    batch_size = fed.get("batch_size", int, required=True, default=1,
                         check=lambda v: v >= 1, describe="must be >= 1")
    learning_rate = fed.get("learning_rate", float, required=True, default=0.1,
                            check=_positive, describe="must be positive")
    renormalize = fed.get("renormalize_weights", bool, default=True)
    if sample_size is not None and num_clients is not None and sample_size > num_clients:
        errors.append("federation.sample_size: must be <= federation.num_clients")
    if dataset.task != "csv" and num_clients is not None and num_clients > dataset.n:
        errors.append("federation.num_clients: must be <= dataset.n")
    fed.finish()

    priv = _Section("privacy", raw["privacy"], errors)
    delta = priv.get("delta", float, default=1e-5,
                     check=lambda v: 0.0 < v < 1.0, describe="must lie in (0, 1)")
    alpha_min = priv.get("alpha_min", int, default=2, check=lambda v: v >= 2,
                         describe="must be >= 2")
    alpha_max = priv.get("alpha_max", int, default=64, check=lambda v: v >= 2,
                         describe="must be >= 2")
    if alpha_min is not None and alpha_max is not None and alpha_max < alpha_min:
        errors.append("privacy.alpha_max: must be >= privacy.alpha_min")
    explicit = _float_list(priv, "budgets")
    levels = _float_list(priv, "budget_levels")
    proportions = priv.get("budget_proportions", list)
    if (explicit is None) == (levels is None):
        errors.append(
            "privacy: give exactly one of budgets or budget_levels with budget_proportions")
    budgets: tuple[float, ...] = ()
    if explicit is not None:
        if num_clients is not None and len(explicit) != num_clients:
            errors.append(
                f"privacy.budgets: need one entry per client ({num_clients}), "
                f"got {len(explicit)}")
        budgets = explicit
    elif levels is not None:
        if proportions is None:
            errors.append("privacy.budget_proportions: required with budget_levels")
        elif (len(proportions) != len(levels)
              or any(isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 < p <= 1
                     for p in proportions)):
            errors.append(
                "privacy.budget_proportions: must match budget_levels length with "
                "entries in (0, 1]")
        elif abs(sum(proportions) - 1.0) > 1e-9:
            errors.append("privacy.budget_proportions: must sum to 1")
        elif num_clients is not None:
            budgets = assign_budgets(levels, tuple(float(p) for p in proportions),
                                     num_clients)
    priv.finish()

    policy = _parse_policy(raw["policy"], errors)

    sched = _Section("schedule", raw.get("schedule", {}), errors)
    plateau_frac = sched.get("plateau_frac", float, default=0.6,
                             check=lambda v: 0.0 < v < 1.0,
                             describe="must lie in (0, 1)")
    floor = sched.get("floor", float, default=0.1,
                      check=lambda v: 0.0 < v <= 1.0, describe="must lie in (0, 1]")
    sched.finish()

    grid = _parse_grid(raw["grid"], errors) if "grid" in raw else None

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        out_dir=out_dir, master_seed=master_seed, dataset=dataset, model=model,
        num_clients=num_clients, sample_size=sample_size, rounds=rounds,
        local_steps=local_steps, batch_size=batch_size, learning_rate=learning_rate,
        renormalize_weights=renormalize, delta=delta,
        alphas=tuple(range(alpha_min, alpha_max + 1)), budgets=budgets,
        policy=policy, plateau_frac=plateau_frac, floor=floor, grid=grid)
