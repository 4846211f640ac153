#!/usr/bin/env python3
"""Compare clipping policies on a non-IID logistic federation.

Fits a budget curve on a synthetic proxy, then trains the same client
population under the budget-aware policy, every fixed clip from the grid,
and a quantile tracker, reporting seed-averaged final accuracy.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from dpfedsim.config import assign_budgets
from dpfedsim.curvefit import (GridSpec, ProxySimConfig, fit_quadratic,
                               iqr_filter, monotone_project, select_optimal,
                               simulate_grid)
from dpfedsim.data import gen_synthetic, partition_noniid
from dpfedsim.federation import (BudgetClipPolicy, FederationConfig,
                                 FixedClipPolicy, QuantileClipPolicy,
                                 make_clients, run_training)
from dpfedsim.models import ModelSpec, accuracy
from dpfedsim.schedule import ScheduleParams

CLIPS = (0.05, 0.2, 0.8, 3.2)
EPS_GRID = (0.5, 1.0, 2.0, 3.5, 5.0)


def fit_curve(model: ModelSpec, dim: int, batch: int, lr: float, rounds: int):
    proxy = gen_synthetic("gauss-blobs", 800, dim, seed=77)
    sim = ProxySimConfig(model=model, rounds=rounds, num_clients=20,
                         sample_size=10, local_steps=1, batch_size=batch,
                         learning_rate=lr, seeds_per_cell=3,
                         partition_skew=0.3, master_seed=404)
    perf = simulate_grid(proxy, GridSpec(EPS_GRID, CLIPS, sim))
    kept, _ = iqr_filter(select_optimal(perf))
    fit = fit_quadratic(kept, clamp_floor=min(CLIPS))
    return monotone_project(fit, (min(EPS_GRID), max(EPS_GRID)))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--rounds", type=int, default=30)
    parser.add_argument("--dim", type=int, default=8)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--lr", type=float, default=0.5)
    args = parser.parse_args()

    t0 = time.time()
    model = ModelSpec("logistic-binary", input_dim=args.dim)
    fit = fit_curve(model, args.dim, args.batch, args.lr, args.rounds)
    print(f"fitted curve: {fit.alpha:+.4f} e^2 {fit.beta:+.4f} e "
          f"{fit.gamma:+.4f}  (r2 {fit.r2:.3f})")
    for eps in EPS_GRID:
        print(f"  clip({eps}) = {fit.value_at(eps):.4f}")

    budgets = assign_budgets((0.5, 1.5, 5.0), (0.6, 0.3, 0.1), 20)
    schedule = ScheduleParams(total_rounds=args.rounds)
    policies = {
        "pacdp": lambda: BudgetClipPolicy(fit, schedule),
        "quantile": lambda: QuantileClipPolicy(target_quantile=0.5,
                                               clip_init=0.5, lr=0.2),
    }
    for clip in CLIPS:
        policies[f"fixed-{clip}"] = (lambda c: lambda: FixedClipPolicy(c))(clip)

    finals = {name: [] for name in policies}
    for s in range(args.seeds):
        data = gen_synthetic("gauss-blobs", 800, args.dim, seed=1000 + s)
        shards = partition_noniid(data, 20, 0.3, seed=2000 + s)
        eval_data = gen_synthetic("gauss-blobs", 1000, args.dim, seed=9000 + s)
        config = FederationConfig(model=model, num_clients=20, sample_size=10,
                                  rounds=args.rounds, local_steps=1,
                                  batch_size=args.batch, learning_rate=args.lr,
                                  master_seed=3000 + s)
        for name, make in policies.items():
            clients = make_clients(shards, list(budgets), config)
            result = run_training(config, clients, make(), eval_data=eval_data)
            finals[name].append(accuracy(model, result.params, eval_data))

    print(f"\nfinal accuracy over {args.seeds} seeds:")
    for name in sorted(finals, key=lambda n: -float(np.mean(finals[n]))):
        accs = finals[name]
        print(f"  {name:12s} {np.mean(accs):.4f} +- {np.std(accs):.4f}")
    print(f"total {time.time() - t0:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
