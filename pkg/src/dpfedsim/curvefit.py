"""Offline budget-to-clip curve: grid simulation, outlier trim, quadratic fit.

The pipeline simulates proxy federated runs over an (epsilon, clip) grid,
picks the best clip per budget row, discards interquartile-range outliers
among those picks, and least-squares fits a quadratic mapping budget to clip
threshold.  Evaluation clamps to a positive floor and can optionally be
projected to a non-decreasing envelope on a budget range.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .accountant import AccountantConfig, calibrate_constant_z
from .data import LocalDataset, partition_noniid
from .errors import FitError
from .federation import FederationConfig, FixedClipPolicy, make_clients, run_training
from .models import ModelSpec, accuracy
from .streams import stream

__all__ = [
    "FitResult",
    "ProxySimConfig",
    "GridSpec",
    "PerformanceMatrix",
    "simulate_grid",
    "select_optimal",
    "iqr_filter",
    "fit_quadratic",
    "evaluate_fit",
    "monotone_project",
    "curve_samples",
    "write_fit",
    "read_fit",
    "write_matrix_csv",
]

FIT_KEYS = {"alpha", "beta", "gamma", "r2", "clamp_floor", "support",
            "monotone_range", "provenance"}


@dataclass(frozen=True)
class FitResult:
    """Quadratic budget-to-clip curve alpha*e^2 + beta*e + gamma with a floor.

    ``support`` holds the (epsilon, clip) pairs the fit was computed from.
    When ``monotone_range`` is set, evaluation inside and above the range
    follows the running maximum of the quadratic from the range start, which
    makes the curve non-decreasing there.
    """

    alpha: float
    beta: float
    gamma: float
    r2: float
    support: tuple[tuple[float, float], ...]
    clamp_floor: float
    monotone_range: tuple[float, float] | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "r2", "clamp_floor"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.clamp_floor <= 0.0:
            raise ValueError("clamp_floor must be positive")

    def _raw(self, eps: float) -> float:
        return self.alpha * eps * eps + self.beta * eps + self.gamma

    def _envelope(self, eps: float) -> float:
        lo, hi = self.monotone_range
        if eps <= lo:
            return self._raw(eps)
        upto = min(eps, hi)
        best = max(self._raw(lo), self._raw(upto))
        if self.alpha < 0.0:
            vertex = -self.beta / (2.0 * self.alpha)
            if lo <= vertex <= upto:
                best = max(best, self._raw(vertex))
        if eps > hi:
            best = max(best, self._raw(eps))
        return best

    def value_at(self, eps: float) -> float:
        """Clip threshold for a budget: quadratic (or its envelope), clamped."""
        if not math.isfinite(eps):
            raise ValueError("eps must be finite")
        raw = self._raw(eps) if self.monotone_range is None else self._envelope(eps)
        return max(raw, self.clamp_floor)


def evaluate_fit(fit: FitResult, eps: float) -> float:
    """Module-level alias of FitResult.value_at."""
    return fit.value_at(eps)


def monotone_project(fit: FitResult, eps_range: tuple[float, float]) -> FitResult:
    """Make the curve non-decreasing on a budget range via its running maximum.

    Returns the fit unchanged when it is already non-decreasing there; the
    quadratic's coefficients are never altered.
    """
    lo, hi = eps_range
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError("eps_range must be a finite (lo, hi) with lo < hi")
    slope_lo = 2.0 * fit.alpha * lo + fit.beta
    slope_hi = 2.0 * fit.alpha * hi + fit.beta
    if slope_lo >= 0.0 and slope_hi >= 0.0:
        return fit
    return dataclasses.replace(fit, monotone_range=(lo, hi))


def curve_samples(fit: FitResult, lo: float, hi: float,
                  count: int = 100) -> list[tuple[float, float]]:
    """Evaluate the curve at ``count`` evenly spaced budgets in [lo, hi]."""
    if count < 2 or not lo < hi:
        raise ValueError("need count >= 2 and lo < hi")
    grid = np.linspace(lo, hi, count)
    return [(float(e), fit.value_at(float(e))) for e in grid]


@dataclass(frozen=True)
class ProxySimConfig:
    """Shape of the proxy federated runs behind each grid cell."""

    model: ModelSpec
    rounds: int
    num_clients: int
    sample_size: int
    local_steps: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    seeds_per_cell: int = 3
    partition_skew: float = 0.0
    delta: float = 1e-5
    master_seed: int = 0
    eval_fraction: float = 0.25

    def __post_init__(self):
        if self.seeds_per_cell < 1:
            raise ValueError("seeds_per_cell must be >= 1")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must lie in (0, 1)")
        # Remaining fields share FederationConfig's constraints; checked there.


@dataclass(frozen=True)
class GridSpec:
    """Budget rows and clip columns of the proxy search grid."""

    eps_values: tuple[float, ...]
    clip_values: tuple[float, ...]
    sim: ProxySimConfig

    def __post_init__(self):
        for name, values, minimum in (("eps_values", self.eps_values, 3),
                                      ("clip_values", self.clip_values, 2)):
            if len(values) < minimum:
                raise ValueError(f"{name} needs at least {minimum} entries")
            if any(not (math.isfinite(v) and v > 0.0) for v in values):
                raise ValueError(f"{name} must be positive and finite")
            if list(values) != sorted(set(values)):
                raise ValueError(f"{name} must be strictly increasing")


@dataclass
class PerformanceMatrix:
    """Seed-averaged proxy accuracy per (budget row, clip column)."""

    eps_values: tuple[float, ...]
    clip_values: tuple[float, ...]
    accuracy: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        expected = (len(self.eps_values), len(self.clip_values))
        if self.accuracy.shape != expected:
            raise ValueError(f"accuracy must have shape {expected}")


def simulate_grid(proxy: LocalDataset, grid: GridSpec) -> PerformanceMatrix:
    """Fill the grid by running the federation engine with a fixed clip per cell.

    The proxy dataset is split once into train and held-out parts; every cell
    trains on seeded non-IID shards of the train part at one (budget, clip)
    and records held-out accuracy, averaged over seeds_per_cell repeats.  The
    noise multiplier for a budget row comes from upfront calibration against
    the cell's expected participation.  Diverged repeats score chance accuracy
    and are listed in the provenance.
    """
    sim = grid.sim
    if not proxy.is_classification:
        raise ValueError("grid simulation needs a classification proxy dataset")
    split_rng = stream(sim.master_seed, "grid", "split")
    perm = split_rng.permutation(len(proxy))
    n_eval = max(1, int(sim.eval_fraction * len(proxy)))
    if len(proxy) - n_eval < sim.num_clients:
        raise ValueError("proxy dataset too small for the requested client count")
    eval_part = proxy.subset(np.sort(perm[:n_eval]))
    train_part = proxy.subset(np.sort(perm[n_eval:]))
    chance = 1.0 / len(np.unique(proxy.labels))

    acct = AccountantConfig(delta=sim.delta)
    base = FederationConfig(
        model=sim.model, num_clients=sim.num_clients, sample_size=sim.sample_size,
        rounds=sim.rounds, local_steps=sim.local_steps, batch_size=sim.batch_size,
        learning_rate=sim.learning_rate, delta=sim.delta, master_seed=sim.master_seed)
    z_by_eps = {}
    for eps in grid.eps_values:
        z_by_eps[eps] = calibrate_constant_z(
            eps, math.ceil(sim.rounds * sim.sample_size / sim.num_clients),
            sim.local_steps, acct)

    shards, budgets_rng = [], stream(sim.master_seed, "grid", "partition")
    for s in range(sim.seeds_per_cell):
        part_seed = int(budgets_rng.integers(2 ** 62))
        shards.append(partition_noniid(train_part, sim.num_clients,
                                       sim.partition_skew, part_seed))

    n, m = len(grid.eps_values), len(grid.clip_values)
    matrix = np.zeros((n, m))
    failed: list[list[int]] = []
    seed_rng = stream(sim.master_seed, "grid", "cell-seeds")
    cell_seeds = seed_rng.integers(2 ** 62, size=(n, m, sim.seeds_per_cell))
    for i, eps in enumerate(grid.eps_values):
        for j, clip in enumerate(grid.clip_values):
            scores = []
            for s in range(sim.seeds_per_cell):
                config = dataclasses.replace(base, master_seed=int(cell_seeds[i, j, s]))
                clients = make_clients(shards[s], [eps] * sim.num_clients, config, acct)
                result = run_training(config, clients, FixedClipPolicy(clip),
                                      eval_data=eval_part)
                if np.all(np.isfinite(result.params)):
                    scores.append(accuracy(sim.model, result.params, eval_part))
                else:
                    scores.append(chance)
                    failed.append([i, j, s])
            matrix[i, j] = float(np.mean(scores))
    return PerformanceMatrix(
        eps_values=grid.eps_values,
        clip_values=grid.clip_values,
        accuracy=matrix,
        provenance={
            "master_seed": sim.master_seed,
            "seeds_per_cell": sim.seeds_per_cell,
            "z_by_eps": {repr(float(e)): z_by_eps[e] for e in grid.eps_values},
            "failed_cells": failed,
        },
    )


def select_optimal(matrix: PerformanceMatrix) -> list[tuple[float, float]]:
    """Best clip per budget row; accuracy ties take the smallest clip."""
    pairs = []
    for i, eps in enumerate(matrix.eps_values):
        j = int(np.argmax(matrix.accuracy[i]))
        pairs.append((float(eps), float(matrix.clip_values[j])))
    return pairs


def iqr_filter(pairs: list[tuple[float, float]],
               factor: float = 1.5) -> tuple[list[tuple[float, float]], bool]:
    """Drop pairs whose clip lies outside the IQR fence; order is preserved.

    Quartiles use linear interpolation.  If fewer than 3 pairs would survive
    while at least one was dropped, filtering is skipped and the second return
    value flags it.
    """
    if not pairs:
        raise ValueError("iqr_filter needs at least one pair")
    clips = np.array([c for _, c in pairs], dtype=np.float64)
    q1, q3 = np.percentile(clips, [25.0, 75.0])
    iqr = q3 - q1
    lo, hi = q1 - factor * iqr, q3 + factor * iqr
    kept = [(e, c) for e, c in pairs if lo <= c <= hi]
    if len(kept) < 3 and len(kept) < len(pairs):
        return list(pairs), True
    return kept, False


def fit_quadratic(pairs: list[tuple[float, float]],
                  clamp_floor: float | None = None,
                  provenance: dict | None = None) -> FitResult:
    """Least-squares quadratic through (budget, clip) pairs.

    Needs at least 3 pairs over at least 3 distinct budgets and positive clip
    values.  ``clamp_floor`` defaults to the smallest clip in the support.
    """
    if len(pairs) < 3:
        raise FitError(f"need at least 3 support pairs, got {len(pairs)}")
    eps = np.array([e for e, _ in pairs], dtype=np.float64)
    clips = np.array([c for _, c in pairs], dtype=np.float64)
    if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(clips))):
        raise FitError("support pairs must be finite")
    if np.any(clips <= 0.0):
        raise FitError("support clip values must be positive")
    if len(np.unique(eps)) < 3:
        raise FitError("need at least 3 distinct budgets to fit a quadratic")
    design = np.stack([eps ** 2, eps, np.ones_like(eps)], axis=1)
    coeffs, _, rank, _ = np.linalg.lstsq(design, clips, rcond=None)
    if rank < 3:
        raise FitError(
            f"design matrix is rank deficient (rank {rank}, condition "
            f"{np.linalg.cond(design):.3e}); budgets are too close together")
    pred = design @ coeffs
    ss_res = float(np.sum((clips - pred) ** 2))
    ss_tot = float(np.sum((clips - clips.mean()) ** 2))
    # Constant support data: ss_tot is float noise and the fit is exact.
    if ss_tot <= 1e-12 * max(1.0, float(np.sum(clips ** 2))):
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    floor = float(clips.min()) if clamp_floor is None else float(clamp_floor)
    if floor <= 0.0:
        raise FitError("clamp_floor must be positive")
    return FitResult(
        alpha=float(coeffs[0]), beta=float(coeffs[1]), gamma=float(coeffs[2]),
        r2=r2, support=tuple((float(e), float(c)) for e, c in pairs),
        clamp_floor=floor, provenance=dict(provenance or {}))


def write_fit(fit: FitResult, path: str) -> None:
    """Serialize a fit as JSON with full float precision."""
    payload = {
        "alpha": fit.alpha,
        "beta": fit.beta,
        "gamma": fit.gamma,
        "r2": fit.r2,
        "clamp_floor": fit.clamp_floor,
        "support": [[e, c] for e, c in fit.support],
        "monotone_range": list(fit.monotone_range) if fit.monotone_range else None,
        "provenance": fit.provenance,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fit(path: str) -> FitResult:
    """Parse a fit file written by write_fit; unknown keys are rejected."""
    with open(path) as fh:
        payload = json.load(fh)
    if set(payload) != FIT_KEYS:
        unexpected = sorted(set(payload) ^ FIT_KEYS)
        raise ValueError(f"{path}: fit file keys mismatch ({', '.join(unexpected)})")
    rng = payload["monotone_range"]
    return FitResult(
        alpha=float(payload["alpha"]), beta=float(payload["beta"]),
        gamma=float(payload["gamma"]), r2=float(payload["r2"]),
        support=tuple((float(e), float(c)) for e, c in payload["support"]),
        clamp_floor=float(payload["clamp_floor"]),
        monotone_range=tuple(float(v) for v in rng) if rng is not None else None,
        provenance=payload["provenance"],
    )


def write_matrix_csv(matrix: PerformanceMatrix, path: str) -> None:
    """Write the grid as CSV: one row per budget, one column per clip value."""
    from .reporting import fmt9
    with open(path, "w", newline="") as fh:
        header = ["eps"] + [fmt9(c) for c in matrix.clip_values]
        fh.write(",".join(header) + "\n")
        for i, eps in enumerate(matrix.eps_values):
            row = [fmt9(eps)] + [fmt9(v) for v in matrix.accuracy[i]]
            fh.write(",".join(row) + "\n")
