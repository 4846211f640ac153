"""Round-wise clip scaling: plateau, then cosine decay toward a floor.

The scale is exactly 1 for the plateau rounds t < floor(plateau_frac * T) and
then follows half a cosine toward ``floor``.  The floor is the asymptote of
the cosine branch, not a value the last round attains: the decay argument at
t = T - 1 stops short of pi, so the final scale sits strictly above the floor
whenever the decay phase is longer than one round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .curvefit import FitResult

__all__ = ["ScheduleParams", "decay_start", "round_scale", "clip_bound"]


@dataclass(frozen=True)
class ScheduleParams:
    """Total rounds, plateau fraction, and the decay floor in (0, 1]."""

    total_rounds: int
    plateau_frac: float = 0.6
    floor: float = 0.1

    def __post_init__(self):
        if self.total_rounds < 1:
            raise ValueError("total_rounds must be >= 1")
        if not 0.0 < self.plateau_frac < 1.0:
            raise ValueError("plateau_frac must lie in (0, 1)")
        if not 0.0 < self.floor <= 1.0:
            raise ValueError("floor must lie in (0, 1]")


def decay_start(params: ScheduleParams) -> int:
    """First round of the cosine phase: floor(plateau_frac * total_rounds)."""
    return int(math.floor(params.plateau_frac * params.total_rounds))


def round_scale(t: int, params: ScheduleParams) -> float:
    """Clip scale for round t, exactly 1.0 on the plateau, in [floor, 1] after."""
    if not 0 <= t < params.total_rounds:
        raise ValueError(f"round {t} outside [0, {params.total_rounds})")
    start = decay_start(params)
    if t < start:
        return 1.0
    span = params.total_rounds - start
    phase = math.pi * (t - start) / span
    return params.floor + (1.0 - params.floor) * (1.0 + math.cos(phase)) / 2.0


def clip_bound(eps_target: float, t: int, fit: "FitResult",
               params: ScheduleParams) -> float:
    """Per-round clip bound: fitted per-budget threshold times the round scale.

    Depends only on the budget, the round index, and the frozen fit, never on
    the data seen during the run.
    """
    bound = fit.value_at(eps_target) * round_scale(t, params)
    if not (math.isfinite(bound) and bound > 0.0):
        raise ValueError(f"clip bound must be positive and finite, got {bound}")
    return bound
