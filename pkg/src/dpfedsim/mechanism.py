"""Record-level Gaussian mechanism: clip, average, perturb.

Each per-example gradient is shrunk to norm at most C, the minibatch is
averaged, and isotropic Gaussian noise with per-coordinate scale z * C / B is
added.  Noise is calibrated to sensitivity C / B, the change from adding or
removing one record's clipped contribution to the mean; swapping a record for
an arbitrary one can move the mean by up to 2C / B, which the test suite
verifies by brute force.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

__all__ = [
    "NoiseSpec",
    "clip_to_norm",
    "average_clipped",
    "gaussian_perturb",
    "sensitivity",
    "z_from_epsilon",
    "epsilon_from_z",
]

# The classical Gaussian-mechanism calibration below is only valid for
# delta < 1/e.
DELTA_MAX = 1.0 / math.e


@dataclass(frozen=True)
class NoiseSpec:
    """Noise multiplier z, clip bound, and batch size of one noised step."""

    z: float
    clip: float
    batch_size: int

    def __post_init__(self):
        if not (math.isfinite(self.z) and self.z > 0.0):
            raise ValueError("z must be positive and finite")
        if not (math.isfinite(self.clip) and self.clip > 0.0):
            raise ValueError("clip must be positive and finite")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def std(self) -> float:
        """Per-coordinate noise scale z * C / B."""
        return self.z * self.clip / self.batch_size


def clip_to_norm(grad: np.ndarray, clip: float) -> np.ndarray:
    """Scale a vector by min(1, clip / ||grad||); the zero vector passes through."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient must be finite")
    if not (math.isfinite(clip) and clip > 0.0):
        raise ValueError("clip must be positive and finite")
    norm = float(np.linalg.norm(grad))
    if norm <= clip:
        return grad.copy()
    return grad * (clip / norm)


def average_clipped(grads: np.ndarray, clip: float) -> np.ndarray:
    """Clip each row of a (B, d) stack to norm <= clip and return the mean."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] < 1:
        raise ValueError("grads must be a non-empty (B, d) array")
    if not np.all(np.isfinite(grads)):
        raise ValueError("gradients must be finite")
    if not (math.isfinite(clip) and clip > 0.0):
        raise ValueError("clip must be positive and finite")
    norms = np.linalg.norm(grads, axis=1)
    scales = np.ones_like(norms)
    over = norms > clip
    scales[over] = clip / norms[over]
    return (grads * scales[:, None]).mean(axis=0)


def gaussian_perturb(avg_grad: np.ndarray, spec: NoiseSpec,
                     rng: np.random.Generator) -> np.ndarray:
    """Add iid N(0, (z * C / B)^2) noise to each coordinate."""
    avg_grad = np.asarray(avg_grad, dtype=np.float64)
    return avg_grad + rng.normal(0.0, spec.std, size=avg_grad.shape)


def sensitivity(spec: NoiseSpec) -> float:
    """Calibration sensitivity C / B of the clipped minibatch mean."""
    return spec.clip / spec.batch_size


def _gauss_factor(delta: float) -> float:
    if not 0.0 < delta < DELTA_MAX:
        raise ValueError(f"delta must lie in (0, 1/e); got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta))


def z_from_epsilon(epsilon: float, delta: float) -> float:
    """Smallest classical noise multiplier giving a per-step (epsilon, delta) guarantee."""
    if not (math.isfinite(epsilon) and epsilon > 0.0):
        raise ValueError("epsilon must be positive and finite")
    return _gauss_factor(delta) / epsilon


def epsilon_from_z(z: float, delta: float) -> float:
    """Per-step epsilon of a single Gaussian invocation at multiplier z."""
    if not (math.isfinite(z) and z > 0.0):
        raise ValueError("z must be positive and finite")
    return _gauss_factor(delta) / z
