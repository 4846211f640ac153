import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dpfedsim.mechanism import (DELTA_MAX, NoiseSpec, average_clipped,
                                clip_to_norm, epsilon_from_z, gaussian_perturb,
                                sensitivity, z_from_epsilon)
from dpfedsim.streams import stream


def test_clip_exactness():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = rng.standard_normal(rng.integers(1, 8))
        c = float(rng.uniform(0.01, 5.0))
        clipped = clip_to_norm(g, c)
        norm = np.linalg.norm(g)
        if norm <= c:
            np.testing.assert_array_equal(clipped, g)
        else:
            assert np.linalg.norm(clipped) == pytest.approx(c, rel=1e-12)
            # direction preserved
            cos = np.dot(clipped, g) / (np.linalg.norm(clipped) * norm)
            assert cos == pytest.approx(1.0, abs=1e-12)


def test_clip_zero_vector_passes_through():
    z = np.zeros(4)
    np.testing.assert_array_equal(clip_to_norm(z, 0.5), z)


def test_clip_requires_positive_bound():
    with pytest.raises(ValueError):
        clip_to_norm(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        clip_to_norm(np.ones(3), -1.0)


@settings(max_examples=60, deadline=None)
@given(
    g=hnp.arrays(np.float64, st.integers(1, 6),
                 elements=st.floats(-100, 100, allow_nan=False)),
    c=st.floats(0.01, 50.0),
    s=st.floats(0.01, 20.0),
)
def test_clip_scale_covariance(g, c, s):
    # clip(s*g, s*C) == s * clip(g, C)
    left = clip_to_norm(s * g, s * c)
    right = s * clip_to_norm(g, c)
    np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-12)


def test_clip_norm_never_exceeds_bound():
    rng = np.random.default_rng(7)
    for _ in range(500):
        g = rng.standard_normal(5) * rng.uniform(0.1, 100)
        c = float(rng.uniform(0.01, 3.0))
        assert np.linalg.norm(clip_to_norm(g, c)) <= c * (1 + 1e-12)


def test_average_clipped_matches_loop():
    rng = np.random.default_rng(3)
    grads = rng.standard_normal((9, 4)) * 3.0
    c = 0.8
    expected = np.mean([clip_to_norm(g, c) for g in grads], axis=0)
    np.testing.assert_allclose(average_clipped(grads, c), expected, rtol=1e-12)


def test_replace_one_sensitivity_bound():
    # brute force: replacing one record moves the clipped mean by <= 2C/B
    rng = np.random.default_rng(11)
    c, b = 0.7, 6
    for _ in range(300):
        grads = rng.standard_normal((b, 3)) * rng.uniform(0.1, 10)
        alt = grads.copy()
        alt[rng.integers(b)] = rng.standard_normal(3) * rng.uniform(0.1, 10)
        gap = np.linalg.norm(average_clipped(grads, c) - average_clipped(alt, c))
        assert gap <= 2 * c / b + 1e-12


def test_swap_to_zero_sensitivity_bound():
    # zeroing out one record moves the clipped mean by <= C/B, the
    # calibration constant used by sensitivity()
    rng = np.random.default_rng(12)
    c, b = 0.7, 6
    for _ in range(300):
        grads = rng.standard_normal((b, 3)) * rng.uniform(0.1, 10)
        alt = grads.copy()
        alt[rng.integers(b)] = 0.0
        gap = np.linalg.norm(average_clipped(grads, c) - average_clipped(alt, c))
        assert gap <= c / b + 1e-12
    assert sensitivity(NoiseSpec(z=1.0, clip=c, batch_size=b)) == pytest.approx(
        c / b, rel=1e-15)


def test_noise_spec_std():
    spec = NoiseSpec(z=2.0, clip=0.5, batch_size=4)
    assert spec.std == pytest.approx(2.0 * 0.5 / 4)
    with pytest.raises(ValueError):
        NoiseSpec(z=0.0, clip=0.5, batch_size=4)
    with pytest.raises(ValueError):
        NoiseSpec(z=1.0, clip=-0.5, batch_size=4)
    with pytest.raises(ValueError):
        NoiseSpec(z=1.0, clip=0.5, batch_size=0)


def test_gaussian_perturb_moments():
    spec = NoiseSpec(z=1.5, clip=2.0, batch_size=5)
    rng = stream(42, "noise-test")
    n, d = 100_000, 3
    base = np.zeros(d)
    draws = np.stack([gaussian_perturb(base, spec, rng) for _ in range(n)])
    pooled = draws.ravel()
    assert abs(pooled.mean()) < 4 * spec.std / math.sqrt(pooled.size)
    assert pooled.std() == pytest.approx(spec.std, rel=0.02)


def test_gaussian_perturb_deterministic_given_stream():
    spec = NoiseSpec(z=1.0, clip=1.0, batch_size=2)
    a = gaussian_perturb(np.ones(4), spec, stream(5, "x"))
    b = gaussian_perturb(np.ones(4), spec, stream(5, "x"))
    np.testing.assert_array_equal(a, b)


def test_z_from_epsilon_reference_value():
    assert z_from_epsilon(1.0, 1e-5) == pytest.approx(4.844805262605389, rel=1e-12)


def test_z_epsilon_round_trip():
    for eps in (0.3, 1.0, 2.5, 8.0):
        for delta in (1e-6, 1e-5, 1e-3):
            z = z_from_epsilon(eps, delta)
            assert epsilon_from_z(z, delta) == pytest.approx(eps, rel=1e-12)


def test_z_from_epsilon_validation():
    with pytest.raises(ValueError):
        z_from_epsilon(0.0, 1e-5)
    with pytest.raises(ValueError):
        z_from_epsilon(1.0, DELTA_MAX)
    with pytest.raises(ValueError):
        z_from_epsilon(1.0, 0.0)
    # just below the cap is fine
    assert z_from_epsilon(1.0, DELTA_MAX * 0.999) > 0
