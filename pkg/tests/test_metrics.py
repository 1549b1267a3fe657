import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import wasserstein_distance

from multiscale_diffusion.metrics import (
    Field2D,
    SpectrumProfile,
    VectorField2D,
    bucket_report,
    isotropic_spectrum,
    mean_gbt,
    mean_gbz,
    nmae,
    parse_buckets,
    power_spectrum_1d,
    spectrum_mae,
    usflux,
    wasserstein_1d,
)
from multiscale_diffusion.rng import Stream
from multiscale_diffusion.synthetic import generate_test_field2d

samples = arrays(np.float64, st.integers(1, 40), elements=st.floats(-100, 100))


def test_wasserstein_identities():
    a = Stream(0).normal(500)
    assert wasserstein_1d(a, a) == 0.0
    assert wasserstein_1d(np.zeros(7), np.full(7, -2.5)) == pytest.approx(2.5, abs=1e-12)
    assert wasserstein_1d(a + 0.7, a) == pytest.approx(0.7, abs=1e-12)
    with pytest.raises(ValueError):
        wasserstein_1d([], [1.0])


@settings(max_examples=200, deadline=None)
@given(a=samples, b=samples)
def test_wasserstein_matches_scipy(a, b):
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_distance(a, b), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(a=samples, b=samples, c=samples)
def test_wasserstein_axioms(a, b, c):
    ab, ba = wasserstein_1d(a, b), wasserstein_1d(b, a)
    assert ab >= 0 and ab == pytest.approx(ba, abs=1e-9)
    assert ab <= wasserstein_1d(a, c) + wasserstein_1d(c, b) + 1e-9


def test_isotropic_spectrum_constant_and_tone():
    c = isotropic_spectrum(generate_test_field2d("constant", 16, value=3.0))
    assert c.power[0] > 0 and np.all(c.power[1:] == pytest.approx(0, abs=1e-20))
    q = 5
    tone = isotropic_spectrum(generate_test_field2d("sinusoid_x", 32, q=q))
    assert int(np.argmax(tone.power)) == q
    off = np.delete(tone.power * tone.counts, q)
    assert off.sum() < 1e-10


@pytest.mark.parametrize("shape", [(16, 16), (12, 20), (9, 7)])
def test_parseval_2d(shape):
    x = Stream(1).normal(shape)
    s = isotropic_spectrum(x, truncate=False)
    assert s.energy() == pytest.approx(float(np.sum(x**2)), abs=1e-10)


@pytest.mark.parametrize("n", [2, 15, 64])
def test_parseval_1d(n):
    x = Stream(2).normal(n)
    assert power_spectrum_1d(x).energy() == pytest.approx(float(np.sum(x**2)), abs=1e-10)


def test_power_spectrum_1d_cases():
    s = power_spectrum_1d(np.full(16, 2.0))
    assert s.power[0] > 0 and np.allclose(s.power[1:], 0, atol=1e-24)
    t = np.arange(32)
    s = power_spectrum_1d(np.sin(2 * np.pi * 4 * t / 32))
    assert np.flatnonzero(s.power > 1e-20).tolist() == [4]


def test_white_noise_flat_spectrum():
    x = Stream(3).normal((1000, 32))
    mean = np.mean([power_spectrum_1d(r).power for r in x], axis=0)
    assert np.all(np.abs(mean - 1.0) < 0.1)


def test_spectrum_mae_cases():
    bins = np.arange(8)
    a = SpectrumProfile(bins, np.linspace(1, 8, 8), np.ones(8))
    assert spectrum_mae(a, a) == 0
    assert spectrum_mae(a, SpectrumProfile(bins, 10 * a.power, a.counts)) == pytest.approx(1.0)
    p = a.power.copy()
    p[3] *= 10
    assert spectrum_mae(a, SpectrumProfile(bins, p, a.counts)) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        spectrum_mae(a, SpectrumProfile(bins[:4], p[:4], p[:4]))


def test_usflux():
    assert usflux(Field2D(np.full((4, 5), -2.0), pixel_area=0.5)) == pytest.approx(20 * 2 * 0.5, abs=1e-12)
    assert usflux(Field2D(np.zeros((3, 3)))) == 0
    checker = np.where(np.indices((6, 6)).sum(0) % 2, 1.5, -1.5)
    assert usflux(Field2D(checker, 2.0)) == pytest.approx(36 * 1.5 * 2.0, abs=1e-12)


def _grad_interior(values):
    dy, dx = np.gradient(values)
    return np.sqrt(dx**2 + dy**2)[1:-1, 1:-1]


def test_gradients_linear_fields():
    y, x = np.indices((10, 12), dtype=float)
    a, b = 0.7, -1.3
    bz = Field2D(a * x + b * y)
    g = _grad_interior(bz.values)
    assert np.allclose(g, np.hypot(a, b), atol=1e-12, rtol=0)
    # linear fields have the same one-sided and central differences, so the mean is exact too
    assert mean_gbz(bz) == pytest.approx(np.hypot(a, b), abs=1e-12)
    zero = Field2D(np.zeros_like(x))
    v = VectorField2D(zero, zero, Field2D(a * x))
    assert mean_gbt(v) == pytest.approx(a, abs=1e-12)
    assert mean_gbz(Field2D(2 * bz.values)) == pytest.approx(2 * mean_gbz(bz), abs=1e-12)


def test_gradients_constant_and_rotation():
    c = Field2D(np.full((5, 5), 3.0))
    assert mean_gbz(c) == 0
    assert mean_gbt(VectorField2D(c, c, c)) == 0
    y, x = np.indices((8, 8), dtype=float)
    theta = 0.3 * x + 0.2 * y
    v = VectorField2D(Field2D(np.cos(theta)), Field2D(np.sin(theta)), Field2D(np.zeros_like(x)))
    assert mean_gbt(v) == pytest.approx(0, abs=1e-12)


def test_checkerboard_gradient_interior():
    checker = np.where(np.indices((6, 6)).sum(0) % 2, 1.0, -1.0)
    # central differences cancel on an alternating pattern
    assert np.all(_grad_interior(checker) == 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(-10, 10)))
def test_gradient_nonnegative_and_zero_iff_constant(values):
    g = mean_gbz(Field2D(values))
    assert g >= 0
    if np.all(values == values[0, 0]):
        assert g == 0


def test_nmae_cases():
    obs = np.array([1.0, -2.0, 4.0])
    assert nmae(obs, obs) == 0
    assert nmae(1.1 * obs, obs) == pytest.approx(0.1, abs=1e-12)
    assert nmae([2.0, 4.0], [1.0, 8.0]) == 0.75
    with pytest.raises(ValueError):
        nmae([1.0], [0.0])


def test_parse_buckets():
    assert parse_buckets("1:4,4:16,16:32") == [(1, 4), (4, 16), (16, 32)]
    with pytest.raises(ValueError):
        parse_buckets("0:3")


def test_bucket_report_identical_and_shifted():
    x = Stream(4).normal((50, 32))
    rows = bucket_report(x, x, parse_buckets("1:4,16:32"))
    assert all(r["value"] == 0 for r in rows)
    rows = bucket_report(x + 1.0, x, [(1, 4)])
    w = {r["metric"]: r["value"] for r in rows}
    assert w["wasserstein"] == pytest.approx(1.0) and w["wasserstein_pooled"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bucket_report(x, x, [(1, 40)])
