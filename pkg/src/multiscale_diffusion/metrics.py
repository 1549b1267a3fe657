"""Distributional, spectral and magnetic-field summary metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Field2D",
    "VectorField2D",
    "SpectrumProfile",
    "wasserstein_1d",
    "isotropic_spectrum",
    "power_spectrum_1d",
    "spectrum_mae",
    "usflux",
    "mean_gbt",
    "mean_gbz",
    "nmae",
    "parse_buckets",
    "bucket_report",
]

LOG_FLOOR = 1e-12


@dataclass
class Field2D:
    values: np.ndarray
    pixel_area: float = 1.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValueError(f"Field2D needs a 2D array with both sides >= 2, got {self.values.shape}")
        if not self.pixel_area > 0:
            raise ValueError(f"pixel_area must be > 0, got {self.pixel_area}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class VectorField2D:
    bx: Field2D
    by: Field2D
    bz: Field2D

    def __post_init__(self) -> None:
        if not (self.bx.shape == self.by.shape == self.bz.shape):
            raise ValueError("vector field components must share one shape")

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.bx.values**2 + self.by.values**2 + self.bz.values**2)


@dataclass
class SpectrumProfile:
    """Mean squared Fourier magnitude per wavenumber bin.

    ``counts`` is the number of Fourier coefficients folded into each bin,
    so ``sum(power * counts)`` equals the signal energy (orthonormal DFT).
    """

    bins: np.ndarray
    power: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.bins)

    def energy(self) -> float:
        return float(np.sum(self.power * self.counts))


def wasserstein_1d(a: Sequence[float], b: Sequence[float]) -> float:
    """W1 between two empirical distributions via their quantile functions."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs non-empty samples")
    n, m = a.size, b.size
    if n == m:
        return float(np.mean(np.abs(a - b)))
    # piecewise-constant quantile functions; integrate |Qa - Qb| over the merged grid
    u = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    u[-1] = 1.0
    lo = np.concatenate(([0.0], u[:-1]))
    mid = 0.5 * (lo + u)
    ia = np.minimum((mid * n).astype(np.int64), n - 1)
    ib = np.minimum((mid * m).astype(np.int64), m - 1)
    return float(np.sum((u - lo) * np.abs(a[ia] - b[ib])))


def isotropic_spectrum(f: Field2D | np.ndarray, truncate: bool = True) -> SpectrumProfile:
    """Radially binned power spectrum of a 2D field.

    Bins are ``round(sqrt(kx^2 + ky^2))`` in integer wavenumber units, bin 0
    being the mean. With ``truncate`` the corners beyond ``min(rows, cols) // 2``
    are dropped; without it every coefficient is kept and energy is conserved.
    """
    values = f.values if isinstance(f, Field2D) else np.asarray(f, dtype=np.float64)
    rows, cols = values.shape
    power2d = np.abs(np.fft.fft2(values, norm="ortho")) ** 2
    ky = np.fft.fftfreq(rows) * rows
    kx = np.fft.fftfreq(cols) * cols
    radius = np.sqrt(kx[None, :] ** 2 + ky[:, None] ** 2)
    idx = np.rint(radius).astype(np.int64).ravel()
    counts = np.bincount(idx)
    sums = np.bincount(idx, weights=power2d.ravel())
    if truncate:
        nmax = min(rows, cols) // 2 + 1
        counts, sums = counts[:nmax], sums[:nmax]
    power = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return SpectrumProfile(np.arange(len(counts)), power, counts)


def power_spectrum_1d(x: Sequence[float]) -> SpectrumProfile:
    """One-sided power ``|X_k|^2`` (orthonormal DFT), ``k = 0..n//2``.

    Interior bins stand for the ``+k`` and ``-k`` coefficients, hence count 2.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("power_spectrum_1d needs a 1D series of length >= 2")
    n = x.size
    power = np.abs(np.fft.rfft(x, norm="ortho")) ** 2
    counts = np.full(power.size, 2)
    counts[0] = 1
    if n % 2 == 0:
        counts[-1] = 1
    return SpectrumProfile(np.arange(power.size), power, counts)


def spectrum_mae(a: SpectrumProfile, b: SpectrumProfile, log: bool = True) -> float:
    """Mean absolute difference per bin, in decades when ``log`` is set."""
    if len(a) != len(b):
        raise ValueError(f"spectrum bin counts differ: {len(a)} vs {len(b)}")
    pa, pb = np.asarray(a.power), np.asarray(b.power)
    if log:
        pa, pb = np.log10(pa + LOG_FLOOR), np.log10(pb + LOG_FLOOR)
    return float(np.mean(np.abs(pa - pb)))


def usflux(bz: Field2D) -> float:
    """Total unsigned flux, sum of ``|Bz| dA``."""
    return float(np.sum(np.abs(bz.values)) * bz.pixel_area)


def _gradient_norm(values: np.ndarray, spacing: float) -> np.ndarray:
    # central differences inside, first-order one-sided at the borders
    dy, dx = np.gradient(values, spacing, edge_order=1)
    return np.sqrt(dx**2 + dy**2)


def mean_gbt(v: VectorField2D, spacing: float = 1.0) -> float:
    """Mean horizontal gradient magnitude of the total field strength."""
    return float(np.mean(_gradient_norm(v.magnitude(), spacing)))


def mean_gbz(bz: Field2D, spacing: float = 1.0) -> float:
    """Mean horizontal gradient magnitude of the vertical component."""
    return float(np.mean(_gradient_norm(bz.values, spacing)))


def nmae(pred: Sequence[float], obs: Sequence[float]) -> float:
    """Mean of ``|pred_i - obs_i| / |obs_i|``."""
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {obs.shape}")
    if np.any(obs == 0):
        raise ValueError("nmae is undefined for zero observations")
    return float(np.mean(np.abs(pred - obs) / np.abs(obs)))


def parse_buckets(spec: str | Sequence) -> list[tuple[int, int]]:
    """``"1:4,4:16,16:32"`` -> ``[(1, 4), (4, 16), (16, 32)]``; bounds are inclusive."""
    if isinstance(spec, str):
        items = [s.split(":") for s in spec.split(",") if s.strip()]
    else:
        items = list(spec)
    out = []
    for lo, hi in items:
        lo, hi = int(lo), int(hi)
        if not 1 <= lo <= hi:
            raise ValueError(f"bad bucket {lo}:{hi}")
        out.append((lo, hi))
    return out


def bucket_report(
    pred: np.ndarray, obs: np.ndarray, buckets: Sequence[tuple[int, int]]
) -> list[dict]:
    """Per-bucket metrics between predicted and reference future ensembles.

    ``pred`` and ``obs`` have shape ``(members, steps)`` with column ``j``
    holding future step ``j + 1``. ``wasserstein`` averages the per-step W1
    over the bucket; ``wasserstein_pooled`` pools all values in the bucket;
    ``spectrum_mae`` compares member-averaged 1D spectra of the bucket segment.
    """
    pred = np.atleast_2d(pred)
    obs = np.atleast_2d(obs)
    rows = []
    for lo, hi in buckets:
        if hi > min(pred.shape[1], obs.shape[1]):
            raise ValueError(f"bucket {lo}:{hi} exceeds the {min(pred.shape[1], obs.shape[1])} future steps")
        cols = slice(lo - 1, hi)
        p, o = pred[:, cols], obs[:, cols]
        label = f"{lo}:{hi}"
        w_step = float(np.mean([wasserstein_1d(p[:, j], o[:, j]) for j in range(p.shape[1])]))
        rows.append({"metric": "wasserstein", "bucket": label, "value": w_step})
        rows.append({"metric": "wasserstein_pooled", "bucket": label, "value": wasserstein_1d(p, o)})
        if p.shape[1] >= 2:
            sp = np.mean([power_spectrum_1d(r).power for r in p], axis=0)
            so = np.mean([power_spectrum_1d(r).power for r in o], axis=0)
            bins = np.arange(len(sp))
            mae = spectrum_mae(SpectrumProfile(bins, sp, bins), SpectrumProfile(bins, so, bins))
            rows.append({"metric": "spectrum_mae", "bucket": label, "value": mae})
    return rows
