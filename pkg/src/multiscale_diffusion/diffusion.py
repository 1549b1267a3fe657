"""Variance-exploding score-based diffusion on short trajectory windows.

Noising is ``x_s = x + sigma * eps``. A denoiser ``D(x_s, sigma, mask, t)``
trained on the L2 loss gives the score ``(D - x_s) / sigma^2``. Sampling
integrates the reverse SDE in the variable ``tau = sigma^2``::

    dx = -score(x, sigma) dtau + dW_tau        (tau decreasing)

over a decreasing noise schedule, clamping conditioned entries to their clean
values after every step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .rng import Stream

__all__ = [
    "Denoiser",
    "NoiseSchedule",
    "MaskedSample",
    "SamplerConfig",
    "SamplerDivergenceError",
    "GaussianDenoiser",
    "add_noise",
    "conditional_input",
    "conditional_loss",
    "denoising_loss",
    "score_from_denoiser",
    "sample",
    "sample_batch",
    "sampler_noise",
]

METHODS = ("euler_maruyama", "adams_bashforth_2")


class Denoiser(Protocol):
    def __call__(
        self, x: np.ndarray, sigma, mask: np.ndarray, time_indices: np.ndarray
    ) -> np.ndarray: ...


class SamplerDivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str | None = None):
        super().__init__(message or f"non-finite values at sampler step {step}")
        self.step = step


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    steps: int = 100
    rho: float = 7.0

    def __post_init__(self) -> None:
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.steps < 2:
            raise ValueError(f"steps must be >= 2, got {self.steps}")
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")

    def levels(self) -> np.ndarray:
        """``sigma_1 > ... > sigma_steps``, interpolated linearly in ``sigma^(1/rho)``."""
        i = np.arange(self.steps)
        a, b = self.sigma_max ** (1 / self.rho), self.sigma_min ** (1 / self.rho)
        return (a + i / (self.steps - 1) * (b - a)) ** self.rho

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    method: str = "adams_bashforth_2"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown sampler method {self.method!r}; expected one of {METHODS}")

    def to_dict(self) -> dict:
        return {"schedule": self.schedule.to_dict(), "method": self.method, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return cls(NoiseSchedule(**d.get("schedule", {})), d.get("method", "adams_bashforth_2"), d.get("seed", 0))


@dataclass
class MaskedSample:
    """A window of values; ``mask`` marks clean conditioning entries."""

    values: np.ndarray
    mask: np.ndarray
    time_indices: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.time_indices = np.asarray(self.time_indices)
        w = self.values.shape[-1]
        if self.mask.shape[-1] != w or self.time_indices.shape[-1] != w:
            raise ValueError("values, mask and time_indices must have the same window length")


class GaussianDenoiser:
    """Exact denoiser for i.i.d. ``N(0, tau^2)`` entries.

    Unconditioned entries are shrunk to the posterior mean
    ``tau^2 / (tau^2 + sigma^2) * x``; conditioned entries pass through.
    """

    def __init__(self, tau: float = 1.0):
        self.tau = float(tau)
        self.calls = 0

    def __call__(self, x, sigma, mask, time_indices=None):
        self.calls += 1
        x = np.asarray(x, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim == 1 and x.ndim == 2:
            sigma = sigma[:, None]
        shrink = self.tau**2 / (self.tau**2 + sigma**2)
        return np.where(mask, x, shrink * x)

    def expected_loss(self, sigma: float) -> float:
        """Per-entry minimum of the denoising loss."""
        t2 = self.tau**2
        return t2 * sigma**2 / (t2 + sigma**2)


def add_noise(x: np.ndarray, sigma, rng: Stream) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    eps = rng.normal(x.shape)
    if sigma.ndim == 1 and x.ndim == 2:
        sigma = sigma[:, None]
    return x + sigma * eps, eps


def conditional_input(x: np.ndarray, x_s: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``(1 - m) * x_s + m * x``."""
    return np.where(mask, x, x_s)


def conditional_loss(d: Denoiser, sample: MaskedSample, sigma, rng: Stream) -> float:
    """Mean squared error of ``D`` on a noised window with clean conditioning."""
    x = sample.values
    x_s, _ = add_noise(x, sigma, rng)
    x_in = conditional_input(x, x_s, sample.mask)
    out = d(np.atleast_2d(x_in), _row_sigma(sigma, x), sample.mask, sample.time_indices)
    return float(np.mean((out.reshape(x.shape) - x) ** 2))


def denoising_loss(d: Denoiser, x: np.ndarray, sigma, rng: Stream, time_indices=None) -> float:
    """Unconditional loss: every entry is noised."""
    x = np.asarray(x, dtype=np.float64)
    w = x.shape[-1]
    if time_indices is None:
        time_indices = np.arange(w) - w // 2
    x_s, _ = add_noise(x, sigma, rng)
    out = d(np.atleast_2d(x_s), _row_sigma(sigma, x), np.zeros(w, dtype=bool), time_indices)
    return float(np.mean((out.reshape(x.shape) - x) ** 2))


def _row_sigma(sigma, x: np.ndarray) -> np.ndarray:
    rows = 1 if x.ndim == 1 else x.shape[0]
    return np.broadcast_to(np.asarray(sigma, dtype=np.float64), (rows,)).copy()


def score_from_denoiser(d: Denoiser, x_s: np.ndarray, sigma: float, mask, time_indices) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("the score is undefined at sigma = 0")
    x_s = np.asarray(x_s, dtype=np.float64)
    out = d(np.atleast_2d(x_s), _row_sigma(sigma, x_s), mask, time_indices).reshape(x_s.shape)
    return (out - x_s) / sigma**2


def sampler_noise(stream: Stream, schedule: NoiseSchedule, width: int) -> np.ndarray:
    """Standard normals for one window: row 0 initialises, row ``i + 1`` drives step ``i``."""
    return stream.normal((schedule.steps + 1, width))


def sample_batch(
    d: Denoiser,
    values: np.ndarray,
    mask: np.ndarray,
    time_indices: np.ndarray,
    schedule: NoiseSchedule,
    method: str,
    noise: np.ndarray,
) -> np.ndarray:
    """Sample unconditioned entries of a batch of windows.

    ``values`` is ``(B, W)`` with trusted entries where ``mask`` (shape ``(W,)``)
    is set; ``noise`` is ``(B, steps + 1, W)``. The final step lands on
    ``sigma = 0`` without injected noise.
    """
    if method not in METHODS:
        raise ValueError(f"unknown sampler method {method!r}")
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        return values.copy()
    clean = values
    levels = np.append(schedule.levels(), 0.0)
    b = values.shape[0]

    x = np.where(mask, clean, levels[0] * noise[:, 0])
    prev_drift = prev_h = None
    for i in range(schedule.steps):
        sigma, sigma_next = levels[i], levels[i + 1]
        den = d(x, np.full(b, sigma), mask, time_indices)
        drift = (den - x) / sigma**2
        h = sigma**2 - sigma_next**2
        if method == "adams_bashforth_2" and prev_drift is not None:
            r = h / (2.0 * prev_h)
            step = (1.0 + r) * drift - r * prev_drift
        else:
            step = drift
        x = x + h * step
        if sigma_next > 0:
            x = x + np.sqrt(h) * noise[:, i + 1]
        x = np.where(mask, clean, x)
        if not np.all(np.isfinite(x)):
            raise SamplerDivergenceError(i)
        prev_drift, prev_h = drift, h
    return x


def sample(d: Denoiser, cond: MaskedSample, cfg: SamplerConfig) -> np.ndarray:
    """Draw one completion of ``cond`` (entries outside the mask are ignored)."""
    values = np.asarray(cond.values, dtype=np.float64)
    single = values.ndim == 1
    values = np.atleast_2d(values)
    stream = Stream(cfg.seed)
    noise = np.stack([sampler_noise(stream, cfg.schedule, values.shape[1]) for _ in range(len(values))])
    out = sample_batch(d, values, cond.mask, cond.time_indices, cfg.schedule, cfg.method, noise)
    return out[0] if single else out
