"""Noisy sinusoid time series and analytic 2D test fields."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .metrics import Field2D
from .rng import Stream, derive_seed

__all__ = [
    "SinusoidConfig",
    "Trajectory",
    "trend",
    "generate_sinusoid",
    "generate_dataset",
    "dataset_member_config",
    "generate_test_field2d",
    "PhaseMixtureDenoiser",
    "save_dataset",
    "load_dataset",
    "export_csv",
]


@dataclass(frozen=True)
class SinusoidConfig:
    length: int = 120
    period: float = 60.0
    amplitude: float = 1.0
    # trough of the trend at t = period / 2
    phase: float = math.pi / 2
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if not self.period > 0:
            raise ValueError(f"period must be > 0, got {self.period}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass
class Trajectory:
    """Values on an integer time grid; ``values[present_index]`` is time 0."""

    values: np.ndarray
    present_index: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if not 0 <= self.present_index < len(self.values):
            raise ValueError(
                f"present_index {self.present_index} outside [0, {len(self.values)})"
            )

    def __len__(self) -> int:
        return len(self.values)

    @property
    def past(self) -> np.ndarray:
        return self.values[: self.present_index + 1]

    @property
    def future(self) -> np.ndarray:
        return self.values[self.present_index + 1 :]

    def at(self, t: int | np.ndarray) -> np.ndarray:
        """Values at times relative to the present."""
        return self.values[self.present_index + np.asarray(t)]


def trend(config: SinusoidConfig, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return config.amplitude * np.sin(2 * np.pi * t / config.period + config.phase)


def generate_sinusoid(config: SinusoidConfig, present_index: int | None = None) -> Trajectory:
    t = np.arange(config.length)
    noise = Stream(config.seed).normal(config.length)
    values = trend(config, t) + config.noise_std * noise
    if present_index is None:
        present_index = config.length - 1
    return Trajectory(values, present_index)


def dataset_member_config(config: SinusoidConfig, base_seed: int, i: int) -> SinusoidConfig:
    """Config of the ``i``-th dataset trajectory: uniform random phase, derived noise seed."""
    phase = 2 * math.pi * Stream(base_seed, (i, 0)).uniform()
    return replace(config, phase=phase, seed=derive_seed(base_seed, i, 1))


def generate_dataset(
    config: SinusoidConfig, n: int, base_seed: int, present_index: int | None = None
) -> list[Trajectory]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [
        generate_sinusoid(dataset_member_config(config, base_seed, i), present_index)
        for i in range(n)
    ]


class PhaseMixtureDenoiser:
    """Exact denoiser for windows of random-phase sinusoid trajectories.

    Given the phase, window entries are independent ``N(trend_t, noise_std^2)``,
    so the posterior mean of a noised entry is a linear shrinkage towards the
    trend. The phase itself is integrated out on a uniform grid of
    ``n_phases`` points, weighted by the likelihood of the whole window.
    Works in data units; time indices are offsets within the window.
    """

    def __init__(self, config: SinusoidConfig, n_phases: int = 180):
        if config.noise_std <= 0:
            raise ValueError("the phase posterior needs noise_std > 0")
        self.config = config
        self.phases = np.linspace(0.0, 2 * np.pi, n_phases, endpoint=False)
        self.calls = 0

    def __call__(self, x, sigma, mask, time_indices):
        self.calls += 1
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mask = np.asarray(mask, dtype=bool)
        t = np.asarray(time_indices, dtype=np.float64)
        v = self.config.noise_std**2
        s2 = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (len(x),))[:, None, None] ** 2
        w = 2 * np.pi / self.config.period
        mu = self.config.amplitude * np.sin(w * t[None, :] + self.phases[:, None])[None]
        var = np.where(mask, v, v + s2)
        resid = x[:, None, :] - mu
        # the variance term is phase independent and drops out of the weights
        ll = -0.5 * np.sum(resid**2 / var, axis=-1)
        ll -= ll.max(axis=1, keepdims=True)
        weight = np.exp(ll)
        weight /= weight.sum(axis=1, keepdims=True)
        post = mu + (v / (v + s2)) * resid
        return np.where(mask, x, np.einsum("bp,bpw->bw", weight, post))


def generate_test_field2d(kind: str, size: int, **params) -> Field2D:
    """Square fields with known spectra and gradients.

    ``constant``: ``value`` everywhere. ``sinusoid_x``: ``amplitude *
    cos(2 pi q x / size)`` along columns with integer wavenumber ``q``.
    ``gaussian_noise``: i.i.d. ``N(0, std^2)`` from ``seed``.
    """
    if size < 4:
        raise ValueError(f"size must be >= 4, got {size}")
    pixel_area = params.get("pixel_area", 1.0)
    if kind == "constant":
        values = np.full((size, size), float(params.get("value", 1.0)))
    elif kind == "sinusoid_x":
        q = int(params.get("q", 1))
        x = np.arange(size)
        row = params.get("amplitude", 1.0) * np.cos(2 * np.pi * q * x / size)
        values = np.tile(row, (size, 1))
    elif kind == "gaussian_noise":
        stream = Stream(int(params.get("seed", 0)))
        values = params.get("std", 1.0) * stream.normal((size, size))
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    return Field2D(values, pixel_area)


def save_dataset(
    path: str | Path, trajectories: Sequence[Trajectory], config: SinusoidConfig, **extra
) -> Path:
    lengths = {len(tr) for tr in trajectories}
    if len(lengths) != 1:
        raise ValueError("all trajectories must share one length")
    meta = {
        "kind": "dataset",
        "config": asdict(config),
        "present_index": [tr.present_index for tr in trajectories],
        **extra,
    }
    return io.write_table(path, np.stack([tr.values for tr in trajectories]), meta)


def load_dataset(path: str | Path) -> tuple[list[Trajectory], dict]:
    values, meta = io.read_table(path)
    present = meta.get("present_index", [values.shape[1] - 1] * len(values))
    return [Trajectory(v, int(p)) for v, p in zip(values, present)], meta


def export_csv(path: str | Path, trajectories: Sequence[Trajectory]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trajectory", "t", "value"])
        for i, tr in enumerate(trajectories):
            for j, v in enumerate(tr.values):
                w.writerow([i, j - tr.present_index, repr(float(v))])
