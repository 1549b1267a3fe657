"""Execute an inference scheme with a denoiser to produce trajectory ensembles."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .diffusion import Denoiser, SamplerConfig, SamplerDivergenceError, sample_batch, sampler_noise
from .rng import Stream
from .scheme import InferenceScheme, extend_scheme, validate_scheme
from .synthetic import Trajectory

__all__ = [
    "RolloutError",
    "RolloutRequest",
    "TrajectoryEnsemble",
    "EnsembleStatistics",
    "run",
    "ensemble_statistics",
    "save_ensemble",
    "load_ensemble",
    "export_statistics_csv",
]


class RolloutError(RuntimeError):
    """A scheme could not be executed as planned."""

    def __init__(self, message: str, action: int | None = None, index: int | None = None):
        super().__init__(message)
        self.action = action
        self.index = index


@dataclass
class RolloutRequest:
    scheme: InferenceScheme
    observed: Trajectory
    total: int
    n_ensemble: int = 1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    validate: bool = True

    def __post_init__(self) -> None:
        if self.total < 1:
            raise ValueError(f"total must be >= 1, got {self.total}")
        if self.n_ensemble < 1:
            raise ValueError(f"n_ensemble must be >= 1, got {self.n_ensemble}")
        have = self.observed.present_index
        if have < self.scheme.lookback:
            raise ValueError(
                f"observed past holds {have} steps before the present, scheme needs {self.scheme.lookback}"
            )

    def extended(self) -> InferenceScheme:
        if self.total <= self.scheme.horizon:
            return self.scheme
        return extend_scheme(self.scheme, self.total)


@dataclass
class TrajectoryEnsemble:
    """Members share the observed past; ``provenance[j]`` is the (action, block) behind step ``j + 1``."""

    members: list[Trajectory]
    provenance: list[tuple[int, int]]
    scheme_name: str = ""
    sampler_calls: int = 0

    def __len__(self) -> int:
        return len(self.members)

    @property
    def present_index(self) -> int:
        return self.members[0].present_index

    @property
    def total(self) -> int:
        return len(self.provenance)

    def values(self) -> np.ndarray:
        return np.stack([m.values for m in self.members])

    def future(self) -> np.ndarray:
        """``(members, total)``; column ``j`` is future step ``j + 1``."""
        p = self.present_index
        return self.values()[:, p + 1 : p + 1 + self.total]


@dataclass
class EnsembleStatistics:
    mean: np.ndarray
    std: np.ndarray
    pooled: dict[str, np.ndarray]


def run(d: Denoiser, req: RolloutRequest) -> TrajectoryEnsemble:
    """Sample ``req.n_ensemble`` futures of ``req.observed`` following the scheme.

    Members are batched through each call. Member ``m`` draws its sampler
    noise for action ``n`` from ``Stream(seed).child(m, n)``, so results do
    not depend on the ensemble size or on batching.
    """
    s = req.extended()
    if req.validate:
        report = validate_scheme(s)
        if not report:
            raise RolloutError(f"scheme {s.name or '?'} is invalid: {report.message}", report.action)

    obs = req.observed
    p = obs.present_index
    n_mem = req.n_ensemble
    horizon = max(s.horizon, req.total)
    width = p + 1 + horizon
    normalize = getattr(d, "normalize", None)
    denormalize = getattr(d, "denormalize", None)

    past = np.asarray(obs.past, dtype=np.float64)
    x = np.full((n_mem, width), np.nan)
    x[:, : p + 1] = normalize(past) if normalize else past
    available = np.zeros(width, dtype=bool)
    available[: p + 1] = True
    provenance: dict[int, tuple[int, int]] = {}

    master = Stream(req.sampler.seed)
    schedule = req.sampler.schedule
    calls = 0
    for n, action in enumerate(s.actions):
        window = np.asarray(s.window(n))
        rel = np.asarray(s.relative_window(n))
        mask = np.asarray(action.cond_mask, dtype=bool)
        pos = p + window
        for t, i, m in zip(window, pos, mask):
            if i < 0 or i >= width:
                raise RolloutError(f"action {n}: index {t} lies outside the trajectory", n, int(t))
            if m and not available[i]:
                raise RolloutError(f"action {n}: conditioning index {t} is not available yet", n, int(t))
            if not m and available[i]:
                raise RolloutError(f"action {n}: index {t} would be overwritten", n, int(t))
        vals = np.where(mask, x[:, pos], 0.0)
        noise = np.stack(
            [sampler_noise(master.child(m, n), schedule, len(window)) for m in range(n_mem)]
        )
        try:
            out = sample_batch(d, vals, mask, rel, schedule, req.sampler.method, noise)
        except SamplerDivergenceError as e:
            raise SamplerDivergenceError(
                e.step, f"action {n} (block {action.block}): non-finite values at sampler step {e.step}"
            ) from e
        calls += n_mem
        gen = pos[~mask]
        x[:, gen] = out[:, ~mask]
        available[gen] = True
        for t in window[~mask]:
            provenance[int(t)] = (n, action.block)

    x = x[:, : p + 1 + req.total]
    if denormalize:
        x[:, p + 1 :] = denormalize(x[:, p + 1 :])
    # keep the observed past bit-identical
    x[:, : p + 1] = past
    members = [Trajectory(row, p) for row in x]
    prov = [provenance.get(t, (-1, -1)) for t in range(1, req.total + 1)]
    return TrajectoryEnsemble(members, prov, s.name, calls)


def ensemble_statistics(
    e: TrajectoryEnsemble, buckets: Sequence[tuple[int, int]] = ()
) -> EnsembleStatistics:
    """Per-step mean and (population) std of the future, and bucket-pooled samples."""
    fut = e.future()
    pooled = {f"{lo}:{hi}": fut[:, lo - 1 : hi].ravel() for lo, hi in buckets}
    return EnsembleStatistics(fut.mean(axis=0), fut.std(axis=0), pooled)


def save_ensemble(path: str | Path, e: TrajectoryEnsemble, **extra) -> Path:
    meta = {
        "kind": "ensemble",
        "scheme": e.scheme_name,
        "present_index": e.present_index,
        "provenance": [list(p) for p in e.provenance],
        "sampler_calls": e.sampler_calls,
        **extra,
    }
    return io.write_table(path, e.values(), meta)


def load_ensemble(path: str | Path) -> TrajectoryEnsemble:
    values, meta = io.read_table(path)
    if meta.get("kind") != "ensemble":
        raise io.ArtifactError(f"{path}: sidecar does not describe an ensemble")
    p = int(meta["present_index"])
    members = [Trajectory(v, p) for v in values]
    prov = [tuple(x) for x in meta["provenance"]]
    return TrajectoryEnsemble(members, prov, meta.get("scheme", ""), int(meta.get("sampler_calls", 0)))


def export_statistics_csv(path: str | Path, stats: EnsembleStatistics) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "mean", "std"])
        for j, (m, s) in enumerate(zip(stats.mean, stats.std)):
            w.writerow([j + 1, repr(float(m)), repr(float(s))])
