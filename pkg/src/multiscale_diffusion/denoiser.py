"""Preconditioned MLP denoiser for trajectory windows, trained with Adam.

Network input per window of width ``W``: the preconditioned values, the mask
as 0/1, the time indices divided by ``time_scale``, and ``c_noise``. The
output is combined as ``c_skip * x + c_out * F`` with the usual
variance-preserving coefficients for data of standard deviation ``data_std``;
conditioned entries are returned unchanged.

Gradients are derived by hand (reverse accumulation through the SiLU layers).
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import Stream
from .templates import Template

__all__ = [
    "ConfigurationError",
    "MLPDenoiser",
    "TrainConfig",
    "TrainResult",
    "preconditioning",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CKPT_MAGIC = b"MSDN"
CKPT_VERSION = 1


class ConfigurationError(ValueError):
    pass


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def preconditioning(sigma, data_std: float):
    """``(c_skip, c_out, c_in, c_noise)`` for noise level(s) ``sigma``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    s2 = sigma**2 + data_std**2
    c_skip = data_std**2 / s2
    c_out = sigma * data_std / np.sqrt(s2)
    c_in = 1.0 / np.sqrt(s2)
    with np.errstate(divide="ignore"):
        c_noise = 0.25 * np.log(sigma)
    return c_skip, c_out, c_in, c_noise


class MLPDenoiser:
    """``D(x, sigma, mask, t)`` on windows of fixed width.

    ``offset`` and ``scale`` record the data normalisation applied before the
    network sees values; callers working in physical units use
    :meth:`normalize` and :meth:`denormalize`.
    """

    def __init__(
        self,
        window: int,
        hidden: Sequence[int] = (128, 128, 128),
        data_std: float = 1.0,
        time_scale: float = 1.0,
        seed: int = 0,
        offset: float = 0.0,
        scale: float = 1.0,
    ):
        self.window = int(window)
        self.widths = [3 * self.window + 1, *[int(h) for h in hidden], self.window]
        self.data_std = float(data_std)
        self.time_scale = float(time_scale)
        self.offset = float(offset)
        self.scale = float(scale)
        stream = Stream(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = stream.normal((fan_in, fan_out)) * math.sqrt(1.0 / fan_in)
            self.params += [w, np.zeros(fan_out)]
        # start from the skip path alone
        self.params[-2] *= 0.0

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "MLPDenoiser":
        other = object.__new__(MLPDenoiser)
        other.__dict__.update(self.__dict__)
        other.widths = list(self.widths)
        other.params = [p.copy() for p in self.params]
        return other

    def zero_(self) -> "MLPDenoiser":
        for p in self.params:
            p[...] = 0.0
        return self

    def normalize(self, x):
        return (np.asarray(x) - self.offset) / self.scale

    def denormalize(self, x):
        return np.asarray(x) * self.scale + self.offset

    def _features(self, x_in, sigma, mask, time_indices):
        x_in = np.atleast_2d(np.asarray(x_in, dtype=np.float64))
        b, w = x_in.shape
        if w != self.window:
            raise ValueError(f"window width {w} does not match the network width {self.window}")
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (b,))[:, None]
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), (b, w))
        t = np.broadcast_to(np.asarray(time_indices, dtype=np.float64), (b, w))
        if t.shape != (b, w):
            raise ValueError("time_indices do not match the window width")
        c_skip, c_out, c_in, c_noise = preconditioning(sigma, self.data_std)
        # clean conditioning entries are only rescaled to unit variance
        vals = np.where(mask, x_in / self.data_std, c_in * x_in)
        h0 = np.concatenate([vals, mask.astype(np.float64), t / self.time_scale, c_noise], axis=1)
        # conditioned entries pass through untouched
        c_skip = np.where(mask, 1.0, c_skip)
        c_out = np.where(mask, 0.0, c_out)
        return x_in, h0, c_skip, c_out

    def _forward(self, h0):
        acts, pre, gates = [h0], [], []
        h = h0
        n_layers = len(self.params) // 2
        for layer in range(n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            if layer < n_layers - 1:
                h, s = _silu(z)
                pre.append(z)
                gates.append(s)
                acts.append(h)
            else:
                h = z
        return h, (acts, pre, gates)

    def __call__(self, x_in, sigma, mask, time_indices) -> np.ndarray:
        x_in, h0, c_skip, c_out = self._features(x_in, sigma, mask, time_indices)
        f, _ = self._forward(h0)
        return c_skip * x_in + c_out * f

    def loss_and_grad(self, x, x_in, sigma, mask, time_indices) -> tuple[float, list[np.ndarray]]:
        """Mean squared error of ``D(x_in)`` against clean ``x`` and its parameter gradient."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        x_in, h0, c_skip, c_out = self._features(x_in, sigma, mask, time_indices)
        f, (acts, pre, gates) = self._forward(h0)
        resid = c_skip * x_in + c_out * f - x
        loss = float(np.mean(resid**2))

        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        delta = (2.0 / resid.size) * resid * c_out
        n_layers = len(self.params) // 2
        for layer in range(n_layers - 1, -1, -1):
            a = acts[layer]
            grads[2 * layer] = a.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                da = delta @ self.params[2 * layer].T
                z, s = pre[layer - 1], gates[layer - 1]
                delta = da * s * (1.0 + z * (1.0 - s))
        return loss, grads


@dataclass
class TrainConfig:
    epochs: int = 40
    steps_per_epoch: int = 250
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mask_sampling: str = "scheme_templates"
    sigma_min: float = 0.01
    sigma_max: float = 80.0
    cosine_decay: bool = True

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.mask_sampling not in ("scheme_templates", "uniform_random"):
            raise ConfigurationError(f"unknown mask_sampling {self.mask_sampling!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    denoiser: MLPDenoiser
    losses: np.ndarray
    epoch_losses: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _window_pairs(windows, mask_sampling: str):
    """Normalise ``windows`` to ``(indices, mask or None)`` pairs."""
    pairs = []
    for item in windows:
        if isinstance(item, Template):
            pairs.append((tuple(item.indices), None))
        elif len(item) == 2 and not isinstance(item[0], (int, np.integer)):
            idx, mask = item
            pairs.append((tuple(int(i) for i in idx), None if mask is None else tuple(bool(m) for m in mask)))
        else:
            pairs.append((tuple(int(i) for i in item), None))
    if mask_sampling == "scheme_templates" and any(m is None for _, m in pairs):
        raise ConfigurationError("scheme_templates mask sampling needs (window, mask) pairs")
    return pairs


def train(d: MLPDenoiser, dataset, windows, cfg: TrainConfig) -> TrainResult:
    """Fit ``d`` in place on random windows of ``dataset``.

    ``dataset`` holds trajectories (objects with ``values`` or plain arrays)
    already in the denoiser's normalised units. ``windows`` lists relative
    index sets, each with the conditioning mask used at sampling time;
    ``uniform_random`` mask sampling ignores the masks and conditions on a
    random subset of random size instead.
    """
    data = np.stack([np.asarray(getattr(tr, "values", tr), dtype=np.float64) for tr in dataset])
    n_traj, length = data.shape
    pairs = _window_pairs(windows, cfg.mask_sampling)
    if not pairs:
        raise ConfigurationError("no training windows given")
    rel = np.array([p[0] for p in pairs], dtype=np.int64)
    if rel.shape[1] != d.window:
        raise ConfigurationError(f"window width {rel.shape[1]} != denoiser width {d.window}")
    for idx, _ in pairs:
        if max(idx) - min(idx) + 1 > length:
            raise ConfigurationError(
                f"trajectories of length {length} are too short for window {list(idx)}"
            )
    masks = np.array([m if m is not None else (False,) * d.window for _, m in pairs], dtype=bool)
    lo = -rel.min(axis=1)
    hi = length - 1 - rel.max(axis=1)

    stream = Stream(cfg.seed)
    m1 = [np.zeros_like(p) for p in d.params]
    m2 = [np.zeros_like(p) for p in d.params]
    total = cfg.epochs * cfg.steps_per_epoch
    losses = np.zeros(total)
    log_lo, log_hi = math.log(cfg.sigma_min), math.log(cfg.sigma_max)
    b = cfg.batch_size

    for step in range(total):
        ti = stream.integers(0, n_traj, b)
        pi = stream.integers(0, len(pairs), b)
        pos = lo[pi] + np.floor(stream.uniform(b) * (hi[pi] - lo[pi] + 1)).astype(np.int64)
        idx = pos[:, None] + rel[pi]
        x = data[ti[:, None], idx]
        if cfg.mask_sampling == "uniform_random":
            n_cond = stream.integers(0, d.window, b)
            order = np.argsort(stream.uniform((b, d.window)), axis=1)
            mask = np.argsort(order, axis=1) < n_cond[:, None]
        else:
            mask = masks[pi]
        sigma = np.exp(log_lo + stream.uniform(b) * (log_hi - log_lo))
        eps = stream.normal((b, d.window))
        x_in = np.where(mask, x, x + sigma[:, None] * eps)

        loss, grads = d.loss_and_grad(x, x_in, sigma, mask, rel[pi])
        losses[step] = loss
        lr = cfg.learning_rate
        if cfg.cosine_decay:
            lr *= 0.5 * (1.0 + math.cos(math.pi * step / total))
        t = step + 1
        for p, g, a, v in zip(d.params, grads, m1, m2):
            a *= cfg.beta1
            a += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            a_hat = a / (1 - cfg.beta1**t)
            v_hat = v / (1 - cfg.beta2**t)
            p -= lr * a_hat / (np.sqrt(v_hat) + cfg.eps)

    epoch_losses = (
        losses.reshape(cfg.epochs, cfg.steps_per_epoch).mean(axis=1) if total else np.zeros(0)
    )
    return TrainResult(d, losses, epoch_losses)


_HEAD = struct.Struct("<4sII")


def save_checkpoint(path: str | Path, d: MLPDenoiser) -> Path:
    """Header ``magic, version, n_widths, widths..., data_std, time_scale, offset, scale``, then parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(d.widths)))
        f.write(struct.pack(f"<{len(d.widths)}I", *d.widths))
        f.write(struct.pack("<4d", d.data_std, d.time_scale, d.offset, d.scale))
        for p in d.params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return path


def load_checkpoint(path: str | Path) -> MLPDenoiser:
    from .io import ArtifactError

    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    try:
        magic, version, n = _HEAD.unpack_from(raw)
        if magic != CKPT_MAGIC or version != CKPT_VERSION:
            raise ArtifactError(f"{path}: not a denoiser checkpoint (magic {magic!r}, version {version})")
        off = _HEAD.size
        widths = list(struct.unpack_from(f"<{n}I", raw, off))
        off += 4 * n
        data_std, time_scale, offset, scale = struct.unpack_from("<4d", raw, off)
        off += 32
    except struct.error as e:
        raise ArtifactError(f"{path}: truncated header") from e
    d = object.__new__(MLPDenoiser)
    d.window = widths[-1]
    d.widths = widths
    d.data_std, d.time_scale, d.offset, d.scale = data_std, time_scale, offset, scale
    d.params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape))
            if off + 8 * size > len(raw):
                raise ArtifactError(f"{path}: truncated parameters")
            d.params.append(np.frombuffer(raw, "<f8", size, off).reshape(shape).astype(np.float64))
            off += 8 * size
    if off != len(raw):
        raise ArtifactError(f"{path}: {len(raw) - off} trailing bytes")
    return d
