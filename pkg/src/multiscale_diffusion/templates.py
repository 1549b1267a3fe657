"""Multiscale temporal templates.

A template is a symmetric set of ``2K + 1`` integer time offsets around the
present. Offsets grow as partial sums of powers of ``alpha``, so a fixed
budget of ``K`` positions reaches a horizon exponential in ``K``; ``alpha = 1``
gives the contiguous window ``{-K, ..., K}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "TemplateError",
    "TemplateSpec",
    "Template",
    "build_template",
    "template_horizon",
    "solve_alpha_for_horizon",
    "template_for_horizon",
    "shift_indices",
    "uniform_template",
]

ALPHA_TOL = 1e-9


class TemplateError(ValueError):
    """Invalid template parameters."""


@dataclass(frozen=True)
class TemplateSpec:
    alpha: float
    k: int

    def __post_init__(self) -> None:
        if not (self.alpha >= 1.0) or not math.isfinite(self.alpha):
            raise TemplateError(f"alpha must be a finite real >= 1, got {self.alpha}")
        if int(self.k) != self.k or self.k < 1:
            raise TemplateError(f"k must be a positive integer, got {self.k}")


@dataclass(frozen=True)
class Template:
    indices: tuple[int, ...]
    spec: TemplateSpec

    @property
    def horizon(self) -> int:
        return self.indices[-1]

    @property
    def k(self) -> int:
        return self.spec.k

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)


def _positive_offsets(alpha: float, k: int) -> list[float]:
    # t_{j+1} = t_j + alpha**j, kept real until the final integer mapping
    t = 0.0
    out = []
    for j in range(k):
        t += alpha**j
        out.append(t)
    return out


def _continuous_horizon(alpha: float, k: int) -> float:
    return _positive_offsets(alpha, k)[-1]


def build_template(spec: TemplateSpec) -> Template:
    """Integer template for ``spec``.

    The positive side is ``floor`` of the real partial sums; the negative side
    mirrors it, which keeps the set symmetric about zero.
    """
    pos = [int(math.floor(t)) for t in _positive_offsets(spec.alpha, spec.k)]
    indices = tuple([-t for t in reversed(pos)] + [0] + pos)
    return Template(indices=indices, spec=spec)


def uniform_template(k: int) -> Template:
    return build_template(TemplateSpec(1.0, k))


def template_horizon(t: Template) -> int:
    return max(t.indices)


def solve_alpha_for_horizon(h: int, k: int) -> float:
    """Smallest ``alpha >= 1`` whose template has horizon ``h``.

    Bisects the continuous horizon ``sum_{j<k} alpha**j``, which is
    nondecreasing in ``alpha``, and returns the upper end of the final bracket
    so the floored horizon is never one short because of rounding.

    >>> solve_alpha_for_horizon(3, 3)
    1.0
    """
    if int(h) != h or int(k) != k or k < 1:
        raise TemplateError(f"h and k must be integers with k >= 1, got h={h}, k={k}")
    if h < k:
        raise TemplateError(f"horizon {h} is below the uniform-window horizon {k}")
    if k == 1:
        if h != 1:
            raise TemplateError("with k = 1 every template is {-1, 0, 1}; only h = 1 is reachable")
        return 1.0
    if _continuous_horizon(1.0, k) >= h:
        return 1.0

    lo, hi = 1.0, float(h)
    while hi - lo > ALPHA_TOL:
        mid = 0.5 * (lo + hi)
        if _continuous_horizon(mid, k) >= h:
            hi = mid
        else:
            lo = mid
    return hi


def template_for_horizon(h: int, k: int) -> Template:
    return build_template(TemplateSpec(solve_alpha_for_horizon(h, k), k))


def shift_indices(t: Template | tuple[int, ...], s: int) -> tuple[int, ...]:
    indices = t.indices if isinstance(t, Template) else t
    return tuple(i + s for i in indices)
