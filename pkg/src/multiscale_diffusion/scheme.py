"""Inference schemes: ordered (conditioning, generation) index-set pairs.

Every call to the diffusion model sees a window of ``2K + 1`` time steps, of
which ``K + 1`` are conditioning (already observed or generated) and ``K`` are
new. A scheme is the ordered list of such calls that covers the future steps
``1..H`` once each.

Windows are stored as relative index tuples (``templates``) plus an integer
shift, so multiscale templates, the contiguous autoregressive window and the
irregular hierarchy-2 coarse window share one representation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .templates import Template, template_for_horizon, uniform_template

__all__ = [
    "PlanningError",
    "Action",
    "InferenceScheme",
    "AvailabilityState",
    "ValidationReport",
    "default_template_horizons",
    "default_templates",
    "plan_multiscale",
    "plan_autoregressive",
    "plan_hierarchy2",
    "restrict_lookback",
    "extend_scheme",
    "validate_scheme",
    "make_scheme",
]


class PlanningError(RuntimeError):
    """No admissible call exists for the remaining uncovered steps."""

    def __init__(self, message: str, uncovered: Sequence[int] = ()):
        super().__init__(message)
        self.uncovered = tuple(uncovered)


@dataclass(frozen=True)
class Action:
    template_id: int
    shift: int
    cond_mask: tuple[bool, ...]
    block: int = 0


@dataclass(frozen=True)
class InferenceScheme:
    actions: tuple[Action, ...]
    templates: tuple[tuple[int, ...], ...]
    horizon: int
    k: int
    name: str = ""

    def __post_init__(self) -> None:
        for n, a in enumerate(self.actions):
            if not 0 <= a.template_id < len(self.templates):
                raise ValueError(f"action {n}: template_id {a.template_id} out of range")
            if len(a.cond_mask) != len(self.templates[a.template_id]):
                raise ValueError(f"action {n}: mask length does not match its template")

    def __len__(self) -> int:
        return len(self.actions)

    def window(self, n: int) -> tuple[int, ...]:
        a = self.actions[n]
        return tuple(t + a.shift for t in self.templates[a.template_id])

    def relative_window(self, n: int) -> tuple[int, ...]:
        return self.templates[self.actions[n].template_id]

    def conditioning(self, n: int) -> tuple[int, ...]:
        a = self.actions[n]
        return tuple(t for t, m in zip(self.window(n), a.cond_mask) if m)

    def generated(self, n: int) -> tuple[int, ...]:
        a = self.actions[n]
        return tuple(t for t, m in zip(self.window(n), a.cond_mask) if not m)

    @property
    def lookback(self) -> int:
        """Number of observed past steps (besides the present) the scheme reads."""
        lowest = min((min(self.conditioning(n), default=0) for n in range(len(self))), default=0)
        return max(0, -lowest)

    @property
    def n_blocks(self) -> int:
        return 1 + max((a.block for a in self.actions), default=0)

    def first_block(self) -> "InferenceScheme":
        acts = tuple(a for a in self.actions if a.block == 0)
        return replace(self, actions=acts, horizon=self.horizon // self.n_blocks)

    def training_pairs(self) -> list[tuple[tuple[int, ...], tuple[bool, ...]]]:
        """Distinct (relative window, mask) pairs the model is asked to sample."""
        seen = {}
        for a in self.actions:
            key = (self.templates[a.template_id], a.cond_mask)
            seen.setdefault(key, None)
        return list(seen)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "horizon": self.horizon,
            "k": self.k,
            "templates": [list(t) for t in self.templates],
            "actions": [
                {
                    "template_id": a.template_id,
                    "shift": a.shift,
                    "cond_mask": list(a.cond_mask),
                    "block": a.block,
                }
                for a in self.actions
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceScheme":
        return cls(
            actions=tuple(
                Action(
                    int(a["template_id"]),
                    int(a["shift"]),
                    tuple(bool(m) for m in a["cond_mask"]),
                    int(a.get("block", 0)),
                )
                for a in d["actions"]
            ),
            templates=tuple(tuple(int(t) for t in tpl) for tpl in d["templates"]),
            horizon=int(d["horizon"]),
            k=int(d["k"]),
            name=d.get("name", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "InferenceScheme":
        return cls.from_dict(json.loads(text))


@dataclass
class AvailabilityState:
    """Indices known before the next call: observed past plus generated steps."""

    available: set[int] = field(default_factory=set)

    @classmethod
    def initial(cls, lookback: int) -> "AvailabilityState":
        return cls(set(range(-lookback, 1)))

    def __contains__(self, t: int) -> bool:
        return t in self.available

    def missing(self, indices: Iterable[int]) -> list[int]:
        return [t for t in indices if t not in self.available]

    def add(self, indices: Iterable[int]) -> None:
        self.available.update(indices)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violation: str | None = None
    action: int | None = None
    indices: tuple[int, ...] = ()
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_scheme(s: InferenceScheme) -> ValidationReport:
    """Check budget, admissibility, efficiency and completeness, in call order.

    The observed past is taken to be every ``t <= 0``; how far back the data
    must actually reach is ``s.lookback``.
    """
    k = s.k
    generated: set[int] = set()
    for n in range(len(s)):
        cond, gen = s.conditioning(n), s.generated(n)
        if len(cond) != k + 1 or len(gen) != k:
            return ValidationReport(
                False, "budget", n, tuple(s.window(n)),
                f"action {n}: |C|={len(cond)}, |I|={len(gen)}, expected {k + 1} and {k}",
            )
        unavailable = tuple(t for t in cond if t > 0 and t not in generated)
        if unavailable:
            return ValidationReport(
                False, "admissibility", n, unavailable,
                f"action {n} conditions on steps not yet available: {list(unavailable)}",
            )
        clash = tuple(t for t in gen if t <= 0 or t in generated)
        if clash:
            return ValidationReport(
                False, "efficiency", n, clash,
                f"action {n} generates steps that already exist: {list(clash)}",
            )
        generated.update(gen)
    target = set(range(1, s.horizon + 1))
    if generated != target:
        diff = tuple(sorted(target.symmetric_difference(generated)))
        return ValidationReport(
            False, "completeness", None, diff,
            f"generated steps differ from 1..{s.horizon} at {list(diff)}",
        )
    return ValidationReport(True, message="ok")


def _multiples_of_k(horizon: int, k: int) -> list[int]:
    return sorted(set(range(k, horizon, k)) | {horizon})


def _every_horizon(horizon: int, k: int) -> list[int]:
    return list(range(k, horizon + 1))


def _halving(horizon: int, k: int) -> list[int]:
    hs = {horizon}
    h = horizon
    while h > k:
        h = max(k, h // 2)
        hs.add(h)
    return sorted(hs)


# Tried in order until the greedy planner covers the horizon.
TEMPLATE_FAMILIES = (_multiples_of_k, _every_horizon, _halving)


def default_template_horizons(horizon: int, k: int) -> list[int]:
    """Horizons of the first template family used for ``(horizon, k)``.

    Multiples of ``k`` up to ``horizon``, so ``(9, 3)`` gives ``[3, 6, 9]``.
    """
    if k == 1:
        return [1]
    return TEMPLATE_FAMILIES[0](horizon, k)


def default_templates(horizon: int, k: int) -> list[Template]:
    return [template_for_horizon(h, k) for h in default_template_horizons(horizon, k)]


def _as_indices(t: Template | Sequence[int]) -> tuple[int, ...]:
    return tuple(t.indices) if isinstance(t, Template) else tuple(int(i) for i in t)


def plan_multiscale(
    horizon: int,
    k: int,
    templates: Sequence[Template | Sequence[int]] | None = None,
) -> InferenceScheme:
    """Greedy multiscale planner.

    Scans templates from the longest to the shortest and every shift that
    keeps the window inside the horizon, keeping candidates that overlap the
    completed steps in exactly ``k + 1`` positions. A candidate whose last
    index lands on ``horizon`` is taken immediately; otherwise the candidate
    leaving the fewest completed future steps outside the window wins, ties
    going to the earliest one scanned.
    """
    if templates is None:
        return _plan_multiscale_default(horizon, k)
    taus = [_as_indices(t) for t in templates]
    if not taus:
        raise PlanningError("empty template list")
    if any(len(t) != 2 * k + 1 for t in taus):
        raise PlanningError(f"every template must have {2 * k + 1} entries")
    horizons = [max(t) for t in taus]
    if horizons != sorted(horizons):
        raise PlanningError("templates must be ordered by increasing horizon")
    if horizons[-1] != horizon:
        raise PlanningError(f"largest template horizon {horizons[-1]} != requested horizon {horizon}")
    if horizon < k:
        raise PlanningError(f"horizon {horizon} < k {k}")

    lookback = max(-min(t) for t in taus)
    completed = set(range(-lookback, 1))
    future = range(1, horizon + 1)
    actions: list[Action] = []

    while any(t not in completed for t in future):
        best = None
        best_score = math.inf
        done = False
        for n in range(len(taus) - 1, -1, -1):
            tau = taus[n]
            for shift in range(horizon + 1):
                if max(tau) + shift > horizon:
                    continue
                window = [t + shift for t in tau]
                overlap = sum(t in completed for t in window)
                if overlap != k + 1:
                    continue
                window_future = {t for t in window if t > 0}
                already = {t for t in future if t in completed}
                score = len(already - window_future)
                mask = tuple(t in completed for t in window)
                if max(tau) + shift == horizon:
                    best = (n, shift, mask)
                    done = True
                    break
                if score < best_score:
                    best = (n, shift, mask)
                    best_score = score
            if done:
                break
        if best is None:
            uncovered = [t for t in future if t not in completed]
            raise PlanningError(
                f"no template/shift overlaps exactly {k + 1} available steps; "
                f"uncovered steps: {uncovered}",
                uncovered,
            )
        n, shift, mask = best
        completed.update(t + shift for t, m in zip(taus[n], mask) if not m)
        actions.append(Action(n, shift, mask))

    return InferenceScheme(tuple(actions), tuple(taus), horizon, k, name="multiscale")


def _plan_multiscale_default(horizon: int, k: int) -> InferenceScheme:
    if k == 1 and horizon == 1:
        return plan_multiscale(1, 1, [uniform_template(1)])
    if k == 1 or horizon % k:
        raise PlanningError(
            f"horizon {horizon} is not reachable with k={k}: each call adds exactly k steps"
            + (" and k = 1 templates only reach 1" if k == 1 else "")
        )
    err = None
    for family in TEMPLATE_FAMILIES:
        taus = [template_for_horizon(h, k) for h in family(horizon, k)]
        try:
            return plan_multiscale(horizon, k, taus)
        except PlanningError as e:
            err = e
    raise err


def plan_autoregressive(total: int, k: int) -> InferenceScheme:
    """Sliding contiguous window: condition on the last ``k + 1`` steps, generate ``k``.

    The final window may overshoot ``total``; the scheme horizon is rounded up
    to a multiple of ``k`` and callers truncate.
    """
    if total < 1 or k < 1:
        raise ValueError(f"need total >= 1 and k >= 1, got total={total}, k={k}")
    n_calls = -(-total // k)
    mask = (True,) * (k + 1) + (False,) * k
    actions = tuple(Action(0, j * k, mask) for j in range(n_calls))
    return InferenceScheme(actions, (uniform_template(k).indices,), n_calls * k, k, name="autoregressive")


def plan_hierarchy2(horizon: int, k: int) -> InferenceScheme:
    """Coarse anchors first, then contiguous fills.

    The first call conditions on the ``k + 1`` most recent observed steps and
    generates ``k`` evenly spaced anchors ending at the (rounded-up) horizon.
    Later calls slide a contiguous ``2k + 1`` window over the gaps, always
    covering the earliest missing step and preferring windows that condition
    on a frame after the generated ones, so past and future both feed the fill.
    """
    if horizon < k or k < 1:
        raise ValueError(f"need horizon >= k >= 1, got horizon={horizon}, k={k}")
    h = -(-horizon // k) * k
    spacing = h // k
    past = tuple(range(-k, 1))
    coarse = past + tuple(j * spacing for j in range(1, k + 1))
    uniform = uniform_template(k).indices

    templates = [coarse] if coarse == uniform else [coarse, uniform]
    fill_id = len(templates) - 1
    actions = [Action(0, 0, (True,) * (k + 1) + (False,) * k)]
    completed = set(range(-k, 1)) | set(coarse[k + 1:])

    while len(completed) < h + k + 1:
        best = None
        best_key = None
        for shift in range(h - k + 1):
            window = [t + shift for t in uniform]
            mask = tuple(t in completed for t in window)
            if sum(mask) != k + 1 or min(window) < -k:
                continue
            gen = [t for t, m in zip(window, mask) if not m]
            brackets = any(m and t > max(gen) for t, m in zip(window, mask))
            key = (min(gen), not brackets, shift)
            if best_key is None or key < best_key:
                best, best_key = (shift, mask), key
        if best is None:
            uncovered = [t for t in range(1, h + 1) if t not in completed]
            raise PlanningError(f"hierarchy-2 fill stalled; uncovered steps: {uncovered}", uncovered)
        shift, mask = best
        completed.update(t + shift for t, m in zip(uniform, mask) if not m)
        actions.append(Action(fill_id, shift, mask))

    return InferenceScheme(tuple(actions), tuple(templates), h, k, name="hierarchy2")


def restrict_lookback(s: InferenceScheme, past: int) -> InferenceScheme:
    """Keep every conditioning index within ``past`` steps of the present.

    Conditioning positions further back are moved onto the most recent
    observed steps not already in the window. Applied to a single block; use
    :func:`extend_scheme` afterwards to repeat it.
    """
    if past < s.k:
        raise ValueError(f"past horizon {past} cannot hold {s.k + 1} conditioning steps")
    templates: list[tuple[int, ...]] = []
    actions = []
    for n, a in enumerate(s.actions):
        window = list(s.window(n))
        cond = [t for t, m in zip(window, a.cond_mask) if m]
        gen = [t for t, m in zip(window, a.cond_mask) if not m]
        kept = [t for t in cond if t >= -past]
        spare = [t for t in range(0, -past - 1, -1) if t not in window]
        kept += spare[: len(cond) - len(kept)]
        new_window = sorted(kept + gen)
        mask = tuple(t in kept for t in new_window)
        rel = tuple(t - a.shift for t in new_window)
        if rel not in templates:
            templates.append(rel)
        actions.append(Action(templates.index(rel), a.shift, mask, a.block))
    name = f"{s.name}:past{past}" if s.name else f"past{past}"
    return InferenceScheme(tuple(actions), tuple(templates), s.horizon, s.k, name=name)


def extend_scheme(s: InferenceScheme, total: int) -> InferenceScheme:
    """Repeat ``s`` with the present moved to the end of each completed block."""
    if total < s.horizon:
        raise ValueError(f"total {total} is shorter than the scheme horizon {s.horizon}")
    blocks = -(-total // s.horizon)
    if blocks == 1:
        return s
    actions = tuple(
        Action(a.template_id, a.shift + b * s.horizon, a.cond_mask, b)
        for b in range(blocks)
        for a in s.actions
    )
    return InferenceScheme(actions, s.templates, blocks * s.horizon, s.k, name=s.name)


def make_scheme(kind: str, horizon: int, k: int) -> InferenceScheme:
    """Build a single-block scheme from a name such as ``multiscale:past3``."""
    base, _, suffix = kind.partition(":")
    if base == "multiscale":
        s = plan_multiscale(horizon, k)
    elif base == "autoregressive":
        s = plan_autoregressive(k, k)
    elif base == "hierarchy2":
        s = plan_hierarchy2(horizon, k)
    else:
        raise ValueError(f"unknown scheme kind {kind!r}")
    if suffix:
        if not suffix.startswith("past"):
            raise ValueError(f"unknown scheme modifier {suffix!r}")
        s = restrict_lookback(s, int(suffix[4:]))
    return s
