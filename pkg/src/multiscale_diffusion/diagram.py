"""Box diagrams of inference schemes, one row per model call."""

from __future__ import annotations

from .scheme import InferenceScheme

COND, GEN, AVAIL, EMPTY = "C", "G", "#", "."

_COLORS = {COND: "#ff0000", GEN: "#0000ff", AVAIL: "#323232", EMPTY: "#ffffff"}


def _rows(s: InferenceScheme) -> tuple[range, list[tuple[int, list[str]]]]:
    start = -s.lookback
    cols = range(start, s.horizon + 1)
    available = set(range(start, 1))
    rows = []
    for n in range(len(s)):
        cond, gen = set(s.conditioning(n)), set(s.generated(n))
        cells = []
        for t in cols:
            if t in cond:
                cells.append(COND)
            elif t in gen:
                cells.append(GEN)
            elif t in available:
                cells.append(AVAIL)
            else:
                cells.append(EMPTY)
        rows.append((s.actions[n].template_id + 1, cells))
        available |= gen
    return cols, rows


def render_text(s: InferenceScheme) -> str:
    """ASCII diagram: ``C`` conditioned, ``G`` generated, ``#`` available, ``.`` not yet known.

    The number at the end of each row is the 1-based template used by the call.
    """
    cols, rows = _rows(s)
    width = max(len(str(c)) for c in cols)
    lines = [f"# {s.name or 'scheme'}: horizon={s.horizon} k={s.k} calls={len(s)}"]
    lines.append("  ".join([" " * 4] + [str(c).rjust(width) for c in cols]))
    for n, (tid, cells) in enumerate(rows, 1):
        body = "  ".join(c.rjust(width) for c in cells)
        lines.append(f"{n:>4}  {body}  [{tid}]")
    return "\n".join(lines) + "\n"


def render_svg(s: InferenceScheme, cell: int = 14, gap: int = 2) -> str:
    cols, rows = _rows(s)
    left, top = 40, 24
    w = left + len(cols) * (cell + gap) + 40
    h = top + len(rows) * (cell + gap) + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'font-family="monospace" font-size="10">'
    ]
    for j, t in enumerate(cols):
        if t % 3 == 0 or t == s.horizon:
            x = left + j * (cell + gap) + cell // 2
            out.append(f'<text x="{x}" y="{top - 6}" text-anchor="middle">{t}</text>')
    for i, (tid, cells) in enumerate(rows):
        y = top + i * (cell + gap)
        out.append(f'<text x="{left - 6}" y="{y + cell - 3}" text-anchor="end">{i + 1}</text>')
        for j, c in enumerate(cells):
            x = left + j * (cell + gap)
            out.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_COLORS[c]}" stroke="#999999" stroke-width="0.5"/>'
            )
        x = left + len(cells) * (cell + gap) + 4
        out.append(f'<text x="{x}" y="{y + cell - 3}">{tid}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
