"""Prompt grammar and judging rules for the local scene reader.

This mirrors the documented wire-side conventions: prompts are
requirements like "8 red squares" joined by " and ", optionally carrying a
parenthesized placement, either "k in the top A rows, m in the bottom B
rows" or a comma-separated list of "k in rows A-B" with 1-indexed inclusive
row ranges.  A cell is judged impossible when its visible rows already
contradict the prompt:

* more of a required type than the prompt's total, or
* any object of a type the prompt never mentions, or
* a placement band fully inside the visible rows with the wrong count.

Anything else stays possible; partial bands are never judged.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .classify import Label

_REQ = re.compile(
    r"^(\d+) (red|green|blue|yellow) (square|circle|triangle)s?(?: \((.+)\))?$"
)
_TOP = re.compile(r"^(\d+) in the top (\d+) rows$")
_BOT = re.compile(r"^(\d+) in the bottom (\d+) rows$")
_BAND = re.compile(r"^(\d+) in rows (\d+)-(\d+)$")


@dataclass(frozen=True)
class Band:
    row_start: int  # 0-based half-open over the final image
    row_end: int
    count: int


@dataclass(frozen=True)
class Need:
    count: int
    color: str
    shape: str
    bands: tuple[Band, ...] = field(default_factory=tuple)

    @property
    def type(self) -> tuple[str, str]:
        return (self.color, self.shape)


def _parse_placement(text: str) -> tuple[Band, ...]:
    items = text.split(", ")
    if len(items) == 2:
        top, bot = _TOP.match(items[0]), _BOT.match(items[1])
        if top and bot:
            k1, a = int(top.group(1)), int(top.group(2))
            k2, b = int(bot.group(1)), int(bot.group(2))
            return (Band(0, a, k1), Band(a, a + b, k2))
    bands = []
    for item in items:
        m = _BAND.match(item)
        if m is None:
            raise ValueError(f"cannot parse placement item {item!r}")
        k, a, b = (int(g) for g in m.groups())
        if a < 1 or b < a:
            raise ValueError(f"bad row range {a}-{b}")
        bands.append(Band(a - 1, b, k))
    return tuple(bands)


def parse_needs(prompt: str) -> list[Need]:
    """Parse prompt text; raises ValueError on anything off-grammar."""
    if not prompt.strip():
        raise ValueError("empty prompt")
    needs: list[Need] = []
    for chunk in prompt.split(" and "):
        m = _REQ.match(chunk.strip())
        if m is None:
            raise ValueError(f"cannot parse requirement {chunk!r}")
        count, color, shape, placement = m.groups()
        bands = _parse_placement(placement) if placement is not None else ()
        needs.append(Need(int(count), color, shape, bands))
    seen = [n.type for n in needs]
    if len(set(seen)) != len(seen):
        raise ValueError("duplicate object type across requirements")
    return needs


def _cell_counts(cell_labels: list[list[Label]]) -> Counter:
    return Counter(lab for row in cell_labels for lab in row if lab is not None)


def judge_cell(cell_labels: list[list[Label]], needs: list[Need]) -> str:
    """possible/impossible for one cell's visible tile rows."""
    counts = _cell_counts(cell_labels)
    wanted = {n.type: n for n in needs}
    for t, drawn in counts.items():
        need = wanted.get(t)
        if need is None:
            return "impossible"
        if drawn > need.count:
            return "impossible"
    visible = len(cell_labels)
    for need in needs:
        for band in need.bands:
            if band.row_end > visible:
                continue  # band not fully visible yet
            in_band = sum(
                1 for row in cell_labels[band.row_start: band.row_end]
                for lab in row if lab == need.type
            )
            if in_band != band.count:
                return "impossible"
    return "possible"


def _plural(noun: str, n: int) -> str:
    return noun if n == 1 else noun + "s"


def reformulate(cell_labels: list[list[Label]], total_rows: int,
                needs: list[Need]) -> tuple[str | None, list[dict] | None]:
    """Pin the accepted cell's visible counts into a top/bottom split.

    Declines (returns nulls) when the prompt already carries placements;
    re-splitting those is the oracle's job, not this reference reader's.
    """
    if any(n.bands for n in needs):
        return None, None
    visible = len(cell_labels)
    if not 0 < visible < total_rows:
        return None, None
    counts = _cell_counts(cell_labels)
    parts: list[str] = []
    directives: list[dict] = []
    for need in needs:
        k = min(counts.get(need.type, 0), need.count)
        parts.append(
            f"{need.count} {need.color} {_plural(need.shape, need.count)} "
            f"({k} in the top {visible} rows, {need.count - k} in the bottom "
            f"{total_rows - visible} rows)"
        )
        directives.append({"color": need.color, "shape": need.shape,
                           "row_start": 0, "row_end": visible, "count": k})
        directives.append({"color": need.color, "shape": need.shape,
                           "row_start": visible, "row_end": total_rows,
                           "count": need.count - k})
    return " and ".join(parts), directives
