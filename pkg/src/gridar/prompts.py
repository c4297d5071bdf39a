"""Scene prompts: palette, requirement/directive types, text grammar, counting.

The palette is a fixed 4-color x 3-shape product plus a background token,
so the full codebook is K = 13.  Specs with smaller K use the leading
object types only (useful for exhaustive small-canvas tests).

Prompt text grammar (canonical form, round-trips through parse_prompt):

    prompt      := requirement (" and " requirement)*
    requirement := COUNT " " COLOR " " SHAPE["s"] [" (" placement ")"]
    placement   := topbottom | bandlist
    topbottom   := COUNT " in the top " N " rows, " COUNT " in the bottom " N " rows"
    bandlist    := COUNT " in rows " A "-" B (", " COUNT " in rows " A "-" B)*

Row ranges in text are 1-indexed inclusive; in code they are 0-indexed
half-open.  The top/bottom sugar is used exactly when a type's directives
are two adjacent bands starting at row 0.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .canvas import CanvasSpec, TokenCanvas
from .errors import PromptGrammarError, ShapeMismatch, UnknownToken

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("square", "circle", "triangle")
BACKGROUND = 0
FULL_K = 1 + len(COLORS) * len(SHAPES)

ObjectType = tuple[str, str]  # (color, shape)


def type_token(color: str, shape: str) -> int:
    """Codebook id of an object type."""
    try:
        return 1 + COLORS.index(color) * len(SHAPES) + SHAPES.index(shape)
    except ValueError:
        raise UnknownToken(f"no palette entry for {color} {shape}") from None


def token_type(token: int, K: int = FULL_K) -> ObjectType | None:
    """Object type of a token id, or None for background."""
    if not 0 <= token < K:
        raise UnknownToken(f"token {token} outside codebook of {K}")
    if token == BACKGROUND:
        return None
    i = token - 1
    return (COLORS[i // len(SHAPES)], SHAPES[i % len(SHAPES)])


def object_types(K: int = FULL_K) -> list[ObjectType]:
    """Object types available in a codebook of size K, in token-id order."""
    if not 2 <= K <= FULL_K:
        raise UnknownToken(f"codebook size {K} outside [2, {FULL_K}]")
    return [token_type(t, K) for t in range(1, K)]  # type: ignore[misc]


@dataclass(frozen=True)
class Requirement:
    count: int
    color: str
    shape: str

    def __post_init__(self) -> None:
        if self.count < 1:
            raise PromptGrammarError(f"requirement count must be >= 1, got {self.count}")
        type_token(self.color, self.shape)  # validates palette membership

    @property
    def type(self) -> ObjectType:
        return (self.color, self.shape)


@dataclass(frozen=True)
class DirectiveEntry:
    """Per-(type, band) placement quota over the full final canvas."""

    color: str
    shape: str
    row_start: int
    row_end: int
    count: int

    def __post_init__(self) -> None:
        type_token(self.color, self.shape)
        if self.row_start < 0 or self.row_end <= self.row_start:
            raise PromptGrammarError(
                f"directive band [{self.row_start}, {self.row_end}) is empty or negative"
            )
        if self.count < 0:
            raise PromptGrammarError(f"directive count must be >= 0, got {self.count}")

    @property
    def type(self) -> ObjectType:
        return (self.color, self.shape)


@dataclass(frozen=True)
class ScenePrompt:
    """What a scene should contain, optionally pinned to row bands."""

    requirements: tuple[Requirement, ...]
    directives: tuple[DirectiveEntry, ...] = ()

    def __post_init__(self) -> None:
        if not self.requirements:
            raise PromptGrammarError("a prompt needs at least one requirement")
        types = [r.type for r in self.requirements]
        if len(set(types)) != len(types):
            raise PromptGrammarError("duplicate object type across requirements")
        order = {t: i for i, t in enumerate(types)}
        for e in self.directives:
            if e.type not in order:
                raise PromptGrammarError(f"directive for {e.type} which is not required")
        # normalize: sort by (requirement order, band start)
        entries = tuple(sorted(self.directives, key=lambda e: (order[e.type], e.row_start)))
        object.__setattr__(self, "directives", entries)
        # one directive per (band, type); bands per type disjoint; quotas sum to the count
        for req in self.requirements:
            mine = [e for e in entries if e.type == req.type]
            if not mine:
                continue
            for a, b in zip(mine, mine[1:]):
                if b.row_start < a.row_end:
                    raise PromptGrammarError(f"overlapping directive bands for {req.type}")
            total = sum(e.count for e in mine)
            if total != req.count:
                raise PromptGrammarError(
                    f"directive quotas for {req.type} sum to {total}, requirement says {req.count}"
                )

    def requirement_for(self, t: ObjectType) -> Requirement | None:
        for r in self.requirements:
            if r.type == t:
                return r
        return None

    def entries_for(self, t: ObjectType) -> tuple[DirectiveEntry, ...]:
        return tuple(e for e in self.directives if e.type == t)

    @property
    def has_directives(self) -> bool:
        return bool(self.directives)


# ============================================================
# text grammar
# ============================================================

def _plural(noun: str, n: int) -> str:
    return noun if n == 1 else noun + "s"


def _render_placement(entries: tuple[DirectiveEntry, ...]) -> str:
    if (
        len(entries) == 2
        and entries[0].row_start == 0
        and entries[1].row_start == entries[0].row_end
    ):
        top, bot = entries
        return (
            f"{top.count} in the top {top.row_end} rows, "
            f"{bot.count} in the bottom {bot.row_end - bot.row_start} rows"
        )
    return ", ".join(
        f"{e.count} in rows {e.row_start + 1}-{e.row_end}" for e in entries
    )


def text_form(prompt: ScenePrompt) -> str:
    """Canonical human-readable rendering; parse_prompt inverts it."""
    parts = []
    for req in prompt.requirements:
        s = f"{req.count} {req.color} {_plural(req.shape, req.count)}"
        entries = prompt.entries_for(req.type)
        if entries:
            s += f" ({_render_placement(entries)})"
        parts.append(s)
    return " and ".join(parts)


_REQ = re.compile(
    r"^(\d+) (red|green|blue|yellow) (square|circle|triangle)s?(?: \((.+)\))?$"
)
_TOP = re.compile(r"^(\d+) in the top (\d+) rows$")
_BOT = re.compile(r"^(\d+) in the bottom (\d+) rows$")
_BAND = re.compile(r"^(\d+) in rows (\d+)-(\d+)$")


def _parse_placement(text: str, color: str, shape: str) -> list[DirectiveEntry]:
    items = text.split(", ")
    tops = [_TOP.match(i) for i in items]
    bots = [_BOT.match(i) for i in items]
    if len(items) == 2 and tops[0] and bots[1]:
        k1, a = int(tops[0].group(1)), int(tops[0].group(2))
        k2, b = int(bots[1].group(1)), int(bots[1].group(2))
        return [
            DirectiveEntry(color, shape, 0, a, k1),
            DirectiveEntry(color, shape, a, a + b, k2),
        ]
    out = []
    for item in items:
        m = _BAND.match(item)
        if m is None:
            raise PromptGrammarError(f"cannot parse placement item {item!r}")
        k, a, b = int(m.group(1)), int(m.group(2)), int(m.group(3))
        out.append(DirectiveEntry(color, shape, a - 1, b, k))
    return out


def parse_prompt(text: str) -> ScenePrompt:
    """Parse the canonical grammar back into a ScenePrompt."""
    if not text.strip():
        raise PromptGrammarError("empty prompt text")
    reqs: list[Requirement] = []
    entries: list[DirectiveEntry] = []
    for chunk in text.split(" and "):
        m = _REQ.match(chunk.strip())
        if m is None:
            raise PromptGrammarError(f"cannot parse requirement {chunk!r}")
        count, color, shape, placement = int(m.group(1)), m.group(2), m.group(3), m.group(4)
        reqs.append(Requirement(count, color, shape))
        if placement is not None:
            entries.extend(_parse_placement(placement, color, shape))
    return ScenePrompt(tuple(reqs), tuple(entries))


# ============================================================
# counting
# ============================================================

CountTable = list[dict[ObjectType, int]]


def scene_counts(
    canvas: TokenCanvas, bands: list[tuple[int, int]] | None = None
) -> CountTable:
    """Object counts per row band over the populated prefix.

    ``bands`` is a list of (row_start, row_end) half-open pairs; None means
    one band spanning the whole canvas.  Unpopulated cells contribute nothing.
    """
    spec = canvas.spec
    if bands is None:
        bands = [(0, spec.h)]
    toks = canvas.tokens[: canvas.filled]
    rows = np.arange(canvas.filled) // spec.w
    table: CountTable = []
    for r0, r1 in bands:
        if not 0 <= r0 < r1 <= spec.h:
            raise ShapeMismatch(f"band [{r0}, {r1}) outside canvas of height {spec.h}")
        sel = toks[(rows >= r0) & (rows < r1)]
        c: Counter = Counter(int(t) for t in sel if t != BACKGROUND)
        table.append({token_type(t, spec.K): n for t, n in sorted(c.items())})  # type: ignore[misc]
    return table


def count_by_type(canvas: TokenCanvas) -> dict[ObjectType, int]:
    """Whole-prefix counts, one dict."""
    return scene_counts(canvas)[0]


def spec_for(h: int = 16, w: int = 16, tile_px: int = 16) -> CanvasSpec:
    """CanvasSpec with the full palette codebook."""
    return CanvasSpec(h=h, w=w, K=FULL_K, tile_px=tile_px)
