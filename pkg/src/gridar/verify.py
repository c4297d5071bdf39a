"""Verifier, reformulator, and outcome-reward oracles.

The oracles judge synthetic scenes exactly from token content, so they have
no false rejections: a prefix is marked impossible only when no continuation
can satisfy the prompt.  Remote (wire-protocol) verification lives in wire.py
and plugs into the same pipeline-facing adapter shapes defined here.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .canvas import CanvasSpec, TokenCanvas, extract_band
from .errors import InfeasibleRemainder, OutOfRange, ShapeMismatch, UnpopulatedCanvas
from .prompts import (
    BACKGROUND,
    CountTable,
    DirectiveEntry,
    Requirement,
    ScenePrompt,
    scene_counts,
    token_type,
    type_token,
)

POSSIBLE = "possible"
IMPOSSIBLE = "impossible"


@dataclass(frozen=True)
class Verdict:
    candidate_index: int
    judgment: str  # POSSIBLE | IMPOSSIBLE
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.judgment not in (POSSIBLE, IMPOSSIBLE):
            raise ValueError(f"judgment must be possible/impossible, got {self.judgment!r}")

    @property
    def possible(self) -> bool:
        return self.judgment == POSSIBLE


@dataclass(frozen=True)
class OrmScore:
    candidate_index: int
    score: float


def judge_prefix(tokens, spec: CanvasSpec, prompt: ScenePrompt) -> tuple[str, str | None]:
    """Judge one candidate's visible prefix (whole rows) as possible/impossible.

    Impossible exactly when the prefix is unfixable by any continuation:
    a required type already over its total quota, a token of an unrequested
    type present, or a directive band that is fully visible missing its quota.
    """
    toks = np.asarray(tokens)
    if toks.ndim != 1 or len(toks) % spec.w:
        raise ShapeMismatch(f"prefix of {len(toks)} tokens is not whole rows of width {spec.w}")
    visible_rows = len(toks) // spec.w
    required = {r.type: r.count for r in prompt.requirements}

    drawn: dict = {}
    for tok in toks:
        tok = int(tok)
        if tok == BACKGROUND:
            continue
        t = token_type(tok, spec.K)
        drawn[t] = drawn.get(t, 0) + 1

    for t, n in drawn.items():
        if t in required and n > required[t]:
            color, shape = t
            return IMPOSSIBLE, f"{n} {color} {shape}s exceed quota {required[t]}"
    for t, n in drawn.items():
        if t not in required:
            color, shape = t
            return IMPOSSIBLE, f"unrequested {color} {shape} present"
    rows = np.arange(len(toks)) // spec.w
    for e in prompt.directives:
        if e.row_end > visible_rows:
            continue
        sel = toks[(rows >= e.row_start) & (rows < e.row_end)]
        in_band = int((sel == type_token(e.color, e.shape)).sum())
        if in_band != e.count:
            color, shape = e.type
            return (
                IMPOSSIBLE,
                f"rows {e.row_start}-{e.row_end - 1} hold {in_band} {color} {shape}s, directive says {e.count}",
            )
    return POSSIBLE, None


def oracle_judge(canvas: TokenCanvas, prompt: ScenePrompt, R: int) -> list[Verdict]:
    """Judge the R cells of a composed grid canvas, one verdict per cell.

    Each cell holds a candidate's opening prefix (h/R rows of its own image);
    cells are judged independently of one another.
    """
    if not canvas.complete:
        raise UnpopulatedCanvas(
            f"composed grid needs all {canvas.spec.n_tokens} tokens, has {canvas.filled}"
        )
    out = []
    for r in range(R):
        cell = extract_band(canvas, r, R)
        judgment, reason = judge_prefix(cell, canvas.spec, prompt)
        out.append(Verdict(candidate_index=r, judgment=judgment, reason=reason))
    return out


def oracle_reformulate(
    prompt: ScenePrompt, accepted_counts: CountTable, visible_fraction: float
) -> ScenePrompt:
    """Rewrite the prompt with per-band layout directives grounded in what an
    accepted candidate actually drew in its visible rows.

    accepted_counts holds one entry per visible row (row band of height 1).
    Types without directives get a two-band split at the visible boundary:
    the visible band's quota is the drawn count, the remainder band carries
    total - drawn.  Types that already had directives keep their structure,
    with any band straddling the boundary split the same way.
    """
    visible_rows = len(accepted_counts)
    if visible_rows == 0:
        raise OutOfRange("no visible rows to ground a reformulation in")
    frac = Fraction(visible_fraction).limit_denominator(10**6)
    h = frac.denominator * visible_rows // frac.numerator if frac.numerator else 0
    if frac.numerator == 0 or Fraction(visible_rows, h) != frac:
        raise OutOfRange(
            f"visible fraction {visible_fraction} inconsistent with {visible_rows} visible rows"
        )
    if visible_rows >= h:
        raise OutOfRange("reformulation needs unseen rows remaining")

    def drawn_in(t, r0: int, r1: int) -> int:
        r1 = min(r1, visible_rows)
        return sum(accepted_counts[r].get(t, 0) for r in range(r0, r1))

    directives: list[DirectiveEntry] = []
    for req in prompt.requirements:
        t = req.type
        color, shape = t
        entries = prompt.entries_for(t)
        if not entries:
            k = drawn_in(t, 0, visible_rows)
            if k > req.count:
                raise InfeasibleRemainder(
                    f"{k} {color} {shape}s drawn exceed the quota of {req.count}"
                )
            directives.append(DirectiveEntry(color, shape, 0, visible_rows, k))
            directives.append(DirectiveEntry(color, shape, visible_rows, h, req.count - k))
            continue
        for e in entries:
            if e.row_end <= visible_rows:
                # fully visible: pin the band to what is actually there
                k = drawn_in(t, e.row_start, e.row_end)
                directives.append(DirectiveEntry(color, shape, e.row_start, e.row_end, k))
            elif e.row_start >= visible_rows:
                directives.append(e)
            else:
                k = drawn_in(t, e.row_start, visible_rows)
                if k > e.count:
                    raise InfeasibleRemainder(
                        f"band [{e.row_start}, {e.row_end}) already holds {k} of {e.count} {color} {shape}s"
                    )
                directives.append(DirectiveEntry(color, shape, e.row_start, visible_rows, k))
                directives.append(DirectiveEntry(color, shape, visible_rows, e.row_end, e.count - k))

    # pinning fully-visible bands to their drawn counts can shift a type's
    # total; keep requirements consistent, dropping any type pinned to zero
    requirements = []
    kept_directives = []
    for req in prompt.requirements:
        total = sum(d.count for d in directives if d.type == req.type)
        if total == 0:
            continue
        if total != req.count:
            requirements.append(Requirement(count=total, color=req.color, shape=req.shape))
        else:
            requirements.append(req)
        kept_directives.extend(d for d in directives if d.type == req.type)
    if not requirements:
        raise InfeasibleRemainder("every required type pinned to zero; nothing left to ask for")
    return ScenePrompt(tuple(requirements), tuple(kept_directives))


def oracle_orm(canvas: TokenCanvas, prompt: ScenePrompt, candidate_index: int = 0) -> OrmScore:
    """Score a complete canvas: 0 for an exact match, else the negated sum of
    per-type count errors plus the spurious-token count.

    Prompts carrying layout directives add each band's absolute count error
    to the penalty; a directive-free prompt scores on type totals alone.
    """
    if not canvas.complete:
        raise UnpopulatedCanvas(
            f"ORM needs a complete canvas, has {canvas.filled}/{canvas.spec.n_tokens} tokens"
        )
    counts = scene_counts(canvas)[0]
    required = {r.type: r.count for r in prompt.requirements}
    miss = 0
    for t, quota in required.items():
        miss += abs(counts.get(t, 0) - quota)
    spurious = sum(n for t, n in counts.items() if t not in required)
    band_miss = 0
    if prompt.directives:
        band_counts = scene_counts(canvas, [(e.row_start, e.row_end) for e in prompt.directives])
        for e, in_band in zip(prompt.directives, band_counts):
            band_miss += abs(in_band.get(e.type, 0) - e.count)
    total = miss + spurious + band_miss
    score = 0.0 if total == 0 else -float(total)
    return OrmScore(candidate_index=candidate_index, score=score)


def pick_best(scores: list[OrmScore]) -> OrmScore:
    """Highest score wins; exact ties go to the lowest candidate index."""
    if not scores:
        raise ValueError("no candidates to select from")
    best = scores[0]
    for s in scores[1:]:
        if s.score > best.score or (s.score == best.score and s.candidate_index < best.candidate_index):
            best = s
    return best


@dataclass(frozen=True)
class StageAssessment:
    """What a verifier hands back at a stage boundary."""

    verdicts: tuple[Verdict, ...]
    reformulated: ScenePrompt | None = None


class OracleVerifier:
    """Pipeline-facing adapter over the exact-count oracles."""

    def assess(
        self,
        canvas: TokenCanvas,
        prompt: ScenePrompt,
        R: int,
        stage: int,
        want_reformulation: bool = False,
    ) -> StageAssessment:
        verdicts = tuple(oracle_judge(canvas, prompt, R))
        reformulated = None
        if want_reformulation:
            accepted = [v.candidate_index for v in verdicts if v.possible]
            if accepted:
                reformulated = reformulate_from_cell(canvas, prompt, R, accepted[0])
        return StageAssessment(verdicts=verdicts, reformulated=reformulated)


def reformulate_from_cell(
    canvas: TokenCanvas, prompt: ScenePrompt, R: int, cell_index: int
) -> ScenePrompt:
    """Ground a reformulation in one composed-grid cell's visible prefix."""
    spec = canvas.spec
    cell = extract_band(canvas, cell_index, R)
    visible_rows = len(cell) // spec.w
    part = TokenCanvas(spec, _padded(cell, spec), filled=len(cell))
    counts = scene_counts(part, [(r, r + 1) for r in range(visible_rows)])
    return oracle_reformulate(prompt, counts, visible_rows / spec.h)


def _padded(cell: np.ndarray, spec: CanvasSpec) -> np.ndarray:
    from .canvas import UNSET

    out = np.full(spec.n_tokens, UNSET, dtype=np.int32)
    out[: len(cell)] = cell
    return out


class OracleReformulator:
    """Pipeline-facing reformulation grounded in a composed-grid cell."""

    def reformulate(
        self, canvas: TokenCanvas, prompt: ScenePrompt, R: int, cell_index: int
    ) -> ScenePrompt:
        return reformulate_from_cell(canvas, prompt, R, cell_index)


class OracleOrm:
    """Pipeline-facing outcome scorer over the exact-count oracle."""

    def score(self, canvas: TokenCanvas, prompt: ScenePrompt, candidate_index: int = 0) -> OrmScore:
        return oracle_orm(canvas, prompt, candidate_index)


class NoisyOracle:
    """Oracle verifier with independently flipped judgments; accuracy knob."""

    def __init__(self, error_rate: float, seed: int) -> None:
        if not 0 <= error_rate <= 1:
            raise ValueError(f"error rate {error_rate} outside [0, 1]")
        self.error_rate = error_rate
        self._rng = np.random.default_rng(seed)

    def assess(
        self,
        canvas: TokenCanvas,
        prompt: ScenePrompt,
        R: int,
        stage: int,
        want_reformulation: bool = False,
    ) -> StageAssessment:
        base = OracleVerifier().assess(canvas, prompt, R, stage, want_reformulation)
        flips = self._rng.random(R) < self.error_rate
        verdicts = tuple(
            Verdict(
                v.candidate_index,
                (IMPOSSIBLE if v.possible else POSSIBLE) if flip else v.judgment,
                "flipped by noise model" if flip else v.reason,
            )
            for v, flip in zip(base.verdicts, flips)
        )
        return StageAssessment(verdicts=verdicts, reformulated=base.reformulated)


class AcceptAllVerifier:
    """No pruning: every cell judged possible, never reformulates."""

    def assess(
        self,
        canvas: TokenCanvas,
        prompt: ScenePrompt,
        R: int,
        stage: int,
        want_reformulation: bool = False,
    ) -> StageAssessment:
        return StageAssessment(
            verdicts=tuple(Verdict(r, POSSIBLE) for r in range(R)), reformulated=None
        )
