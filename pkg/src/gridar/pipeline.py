"""Staged grid generation with verification, anchoring, and ORM selection.

One run under plan (R1, R2) on an h x w canvas:

  stage 1   R1 band candidates, each decoded as the opening h/R1 rows of
            its own image, composed into one grid and verified; rejected
            slots are refilled with uniformly chosen accepted candidates;
  boundary  optionally the prompt is reformulated with band directives
            grounded in the first accepted candidate, and later decoding
            switches to the configured guidance mode;
  stage 2   every anchor extends to h/R2 rows; extensions are re-composed
            (R2 cells per grid), verified, and re-anchored the same way;
  stage 3   every anchor completes to a full canvas; the outcome reward
            model scores all finals and the best one wins.

Each start canvas keeps R1 lineage slots alive throughout, and every slot
samples exactly h*w tokens across the three stages, so n_start * R1 finals
cost n_start * R1 * h * w generated tokens, the same as Best-of-N at
N = n_start * R1.

All randomness flows through per-site substreams of one master seed
(keyed by kind, start canvas, stage, slot, retry), so serial and
concurrent execution produce byte-identical results.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .canvas import TokenCanvas, compose_grid
from .decode import BudgetLedger, decode_segment
from .errors import (
    AllRejected,
    IndivisibleCanvas,
    InfeasibleRemainder,
    LengthMismatch,
    VerifierError,
)
from .guidance import GuidanceConfig, GuidanceMode
from .prompts import ScenePrompt, parse_prompt, text_form
from .scene import PromptBundle
from .verify import POSSIBLE, StageAssessment, Verdict, pick_best

log = logging.getLogger("gridar.pipeline")

# substream kinds (first spawn-key element): decode draws vs replacement draws
KIND_DECODE = 0
KIND_REPLACE = 1

RETRY_THEN_ACCEPT = "retry_once_then_accept_all"
ACCEPT_ALL = "accept_all"
ABORT = "abort"
_POLICIES = (RETRY_THEN_ACCEPT, ACCEPT_ALL, ABORT)


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for one pipeline site, independent of all others."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class StagePlan:
    """Geometry and policy of one staged run."""

    R1: int = 4
    R2: int = 2
    n_start_canvases: int = 1
    reformulate_at: frozenset = frozenset({1})
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    all_rejected_policy: str = RETRY_THEN_ACCEPT
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.R1 < 1 or self.R2 < 1:
            raise ValueError(f"band counts must be >= 1, got R1={self.R1}, R2={self.R2}")
        if self.R1 % self.R2:
            raise IndivisibleCanvas(f"R1={self.R1} not divisible by R2={self.R2}")
        if self.n_start_canvases < 1:
            raise ValueError("need at least one start canvas")
        if not set(self.reformulate_at) <= {1, 2}:
            raise ValueError(f"reformulate_at must lie within {{1, 2}}, got {set(self.reformulate_at)}")
        if self.all_rejected_policy not in _POLICIES:
            raise ValueError(f"unknown all-rejected policy {self.all_rejected_policy!r}")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        object.__setattr__(self, "reformulate_at", frozenset(self.reformulate_at))

    def check_spec(self, spec) -> None:
        if spec.h % self.R1:
            raise IndivisibleCanvas(f"{spec.h} rows not divisible into R1={self.R1} bands")

    @property
    def effective_n(self) -> int:
        return self.n_start_canvases * self.R1

    def as_dict(self) -> dict:
        return {
            "R1": self.R1,
            "R2": self.R2,
            "n_start_canvases": self.n_start_canvases,
            "reformulate_at": sorted(self.reformulate_at),
            "guidance_mode": self.guidance.mode.value,
            "s_o": self.guidance.s_o,
            "s_r": self.guidance.s_r,
            "all_rejected_policy": self.all_rejected_policy,
        }


@dataclass
class CandidateState:
    """A candidate's tokens plus the substream lineage that produced them.

    ``origin`` chains {"stage", "decoded_by_slot", "retry"} entries; after a
    replacement the copied candidate inherits its source's whole chain, so a
    final canvas can always be traced back to the exact substreams that
    sampled each of its segments.
    """

    tokens: np.ndarray
    origin: tuple
    status: str = "active"  # active | rejected | anchor


@dataclass
class Outcome:
    method: str
    prompt: ScenePrompt
    finals: list
    candidates: list
    scores: list
    best_index: int
    best: TokenCanvas
    success: bool
    ledger: BudgetLedger
    retry_ledger: BudgetLedger
    reformulated: list  # one ScenePrompt or None per start canvas
    audit: list
    master_seed: int
    wall_clock_s: float


def effective_guidance(cfg: GuidanceConfig, bundle: PromptBundle) -> GuidanceConfig:
    """Before a reformulated prompt exists, every mode decodes as plain two-way."""
    if bundle.reformulated is None and cfg.mode is not GuidanceMode.TWO_WAY:
        return dc_replace(cfg, mode=GuidanceMode.TWO_WAY)
    return cfg


def _map_slots(fn, n: int, max_workers: int) -> list:
    if max_workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=max_workers) as ex:
        futures = [ex.submit(fn, i) for i in range(n)]
        return [f.result() for f in futures]


def generate_band_candidates(
    model,
    bundle: PromptBundle,
    R1: int,
    master_seed: int,
    *,
    guidance: GuidanceConfig,
    canvas_index: int = 0,
    retry: int = 0,
    ledger: BudgetLedger | None = None,
    max_workers: int = 1,
) -> list:
    """R1 independent opening-band candidates, one per (stage 1, slot) substream."""
    spec = model.spec
    if spec.h % R1:
        raise IndivisibleCanvas(f"{spec.h} rows not divisible into R1={R1} bands")
    n_steps = (spec.h // R1) * spec.w
    cfg = effective_guidance(guidance, bundle)

    def one(slot: int):
        led = BudgetLedger()
        rng = substream(master_seed, KIND_DECODE, canvas_index, 1, slot, retry)
        toks = decode_segment(model, bundle, [], n_steps, cfg, rng, ledger=led)
        return toks, led

    results = _map_slots(one, R1, max_workers)
    if ledger is not None:
        for _, led in results:  # merge in slot order; totals are order-free anyway
            ledger.merge(led)
    return [toks for toks, _ in results]


def replace_rejected(candidates: list, verdicts: list, rng: np.random.Generator):
    """Keep accepted slots; refill each rejected slot with a uniformly chosen
    accepted candidate (independent draws, with replacement).

    Returns (anchors, sources): sources[i] is None for kept slots, else the
    accepted slot index whose tokens were copied in.  Draws are consumed in
    ascending slot order, one per rejected slot.
    """
    if len(candidates) != len(verdicts):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(verdicts)} verdicts")
    accepted = [i for i, v in enumerate(verdicts) if v.possible]
    if not accepted:
        raise AllRejected(f"all {len(candidates)} candidates judged impossible")
    anchors: list = []
    sources: list = []
    for i, v in enumerate(verdicts):
        if v.possible:
            anchors.append(np.array(candidates[i], dtype=np.int32, copy=True))
            sources.append(None)
        else:
            j = accepted[int(rng.integers(len(accepted)))]
            anchors.append(np.array(candidates[j], dtype=np.int32, copy=True))
            sources.append(j)
    return anchors, sources


def continue_from_anchors(
    model,
    anchors: list,
    bundle: PromptBundle,
    target_rows: int,
    master_seed: int,
    *,
    guidance: GuidanceConfig,
    stage: int,
    canvas_index: int = 0,
    retry: int = 0,
    ledger: BudgetLedger | None = None,
    max_workers: int = 1,
) -> list:
    """Extend every anchor prefix to target_rows rows under the active guidance.

    Each anchor occupies its output's opening positions bit-for-bit; only the
    continuation is sampled.
    """
    spec = model.spec
    cfg = effective_guidance(guidance, bundle)
    target_len = target_rows * spec.w

    def one(slot: int):
        led = BudgetLedger()
        prefix = np.asarray(anchors[slot], dtype=np.int32)
        n_steps = target_len - len(prefix)
        if n_steps < 0:
            raise LengthMismatch(
                f"anchor of {len(prefix)} tokens already beyond {target_len}-token target"
            )
        rng = substream(master_seed, KIND_DECODE, canvas_index, stage, slot, retry)
        cont = decode_segment(model, bundle, prefix, n_steps, cfg, rng, ledger=led)
        return np.concatenate([prefix, cont]), led

    results = _map_slots(one, len(anchors), max_workers)
    if ledger is not None:
        for _, led in results:
            ledger.merge(led)
    return [toks for toks, _ in results]


def _assess_with_fallback(
    verifier, composed, prompt, R, stage, want_reform, ledger, audit, canvas_index
) -> StageAssessment:
    """Verifier errors never kill a run: the stage degrades to accept-all."""
    ledger.verifier_calls += 1
    try:
        return verifier.assess(composed, prompt, R, stage, want_reform)
    except VerifierError as exc:
        log.warning("verifier failed at stage %d: %s; accepting all cells this stage", stage, exc)
        audit.append(
            {"event": "verifier_fallback", "canvas": canvas_index, "stage": stage, "error": str(exc)}
        )
        return StageAssessment(
            verdicts=tuple(Verdict(r, POSSIBLE, "verifier unavailable") for r in range(R))
        )


def _ground_reformulation(assessment, composed, original, R, reformulator, audit, canvas_index, stage):
    """Reformulated prompt from the assessment, else from the fallback
    reformulator grounded on the first accepted cell; None when neither works."""
    if assessment.reformulated is not None:
        return assessment.reformulated
    if reformulator is None:
        return None
    accepted = [v.candidate_index for v in assessment.verdicts if v.possible]
    if not accepted:
        return None
    try:
        return reformulator.reformulate(composed, original, R, accepted[0])
    except InfeasibleRemainder as exc:
        audit.append(
            {"event": "reformulation_skipped", "canvas": canvas_index, "stage": stage,
             "error": str(exc)}
        )
        return None


def _run_one_canvas(
    plan: StagePlan,
    model,
    original: ScenePrompt,
    verifier,
    reformulator,
    master_seed: int,
    canvas_index: int,
    ledger: BudgetLedger,
    retry_ledger: BudgetLedger,
    audit: list,
):
    """All three stages for one start canvas; returns (final states, reformulated)."""
    spec = model.spec
    bundle = PromptBundle(original)
    rows1 = spec.h // plan.R1
    rows2 = spec.h // plan.R2
    n_groups = plan.R1 // plan.R2

    def anchor_or_policy(cands, verdicts, stage, retry_fn):
        """Replacement with the plan's all-rejected policy wrapped around it.

        Returns (anchors, sources, retry_used, cands, verdicts); on a retry
        the regenerated candidates and their verdicts supersede the originals.
        """
        try:
            rng = substream(master_seed, KIND_REPLACE, canvas_index, stage, 0, 0)
            anchors, sources = replace_rejected(cands, verdicts, rng)
            return anchors, sources, 0, cands, verdicts
        except AllRejected:
            if plan.all_rejected_policy == ABORT:
                raise
            retry_used = 0
            if plan.all_rejected_policy == RETRY_THEN_ACCEPT:
                audit.append(
                    {"event": "all_rejected", "canvas": canvas_index, "stage": stage,
                     "action": "retry"}
                )
                cands, verdicts = retry_fn()
                retry_used = 1
                try:
                    rng = substream(master_seed, KIND_REPLACE, canvas_index, stage, 0, 1)
                    anchors, sources = replace_rejected(cands, verdicts, rng)
                    return anchors, sources, 1, cands, verdicts
                except AllRejected:
                    pass  # fall through to accept-all on the retried set
            audit.append(
                {"event": "all_rejected", "canvas": canvas_index, "stage": stage,
                 "action": "accept_all"}
            )
            anchors = [np.array(c, dtype=np.int32, copy=True) for c in cands]
            return anchors, [None] * len(cands), retry_used, cands, verdicts

    # ---- stage 1: independent opening bands
    def stage1(retry: int):
        led = ledger if retry == 0 else retry_ledger
        cands = generate_band_candidates(
            model, bundle, plan.R1, master_seed,
            guidance=plan.guidance, canvas_index=canvas_index, retry=retry,
            ledger=led, max_workers=plan.max_workers,
        )
        audit.append(
            {"event": "stage", "canvas": canvas_index, "stage": 1, "retry": retry,
             "slots": plan.R1, "tokens_per_slot": rows1 * spec.w}
        )
        composed = compose_grid(cands, spec)
        assessment = _assess_with_fallback(
            verifier, composed, original, plan.R1, 1, 1 in plan.reformulate_at,
            ledger, audit, canvas_index,
        )
        audit.append(
            {"event": "verdicts", "canvas": canvas_index, "stage": 1, "retry": retry,
             "judgments": [v.judgment for v in assessment.verdicts],
             "reasons": [v.reason for v in assessment.verdicts]}
        )
        return cands, composed, assessment

    cands, composed, assessment = stage1(0)

    def retry_stage1():
        nonlocal composed, assessment
        new_cands, composed, assessment = stage1(1)
        return new_cands, list(assessment.verdicts)

    anchors, sources, r1_retry, cands, _ = anchor_or_policy(
        cands, list(assessment.verdicts), 1, retry_stage1
    )
    if any(s is not None for s in sources):
        audit.append(
            {"event": "replacement", "canvas": canvas_index, "stage": 1, "sources": sources}
        )
    states = [
        CandidateState(
            tokens=anchors[i],
            origin=(
                {"stage": 1,
                 "decoded_by_slot": sources[i] if sources[i] is not None else i,
                 "retry": r1_retry},
            ),
            status="anchor",
        )
        for i in range(plan.R1)
    ]

    # ---- stage-1 boundary: reformulate against the original prompt
    if 1 in plan.reformulate_at:
        reform = _ground_reformulation(
            assessment, composed, original, plan.R1, reformulator, audit, canvas_index, 1
        )
        if reform is not None:
            bundle = PromptBundle(original, reform)
            audit.append(
                {"event": "reformulated", "canvas": canvas_index, "stage": 1,
                 "prompt": text_form(reform)}
            )

    # ---- stage 2: extend to half images, verify in groups of R2 cells
    def stage2(retry: int):
        led = ledger if retry == 0 else retry_ledger
        ext = continue_from_anchors(
            model, [s.tokens for s in states], bundle, rows2, master_seed,
            guidance=plan.guidance, stage=2, canvas_index=canvas_index, retry=retry,
            ledger=led, max_workers=plan.max_workers,
        )
        audit.append(
            {"event": "stage", "canvas": canvas_index, "stage": 2, "retry": retry,
             "slots": plan.R1, "tokens_per_slot": (rows2 - rows1) * spec.w}
        )
        want2 = 2 in plan.reformulate_at
        slot_verdicts: list = [None] * plan.R1
        reform2 = None
        for g in range(n_groups):
            composed_g = compose_grid([ext[g * plan.R2 + j] for j in range(plan.R2)], spec)
            want = want2 and reform2 is None
            a = _assess_with_fallback(
                verifier, composed_g, original, plan.R2, 2, want, ledger, audit, canvas_index
            )
            audit.append(
                {"event": "verdicts", "canvas": canvas_index, "stage": 2, "retry": retry,
                 "group": g,
                 "judgments": [v.judgment for v in a.verdicts],
                 "reasons": [v.reason for v in a.verdicts]}
            )
            for j, v in enumerate(a.verdicts):
                slot = g * plan.R2 + j
                slot_verdicts[slot] = Verdict(slot, v.judgment, v.reason)
            if want:
                got = _ground_reformulation(
                    a, composed_g, original, plan.R2, reformulator, audit, canvas_index, 2
                )
                if got is not None:
                    reform2 = got
        return ext, slot_verdicts, reform2

    ext, slot_verdicts, reform2 = stage2(0)

    def retry_stage2():
        nonlocal reform2
        new_ext, new_verdicts, reform2 = stage2(1)
        return new_ext, new_verdicts

    anchors2, sources2, r2_retry, ext, _ = anchor_or_policy(
        ext, slot_verdicts, 2, retry_stage2
    )
    if any(s is not None for s in sources2):
        audit.append(
            {"event": "replacement", "canvas": canvas_index, "stage": 2, "sources": sources2}
        )
    states2 = []
    for i in range(plan.R1):
        src = sources2[i] if sources2[i] is not None else i
        states2.append(
            CandidateState(
                tokens=anchors2[i],
                origin=states[src].origin
                + ({"stage": 2, "decoded_by_slot": src, "retry": r2_retry},),
                status="anchor",
            )
        )

    # ---- stage-2 boundary: optional re-grounded reformulation
    if reform2 is not None:
        bundle = PromptBundle(original, reform2)
        audit.append(
            {"event": "reformulated", "canvas": canvas_index, "stage": 2,
             "prompt": text_form(reform2)}
        )

    # ---- stage 3: complete every anchor, no further pruning
    full = continue_from_anchors(
        model, [s.tokens for s in states2], bundle, spec.h, master_seed,
        guidance=plan.guidance, stage=3, canvas_index=canvas_index, retry=0,
        ledger=ledger, max_workers=plan.max_workers,
    )
    audit.append(
        {"event": "stage", "canvas": canvas_index, "stage": 3, "retry": 0,
         "slots": plan.R1, "tokens_per_slot": spec.n_tokens - rows2 * spec.w}
    )
    finals = [
        CandidateState(
            tokens=full[i],
            origin=states2[i].origin + ({"stage": 3, "decoded_by_slot": i, "retry": 0},),
            status="active",
        )
        for i in range(plan.R1)
    ]
    return finals, bundle.reformulated


def run_gridar(
    plan: StagePlan,
    prompt,
    model,
    verifier,
    orm,
    master_seed: int,
    reformulator=None,
) -> Outcome:
    """One full staged run; the Outcome is a pure function of its arguments."""
    t0 = time.perf_counter()
    original = parse_prompt(prompt) if isinstance(prompt, str) else prompt
    plan.check_spec(model.spec)
    ledger = BudgetLedger()
    retry_ledger = BudgetLedger()
    audit: list = [
        {"event": "run", "method": "gridar", "master_seed": master_seed,
         "plan": plan.as_dict(), "prompt": text_form(original)}
    ]

    all_finals: list = []
    reformulated: list = []
    for ci in range(plan.n_start_canvases):
        finals, reform = _run_one_canvas(
            plan, model, original, verifier, reformulator, master_seed, ci,
            ledger, retry_ledger, audit,
        )
        all_finals.extend(finals)
        reformulated.append(reform)

    spec = model.spec
    canvases = [TokenCanvas(spec, st.tokens, filled=spec.n_tokens) for st in all_finals]
    scores = []
    for idx, cv in enumerate(canvases):
        scores.append(orm.score(cv, original, idx))
        ledger.orm_calls += 1
    best = pick_best(scores)
    audit.append({"event": "orm", "scores": [s.score for s in scores]})
    audit.append({"event": "selected", "index": best.candidate_index, "score": best.score})

    return Outcome(
        method="gridar",
        prompt=original,
        finals=canvases,
        candidates=all_finals,
        scores=scores,
        best_index=best.candidate_index,
        best=canvases[best.candidate_index],
        success=best.score == 0,
        ledger=ledger,
        retry_ledger=retry_ledger,
        reformulated=reformulated,
        audit=audit,
        master_seed=master_seed,
        wall_clock_s=time.perf_counter() - t0,
    )


def run_best_of_n(
    n: int,
    prompt,
    model,
    orm,
    master_seed: int,
    *,
    guidance: GuidanceConfig | None = None,
    max_workers: int = 1,
) -> Outcome:
    """Sample n independent full canvases under two-way guidance, keep the best.

    Candidate i draws from substream (decode, i, 0, 0, 0), disjoint from every
    staged-run site, so paired comparisons against run_gridar share a master
    seed without sharing any randomness.
    """
    t0 = time.perf_counter()
    if n < 1:
        raise ValueError("need at least one sample")
    original = parse_prompt(prompt) if isinstance(prompt, str) else prompt
    spec = model.spec
    cfg = guidance or GuidanceConfig(mode=GuidanceMode.TWO_WAY)
    if cfg.mode is not GuidanceMode.TWO_WAY:
        cfg = dc_replace(cfg, mode=GuidanceMode.TWO_WAY)
    bundle = PromptBundle(original)
    ledger = BudgetLedger()
    audit: list = [
        {"event": "run", "method": "best_of_n", "n": n, "master_seed": master_seed,
         "prompt": text_form(original)}
    ]

    def one(i: int):
        led = BudgetLedger()
        rng = substream(master_seed, KIND_DECODE, i, 0, 0, 0)
        toks = decode_segment(model, bundle, [], spec.n_tokens, cfg, rng, ledger=led)
        return toks, led

    results = _map_slots(one, n, max_workers)
    for _, led in results:
        ledger.merge(led)
    finals = [
        CandidateState(
            tokens=toks,
            origin=({"stage": 0, "decoded_by_slot": i, "retry": 0},),
            status="active",
        )
        for i, (toks, _) in enumerate(results)
    ]
    canvases = [TokenCanvas(spec, st.tokens, filled=spec.n_tokens) for st in finals]
    scores = []
    for idx, cv in enumerate(canvases):
        scores.append(orm.score(cv, original, idx))
        ledger.orm_calls += 1
    best = pick_best(scores)
    audit.append({"event": "orm", "scores": [s.score for s in scores]})
    audit.append({"event": "selected", "index": best.candidate_index, "score": best.score})

    return Outcome(
        method="best_of_n",
        prompt=original,
        finals=canvases,
        candidates=finals,
        scores=scores,
        best_index=best.candidate_index,
        best=canvases[best.candidate_index],
        success=best.score == 0,
        ledger=ledger,
        retry_ledger=BudgetLedger(),
        reformulated=[None],
        audit=audit,
        master_seed=master_seed,
        wall_clock_s=time.perf_counter() - t0,
    )
