"""Guided decode drivers.

Two interchangeable execution paths produce the same tokens from the same
generator state:

* the session path steps any model exposing ``open_session`` one position at
  a time, combining conditional logit vectors with the guidance operators;
* the fused path packs a SceneLM prompt into flat tables and hands a whole
  segment to the selected decode kernel.

Both pre-draw one uniform per token, so generator consumption is identical
and a run can be replayed on either path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange, PromptGrammarError
from .guidance import (
    LOGIT_FLOOR,
    GuidanceConfig,
    GuidanceMode,
    cfg_combine,
    replacement_combine,
    three_way_combine,
)
from .kernels import (
    MODE_REPLACEMENT,
    MODE_THREE_WAY,
    MODE_TWO_WAY,
    SceneDecodeTask,
    decode_scene,
)
from .scene import PromptBundle, SceneLM, sample_with_uniform

_KERNEL_MODE = {
    GuidanceMode.TWO_WAY: MODE_TWO_WAY,
    GuidanceMode.THREE_WAY: MODE_THREE_WAY,
    GuidanceMode.REPLACEMENT: MODE_REPLACEMENT,
}

# forward passes per sampled token: the unconditional pass plus one pass per
# prompt condition actually evaluated
CONDITIONS_PER_STEP = {
    GuidanceMode.TWO_WAY: 2,
    GuidanceMode.THREE_WAY: 3,
    GuidanceMode.REPLACEMENT: 2,
}


@dataclass
class BudgetLedger:
    """Running totals of the quantities the token-budget identities are over.

    Forward passes are tracked per condition; the unconditional stream runs
    on every sampled token, the original and reformulated streams only in
    the guidance modes that read them.
    """

    generated_tokens: int = 0
    fw_uncond: int = 0
    fw_original: int = 0
    fw_reformulated: int = 0
    verifier_calls: int = 0
    orm_calls: int = 0

    @property
    def forward_passes(self) -> int:
        return self.fw_uncond + self.fw_original + self.fw_reformulated

    def add_decode(self, n_steps: int, mode: GuidanceMode) -> None:
        self.generated_tokens += n_steps
        self.fw_uncond += n_steps
        if mode is not GuidanceMode.REPLACEMENT:
            self.fw_original += n_steps
        if mode is not GuidanceMode.TWO_WAY:
            self.fw_reformulated += n_steps

    def merge(self, other: "BudgetLedger") -> None:
        self.generated_tokens += other.generated_tokens
        self.fw_uncond += other.fw_uncond
        self.fw_original += other.fw_original
        self.fw_reformulated += other.fw_reformulated
        self.verifier_calls += other.verifier_calls
        self.orm_calls += other.orm_calls

    def as_dict(self) -> dict[str, int]:
        return {
            "generated_tokens": self.generated_tokens,
            "forward_passes": self.forward_passes,
            "fw_uncond": self.fw_uncond,
            "fw_original": self.fw_original,
            "fw_reformulated": self.fw_reformulated,
            "verifier_calls": self.verifier_calls,
            "orm_calls": self.orm_calls,
        }


def _check_bundle(bundle: PromptBundle, mode: GuidanceMode) -> None:
    if mode is not GuidanceMode.TWO_WAY and bundle.reformulated is None:
        raise PromptGrammarError(f"{mode.name} guidance needs a reformulated prompt in the bundle")


def decode_segment_session(
    model,
    bundle: PromptBundle,
    prefix,
    n_steps: int,
    config: GuidanceConfig,
    rng: np.random.Generator,
    *,
    temperature: float = 1.0,
    ledger: BudgetLedger | None = None,
) -> np.ndarray:
    """Step-by-step guided decode over model sessions.

    Works for any model whose ``open_session(condition)`` returns an object
    with ``next_logits()`` and ``append(token)``; ``condition`` is ``None``
    for the unconditional stream.
    """
    mode = config.mode
    _check_bundle(bundle, mode)
    uncond = model.open_session(None)
    orig = model.open_session(bundle.original) if mode is not GuidanceMode.REPLACEMENT else None
    reform = model.open_session(bundle.reformulated) if mode is not GuidanceMode.TWO_WAY else None
    sessions = [s for s in (uncond, orig, reform) if s is not None]
    for tok in prefix:
        for s in sessions:
            s.append(int(tok))

    uniforms = rng.random(n_steps)
    out = np.empty(n_steps, dtype=np.int32)
    for i in range(n_steps):
        lu = uncond.next_logits()
        if mode is GuidanceMode.TWO_WAY:
            z = cfg_combine(orig.next_logits(), lu, config.s_o)
        elif mode is GuidanceMode.REPLACEMENT:
            z = replacement_combine(lu, reform.next_logits(), config.s_r)
        else:
            z = three_way_combine(lu, orig.next_logits(), reform.next_logits(), config)
        tok = sample_with_uniform(z, temperature, float(uniforms[i]))
        out[i] = tok
        for s in sessions:
            s.append(tok)
    if ledger is not None:
        ledger.add_decode(n_steps, mode)
    return out


def _replay_counters(spec, tables_o, tables_r, prefix):
    """Recount per-type and per-directive-entry draws over a token prefix.

    Counters are a pure function of (tables, prefix), which is what makes
    resuming from an anchor canvas equivalent to having decoded it here.
    """
    drawn = np.zeros(spec.K - 1, dtype=np.int32)
    eo = np.zeros(tables_o.n_entries, dtype=np.int32)
    er = np.zeros(tables_r.n_entries, dtype=np.int32)
    for pos, tok in enumerate(prefix):
        tok = int(tok)
        if tok == 0:
            continue
        t = tok - 1
        drawn[t] += 1
        row = pos // spec.w
        eid = tables_o.cover[row, t]
        if eid >= 0:
            eo[eid] += 1
        eid = tables_r.cover[row, t]
        if eid >= 0:
            er[eid] += 1
    return drawn, eo, er


def decode_segment_fused(
    model: SceneLM,
    bundle: PromptBundle,
    prefix,
    n_steps: int,
    config: GuidanceConfig,
    rng: np.random.Generator,
    *,
    ledger: BudgetLedger | None = None,
) -> np.ndarray:
    """Whole-segment guided decode through the active kernel backend."""
    mode = config.mode
    _check_bundle(bundle, mode)
    spec = model.spec
    start = len(prefix)
    if start + n_steps > spec.n_tokens:
        raise OutOfRange(
            f"segment [{start}, {start + n_steps}) exceeds the {spec.n_tokens}-token canvas"
        )
    tables_o = model.tables_for(bundle.original)
    if bundle.reformulated is not None:
        tables_r = model.tables_for(bundle.reformulated)
    else:
        tables_r = tables_o  # aliased; never read in two-way mode
    drawn, eo, er = _replay_counters(spec, tables_o, tables_r, prefix)

    p = model.params
    task = SceneDecodeTask(
        K=spec.K,
        w=spec.w,
        start_pos=start,
        n_steps=n_steps,
        eager_rows=model.eager_rows,
        mode=_KERNEL_MODE[mode],
        s_o=config.s_o,
        s_r=config.s_r,
        eps=config.eps_parallel,
        floor=LOGIT_FLOOR,
        alpha=p.alpha,
        a_sp=p.alpha_spurious,
        beta=p.beta_bg,
        gamma=p.gamma_eager,
        temperature=p.temperature,
        lu=model.uncond_logits,
        drawn=drawn,
        o_req=tables_o.required,
        o_quota=tables_o.quota,
        o_blind=tables_o.blind_w,
        o_cover=tables_o.cover,
        o_equota=tables_o.equota,
        o_edrawn=eo,
        r_req=tables_r.required,
        r_quota=tables_r.quota,
        r_blind=tables_r.blind_w,
        r_cover=tables_r.cover,
        r_equota=tables_r.equota,
        r_edrawn=er,
        uniforms=rng.random(n_steps),
    )
    decode_scene(task)
    if ledger is not None:
        ledger.add_decode(n_steps, mode)
    return task.out


def decode_segment(
    model,
    bundle: PromptBundle,
    prefix,
    n_steps: int,
    config: GuidanceConfig,
    rng: np.random.Generator,
    *,
    temperature: float | None = None,
    ledger: BudgetLedger | None = None,
    engine: str = "auto",
) -> np.ndarray:
    """Decode ``n_steps`` tokens after ``prefix`` under guided conditioning.

    engine: "auto" picks the fused kernel for SceneLM, the session path for
    anything else; "fused" and "session" force one explicitly.
    """
    if engine == "auto":
        engine = "fused" if isinstance(model, SceneLM) else "session"
    if engine == "fused":
        if not isinstance(model, SceneLM):
            raise TypeError("fused decoding only supports the built-in scene model")
        return decode_segment_fused(model, bundle, prefix, n_steps, config, rng, ledger=ledger)
    if engine == "session":
        if temperature is None:
            temperature = model.params.temperature if isinstance(model, SceneLM) else 1.0
        return decode_segment_session(
            model, bundle, prefix, n_steps, config, rng, temperature=temperature, ledger=ledger
        )
    raise ValueError(f"unknown engine {engine!r}")
