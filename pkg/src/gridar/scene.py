"""Closed-form toy scene model over the token canvas.

SceneLM is a deliberately small autoregressive model whose conditionals are
computed by rule rather than learned.  Its one structural vice is planned:
without an explicit per-band directive it places required objects by a
quota-proportional density and cannot track its own progress (it only stops
once the global quota is plainly met), so large counts routinely end up
short or crowded into the eager top rows.  Inside a directive band it tracks
the band quota exactly.  That asymmetry is what staged verification and
prompt reformulation exploit.

Per-position weights, object type t, row r, condition P:

    background:                w = beta_bg
    null prompt (P is None):   w = alpha_uncond
    t not required by P:       w = alpha_spurious
    t required, directive covers (r, t):
                               w = alpha * max(0, band_quota - band_drawn) * g(r)
    t required, uncovered:     w = alpha_blind * count_t ** blind_quota_power * g(r)
                               while total drawn of t < count_t, else 0
    g(r) = gamma_eager for the top quarter of rows, else 1

Logits are ln(w) with w = 0 mapped to -inf.  Sessions are pure state
machines over (condition, prefix): forking and extending forks behaves
exactly like fresh sessions replaying the same tokens.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .canvas import CanvasSpec
from .errors import (
    DegenerateDistribution,
    NonSequentialAccess,
    OutOfRange,
    PromptGrammarError,
    UnknownToken,
)
from .prompts import ScenePrompt, object_types, type_token


@dataclass(frozen=True)
class SceneLMParams:
    beta_bg: float = 4.0
    alpha: float = 1.0
    alpha_spurious: float = 0.003
    alpha_uncond: float = 0.05
    gamma_eager: float = 2.0
    temperature: float = 1.0
    alpha_blind: float = 0.018
    blind_quota_power: float = 0.5

    def __post_init__(self) -> None:
        if min(self.beta_bg, self.alpha, self.alpha_uncond, self.alpha_blind) <= 0:
            raise ValueError("weights must be positive")
        if self.alpha_spurious < 0:
            raise ValueError("alpha_spurious must be >= 0")
        if self.gamma_eager < 1:
            raise ValueError("gamma_eager must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


class CondTables:
    """Precomputed per-condition lookup tables (prompt compiled against a spec)."""

    def __init__(self, spec: CanvasSpec, params: SceneLMParams, prompt: ScenePrompt) -> None:
        n_obj = spec.K - 1
        types = object_types(spec.K)
        index = {t: i for i, t in enumerate(types)}
        self.required = np.zeros(n_obj, dtype=np.int8)
        self.quota = np.zeros(n_obj, dtype=np.int32)
        self.blind_w = np.zeros(n_obj, dtype=np.float64)
        self.cover = np.full((spec.h, n_obj), -1, dtype=np.int32)
        equota: list[int] = []
        for req in prompt.requirements:
            if req.type not in index:
                raise UnknownToken(f"{req.type} not representable with K={spec.K}")
            i = index[req.type]
            self.required[i] = 1
            self.quota[i] = req.count
            self.blind_w[i] = params.alpha_blind * req.count ** params.blind_quota_power
        for e in prompt.directives:
            if e.row_end > spec.h:
                raise OutOfRange(f"directive band [{e.row_start}, {e.row_end}) off a {spec.h}-row canvas")
            i = index[e.type]
            eid = len(equota)
            equota.append(e.count)
            self.cover[e.row_start : e.row_end, i] = eid
        self.equota = np.asarray(equota, dtype=np.int32)
        self.n_entries = len(equota)


_EMPTY_I32 = np.zeros(0, dtype=np.int32)


class SceneSession:
    """One decode cursor: a condition plus a token prefix, counted incrementally."""

    __slots__ = ("model", "tables", "pos", "drawn", "edrawn", "tokens")

    def __init__(self, model: "SceneLM", tables: CondTables | None) -> None:
        self.model = model
        self.tables = tables  # None = unconditional
        self.pos = 0
        n_obj = model.spec.K - 1
        self.drawn = np.zeros(n_obj, dtype=np.int32)
        self.edrawn = (
            np.zeros(tables.n_entries, dtype=np.int32) if tables is not None else _EMPTY_I32.copy()
        )
        self.tokens: list[int] = []

    def fork(self) -> "SceneSession":
        s = SceneSession.__new__(SceneSession)
        s.model = self.model
        s.tables = self.tables
        s.pos = self.pos
        s.drawn = self.drawn.copy()
        s.edrawn = self.edrawn.copy()
        s.tokens = list(self.tokens)
        return s

    def next_logits(self, position: int | None = None) -> np.ndarray:
        if position is not None and position != self.pos:
            raise NonSequentialAccess(f"session cursor at {self.pos}, asked for {position}")
        if self.pos >= self.model.spec.n_tokens:
            raise OutOfRange(f"canvas full at {self.pos} tokens")
        return self.model._logits(self)

    def append(self, token: int) -> None:
        spec = self.model.spec
        if not 0 <= token < spec.K:
            raise UnknownToken(f"token {token} outside codebook of {spec.K}")
        if self.pos >= spec.n_tokens:
            raise OutOfRange("cannot append past the end of the canvas")
        if token != 0:
            t = token - 1
            self.drawn[t] += 1
            if self.tables is not None:
                eid = self.tables.cover[self.pos // spec.w, t]
                if eid >= 0:
                    self.edrawn[eid] += 1
        self.tokens.append(token)
        self.pos += 1

    def extend(self, tokens) -> None:
        for t in tokens:
            self.append(int(t))


class SceneLM:
    """The rule-based scene model; see module docstring for the weight table."""

    def __init__(self, spec: CanvasSpec, params: SceneLMParams | None = None) -> None:
        self.spec = spec
        self.params = params or SceneLMParams()
        self._tables: dict[ScenePrompt, CondTables] = {}
        p = self.params
        lu = np.full(spec.K, math.log(p.alpha_uncond), dtype=np.float64)
        lu[0] = math.log(p.beta_bg)
        self.uncond_logits = lu
        self.uncond_logits.setflags(write=False)
        self.eager_rows = spec.h // 4  # gamma_eager applies to rows [0, h/4)

    def tables_for(self, prompt: ScenePrompt) -> CondTables:
        t = self._tables.get(prompt)
        if t is None:
            t = CondTables(self.spec, self.params, prompt)
            self._tables[prompt] = t
        return t

    def open_session(self, condition: ScenePrompt | None) -> SceneSession:
        return SceneSession(self, None if condition is None else self.tables_for(condition))

    # internal: conditional logits for a session's current position
    def _logits(self, session: SceneSession) -> np.ndarray:
        spec, p = self.spec, self.params
        out = np.empty(spec.K, dtype=np.float64)
        out[0] = math.log(p.beta_bg)
        if session.tables is None:
            out[1:] = math.log(p.alpha_uncond)
            return out
        tb = session.tables
        row = session.pos // spec.w
        g = p.gamma_eager if row < self.eager_rows else 1.0
        for t in range(spec.K - 1):
            if not tb.required[t]:
                w = p.alpha_spurious
            else:
                eid = tb.cover[row, t]
                if eid >= 0:
                    w = p.alpha * max(0, int(tb.equota[eid]) - int(session.edrawn[eid])) * g
                else:
                    w = tb.blind_w[t] * g if session.drawn[t] < tb.quota[t] else 0.0
            out[t + 1] = math.log(w) if w > 0.0 else -math.inf
        return out


def next_logits(session, position: int) -> np.ndarray:
    """Conditional logits at ``position``; sessions are strictly sequential."""
    return session.next_logits(position)


def sample_with_uniform(logits: np.ndarray, temperature: float, u: float) -> int:
    """Inverse-CDF draw from softmax(logits / temperature) at quantile u.

    Mass is accumulated over token ids in index order; -inf entries carry
    zero mass.  Accumulation order matches the decode kernels exactly.
    """
    z = np.asarray(logits, dtype=np.float64)
    if temperature <= 0:
        raise DegenerateDistribution(f"temperature must be positive, got {temperature}")
    m = -math.inf
    for v in z:
        if v > m:
            m = v
    if m == -math.inf:
        raise DegenerateDistribution("all logits are -inf")
    weights = []
    total = 0.0
    for v in z:
        wk = math.exp((float(v) - m) / temperature) if v != -math.inf else 0.0
        weights.append(wk)
        total += wk
    target = u * total
    acc = 0.0
    for k, wk in enumerate(weights):
        acc += wk
        if target < acc:
            return k
    return len(weights) - 1  # target == total under rounding


def sample_token(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    """Draw one token from softmax(logits / temperature) using one uniform."""
    return sample_with_uniform(logits, temperature, rng.random())


@dataclass
class PromptBundle:
    """The condition triple driving guided decoding; uncond is implicit."""

    original: ScenePrompt
    reformulated: ScenePrompt | None = None

    def __post_init__(self) -> None:
        if self.original is None:
            raise PromptGrammarError("bundle needs an original prompt")
