"""Logit-space guidance combiners.

All ops share one sentinel convention: -inf marks a token the conditional
model forbids outright.  Sentinels are clamped to LOGIT_FLOOR before any
offset arithmetic (so projections stay finite), and any combined entry at
or below the floor is restored to -inf afterwards.

cfg_combine uses the offset form l_c + s * (l_c - l_u), which is exactly
the expression three_way_combine reduces to when s_r = 0 or l_r = l_o;
keeping one shared expression makes those reductions bit-for-bit equal.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch

LOGIT_FLOOR = -1.0e4


class GuidanceMode(enum.Enum):
    TWO_WAY = "two_way"
    THREE_WAY = "three_way"
    REPLACEMENT = "replacement"


@dataclass(frozen=True)
class GuidanceConfig:
    mode: GuidanceMode = GuidanceMode.THREE_WAY
    s_o: float = 5.0
    s_r: float = 5.0
    eps_parallel: float = 1.0e-12

    def __post_init__(self) -> None:
        if self.s_o < 0 or self.s_r < 0:
            raise ValueError(f"guidance scales must be >= 0, got {self.s_o}, {self.s_r}")
        if self.eps_parallel <= 0:
            raise ValueError("eps_parallel must be positive")


def _as_clamped(*vecs: np.ndarray) -> list[np.ndarray]:
    n = None
    out = []
    for v in vecs:
        a = np.asarray(v, dtype=np.float64)
        if a.ndim != 1:
            raise LengthMismatch(f"logit vectors must be 1-d, got shape {a.shape}")
        if n is None:
            n = a.shape[0]
        elif a.shape[0] != n:
            raise LengthMismatch(f"logit lengths differ: {n} vs {a.shape[0]}")
        out.append(np.maximum(a, LOGIT_FLOOR))
    return out


def _restore_floor(v: np.ndarray) -> np.ndarray:
    v[v <= LOGIT_FLOOR] = -np.inf
    return v


def cfg_combine(l_cond: np.ndarray, l_uncond: np.ndarray, s: float) -> np.ndarray:
    """Two-way classifier-free guidance: l_c + s * (l_c - l_u)."""
    c, u = _as_clamped(l_cond, l_uncond)
    return _restore_floor(c + s * (c - u))


def orthogonal_reject(d_r: np.ndarray, d_o: np.ndarray, eps_parallel: float = 1.0e-12) -> np.ndarray:
    """Component of d_r orthogonal to d_o; d_r unchanged when d_o is (near) zero.

    Inputs must already be finite offsets (differences of clamped logits).
    """
    r = np.asarray(d_r, dtype=np.float64)
    o = np.asarray(d_o, dtype=np.float64)
    if r.shape != o.shape or r.ndim != 1:
        raise LengthMismatch(f"offset shapes differ: {r.shape} vs {o.shape}")
    nrm = float(np.dot(o, o))
    if nrm < eps_parallel:
        return r.copy()
    return r - (float(np.dot(r, o)) / nrm) * o


def three_way_combine(
    l_uncond: np.ndarray,
    l_orig: np.ndarray,
    l_reform: np.ndarray,
    cfg: GuidanceConfig,
) -> np.ndarray:
    """Original-prompt guidance plus the orthogonal part of reformulated guidance.

    l = l_o + s_o * d_o + s_r * reject(d_r, d_o) with d_o = l_o - l_u,
    d_r = l_r - l_u, summed left to right.
    """
    u, o, r = _as_clamped(l_uncond, l_orig, l_reform)
    d_o = o - u
    d_r = r - u
    d_perp = orthogonal_reject(d_r, d_o, cfg.eps_parallel)
    return _restore_floor(o + cfg.s_o * d_o + cfg.s_r * d_perp)


def replacement_combine(l_uncond: np.ndarray, l_reform: np.ndarray, s_r: float) -> np.ndarray:
    """Reformulated prompt substituted for the original: plain two-way CFG on it."""
    return cfg_combine(l_reform, l_uncond, s_r)
