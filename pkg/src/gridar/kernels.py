"""Decode-kernel backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
pure-Python reference in _pure.py takes over.  Set GRIDAR_FORCE_PURE=1 to pin
the fallback regardless (useful for parity checks and benchmarks).  Both
backends implement the same fused loop with the same operation order, so the
choice never changes emitted tokens.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _pure

_impl = None
if os.environ.get("GRIDAR_FORCE_PURE", "") != "1":
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = None

BACKEND: str = "compiled" if _impl is not None else "pure"
if _impl is None:
    _impl = _pure


MODE_TWO_WAY = 0
MODE_THREE_WAY = 1
MODE_REPLACEMENT = 2


@dataclass
class SceneDecodeTask:
    """Flat argument pack for one contiguous guided-decode run.

    All arrays are owned by the caller; the kernel mutates out, drawn,
    o_edrawn and r_edrawn in place.  The r_* tables may alias the o_* tables
    when mode is MODE_TWO_WAY (they are not read then, but must be present
    with consistent shapes).
    """

    K: int
    w: int
    start_pos: int
    n_steps: int
    eager_rows: int
    mode: int
    s_o: float
    s_r: float
    eps: float
    floor: float
    alpha: float
    a_sp: float
    beta: float
    gamma: float
    temperature: float
    lu: np.ndarray          # float64[K] unconditional logits
    drawn: np.ndarray       # int32[K-1] per-type tokens drawn so far (shared)
    o_req: np.ndarray       # int8[K-1] original-prompt required mask
    o_quota: np.ndarray     # int32[K-1]
    o_blind: np.ndarray     # float64[K-1] count-blind weights
    o_cover: np.ndarray     # int32[h, K-1] directive entry id or -1
    o_equota: np.ndarray    # int32[n_entries]
    o_edrawn: np.ndarray    # int32[n_entries]
    r_req: np.ndarray
    r_quota: np.ndarray
    r_blind: np.ndarray
    r_cover: np.ndarray
    r_equota: np.ndarray
    r_edrawn: np.ndarray
    uniforms: np.ndarray    # float64[n_steps] in [0, 1)
    out: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.out is None:
            self.out = np.empty(self.n_steps, dtype=np.int32)


def decode_scene(task: SceneDecodeTask) -> None:
    """Dispatch one decode run to the active backend."""
    _impl.decode_scene(task)


def decode_scene_with(backend: str, task: SceneDecodeTask) -> None:
    """Run on an explicit backend ("pure" or "compiled"); test/bench hook."""
    if backend == "pure":
        _pure.decode_scene(task)
        return
    if backend == "compiled":
        from . import _kernels  # raises ImportError when unavailable

        _kernels.decode_scene(task)
        return
    raise ValueError(f"unknown backend {backend!r}")
