"""Inference-time scaling for autoregressive image-token generation.

Grid-partitioned candidate generation with verifier pruning, anchor
propagation, and layout-grounded prompt reformulation, verified end to end
against a synthetic scene model and exact oracles.
"""

from .canvas import CanvasSpec, TokenCanvas, UNSET, compose_grid, extract_band, partition_rows
from .decode import BudgetLedger, decode_segment
from .guidance import (
    GuidanceConfig,
    GuidanceMode,
    LOGIT_FLOOR,
    cfg_combine,
    orthogonal_reject,
    replacement_combine,
    three_way_combine,
)
from .kernels import BACKEND
from .pipeline import (
    CandidateState,
    Outcome,
    StagePlan,
    continue_from_anchors,
    generate_band_candidates,
    replace_rejected,
    run_best_of_n,
    run_gridar,
    substream,
)
from .prompts import (
    DirectiveEntry,
    Requirement,
    ScenePrompt,
    parse_prompt,
    scene_counts,
    spec_for,
    text_form,
)
from .render import render_canvas, tokens_from_image
from .scene import PromptBundle, SceneLM, SceneLMParams
from .verify import (
    AcceptAllVerifier,
    NoisyOracle,
    OracleOrm,
    OracleReformulator,
    OracleVerifier,
    OrmScore,
    StageAssessment,
    Verdict,
    oracle_judge,
    oracle_orm,
    oracle_reformulate,
    pick_best,
)
from .wire import OpenAIChatAdapter, RemoteVerifier, remote_verify

__version__ = "0.1.0"

__all__ = [
    "AcceptAllVerifier",
    "BACKEND",
    "BudgetLedger",
    "CandidateState",
    "CanvasSpec",
    "DirectiveEntry",
    "GuidanceConfig",
    "GuidanceMode",
    "LOGIT_FLOOR",
    "NoisyOracle",
    "OpenAIChatAdapter",
    "OracleOrm",
    "OracleReformulator",
    "OracleVerifier",
    "OrmScore",
    "Outcome",
    "PromptBundle",
    "RemoteVerifier",
    "Requirement",
    "SceneLM",
    "SceneLMParams",
    "ScenePrompt",
    "StageAssessment",
    "StagePlan",
    "TokenCanvas",
    "UNSET",
    "Verdict",
    "cfg_combine",
    "compose_grid",
    "continue_from_anchors",
    "decode_segment",
    "extract_band",
    "generate_band_candidates",
    "oracle_judge",
    "oracle_orm",
    "oracle_reformulate",
    "orthogonal_reject",
    "parse_prompt",
    "partition_rows",
    "pick_best",
    "remote_verify",
    "render_canvas",
    "replace_rejected",
    "replacement_combine",
    "run_best_of_n",
    "run_gridar",
    "scene_counts",
    "spec_for",
    "substream",
    "text_form",
    "three_way_combine",
    "tokens_from_image",
    "__version__",
]
