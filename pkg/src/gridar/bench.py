"""Synthetic prompt suites, the pilot curve study, and the method-comparison
experiment runner.

Everything here is a pure function of its config and master seed: suites,
pilot curves, and comparison reports are byte-identical across reruns.  Wall
clock is measured and written to CSV for cost context but never enters the
deterministic report body, so replayed reports can be compared as bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .canvas import TokenCanvas
from .decode import decode_segment
from .errors import EmptySpec, InfeasibleRemainder, NoFailingPrompts
from .guidance import GuidanceConfig, GuidanceMode
from .pipeline import Outcome, StagePlan, run_best_of_n, run_gridar, substream
from .prompts import (
    DirectiveEntry,
    Requirement,
    ScenePrompt,
    object_types,
    scene_counts,
    spec_for,
)
from .scene import PromptBundle, SceneLM, SceneLMParams
from .verify import (
    AcceptAllVerifier,
    OracleOrm,
    OracleReformulator,
    OracleVerifier,
    POSSIBLE,
    judge_prefix,
    oracle_orm,
    oracle_reformulate,
)

CATEGORIES = ("counting", "color_binding", "spatial_band")

# experiments run at a gentler guidance scale than the class default; the
# myopic failure mode this harness studies is clearest there
EXPERIMENT_SCALE = 1.0

# seed-derivation sites (first spawn-key element), disjoint per purpose
_K_SUITE = 20
_K_SCREEN = 21
_K_PREFIX = 22
_K_TRIAL = 23
_K_PAIRED = 24

DEFAULT_METHODS = ("gridar", "best_of_4", "best_of_8")
ABLATION_METHODS = (
    "gridar_replacement",
    "gridar_no_reformulation",
    "gridar_accept_all",
    "gridar_plain",
)
ALL_METHODS = DEFAULT_METHODS + ABLATION_METHODS

CSV_COLUMNS = ("prompt_id", "category", "method", "success", "tokens",
               "forwards", "verifier_calls", "seconds")


def _derive_seed(root: int, *key: int) -> int:
    """Collapse a substream site to one integer seed for a nested run."""
    ss = np.random.SeedSequence(root, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SuiteSpec:
    """What to generate: categories, per-category size, count range, seed."""

    categories: tuple = CATEGORIES
    counts_range: tuple = (2, 9)
    n_prompts: int = 100
    master_seed: int = 0

    def __post_init__(self) -> None:
        cats = tuple(c for c in CATEGORIES if c in set(self.categories))
        if not cats:
            raise EmptySpec(f"no known categories in {self.categories!r}")
        if len(cats) != len(set(self.categories)):
            raise EmptySpec(f"unknown category among {self.categories!r}")
        lo, hi = self.counts_range
        if not (1 <= lo <= hi):
            raise EmptySpec(f"counts_range must satisfy 1 <= lo <= hi, got {self.counts_range}")
        if self.n_prompts < 1:
            raise EmptySpec("n_prompts must be at least 1")
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "counts_range", (int(lo), int(hi)))

    def as_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "counts_range": list(self.counts_range),
            "n_prompts": self.n_prompts,
            "master_seed": self.master_seed,
        }


@dataclass(frozen=True)
class PromptCase:
    prompt_id: str
    category: str
    prompt: ScenePrompt


def gen_suite(suite: SuiteSpec, h: int = 16) -> list:
    """Deterministic prompt list; one rng per category keyed off the seed."""
    lo, hi = suite.counts_range
    palette = object_types()
    cases: list = []
    for cat in suite.categories:
        rng = substream(suite.master_seed, _K_SUITE, CATEGORIES.index(cat))
        for i in range(suite.n_prompts):
            if cat == "counting":
                color, shape = palette[int(rng.integers(len(palette)))]
                n = int(rng.integers(lo, hi + 1))
                prompt = ScenePrompt((Requirement(n, color, shape),), ())
            elif cat == "color_binding":
                k = int(rng.integers(2, 4))
                picks = rng.choice(len(palette), size=k, replace=False)
                reqs = tuple(
                    Requirement(int(rng.integers(lo, hi + 1)), *palette[int(p)])
                    for p in picks
                )
                prompt = ScenePrompt(reqs, ())
            else:  # spatial_band: ground-truth top/bottom split directive
                color, shape = palette[int(rng.integers(len(palette)))]
                n = int(rng.integers(lo, hi + 1))
                k_top = int(rng.integers(n + 1))
                half = h // 2
                prompt = ScenePrompt(
                    (Requirement(n, color, shape),),
                    (
                        DirectiveEntry(color, shape, 0, half, k_top),
                        DirectiveEntry(color, shape, half, h, n - k_top),
                    ),
                )
            cases.append(PromptCase(f"{cat}-{i:03d}", cat, prompt))
    return cases


# ============================================================
# pilot study: success-within-k from a frozen half-canvas prefix
# ============================================================

@dataclass
class PilotResult:
    k_values: tuple
    n_prompts: int
    baseline_curve: list  # success-within-k fractions
    reformulated_curve: list
    first_success_baseline: list  # per prompt, trial index (1-based) or None
    first_success_reformulated: list
    prompt_ids: list
    master_seed: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["k", "baseline_success_within_k", "reformulated_success_within_k"])
        for k, b, r in zip(self.k_values, self.baseline_curve, self.reformulated_curve):
            w.writerow([k, f"{b:.6f}", f"{r:.6f}"])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {
            "k_values": list(self.k_values),
            "n_prompts": self.n_prompts,
            "baseline_curve": self.baseline_curve,
            "reformulated_curve": self.reformulated_curve,
            "master_seed": self.master_seed,
        }


def _two_way(scale: float) -> GuidanceConfig:
    return GuidanceConfig(mode=GuidanceMode.TWO_WAY, s_o=scale, s_r=scale)


def run_pilot(
    model: SceneLM,
    cases: list,
    k_values=(1, 2, 4, 8, 16, 32),
    *,
    master_seed: int,
    n_keep: int = 200,
    scale: float = EXPERIMENT_SCALE,
    max_freeze_attempts: int = 64,
) -> PilotResult:
    """Success-within-k curves for resampling a frozen half canvas's lower half,
    conditioning on the original prompt vs its grounded reformulation.

    Prompts are screened to those whose single full sample fails; for each
    kept prompt an upper-half prefix judged possible is frozen, then up to
    max(k_values) lower-half trials run per arm.  Success is always judged by
    the oracle ORM against the original prompt.
    """
    spec = model.spec
    k_values = tuple(sorted(set(int(k) for k in k_values)))
    if not k_values or k_values[0] < 1:
        raise ValueError(f"k_values must be positive, got {k_values}")
    kmax = k_values[-1]
    cfg = _two_way(scale)
    half_rows = spec.h // 2
    half_len = half_rows * spec.w

    # screen: keep prompts whose single-sample run fails
    failing: list = []
    for i, case in enumerate(cases):
        bundle = PromptBundle(case.prompt)
        rng = substream(_derive_seed(master_seed, _K_SCREEN, i), 0)
        toks = decode_segment(model, bundle, [], spec.n_tokens, cfg, rng)
        cv = TokenCanvas(spec, toks, filled=spec.n_tokens)
        if oracle_orm(cv, case.prompt).score != 0:
            failing.append((i, case))
    if not failing:
        raise NoFailingPrompts(f"all {len(cases)} prompts succeed in one sample")

    kept: list = []
    for i, case in failing:
        bundle = PromptBundle(case.prompt)
        root = _derive_seed(master_seed, _K_PREFIX, i)
        frozen = None
        for attempt in range(max_freeze_attempts):
            rng = substream(root, attempt)
            prefix = decode_segment(model, bundle, [], half_len, cfg, rng)
            judgment, _ = judge_prefix(prefix, spec, case.prompt)
            if judgment == POSSIBLE:
                frozen = prefix
                break
        if frozen is None:
            continue  # pathological prompt; surplus screening pool covers it
        part = TokenCanvas(spec, _pad_tokens(frozen, spec), filled=half_len)
        counts = scene_counts(part, [(r, r + 1) for r in range(half_rows)])
        try:
            reform = oracle_reformulate(case.prompt, counts, half_rows / spec.h)
        except InfeasibleRemainder:
            continue
        kept.append((i, case, frozen, reform))
        if len(kept) == n_keep:
            break
    if not kept:
        raise NoFailingPrompts("no failing prompt yielded a possible frozen prefix")

    first_b: list = []
    first_r: list = []
    for i, case, frozen, reform in kept:
        root = _derive_seed(master_seed, _K_TRIAL, i)
        arms = (
            (PromptBundle(case.prompt), _two_way(scale)),
            (PromptBundle(case.prompt, reform),
             GuidanceConfig(mode=GuidanceMode.REPLACEMENT, s_o=scale, s_r=scale)),
        )
        firsts = []
        for arm, (bundle, arm_cfg) in enumerate(arms):
            hit = None
            for t in range(kmax):
                rng = substream(root, arm, t)
                lower = decode_segment(model, bundle, frozen, spec.n_tokens - half_len,
                                       arm_cfg, rng)
                full = np.concatenate([np.asarray(frozen, dtype=np.int32), lower])
                cv = TokenCanvas(spec, full, filled=spec.n_tokens)
                if oracle_orm(cv, case.prompt).score == 0:
                    hit = t + 1
                    break
            firsts.append(hit)
        first_b.append(firsts[0])
        first_r.append(firsts[1])

    n = len(kept)

    def curve(firsts):
        return [sum(1 for f in firsts if f is not None and f <= k) / n for k in k_values]

    return PilotResult(
        k_values=k_values,
        n_prompts=n,
        baseline_curve=curve(first_b),
        reformulated_curve=curve(first_r),
        first_success_baseline=first_b,
        first_success_reformulated=first_r,
        prompt_ids=[case.prompt_id for _, case, _, _ in kept],
        master_seed=master_seed,
    )


def _pad_tokens(prefix, spec) -> np.ndarray:
    from .canvas import UNSET

    out = np.full(spec.n_tokens, UNSET, dtype=np.int32)
    out[: len(prefix)] = np.asarray(prefix, dtype=np.int32)
    return out


# ============================================================
# method comparison
# ============================================================

def wilson_ci(successes: int, n: int, z: float = 1.96) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def make_verifier(kind: str, endpoint: str | None = None, *, timeout: float = 30.0,
                  retries: int = 2):
    """Verifier from a config name: oracle, accept_all, or remote."""
    if kind == "oracle":
        return OracleVerifier()
    if kind == "accept_all":
        return AcceptAllVerifier()
    if kind == "remote":
        if not endpoint:
            raise ValueError("remote verifier needs an endpoint")
        from .wire import RemoteVerifier

        return RemoteVerifier(endpoint, timeout=timeout, retries=retries)
    raise ValueError(f"unknown verifier kind {kind!r}")


def _method_outcome(
    name: str, prompt: ScenePrompt, model: SceneLM, seed: int, plan: StagePlan,
    scale: float, verifier_kind: str = "oracle", endpoint: str | None = None,
) -> Outcome:
    three = GuidanceConfig(mode=GuidanceMode.THREE_WAY, s_o=scale, s_r=scale)
    repl = GuidanceConfig(mode=GuidanceMode.REPLACEMENT, s_o=scale, s_r=scale)
    two = _two_way(scale)
    orm = OracleOrm()
    reformulator = OracleReformulator()

    def staged(guidance, verifier, reformulate=True):
        p = StagePlan(
            R1=plan.R1, R2=plan.R2, n_start_canvases=plan.n_start_canvases,
            reformulate_at=plan.reformulate_at if reformulate else frozenset(),
            guidance=guidance, all_rejected_policy=plan.all_rejected_policy,
            max_workers=plan.max_workers,
        )
        return run_gridar(p, prompt, model, verifier, orm, seed,
                          reformulator=reformulator if reformulate else None)

    if name == "gridar":
        return staged(plan.guidance, make_verifier(verifier_kind, endpoint))
    if name == "gridar_replacement":
        return staged(repl, OracleVerifier())
    if name == "gridar_no_reformulation":
        return staged(two, OracleVerifier(), reformulate=False)
    if name == "gridar_accept_all":
        return staged(three, AcceptAllVerifier())
    if name == "gridar_plain":
        return staged(two, AcceptAllVerifier(), reformulate=False)
    if name.startswith("best_of_"):
        return run_best_of_n(int(name.rsplit("_", 1)[1]), prompt, model, orm, seed,
                             guidance=two)
    raise ValueError(f"unknown method {name!r}")


@dataclass
class ExperimentReport:
    """Per-prompt outcomes plus per-method aggregates, fully seeded.

    ``rows`` carry a seconds column for the CSV; the canonical JSON body
    (to_json) omits it so reruns compare byte-for-byte.
    """

    config: dict
    master_seed: int
    rows: list
    summaries: list

    def to_json(self) -> str:
        body = {
            "config": self.config,
            "master_seed": self.master_seed,
            "rows": [{k: v for k, v in row.items() if k != "seconds"} for row in self.rows],
            "summaries": self.summaries,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n"

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([row[c] if c != "seconds" else f"{row[c]:.4f}" for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary_for(self, method: str) -> dict:
        for s in self.summaries:
            if s["method"] == method:
                return s
        raise KeyError(f"no summary for method {method!r}")


def run_compare(
    model: SceneLM,
    suite: SuiteSpec,
    methods=DEFAULT_METHODS,
    *,
    master_seed: int,
    plan: StagePlan | None = None,
    scale: float = EXPERIMENT_SCALE,
    verifier_kind: str = "oracle",
    endpoint: str | None = None,
    max_workers: int = 1,
) -> ExperimentReport:
    """Run every method over the suite with paired per-prompt seeds."""
    methods = tuple(methods)
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; known: {ALL_METHODS}")
    plan = plan or StagePlan(
        guidance=GuidanceConfig(mode=GuidanceMode.THREE_WAY, s_o=scale, s_r=scale)
    )
    cases = gen_suite(suite, h=model.spec.h)
    seeds = [_derive_seed(master_seed, _K_PAIRED, i) for i in range(len(cases))]

    def one(i: int) -> list:
        case, seed = cases[i], seeds[i]
        rows = []
        for m in methods:
            out = _method_outcome(m, case.prompt, model, seed, plan, scale,
                                  verifier_kind, endpoint)
            rows.append({
                "prompt_id": case.prompt_id,
                "category": case.category,
                "method": m,
                "success": int(out.success),
                "tokens": out.ledger.generated_tokens,
                "forwards": out.ledger.forward_passes,
                "verifier_calls": out.ledger.verifier_calls,
                "seconds": out.wall_clock_s,
            })
        return rows

    if max_workers <= 1:
        nested = [one(i) for i in range(len(cases))]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            nested = list(ex.map(one, range(len(cases))))
    rows = [r for group in nested for r in group]

    summaries = []
    for m in methods:
        mine = [r for r in rows if r["method"] == m]
        n = len(mine)
        wins = sum(r["success"] for r in mine)
        lo, hi = wilson_ci(wins, n)
        summaries.append({
            "method": m,
            "n": n,
            "successes": wins,
            "success_rate": wins / n if n else 0.0,
            "ci_low": lo,
            "ci_high": hi,
            "generated_tokens": sum(r["tokens"] for r in mine),
            "forward_passes": sum(r["forwards"] for r in mine),
            "verifier_calls": sum(r["verifier_calls"] for r in mine),
        })

    config = {
        "canvas": {"h": model.spec.h, "w": model.spec.w, "K": model.spec.K,
                   "tile_px": model.spec.tile_px},
        "scene_params": asdict(model.params),
        "suite": suite.as_dict(),
        "plan": plan.as_dict(),
        "methods": list(methods),
        "scale": scale,
        "verifier": verifier_kind,
        "endpoint": endpoint,
    }
    return ExperimentReport(config=config, master_seed=master_seed, rows=rows,
                            summaries=summaries)


def replay_report(report_json: str, max_workers: int = 1) -> ExperimentReport:
    """Regenerate a report from its own embedded config and master seed."""
    body = json.loads(report_json)
    cfg = body["config"]
    spec = spec_for(h=cfg["canvas"]["h"], w=cfg["canvas"]["w"],
                    tile_px=cfg["canvas"]["tile_px"])
    model = SceneLM(spec, SceneLMParams(**cfg["scene_params"]))
    suite = SuiteSpec(
        categories=tuple(cfg["suite"]["categories"]),
        counts_range=tuple(cfg["suite"]["counts_range"]),
        n_prompts=cfg["suite"]["n_prompts"],
        master_seed=cfg["suite"]["master_seed"],
    )
    plan = StagePlan(
        R1=cfg["plan"]["R1"],
        R2=cfg["plan"]["R2"],
        n_start_canvases=cfg["plan"]["n_start_canvases"],
        reformulate_at=frozenset(cfg["plan"]["reformulate_at"]),
        guidance=GuidanceConfig(
            mode=GuidanceMode(cfg["plan"]["guidance_mode"]),
            s_o=cfg["plan"]["s_o"], s_r=cfg["plan"]["s_r"],
        ),
        all_rejected_policy=cfg["plan"]["all_rejected_policy"],
    )
    return run_compare(
        model, suite, tuple(cfg["methods"]), master_seed=body["master_seed"],
        plan=plan, scale=cfg["scale"], verifier_kind=cfg.get("verifier", "oracle"),
        endpoint=cfg.get("endpoint"), max_workers=max_workers,
    )
