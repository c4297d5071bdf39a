"""Command-line front end: suite emission, pilot curves, method comparison,
and byte-exact replay of a saved report.

Configuration is JSON; command-line flags override config-file values.  The
remote verifier reads its bearer token from GRIDAR_VERIFIER_TOKEN.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (
    CATEGORIES,
    DEFAULT_METHODS,
    EXPERIMENT_SCALE,
    SuiteSpec,
    gen_suite,
    replay_report,
    run_compare,
    run_pilot,
)
from .guidance import GuidanceConfig, GuidanceMode
from .pipeline import StagePlan
from .prompts import spec_for, text_form
from .scene import SceneLM, SceneLMParams


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _pick(args_value, cfg: dict, key: str, default):
    if args_value is not None:
        return args_value
    return cfg.get(key, default)


def _build_model(cfg: dict) -> SceneLM:
    canvas = cfg.get("canvas", {})
    spec = spec_for(
        h=canvas.get("h", 16), w=canvas.get("w", 16), tile_px=canvas.get("tile_px", 16)
    )
    return SceneLM(spec, SceneLMParams(**cfg.get("scene_params", {})))


def _suite_spec(args, cfg: dict, seed: int, default_categories=CATEGORIES) -> SuiteSpec:
    return SuiteSpec(
        categories=tuple(cfg.get("categories", default_categories)),
        counts_range=tuple(cfg.get("counts_range", (2, 9))),
        n_prompts=cfg.get("n_prompts", 100),
        master_seed=cfg.get("suite_seed", seed),
    )


def _plan(args, cfg: dict, scale: float) -> StagePlan:
    plan_str = _pick(args.plan, cfg, "plan", "4,2")
    try:
        r1, r2 = (int(x) for x in str(plan_str).replace(" ", "").split(","))
    except ValueError:
        raise SystemExit(f"--plan wants R1,R2 (e.g. 4,2), got {plan_str!r}")
    mode = GuidanceMode(_pick(args.guidance, cfg, "guidance", "three_way"))
    return StagePlan(
        R1=r1, R2=r2,
        n_start_canvases=cfg.get("n_start_canvases", 1),
        guidance=GuidanceConfig(mode=mode, s_o=scale, s_r=scale),
    )


def _out_dir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_suite(args) -> int:
    cfg = _load_config(args.config)
    seed = _pick(args.seed, cfg, "seed", 0)
    suite = _suite_spec(args, cfg, seed)
    model_h = cfg.get("canvas", {}).get("h", 16)
    cases = gen_suite(suite, h=model_h)
    lines = [f"{c.prompt_id}\t{c.category}\t{text_form(c.prompt)}" for c in cases]
    if args.out:
        path = _out_dir(args) / "suite.tsv"
        path.write_text("\n".join(lines) + "\n")
        print(f"wrote {len(cases)} prompts to {path}")
    else:
        print("\n".join(lines))
    return 0


def cmd_pilot(args) -> int:
    cfg = _load_config(args.config)
    seed = _pick(args.seed, cfg, "seed", 0)
    scale = cfg.get("scale", EXPERIMENT_SCALE)
    model = _build_model(cfg)
    pool = SuiteSpec(
        categories=tuple(cfg.get("categories", ("counting",))),
        counts_range=tuple(cfg.get("counts_range", (6, 9))),
        n_prompts=cfg.get("n_prompts", 400),
        master_seed=cfg.get("suite_seed", seed),
    )
    cases = gen_suite(pool, h=model.spec.h)
    result = run_pilot(
        model, cases,
        tuple(cfg.get("k_values", (1, 2, 4, 8, 16, 32))),
        master_seed=seed,
        n_keep=cfg.get("n_keep", 200),
        scale=scale,
    )
    out = _out_dir(args)
    (out / "pilot_curves.csv").write_text(result.to_csv())
    (out / "pilot.json").write_text(
        json.dumps(result.as_dict(), sort_keys=True, separators=(",", ":")) + "\n"
    )
    print(f"pilot over {result.n_prompts} failing prompts (seed {seed})")
    print(f"{'k':>4}  {'baseline':>9}  {'reformulated':>12}")
    for k, b, r in zip(result.k_values, result.baseline_curve, result.reformulated_curve):
        print(f"{k:>4}  {b:>9.3f}  {r:>12.3f}")
    print(f"wrote {out / 'pilot_curves.csv'}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    seed = _pick(args.seed, cfg, "seed", 0)
    scale = cfg.get("scale", EXPERIMENT_SCALE)
    model = _build_model(cfg)
    suite = _suite_spec(args, cfg, seed)
    plan = _plan(args, cfg, scale)
    verifier_kind = _pick(args.verifier, cfg, "verifier", "oracle")
    endpoint = _pick(args.endpoint, cfg, "endpoint", None)
    methods = tuple(cfg.get("methods", DEFAULT_METHODS))
    report = run_compare(
        model, suite, methods, master_seed=seed, plan=plan, scale=scale,
        verifier_kind=verifier_kind, endpoint=endpoint,
        max_workers=cfg.get("max_workers", 1),
    )
    out = _out_dir(args)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.csv_text())
    print(f"{'method':<24} {'rate':>6} {'95% CI':>16} {'tokens':>10} {'forwards':>10}")
    for s in report.summaries:
        ci = f"({s['ci_low']:.3f},{s['ci_high']:.3f})"
        print(f"{s['method']:<24} {s['success_rate']:>6.3f} {ci:>16} "
              f"{s['generated_tokens']:>10} {s['forward_passes']:>10}")
    print(f"wrote {out / 'report.json'} and {out / 'report.csv'}")
    return 0


def cmd_replay(args) -> int:
    original = Path(args.report).read_text()
    report = replay_report(original)
    out = _out_dir(args)
    (out / "replayed_report.json").write_text(report.to_json())
    identical = report.to_json() == original
    print(f"replay byte-identical: {identical}")
    return 0 if identical else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridar-bench",
        description="Staged grid generation experiments on the synthetic scene model.",
        epilog="Remote verifier auth: set GRIDAR_VERIFIER_TOKEN for Bearer auth.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_plan=False, with_verifier=False):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--out", help="output directory (default ./out)")
        if with_plan:
            p.add_argument("--plan", help="R1,R2 band counts (default 4,2)")
            p.add_argument("--guidance",
                           choices=[m.value for m in GuidanceMode],
                           help="guidance mode for the staged method")
        if with_verifier:
            p.add_argument("--verifier", choices=("oracle", "remote", "accept_all"),
                           help="verifier backing the staged method")
            p.add_argument("--endpoint", help="remote verifier URL")

    p_suite = sub.add_parser("suite", help="emit the deterministic prompt suite")
    common(p_suite)
    p_suite.set_defaults(fn=cmd_suite)

    p_pilot = sub.add_parser("pilot", help="success-within-k curves from a frozen prefix")
    common(p_pilot)
    p_pilot.set_defaults(fn=cmd_pilot)

    p_cmp = sub.add_parser("compare", help="method comparison over a prompt suite")
    common(p_cmp, with_plan=True, with_verifier=True)
    p_cmp.set_defaults(fn=cmd_compare)

    p_rep = sub.add_parser("replay", help="regenerate a report from its embedded config")
    p_rep.add_argument("report", help="path to a report.json written by compare")
    p_rep.add_argument("--out", help="output directory (default ./out)")
    p_rep.set_defaults(fn=cmd_replay)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
