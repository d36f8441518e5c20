"""Command-line entry point: ``vcut <command> [options]``.

Commands: ``surgery`` (fold a saved model), ``run`` (sample a trajectory),
``cost`` (analytical cost report), ``metrics`` (score embedding/frame/flow
files), ``equiv-check`` (the numerical property suite), ``sweep`` (mode x
cut-step x seed experiment grid) and ``cost-tables`` (reference comparison
tables). Exit codes: 0 success, 2 argument error, 3 property violation,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import costmodel, metrics, reporting
from .errors import (
    ArgumentError,
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    TransformError,
    VcutError,
)
from .model import (
    ModelSpec,
    build_weights,
    cross_attention,
    load_model,
    null_embedding,
    random_attention_site,
    random_embedding,
    save_model,
    svd_layout_spec,
)
from .sampler import SamplerConfig, cache_policy_check, expected_forward_passes, run
from .surgery import FoldedAffine, apply_vcut, fold_site, surgery_report
from .tensorops import Rng
from .vten import read_vten, write_vten

EXIT_OK = 0
EXIT_ARGUMENT = 2
EXIT_PROPERTY = 3
EXIT_IO = 4

_DTYPES = {"f32": np.float32, "f64": np.float64}


class PropertyViolation(VcutError):
    """A numerical property the package guarantees failed to hold."""


# ---------------------------------------------------------------------------
# Equivalence suite (also imported by the test suite).


def _random_cross_config(rng: Rng):
    draws = rng.next_u64(6)
    heads = int(1 << (draws[0] % 3))                    # 1, 2 or 4
    channels = heads * int(8 // heads + draws[1] % (128 // heads - 8 // heads + 1))
    channels = max(channels, heads)
    cross_dim = 16 + int(draws[2] % (1024 - 16 + 1))
    length = 1 + int(draws[3] % 48)
    batch = 1 + int(draws[4] % 2)
    kind = "sca" if draws[5] % 2 == 0 else "tca"
    return kind, channels, heads, cross_dim, length, batch


def equivalence_sweep(n_configs: int, dtype=np.float32, poison_fold: bool = False):
    """Singleton-score exactness and fold equivalence over random sites.

    Returns (max_abs_difference, tolerance, details). Raises
    :class:`PropertyViolation` on the first failing site.
    """
    dtype = np.dtype(dtype)
    tol = 1e-12 if dtype == np.float64 else 1e-5
    master = Rng(0xC0FFEE)
    worst = 0.0
    for i in range(n_configs):
        kind, channels, heads, cross_dim, length, batch = _random_cross_config(master)
        site_rng = Rng(master.next_u64(1)[0])
        site = random_attention_site(
            site_rng, kind, channels, heads, cross_dim, dtype, site_id=f"sweep{i}.{kind}"
        )
        x = site_rng.uniform(-1.0, 1.0, (batch, length, channels), dtype)
        e = site_rng.uniform(-1.0, 1.0, (batch, 1, cross_dim), dtype)
        out, scores = cross_attention(site, x, e, return_scores=True)
        if scores.shape != (batch * heads, length, 1) or not (scores == 1.0).all():
            raise PropertyViolation(f"{site.site_id}: attention scores are not exactly one")
        if (out != out[:, :1, :]).any():
            raise PropertyViolation(f"{site.site_id}: output varies along the query axis")
        folded = fold_site(site) if kind == "sca" else _fold_any(site)
        if poison_fold and i == 0:
            folded = FoldedAffine(folded.site_id, folded.weight + dtype.type(0.01), folded.bias)
        diff = float(np.abs(out - folded(e)[:, None, :]).max())
        worst = max(worst, diff)
        if diff > tol:
            raise PropertyViolation(
                f"{site.site_id}: folded map deviates from attention by {diff:.3e} (tol {tol:.0e})"
            )
    return worst, tol, f"{n_configs} random sites, max |attention - fold| = {worst:.3e}"


def _fold_any(site) -> FoldedAffine:
    # the fold arithmetic holds for temporal sites too; only the surgery
    # refuses them (they are deleted rather than folded)
    from .surgery import fold_projections

    weight, bias = fold_projections(site.w_v, site.b_v, site.w_o, site.b_o)
    return FoldedAffine(site_id=site.site_id, weight=weight, bias=bias)


def _equiv_toy(dtype):
    spec = ModelSpec(
        latent_channels=2, channels=(4,), enc_blocks=(1,), attn_levels=(True,),
        heads=2, embed_dim=8, frames=2, time_dim=4,
    )
    return spec, build_weights(spec, seed=11, dtype=dtype)


def run_equivalence_checks(seeds: int, dtype=np.float32, poison_fold: bool = False) -> dict:
    dtype = np.dtype(dtype)
    checks = []
    ok = True

    def record(name, fn):
        nonlocal ok
        try:
            detail = fn()
            checks.append({"name": name, "ok": True, "detail": detail})
        except (VcutError, AssertionError) as exc:
            ok = False
            checks.append({"name": name, "ok": False, "detail": str(exc)})

    def fold_check():
        _, tol, detail = equivalence_sweep(seeds, dtype, poison_fold=poison_fold)
        return detail

    def cache_check():
        spec, weights = _equiv_toy(dtype)
        cfg = SamplerConfig(steps=4, cut_step=3, seed=0)
        report = cache_policy_check(spec, weights, cfg, seeds=[0, 1], height=4, width=4, dtype=dtype)
        if not report.ok:
            raise PropertyViolation(f"cache policy divergence: {report.first_divergence}")
        return "compute-once vs recompute-each-step trajectories bitwise identical"

    def prefix_check():
        spec, weights = _equiv_toy(dtype)
        cut = 4
        cfg_cut = SamplerConfig(steps=6, cut_step=cut, seed=3)
        cfg_full = SamplerConfig(steps=6, cut_step=7, seed=3)
        e_cond = random_embedding(Rng(99), 1, spec.embed_dim, dtype)
        a, _ = run(spec, weights, cfg_cut, e_cond, mode="vcut", height=4, width=4)
        b, _ = run(spec, weights, cfg_full, e_cond, mode="modified", height=4, width=4)
        for step in range(cut):
            if a.states[step].tobytes() != b.states[step].tobytes():
                raise PropertyViolation(f"pre-cut trajectories diverge at state {step}")
        return f"states 0..{cut - 1} bitwise equal between cut and never-cut runs"

    record("singleton-softmax-and-fold-equivalence", fold_check)
    record("conditioner-cache-bitwise-identity", cache_check)
    record("pre-cut-prefix-equality", prefix_check)
    return {
        "report": "equiv-check@1",
        "ok": ok,
        "seeds": seeds,
        "dtype": str(dtype),
        "tolerance": 1e-12 if dtype == np.float64 else 1e-5,
        "checks": checks,
    }


# ---------------------------------------------------------------------------
# Subcommand implementations.


def _load_model_args(args):
    weights_dir = Path(args.weights)
    if args.spec:
        spec = ModelSpec.from_json(json.loads(Path(args.spec).read_text()))
        _, weights = load_model(weights_dir)
    else:
        spec, weights = load_model(weights_dir)
    return spec, weights


def _cmd_surgery(args) -> int:
    spec, weights = _load_model_args(args)
    new_spec, new_weights = apply_vcut(spec, weights)
    out = Path(args.out)
    save_model(out, new_spec, new_weights)
    report = {"report": "surgery@1", **surgery_report(spec, weights, new_spec, new_weights)}
    reporting.write_report(out / "surgery_report.json", report)
    print(
        f"removed {report['temporal_cross_sites_removed']} temporal cross sites, "
        f"folded {report['spatial_cross_sites_folded']} spatial cross sites; "
        f"params {report['params_before']} -> {report['params_after']} "
        f"(-{report['param_delta']})"
    )
    return EXIT_OK


def _cmd_run(args) -> int:
    spec, weights = _load_model_args(args)
    dtype = next(iter(weights.values())).dtype
    cut = args.steps + 1 if args.cut_step is None else args.cut_step
    cfg = SamplerConfig(steps=args.steps, cut_step=cut, seed=args.seed)
    e_cond = random_embedding(Rng(args.seed ^ 0xE0), 1, spec.embed_dim, dtype)
    e_null = null_embedding(1, spec.embed_dim, dtype)
    traj, stats = run(
        spec, weights, cfg, e_cond, e_null, mode=args.mode, height=args.height, width=args.width
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, state in enumerate(traj.states):
        write_vten(out / f"state_{i:03d}.vten", state)
    reporting.write_report(
        out / "run_stats.json",
        {"report": "run-stats@1", "config": cfg.__dict__, "stats": stats.to_json()},
    )
    print(
        f"{stats.mode}: {stats.steps} steps, cut at {stats.effective_cut_step}, "
        f"{stats.forward_passes} denoiser evaluations, final digest {stats.final_digest}"
    )
    return EXIT_OK


def _cmd_cost(args) -> int:
    if args.frames and args.arch in ("svd", "svd-xt", "svd-xt1"):
        arch = costmodel.svd_arch(frames=args.frames, name=args.arch)
    else:
        arch = costmodel.load_arch(args.arch)
        if args.frames and args.frames != arch.frames:
            raise ArgumentError(
                f"--frames {args.frames} conflicts with architecture file frames {arch.frames}"
            )
    report = costmodel.build_cost_report(
        arch, steps=args.steps, cut_step=args.cut_step, baseline_latency_s=args.baseline_latency
    )
    doc = {"report": "cost@1", **report.to_json()}
    print(json.dumps(doc, indent=2))
    if args.out:
        out = Path(args.out)
        reporting.write_report(out / "cost_report.json", doc)
        row = {
            "method": f"{report.name}(c={report.cut_step})",
            "macs_T": report.macs_total / costmodel.TERA,
            "params_B": report.params_after_tca_removal / 1e9
            if report.cut_step <= report.steps else report.params / 1e9,
            "latency_s": report.latency_s,
            "macs_delta_T": (report.macs_total_baseline - report.macs_total) / costmodel.TERA,
            "params_delta_M": (report.params - report.params_after_tca_removal) / 1e6,
        }
        reporting.append_csv_row(
            out / "cost.csv", row,
            ["method", "macs_T", "params_B", "latency_s", "macs_delta_T", "params_delta_M"],
        )
    return EXIT_OK


_METRIC_NAMES = (
    "subject-consistency", "vi-subject", "bg-consistency", "vi-bg",
    "motion-smoothness", "dynamic-degree", "cosine",
)


def _cmd_metrics(args) -> int:
    arrays = [read_vten(p) for p in args.inputs]
    ref = read_vten(args.ref) if args.ref else None
    params = {}
    name = args.metric
    if name == "subject-consistency":
        score = metrics.subject_consistency(arrays[0])
    elif name == "vi-subject":
        if ref is None:
            raise ArgumentError("vi-subject needs --ref")
        score = metrics.video_image_subject_consistency(arrays[0], ref)
    elif name == "bg-consistency":
        score = metrics.background_consistency(arrays[0])
    elif name == "vi-bg":
        if ref is None:
            raise ArgumentError("vi-bg needs --ref")
        score = metrics.video_image_background_consistency(arrays[0], ref)
    elif name == "motion-smoothness":
        params["range"] = args.range
        score = metrics.motion_smoothness(arrays[0], value_range=tuple(args.range))
    elif name == "dynamic-degree":
        params["theta"] = args.theta
        score = metrics.dynamic_degree(arrays, threshold=args.theta)
    elif name == "cosine":
        if ref is None:
            raise ArgumentError("cosine needs --ref with the second embedding")
        score = metrics.cosine_probe(arrays[0], ref)
    else:  # pragma: no cover - argparse restricts choices
        raise ArgumentError(f"unknown metric {name}")
    doc = {
        "report": "metric@1", "metric": name, "score": score,
        "inputs": [str(p) for p in args.inputs] + ([str(args.ref)] if args.ref else []),
        "parameters": params,
    }
    print(json.dumps(doc, indent=2))
    if args.out:
        reporting.append_csv_row(
            Path(args.out) / "metrics.csv",
            {"metric": name, "score": score, "inputs": ";".join(doc["inputs"])},
            ["metric", "score", "inputs"],
        )
    return EXIT_OK


def _cmd_equiv_check(args) -> int:
    doc = run_equivalence_checks(args.seeds, _DTYPES[args.dtype], poison_fold=args.poison_fold)
    print(json.dumps(doc, indent=2))
    if args.out:
        reporting.write_report(Path(args.out) / "equiv_check.json", doc)
    return EXIT_OK if doc["ok"] else EXIT_PROPERTY


def _cmd_sweep(args) -> int:
    spec, weights = _load_model_args(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    cuts = [int(c) for c in args.cut_steps.split(",") if c.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not modes or not cuts or not seeds:
        raise ArgumentError("sweep needs non-empty --modes, --cut-steps and --seeds")
    dtype = next(iter(weights.values())).dtype
    jobs = [
        (mode, cut, seed)
        for mode in modes
        for cut in cuts
        for seed in seeds  # seeds shared across modes so comparisons share noise
    ]

    def one(job):
        mode, cut, seed = job
        run_id = f"{mode}-c{cut}-s{seed}"
        base = {"run_id": run_id, "mode": mode, "cut_step": cut, "seed": seed}
        try:
            cfg = SamplerConfig(steps=args.steps, cut_step=cut, seed=seed)
            e_cond = random_embedding(Rng(seed ^ 0xE0), 1, spec.embed_dim, dtype)
            traj, stats = run(
                spec, weights, cfg, e_cond, mode=mode, height=args.height, width=args.width
            )
            relative = stats.forward_passes / (2.0 * args.steps)
            latency = args.baseline_latency * relative if args.baseline_latency else None
            return {
                **base, "status": "ok",
                "forward_passes": stats.forward_passes,
                "relative_cost": relative,
                "latency_estimate_s": latency,
                "final_digest": stats.final_digest,
                "error": None,
            }
        except VcutError as exc:
            return {
                **base, "status": "error", "forward_passes": None, "relative_cost": None,
                "latency_estimate_s": None, "final_digest": None, "error": str(exc),
            }

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(one, jobs))
    else:
        rows = [one(job) for job in jobs]

    plan = {
        "modes": modes, "cut_steps": cuts, "seeds": seeds, "steps": args.steps,
        "height": args.height, "width": args.width,
        "weights": str(args.weights), "spec": str(args.spec) if args.spec else None,
    }
    doc = {"report": "sweep@1", "plan": plan, "rows": rows}
    out = Path(args.out)
    reporting.write_report(out / "sweep.json", doc)
    reporting.write_csv(
        out / "sweep.csv", rows,
        ["run_id", "mode", "cut_step", "seed", "status", "forward_passes",
         "relative_cost", "latency_estimate_s", "final_digest", "error"],
    )
    failures = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} runs, {len(failures)} failures -> {out / 'sweep.csv'}")
    return EXIT_OK


_STEP_COLUMNS = [
    "variant", "per_step_t", "per_step_t_published", "per_step_t_rel_err",
    "per_step_modified_t", "per_step_modified_t_published", "per_step_modified_t_rel_err",
    "step_delta_t", "step_delta_t_published", "step_delta_t_rel_err",
    "params_b", "params_b_published", "params_b_rel_err",
    "param_delta_m", "param_delta_m_published", "param_delta_m_rel_err",
    "param_delta_folded_m",
]
_TOTALS_COLUMNS = [
    "variant", "cut_step", "total_t", "total_t_published", "total_t_abs_err",
    "latency_s", "latency_s_published", "latency_drop_pct", "latency_drop_pct_published",
]


def _cmd_cost_tables(args) -> int:
    step_rows = costmodel.published_step_table()
    totals_rows = costmodel.published_totals_table(steps=args.steps)
    out = Path(args.out)
    reporting.write_csv(out / "cost_step_table.csv", step_rows, _STEP_COLUMNS)
    reporting.write_csv(out / "cost_totals_table.csv", totals_rows, _TOTALS_COLUMNS)
    reporting.write_report(
        out / "cost_tables.json",
        {"report": "cost-tables@1", "step_table": step_rows, "totals_table": totals_rows},
    )
    worst_step = max(r["per_step_t_rel_err"] for r in step_rows)
    worst_total = max(r["total_t_abs_err"] for r in totals_rows)
    print(
        f"step table: worst per-step relative error {worst_step:.1%}; "
        f"totals table: worst absolute error {worst_total:.2f}T -> {out}"
    )
    return EXIT_OK


def _cmd_init_model(args) -> int:
    if args.layout == "svd":
        spec = svd_layout_spec(frames=args.frames)
    else:
        spec = ModelSpec(
            latent_channels=2, channels=(4, 8), enc_blocks=(1, 1), attn_levels=(True, True),
            heads=2, embed_dim=16, frames=args.frames, time_dim=8,
        )
    weights = build_weights(spec, seed=args.seed, dtype=_DTYPES[args.dtype])
    save_model(args.out, spec, weights)
    counts = spec.site_counts()
    print(
        f"wrote {args.layout} model to {args.out}: "
        f"{counts['total']} sites per attention kind "
        f"({counts['encoder']}/{counts['middle']}/{counts['decoder']} enc/mid/dec)"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcut", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    common.add_argument("--threads", type=int, default=1)

    model_args = argparse.ArgumentParser(add_help=False)
    model_args.add_argument("--spec", default=None, help="model spec JSON (default: <weights>/spec.json)")
    model_args.add_argument("--weights", required=True, help="weight directory with manifest.json")

    p = sub.add_parser("surgery", parents=[common, model_args],
                       help="fold cross-attention out of a saved model")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_surgery)

    p = sub.add_parser("run", parents=[common, model_args], help="sample one trajectory")
    p.add_argument("--mode", choices=("baseline", "modified", "vcut"), required=True)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--cut-step", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("cost", parents=[common], help="analytical cost report")
    p.add_argument("--arch", default="svd", help="svd | svd-xt | svd-xt1 | arch JSON path")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--steps", type=int, default=costmodel.DEFAULT_STEPS)
    p.add_argument("--cut-step", type=int, default=None)
    p.add_argument("--baseline-latency", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("metrics", parents=[common], help="score embedding/frame/flow files")
    p.add_argument("metric", choices=_METRIC_NAMES)
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="input VTEN file(s)")
    p.add_argument("--ref", default=None, help="reference VTEN (vi-* and cosine)")
    p.add_argument("--theta", type=float, default=1.0, help="dynamic-degree motion threshold")
    p.add_argument("--range", type=float, nargs=2, default=(0.0, 1.0),
                   help="frame value range for motion-smoothness")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("equiv-check", parents=[common], help="run the equivalence property suite")
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--poison-fold", action="store_true",
                   help="inject a fold fault; the suite must fail (negative control)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_equiv_check)

    p = sub.add_parser("sweep", parents=[common, model_args],
                       help="mode x cut-step x seed experiment grid")
    p.add_argument("--modes", default="baseline,vcut")
    p.add_argument("--cut-steps", default="17")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--baseline-latency", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("cost-tables", parents=[common],
                       help="reference comparison tables (computed vs published)")
    p.add_argument("--steps", type=int, default=costmodel.DEFAULT_STEPS)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_cost_tables)

    p = sub.add_parser("init-model", parents=[common],
                       help="write a seeded toy model directory (for run/sweep/surgery)")
    p.add_argument("--layout", choices=("tiny", "svd"), default="tiny")
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_init_model)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PropertyViolation as exc:
        print(f"property violation: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except (ArgumentError, ConfigError, ShapeError, StateError, TransformError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
