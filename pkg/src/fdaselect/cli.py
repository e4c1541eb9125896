"""Single entry-point CLI: simulate / smooth / fit / iwt / effectsize /
evaluate subcommands plus a `pipeline` command chaining the full workflow.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config error.
The FDA_SEED environment variable overrides any configured seed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._svgplot import render_pvalues_svg
from .analysis import AnalysisSettings, fit_all_groups, stack_samples
from .datamodel import dataset_metadata, load_dataset, write_dataset
from .effectsize import bootstrap_variance, effect_size_map, render_heatmap
from .errors import ConfigError, FdaSelectError, InputError
from .evaluate import (
    DesignCell,
    run_experiment,
    write_replicates_csv,
    write_summary_csv,
)
from .iwt import run_iwt
from .presmooth import SmoothingConfig, smooth_dataset
from .serialize import (
    esmap_payload,
    fits_from_payload,
    fits_payload,
    load_json,
    read_smoothed_csv,
    report_payload,
    validate_payload,
    write_json,
    write_matrix_csv,
    write_smoothed_csv,
)
from .simulate import ScenarioConfig, generate, truth_record


def _seed_from_env(seed: int) -> int:
    env = os.environ.get("FDA_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"FDA_SEED must be an integer, got {env!r}") from None


def _parse_knots(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse knot candidates from {text!r}") from None


def _cmd_simulate(args) -> int:
    cfg_dict = load_json(args.config)
    cfg = ScenarioConfig.from_dict(cfg_dict)
    seed = _seed_from_env(cfg.seed)
    if seed != cfg.seed:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": seed})
    ds, truth = generate(cfg)
    write_dataset(ds, args.out)
    write_json(dataset_metadata(ds), str(args.out) + ".meta.json", "dataset_meta")
    write_json(truth_record(cfg, truth, ds.grid), args.truth, "truth")
    print(f"wrote {ds.n} curves on m={ds.grid.m} to {args.out}")
    return 0


def _cmd_smooth(args) -> int:
    ds = load_dataset(args.infile)
    config = SmoothingConfig(orders=args.L, global_bandwidth=args.global_bandwidth)
    samples = smooth_dataset(ds, config)
    write_smoothed_csv(samples, ds.grid, ds.value_matrix(), args.out)
    print(f"smoothed {ds.n} curves to order {args.L} -> {args.out}")
    return 0


def _cmd_fit(args) -> int:
    grid, labels, group_ids, y_by_order, masks_by_order = read_smoothed_csv(args.infile)
    settings = AnalysisSettings(
        delta=args.delta,
        knot_candidates=_parse_knots(args.knots),
        seed=_seed_from_env(args.seed),
    )
    fits = fit_all_groups(
        grid, y_by_order, masks_by_order, labels, group_ids,
        settings.mest_config(), settings.seed,
    )
    write_json(
        fits_payload(fits, grid, settings.delta, settings.penalty_kind),
        args.out,
        "fits",
    )
    print(f"fitted {len(fits)} (group, order) pairs -> {args.out}")
    return 0


def _orders_upto(y_by_order: dict, masks_by_order: dict, L: int):
    available = sorted(y_by_order)
    if L > max(available):
        raise InputError(
            f"smoothed input provides orders {available}, cannot test up to L={L}"
        )
    keep = [o for o in available if o <= L]
    return (
        {o: y_by_order[o] for o in keep},
        {o: masks_by_order[o] for o in keep},
    )


def _cmd_iwt(args) -> int:
    grid, labels, group_ids, y_by_order, masks_by_order = read_smoothed_csv(args.infile)
    fits, fit_grid, delta = fits_from_payload(load_json(args.fits))
    if not fit_grid.same_as(grid):
        raise InputError("fits.json grid does not match the smoothed input grid")
    y_by_order, masks_by_order = _orders_upto(y_by_order, masks_by_order, args.L)
    settings = AnalysisSettings(
        L=args.L,
        B=args.B,
        alpha=args.alpha,
        correction=args.correction,
        delta=delta,
        seed=_seed_from_env(args.seed),
        threads=args.threads,
    )
    _, pvals, report = run_iwt(
        grid, y_by_order, masks_by_order, labels, group_ids, fits,
        settings.iwt_config(), settings.mest_config(),
    )
    write_json(report_payload(pvals, report, grid), args.out, "report")
    if args.plot:
        render_pvalues_svg(
            grid.points, pvals.adjusted, pvals.orders, report.alpha_star,
            report.intervals, args.plot,
        )
    n_sel = int(report.selected.size)
    print(f"selected {n_sel}/{grid.m} grid points at alpha*={report.alpha_star} -> {args.out}")
    return 0


def _cmd_effectsize(args) -> int:
    grid, labels, group_ids, y_by_order, masks_by_order = read_smoothed_csv(args.infile)
    fits, fit_grid, delta = fits_from_payload(load_json(args.fits))
    if not fit_grid.same_as(grid):
        raise InputError("fits.json grid does not match the smoothed input grid")
    settings = AnalysisSettings(
        R=args.R, delta=delta, seed=_seed_from_env(args.seed), threads=args.threads
    )
    mcfg = settings.mest_config()
    sizes = np.array([(labels == g).sum() for g in group_ids], dtype=float)
    effect_maps = {}
    for order in sorted(y_by_order):
        if any((g, order) not in fits for g in group_ids):
            continue
        variance = bootstrap_variance(
            grid, y_by_order[order], masks_by_order[order], labels, group_ids,
            fits, order, settings.R, settings.seed, mcfg,
            block_size=settings.block_size, workers=settings.threads,
        )
        theta = np.array([fits[(g, order)].grid_values for g in group_ids])
        effect_maps[order] = effect_size_map(grid, theta, sizes, variance)
    if not effect_maps:
        raise InputError("no (group, order) fits matched the smoothed input")
    write_json(esmap_payload(effect_maps, grid, settings.R, settings.seed), args.out, "esmap")
    if args.plot:
        render_heatmap(effect_maps[min(effect_maps)], grid, args.plot)
    if args.matrix_csv:
        write_matrix_csv(effect_maps[min(effect_maps)], grid, args.matrix_csv)
    print(f"effect-size maps for orders {sorted(effect_maps)} -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    design = load_json(args.design)
    validate_payload(design, "design")
    settings = AnalysisSettings.from_dict(design.get("analysis", {}))
    if "FDA_SEED" in os.environ:
        settings = AnalysisSettings.from_dict(
            {**settings.to_dict(), "seed": _seed_from_env(settings.seed)}
        )
    cells = [DesignCell.from_dict(c) for c in design["cells"]]
    summaries, results = run_experiment(cells, settings, workers=args.threads)
    write_summary_csv(summaries, args.out)
    if args.per_replicate:
        write_replicates_csv(results, args.per_replicate)
    for s in summaries:
        print(
            f"{s.name}: replicates={s.replicates} failed={s.failed} "
            f"sens={s.mean_sensitivity} frr={s.mean_frr} "
            f"p_any_fr={s.p_any_false_rejection}{' FLAGGED' if s.flagged else ''}"
        )
    return 0


def _pipeline_settings(args) -> AnalysisSettings:
    base = AnalysisSettings().to_dict()
    flags = {
        "L": args.L,
        "B": args.B,
        "R": args.R,
        "alpha": args.alpha,
        "correction": args.correction,
        "delta": args.delta,
        "seed": args.seed,
        "threads": args.threads,
        "global_bandwidth": args.global_bandwidth or None,
    }
    if args.knots is not None:
        flags["knot_candidates"] = list(_parse_knots(args.knots))
    for key, value in flags.items():
        if value is not None:
            base[key] = value
    if args.config:
        file_cfg = load_json(args.config)
        for key, value in file_cfg.items():
            if key not in base:
                raise ConfigError(f"unknown pipeline config key {key!r}")
            base[key] = value
    base["seed"] = _seed_from_env(base["seed"])
    return AnalysisSettings.from_dict(base)


def _cmd_pipeline(args) -> int:
    settings = _pipeline_settings(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if Path(args.infile).resolve().parent == out_dir.resolve():
        raise ConfigError("the run directory must not contain the input file")
    paths = {
        name: out_dir / name
        for name in (
            "smoothed.csv", "fits.json", "report.json", "esmap.json",
            "pvals.svg", "heatmap.svg", "manifest.json",
        )
    }
    manifest = {
        "command": "pipeline",
        "version": __version__,
        "status": "ok",
        "parameters": {**settings.to_dict(), "input": str(args.infile)},
        "seed": settings.seed,
        "artifacts": [],
        "wall_times": {},
    }

    def _finish_error(exc: FdaSelectError) -> int:
        manifest["status"] = "error"
        manifest["error"] = {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }
        write_json(manifest, paths["manifest.json"], "manifest")
        print(f"pipeline failed: {exc}", file=sys.stderr)
        return exc.exit_code

    try:
        t0 = time.perf_counter()
        ds = load_dataset(args.infile)
        manifest["wall_times"]["ingest"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        samples = smooth_dataset(ds, settings.smoothing_config())
        write_smoothed_csv(samples, ds.grid, ds.value_matrix(), paths["smoothed.csv"])
        manifest["wall_times"]["smooth"] = time.perf_counter() - t0
        manifest["artifacts"].append("smoothed.csv")

        t0 = time.perf_counter()
        y_by_order, masks_by_order, labels, group_ids = stack_samples(samples, settings.L)
        mcfg = settings.mest_config()
        fits = fit_all_groups(
            ds.grid, y_by_order, masks_by_order, labels, group_ids, mcfg, settings.seed
        )
        write_json(
            fits_payload(fits, ds.grid, settings.delta, settings.penalty_kind),
            paths["fits.json"],
            "fits",
        )
        manifest["wall_times"]["fit"] = time.perf_counter() - t0
        manifest["artifacts"].append("fits.json")

        t0 = time.perf_counter()
        _, pvals, report = run_iwt(
            ds.grid, y_by_order, masks_by_order, labels, group_ids, fits,
            settings.iwt_config(), mcfg,
        )
        write_json(report_payload(pvals, report, ds.grid), paths["report.json"], "report")
        render_pvalues_svg(
            ds.grid.points, pvals.adjusted, pvals.orders, report.alpha_star,
            report.intervals, paths["pvals.svg"],
        )
        manifest["wall_times"]["iwt"] = time.perf_counter() - t0
        manifest["artifacts"] += ["report.json", "pvals.svg"]

        t0 = time.perf_counter()
        sizes = np.array([(labels == g).sum() for g in group_ids], dtype=float)
        effect_maps = {}
        for order in sorted(y_by_order):
            variance = bootstrap_variance(
                ds.grid, y_by_order[order], masks_by_order[order], labels, group_ids,
                fits, order, settings.R, settings.seed, mcfg,
                block_size=settings.block_size, workers=settings.threads,
            )
            theta = np.array([fits[(g, order)].grid_values for g in group_ids])
            effect_maps[order] = effect_size_map(ds.grid, theta, sizes, variance)
        write_json(
            esmap_payload(effect_maps, ds.grid, settings.R, settings.seed),
            paths["esmap.json"],
            "esmap",
        )
        render_heatmap(effect_maps[min(effect_maps)], ds.grid, paths["heatmap.svg"])
        manifest["wall_times"]["effectsize"] = time.perf_counter() - t0
        manifest["artifacts"] += ["esmap.json", "heatmap.svg"]
    except FdaSelectError as exc:
        return _finish_error(exc)

    manifest["artifacts"].append("manifest.json")
    manifest["parameters"]["alpha_star"] = report.alpha_star
    write_json(manifest, paths["manifest.json"], "manifest")
    n_sel = int(report.selected.size)
    print(f"pipeline complete: {n_sel}/{ds.grid.m} grid points selected; run dir {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdaselect",
        description="Robust domain selection for grouped functional data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("smooth", help="pre-smooth curves and derivatives")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--global-bandwidth", action="store_true")
    p.set_defaults(func=_cmd_smooth)

    p = sub.add_parser("fit", help="per-group penalized M-estimates")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--knots", default="10,20,40")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("iwt", help="interval-wise permutation test")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--B", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--correction", default="bonferroni")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=_cmd_iwt)

    p = sub.add_parser("effectsize", help="robust effect-size heatmap")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--R", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.add_argument("--matrix-csv", dest="matrix_csv")
    p.set_defaults(func=_cmd_effectsize)

    p = sub.add_parser("evaluate", help="score simulation designs")
    p.add_argument("--design", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-replicate", dest="per_replicate")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="full workflow on one dataset")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--config")
    p.add_argument("--L", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--R", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--correction")
    p.add_argument("--delta", type=float)
    p.add_argument("--knots")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--global-bandwidth", action="store_true")
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FdaSelectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
