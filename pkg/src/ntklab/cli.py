"""Command-line entry point: ``ntklab {train,replay,figure1,kernel-check,eig-bounds,generalize}``.

Exit codes: 0 success, 1 bad config or input, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import ConfigError, DatasetError, DegenerateGramError, DivergenceError, NtkLabError
from .io import (atomic_write, csv_text, load_config, load_inputs_csv, trajectory_csv, write_json)
from .kernel import eigen_bounds
from .model import LabeledDataset
from .svgplot import Chart
from .trainer import COLUMNS

log = logging.getLogger("ntklab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

GEN_SLOPE_RANGE = (-0.9, -0.25)


class NumericalFailure(Exception):
    pass


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ------------------------------------------------------------------ train

def _train_outputs(result, out: Path):
    if not result.ok:
        raise NumericalFailure(result.error)
    traj = result.trajectory
    paths = {
        "trajectory": atomic_write(out / "trajectory.csv", trajectory_csv(traj)),
        "loss_plot": atomic_write(out / "loss.svg", Chart(
            "Training loss", "iteration", "||f - Y||^2", logy=True)
            .add("loss", traj.column("iter"), traj.column("loss")).render()),
        "trajectory_plot": atomic_write(out / "trajectory.svg", Chart(
            "Distances along the GD trajectory", "iteration", "squared distance", logy=True)
            .add("V_perp", traj.column("iter"), traj.column("v_perp"))
            .add("V_par", traj.column("iter"), traj.column("v_par"))
            .add("||w - w_L*||^2", traj.column("iter"), traj.column("dist_minnorm_sq"))
            .add("||w - w(0)||^2", traj.column("iter"), traj.column("dist_init_sq")).render()),
    }
    manifest = dict(result.manifest, outputs={k: p.name for k, p in paths.items()})
    write_json(out / "manifest.json", manifest)
    f = traj.final
    print(f"iterations={f.iter} loss={f.loss:.3e} v_perp={f.v_perp:.4g} "
          f"dist_minnorm_sq={f.dist_minnorm_sq:.4g} dist_init_sq={f.dist_init_sq:.4g}")
    return manifest


def _run_train(cfg, out: Path):
    # dataset problems are input errors (exit 1), so surface them before training
    ex.SyntheticTask(cfg.data)
    return _train_outputs(ex.run_cell(cfg), out)


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, data=replace(cfg.data, seed=args.seed))
    _run_train(cfg, Path(args.out))


def cmd_replay(args):
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        cfg = ex.CellConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError("manifest", f"not a train manifest ({exc})") from None
    new = _run_train(cfg, Path(args.out))
    if new["config_hash"] != manifest.get("config_hash"):
        log.warning("config hash differs from the replayed manifest")


# ------------------------------------------------------------------ figure1

FIG1_PLOTS = (("v_perp", "v_perp.svg", "||P0_perp (w - w_L*)||^2"),
              ("dist_minnorm_sq", "dist_minnorm.svg", "||w - w_L*||^2"),
              ("dist_init_sq", "dist_init.svg", "||w - w(0)||^2"))


def cmd_figure1(args):
    widths = tuple(args.widths)
    tc = ex.TrainConfig(step_size=args.step_size, max_iters=args.max_iters, loss_tol=args.loss_tol,
                        record_every=args.record_every)
    cells = ex.figure1_cells(widths, args.seeds, tc)
    if args.seed:
        cells = [replace(c, data=replace(c.data, seed=c.data.seed + args.seed)) for c in cells]
    results = ex.run_cells(cells, ex.threads_from_env(args.threads))
    sweep = ex.summarize_figure1(results, widths, args.seeds)
    out = Path(args.out)

    rows = []
    for c in results:
        if c.trajectory is None:
            continue
        for r in c.trajectory.records:
            rows.append((c.config.width, c.config.data.seed) + tuple(r[:-1]))
    atomic_write(out / "figure1.csv", csv_text(("width", "seed") + COLUMNS[:-1], rows))

    for name, fname, label in FIG1_PLOTS:
        chart = Chart(label, "iteration", label, logy=(name == "v_perp"))
        for m in widths:
            grid, mat = sweep.curves[name][m]
            if mat.size == 0:
                continue
            mu, sd = mat.mean(axis=0), mat.std(axis=0)
            chart.add(f"m={m}", grid, mu, mu - sd, mu + sd)
        atomic_write(out / fname, chart.render())

    trends = sweep.trends
    manifest = {
        "build": ex.build_id(), "widths": list(widths), "seeds": [c.data.seed for c in cells[:args.seeds]],
        "train": asdict(tc),
        "trends": {
            "all_converged": trends["all_converged"],
            "loss_monotone": trends["loss_monotone"],
            "v_perp_non_increasing": trends["v_perp_non_increasing"],
            "dist_minnorm_non_increasing": trends["dist_minnorm_non_increasing"],
            "max_unit_drift_non_increasing": trends["max_unit_drift_non_increasing"],
            "v_perp_flat": trends["v_perp_flat"],
            "dist_init_non_increasing_reported_only": trends["dist_init_non_increasing"],
        },
        "medians": {k: trends[k] for k in ("v_perp_median", "dist_minnorm_median", "dist_init_median",
                                           "max_unit_drift_median")},
        "v_perp_plateau_ratio_max": trends["v_perp_plateau_ratio_max"],
        "cells": [c.manifest for c in results],
        "outputs": ["figure1.csv"] + [f for _, f, _ in FIG1_PLOTS],
    }
    write_json(out / "manifest.json", manifest)
    for k, v in manifest["trends"].items():
        print(f"{k}: {'pass' if v else 'fail'}" if "reported" not in k else f"{k}: {v}")
    failed = [c for c in results if not c.ok]
    if failed:
        raise NumericalFailure(f"{len(failed)} cell(s) failed; first: {failed[0].error}")


# ------------------------------------------------------------------ kernel-check

def cmd_kernel_check(args):
    if args.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    if args.d < 1:
        raise ConfigError("d", "must be >= 1")
    report = ex.kernel_check_suite(args.d, args.trials, args.seeds, tuple(args.widths), seed=args.seed or 0)
    write_json(Path(args.out) / "report.json", report)
    emp = report["empirical"]
    print(f"series_max_err={report['series_max_err']:.3e} feature_map_max_err={report['feature_map_max_err']:.3e} "
          f"dp_ok={report['dp']['ok']} empirical_slope={emp['max_entry_slope']:.3f}")


# ------------------------------------------------------------------ eig-bounds

def cmd_eig_bounds(args):
    if args.dataset:
        X = load_inputs_csv(args.dataset)
        data = LabeledDataset(X, np.zeros(X.shape[0]))
    else:
        spec = ex.SyntheticSpec(n=args.n, d=args.d, p=1, normalize_labels=False,
                                input_radius=args.input_radius, seed=args.seed or 0)
        data = ex.synthesize(spec)
    rep = eigen_bounds(data)
    d = rep.as_dict()
    if args.out:
        write_json(Path(args.out) / "eig_bounds.json", d)
    print(f"theta_min={rep.theta_min:.6g} lower={rep.lower_bound:.6g} "
          f"lambda_min={rep.exact_lambda_min:.6g} upper={rep.upper_bound:.6g} "
          f"sandwich={'pass' if rep.sandwich_ok else 'FAIL'}")
    if not rep.sandwich_ok:
        raise NumericalFailure("eigenvalue sandwich violated")


# ------------------------------------------------------------------ generalize

def cmd_generalize(args):
    ns = tuple(args.ns)
    if len(ns) < 2:
        raise ConfigError("ns", "need at least two sample sizes")
    # fail fast on label standardization before spending time on training
    ex.SyntheticTask(ex.SyntheticSpec(n=max(ns), d=args.d, p=args.p, normalize_labels=args.standardize))
    tc = ex.TrainConfig(step_size=args.step_size, schedule=args.schedule, max_iters=args.max_iters,
                        loss_tol=args.loss_tol, record_every=args.max_iters or 1)
    results, summary = ex.generalization_sweep(
        p=args.p, ns=ns, seeds=args.seeds, width=args.width, normalize_labels=args.standardize,
        n_test=args.n_test, train_config=tc, d=args.d, threads=ex.threads_from_env(args.threads))
    out = Path(args.out)
    rows = [(r.config.data.n, r.config.data.seed,
             r.gen_error.mean if r.ok else float("nan"), r.gen_error.stderr if r.ok else float("nan"),
             r.final["loss"] if r.ok else float("nan"), r.final["iter"] if r.ok else -1)
            for r in results]
    atomic_write(out / "gen_error.csv", csv_text(("n", "seed", "gen_error", "stderr", "terminal_loss", "iterations"), rows))
    slope = summary["slope"]
    chart = Chart(f"Test error vs n (p={args.p}), fitted slope {slope:.3f}", "n", "E(y - f)^2", logx=True, logy=True)
    chart.add("median over seeds", ns, summary["median_gen_error"], markers=True)
    if np.isfinite(slope):
        med = np.asarray(summary["median_gen_error"])
        b = np.mean(np.log(med) - slope * np.log(ns))
        chart.add(f"fit n^{slope:.2f}", ns, np.exp(b) * np.asarray(ns, float) ** slope)
    atomic_write(out / "gen_error.svg", chart.render())
    summary["slope_gate"] = {"range": list(GEN_SLOPE_RANGE),
                             "pass": bool(GEN_SLOPE_RANGE[0] <= slope <= GEN_SLOPE_RANGE[1])}
    summary["build"] = ex.build_id()
    summary["train"] = asdict(tc)
    summary["cells"] = [r.manifest for r in results]
    write_json(out / "manifest.json", summary)
    print(f"slope={slope:.3f} median_errors={['%.3e' % v for v in summary['median_gen_error']]}")
    if summary["failed_cells"]:
        raise NumericalFailure(f"{summary['failed_cells']} cell(s) failed")


# ------------------------------------------------------------------ main

def build_parser():
    p = argparse.ArgumentParser(prog="ntklab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1, help="worker processes (NTKLAB_THREADS overrides)")

    sp = sub.add_parser("train", help="train one network from a config file")
    sp.add_argument("--config", required=True)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("replay", help="re-run the training run recorded in a manifest")
    sp.add_argument("manifest")
    common(sp)
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("figure1", help="width sweep with V_perp / distance trajectories")
    sp.add_argument("--widths", type=_ints, default=list(ex.FIG1_WIDTHS))
    sp.add_argument("--seeds", type=int, default=ex.FIG1_SEEDS)
    sp.add_argument("--step-size", type=float, default=0.01)
    sp.add_argument("--max-iters", type=int, default=50_000)
    sp.add_argument("--loss-tol", type=float, default=1e-4)
    sp.add_argument("--record-every", type=int, default=10)
    common(sp)
    sp.set_defaults(func=cmd_figure1)

    sp = sub.add_parser("kernel-check", help="NTK series / feature-map / empirical agreement")
    sp.add_argument("--d", type=int, default=5)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--widths", type=_ints, default=[1000, 10_000, 100_000])
    common(sp)
    sp.set_defaults(func=cmd_kernel_check)

    sp = sub.add_parser("eig-bounds", help="bounds on the smallest eigenvalue of H")
    sp.add_argument("--dataset", help="CSV of input points (one per row)")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--d", type=int, default=5)
    sp.add_argument("--input-radius", choices=("unit", "sqrt_d"), default="sqrt_d")
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_eig_bounds)

    sp = sub.add_parser("generalize", help="test error vs sample size for y = (x.beta)^p")
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--ns", type=_ints, default=[25, 50, 100, 200])
    sp.add_argument("--d", type=int, default=5)
    sp.add_argument("--width", type=int, default=5000)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--n-test", type=int, default=ex.DEFAULT_N_TEST)
    sp.add_argument("--standardize", action="store_true")
    sp.add_argument("--step-size", type=float, default=1.0)
    sp.add_argument("--schedule", choices=("fixed", "theorem", "curvature"), default="curvature")
    sp.add_argument("--max-iters", type=int, default=200_000)
    sp.add_argument("--loss-tol", type=float, default=1e-6)
    common(sp)
    sp.set_defaults(func=cmd_generalize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, DivergenceError, DegenerateGramError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NtkLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
