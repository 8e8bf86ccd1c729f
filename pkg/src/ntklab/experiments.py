"""Synthetic tasks, Monte-Carlo estimators and width / sample-size sweeps."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .errors import DatasetError, NtkLabError, ParallelPointsError, ZeroVarianceError
from .kernel import KernelRegressor, empirical_ntk_matrix, gram_H
from .linalg import spectral_norm
from .linearized import build_features, min_norm_solution
from .model import LabeledDataset, augment, check_not_parallel, forward, initialize
from .trainer import TrainConfig, Trajectory, train

log = logging.getLogger(__name__)

# independent RNG streams derived from one seed
STREAM_BETA, STREAM_TRAIN, STREAM_TEST, STREAM_INIT = 0, 1, 2, 3

DEFAULT_N_TEST = 5000


def rng_for(seed, stream, *extra):
    return np.random.default_rng([int(seed), stream, *map(int, extra)])


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 100
    d: int = 5
    p: int = 2
    normalize_labels: bool = True
    input_radius: str = "unit"   # "unit" or "sqrt_d"
    seed: int = 0
    max_retries: int = 100

    def radius(self) -> float:
        if self.input_radius == "unit":
            return 1.0
        if self.input_radius == "sqrt_d":
            return math.sqrt(self.d)
        raise ValueError(f"input_radius must be 'unit' or 'sqrt_d', got {self.input_radius!r}")


def sample_inputs(rng, n, d, radius):
    """Uniform on [-1, 1]^d, then projected to the sphere of the given radius."""
    U = rng.uniform(-1.0, 1.0, size=(n, d))
    nrm = np.linalg.norm(U, axis=1, keepdims=True)
    while np.any(nrm == 0):
        bad = nrm[:, 0] == 0
        U[bad] = rng.uniform(-1.0, 1.0, size=(int(bad.sum()), d))
        nrm = np.linalg.norm(U, axis=1, keepdims=True)
    return radius * U / nrm


class SyntheticTask:
    """Target y = (x.beta)^p with |beta| <= 1 on the uniform-cube-normalized input law.

    Label standardization uses the training sample's mean and std; the same affine
    map is applied to test labels so generalization error is measured in the
    units the network was trained on.
    """

    def __init__(self, spec: SyntheticSpec):
        if spec.n < 2 or spec.d < 1:
            raise ValueError("need n >= 2 and d >= 1")
        if spec.p < 0:
            raise ValueError("polynomial degree p must be nonnegative")
        self.spec = spec
        self.radius = spec.radius()
        beta = rng_for(spec.seed, STREAM_BETA).uniform(-1.0, 1.0, size=spec.d)
        nb = np.linalg.norm(beta)
        self.beta_rescaled = bool(nb > 1.0)
        self.beta = beta / nb if nb > 1.0 else beta

        rng = rng_for(spec.seed, STREAM_TRAIN)
        for attempt in range(spec.max_retries):
            X = sample_inputs(rng, spec.n, spec.d, self.radius)
            try:
                check_not_parallel(X)
                break
            except ParallelPointsError:
                log.info("near-parallel training points, redrawing (attempt %d)", attempt + 1)
        else:
            raise ParallelPointsError(f"no non-parallel sample after {spec.max_retries} retries")
        raw = self.raw_target(X)
        if spec.normalize_labels:
            sd = float(raw.std())
            if not sd > 1e-12 * max(1.0, float(np.abs(raw).max())):
                raise ZeroVarianceError("zero variance labels cannot be standardized")
            self.shift, self.scale = float(raw.mean()), sd
        else:
            self.shift, self.scale = 0.0, 1.0
        self.train_inputs = X

    def raw_target(self, X):
        return (np.asarray(X) @ self.beta) ** self.spec.p

    def target(self, X):
        return (self.raw_target(X) - self.shift) / self.scale

    def dataset(self) -> LabeledDataset:
        return LabeledDataset(self.train_inputs, self.target(self.train_inputs))

    def sample_test(self, n_test, seed):
        return sample_inputs(rng_for(self.spec.seed, STREAM_TEST, seed), n_test, self.spec.d, self.radius)

    def metadata(self) -> dict:
        return {"beta": self.beta.tolist(), "beta_rescaled": self.beta_rescaled,
                "label_shift": self.shift, "label_scale": self.scale}


def synthesize(spec: SyntheticSpec) -> LabeledDataset:
    return SyntheticTask(spec).dataset()


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int


def _mc(values) -> MCEstimate:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return MCEstimate(float(v.mean()), se, int(v.size))


def generalization_error(predictor, task: SyntheticTask, n_test=DEFAULT_N_TEST, seed=0) -> MCEstimate:
    """Monte-Carlo E_x (y(x) - predictor(x))^2 over fresh noiseless samples.

    ``predictor`` maps raw inputs (n, d) to predictions (n,).
    """
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    X = task.sample_test(n_test, seed)
    return _mc((task.target(X) - np.asarray(predictor(X))) ** 2)


def network_predictor(params):
    return lambda X: forward(params, augment(X))


def f_vs_fkr_gap(params, data: LabeledDataset, task: SyntheticTask, n_test=DEFAULT_N_TEST,
                 seed=0, regressor=None, predictor=None) -> MCEstimate:
    """Monte-Carlo E_x (f(x, w) - f_KR(x))^2 over fresh inputs from the task's law.

    ``predictor`` (raw inputs -> outputs) replaces the network f(., w) when given.
    """
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    kr = regressor if regressor is not None else KernelRegressor(data)
    X = task.sample_test(n_test, seed)
    Xt = augment(X)
    f = forward(params, Xt) if predictor is None else np.asarray(predictor(X))
    return _mc((f - kr.predict_augmented(Xt)) ** 2)


# ---------------------------------------------------------------- sweep cells

def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class CellConfig:
    """Everything needed to replay one training run bit-for-bit."""
    data: SyntheticSpec
    width: int
    init_scale: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    n_test: int = 0             # > 0: estimate generalization error
    gap_test: int = 0           # > 0: estimate E (f - f_KR)^2
    keep_trajectory: bool = True

    def as_dict(self) -> dict:
        return {"data": asdict(self.data), "width": self.width, "init_scale": self.init_scale,
                "train": asdict(self.train), "n_test": self.n_test, "gap_test": self.gap_test}

    @classmethod
    def from_dict(cls, d: dict) -> "CellConfig":
        return cls(SyntheticSpec(**d["data"]), int(d["width"]), float(d["init_scale"]),
                   TrainConfig(**d["train"]), int(d.get("n_test", 0)), int(d.get("gap_test", 0)))


@dataclass
class CellResult:
    config: CellConfig
    trajectory: Trajectory = None
    final: dict = None
    gen_error: MCEstimate = None
    gap: MCEstimate = None
    kr_gen_error: MCEstimate = None
    error: str = None
    manifest: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.error is None


def run_cell(cfg: CellConfig) -> CellResult:
    """Synthesize, initialize, solve the linearized problem, train, evaluate."""
    t0 = time.perf_counter()
    result = CellResult(cfg)
    manifest = {"config_hash": config_hash(cfg.as_dict()), "seed": cfg.data.seed,
                "build": build_id(), "config": cfg.as_dict()}
    try:
        task = SyntheticTask(cfg.data)
        data = task.dataset()
        params = initialize(cfg.width, cfg.data.d, cfg.init_scale,
                            seed=rng_for(cfg.data.seed, STREAM_INIT).integers(2**63))
        feat = build_features(params, data)
        sol = min_norm_solution(feat, params, data.labels)
        manifest["jitter"] = feat.jitter
        manifest["task"] = task.metadata()
        traj = train(params, data, cfg.train, feat, sol)
        result.trajectory = traj if cfg.keep_trajectory else None
        result.final = traj.summary()
        manifest["terminal_loss"] = traj.final.loss
        manifest["iterations"] = traj.final.iter
        manifest["step_size"] = traj.step_size
        manifest["stop_reason"] = traj.stop_reason
        manifest["monotone_violations"] = traj.monotone_violations
        if cfg.n_test > 0:
            result.gen_error = generalization_error(network_predictor(params), task, cfg.n_test, seed=0)
            manifest["gen_error"] = asdict(result.gen_error)
        if cfg.gap_test > 0:
            kr = KernelRegressor(data)
            result.gap = f_vs_fkr_gap(params, data, task, cfg.gap_test, seed=1, regressor=kr)
            result.kr_gen_error = generalization_error(kr, task, cfg.gap_test, seed=1)
            manifest["gap"] = asdict(result.gap)
    except NtkLabError as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        manifest["error"] = result.error
        traj = getattr(exc, "trajectory", None)
        if traj is not None and cfg.keep_trajectory:
            result.trajectory = traj
    manifest["wall_seconds"] = round(time.perf_counter() - t0, 3)
    result.manifest = manifest
    return result


def build_id() -> str:
    return f"ntklab-{__version__}/numpy-{np.__version__}"


def threads_from_env(default=1) -> int:
    env = os.environ.get("NTKLAB_THREADS")
    return max(1, int(env)) if env else max(1, int(default))


def run_cells(cells, threads=1):
    """Run independent cells, optionally in a process pool; order of results matches input."""
    cells = list(cells)
    if threads <= 1 or len(cells) <= 1:
        return [run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_cell, cells))


# ---------------------------------------------------------------- figure 1

FIG1_WIDTHS = (1000, 2000, 5000, 10000)
FIG1_SEEDS = 5


def figure1_cells(widths=FIG1_WIDTHS, seeds=FIG1_SEEDS, train_config=None, n=100, d=5, p=2):
    tc = train_config or TrainConfig(step_size=0.01, max_iters=50_000, loss_tol=1e-4, record_every=10)
    return [CellConfig(SyntheticSpec(n=n, d=d, p=p, normalize_labels=True, input_radius="unit", seed=s),
                       width=m, init_scale=1.0, train=tc)
            for m in widths for s in range(seeds)]


def non_increasing(values, rtol=0.0) -> bool:
    v = list(values)
    return all(b <= a * (1 + rtol) for a, b in zip(v, v[1:]))


@dataclass
class SweepResult:
    cells: list
    widths: tuple
    seeds: int
    trends: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    def by_width(self, m):
        return [c for c in self.cells if c.config.width == m]

    def medians(self, name):
        return [float(np.median([c.final[name] for c in self.by_width(m) if c.ok])) for m in self.widths]


def aligned_curve(cells, name):
    """Per-seed curves on a common iteration grid; finished runs hold their final value."""
    trajs = [c.trajectory for c in cells if c.ok and c.trajectory is not None]
    if not trajs:
        return np.array([]), np.empty((0, 0))
    grid = np.unique(np.concatenate([t.column("iter") for t in trajs]))
    rows = []
    for t in trajs:
        it, val = t.column("iter"), t.column(name)
        idx = np.searchsorted(it, grid, side="right") - 1
        rows.append(val[np.clip(idx, 0, len(val) - 1)])
    return grid, np.array(rows)


def v_perp_plateau_ratio(traj: Trajectory, burn_in_loss=1.0) -> float:
    """max V_perp after the loss first reaches ``burn_in_loss``, over V_perp at that record.

    V_perp is exactly 0 after the first step (it lies in the initial column space),
    so flatness is measured against the start of the plateau instead.
    """
    loss, v = traj.column("loss"), traj.column("v_perp")
    hit = np.flatnonzero(loss <= burn_in_loss)
    if hit.size == 0 or v[hit[0]] <= 0:
        return float("nan")
    return float(v[hit[0]:].max() / v[hit[0]])


def summarize_figure1(cells, widths, seeds, loss_ceiling=1e-3, iter_cap=50_000) -> SweepResult:
    sweep = SweepResult(cells, tuple(widths), seeds)
    ok = [c for c in cells if c.ok]
    sweep.trends = {
        "all_cells_ok": len(ok) == len(cells),
        "all_converged": all(c.final["loss"] < loss_ceiling and c.final["iter"] <= iter_cap for c in ok)
        and len(ok) == len(cells),
        "loss_monotone": all(c.final["monotone_violations"] == 0 for c in ok),
        "v_perp_median": sweep.medians("v_perp") if ok else [],
        "dist_minnorm_median": sweep.medians("dist_minnorm_sq") if ok else [],
        "dist_init_median": sweep.medians("dist_init_sq") if ok else [],
        "max_unit_drift_median": sweep.medians("max_unit_drift") if ok else [],
    }
    ratios = [r for r in (v_perp_plateau_ratio(c.trajectory) for c in ok if c.trajectory is not None)
              if np.isfinite(r)]
    sweep.trends["v_perp_plateau_ratio_max"] = max(ratios) if ratios else float("nan")
    sweep.trends["v_perp_flat"] = bool(sweep.trends["v_perp_plateau_ratio_max"] <= 10.0)
    sweep.trends["max_unit_drift_non_increasing"] = non_increasing(sweep.trends["max_unit_drift_median"])
    sweep.trends["v_perp_non_increasing"] = non_increasing(sweep.trends["v_perp_median"])
    sweep.trends["dist_minnorm_non_increasing"] = non_increasing(sweep.trends["dist_minnorm_median"])
    # reported only; no trend is expected for the distance from initialization
    sweep.trends["dist_init_non_increasing"] = non_increasing(sweep.trends["dist_init_median"])
    for name in ("v_perp", "dist_minnorm_sq", "dist_init_sq", "loss"):
        sweep.curves[name] = {m: aligned_curve(sweep.by_width(m), name) for m in widths}
    return sweep


def reproduce_figure1(widths=FIG1_WIDTHS, seeds=FIG1_SEEDS, train_config=None, threads=1) -> SweepResult:
    cells = run_cells(figure1_cells(widths, seeds, train_config), threads)
    for c in cells:
        if not c.ok:
            log.error("figure1 cell m=%d seed=%d failed: %s", c.config.width, c.config.data.seed, c.error)
    return summarize_figure1(cells, widths, seeds)


# ---------------------------------------------------------------- rate sweeps

def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def generalization_sweep(p=1, ns=(25, 50, 100, 200), seeds=5, width=5000, normalize_labels=False,
                         n_test=DEFAULT_N_TEST, train_config=None, d=5, init_scale=1.0, threads=1):
    """Test error of trained networks vs n; returns (per-cell results, summary dict)."""
    tc = train_config or TrainConfig(step_size=1.0, schedule="curvature", max_iters=200_000,
                                     loss_tol=1e-6, record_every=1000)
    cells = [CellConfig(SyntheticSpec(n=n, d=d, p=p, normalize_labels=normalize_labels,
                                      input_radius="unit", seed=s),
                        width=width, init_scale=init_scale, train=tc, n_test=n_test, keep_trajectory=False)
             for n in ns for s in range(seeds)]
    results = run_cells(cells, threads)
    med = []
    for n in ns:
        errs = [r.gen_error.mean for r in results if r.ok and r.config.data.n == n]
        med.append(float(np.median(errs)) if errs else float("nan"))
    summary = {"p": p, "ns": list(ns), "seeds": list(range(seeds)), "width": width,
               "median_gen_error": med,
               "slope": loglog_slope(ns, med) if all(np.isfinite(med)) else float("nan"),
               "failed_cells": sum(not r.ok for r in results)}
    return results, summary


def gap_sweep(widths=(1000, 10000), n=50, seeds=5, init_scale=0.01, loss_tol=1e-8, d=5, p=2,
              n_test=DEFAULT_N_TEST, train_config=None, threads=1):
    """Monte-Carlo E(f(x, w(k)) - f_KR(x))^2 for trained networks of several widths."""
    tc = train_config or TrainConfig(step_size=1.0, schedule="curvature", max_iters=500_000,
                                     loss_tol=loss_tol, record_every=5000)
    cells = [CellConfig(SyntheticSpec(n=n, d=d, p=p, normalize_labels=True, input_radius="unit", seed=s),
                        width=m, init_scale=init_scale, train=tc, gap_test=n_test, keep_trajectory=False)
             for m in widths for s in range(seeds)]
    results = run_cells(cells, threads)
    med = []
    for m in widths:
        gaps = [r.gap.mean for r in results if r.ok and r.config.width == m]
        med.append(float(np.median(gaps)) if gaps else float("nan"))
    summary = {"widths": list(widths), "n": n, "init_scale": init_scale, "seeds": list(range(seeds)),
               "median_gap": med, "strictly_decreasing": all(b < a for a, b in zip(med, med[1:])),
               "failed_cells": sum(not r.ok for r in results)}
    return results, summary


def empirical_kernel_errors(widths=(1000, 10_000, 100_000), seeds=5, n=20, d=5, input_radius="unit"):
    """Max-entry and spectral error of K^(m) against H, per width and seed."""
    task = SyntheticTask(SyntheticSpec(n=n, d=d, p=1, normalize_labels=False, input_radius=input_radius, seed=0))
    data = task.dataset()
    H = gram_H(data)
    max_err = np.empty((len(widths), seeds))
    spec_err = np.empty((len(widths), seeds))
    for i, m in enumerate(widths):
        for s in range(seeds):
            params = initialize(m, d, 1.0, seed=rng_for(s, STREAM_INIT, m).integers(2**63))
            Km = empirical_ntk_matrix(params, data.augmented, data.augmented)
            max_err[i, s] = np.max(np.abs(Km - H))
            spec_err[i, s] = spectral_norm(Km - H)
    med_max = np.median(max_err, axis=1)
    med_spec = np.median(spec_err, axis=1)
    return {"widths": list(widths), "seeds": list(range(seeds)), "n": n, "d": d,
            "median_max_entry_error": med_max.tolist(), "median_spectral_error": med_spec.tolist(),
            "max_entry_slope": loglog_slope(widths, med_max), "spectral_slope": loglog_slope(widths, med_spec)}


def replace_train(cfg: CellConfig, **kw) -> CellConfig:
    return replace(cfg, train=replace(cfg.train, **kw))


def kernel_check_suite(d=5, trials=1000, seeds=5, widths=(1000, 10_000, 100_000), seed=0):
    """Series / closed-form / feature-map / empirical agreement of the NTK."""
    from .kernel import feature_coefficients, ntk, ntk_series

    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    series_err = 0.0
    done = 0
    while done < trials:
        x, y = rng.normal(size=d + 1), rng.normal(size=d + 1)
        if abs(x @ y) > 0.9 * np.linalg.norm(x) * np.linalg.norm(y):
            continue
        series_err = max(series_err, abs(ntk_series(x, y, 500) - ntk(x, y)))
        done += 1
    fc = feature_coefficients(d)
    feat_err = 0.0
    for _ in range(trials):
        x = sample_inputs(rng, 1, d, 1.0)[0] * rng.uniform() ** (1 / d)
        y = sample_inputs(rng, 1, d, 1.0)[0] * rng.uniform() ** (1 / d)
        feat_err = max(feat_err, abs(fc.evaluate(x @ y) - ntk(augment(x), augment(y), norm_sq=d + 1)))
    ps = list(range(2, 9))
    dp_floor = [1.0 / (10 * (p + 1) ** 1.5 * (d + 1) ** p) for p in ps]
    return {
        "d": d, "trials": trials,
        "series_max_err": series_err,
        "feature_map_max_err": feat_err,
        "feature_map_tail_bound": fc.tail_bound,
        "dp": {"p": ps, "value": [float(fc.coeffs[p]) for p in ps], "floor": dp_floor,
               "ok": all(fc.coeffs[p] >= f for p, f in zip(ps, dp_floor))},
        "empirical": empirical_kernel_errors(widths, seeds, d=d),
    }
