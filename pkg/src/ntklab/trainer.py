"""Full-batch gradient descent on L(w) = sum_i (y_i - f(x_i, w))^2 with diagnostics.

The update is w <- w - eta * grad_f (f - Y), i.e. gradient descent on L/2, with
the activation pattern taken at the current weights. "flow" mode is the same
Euler step read as a discretization of dw/dt = -grad_f (f - Y); it only changes
the step-size guidance.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DivergenceError
from .linearized import GradientFeatures, MinNormSolution, lyapunov
from .model import LabeledDataset, NetworkParams

log = logging.getLogger(__name__)

MODES = ("discrete", "flow")
SCHEDULES = ("fixed", "theorem", "curvature")


@dataclass
class TrainConfig:
    step_size: float = 0.01
    max_iters: int = 50_000
    loss_tol: float = 1e-3
    record_every: int = 10
    mode: str = "discrete"
    schedule: str = "fixed"
    seed: int = 0            # provenance only; full-batch GD draws no randomness
    wall_clock: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (isinstance(self.step_size, (int, float)) and np.isfinite(self.step_size) and self.step_size > 0):
            raise ConfigError("step_size", f"must be a positive number, got {self.step_size!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ConfigError("max_iters", f"must be a nonnegative integer, got {self.max_iters!r}")
        if not self.loss_tol >= 0:
            raise ConfigError("loss_tol", f"must be nonnegative, got {self.loss_tol!r}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError("record_every", f"must be an integer >= 1, got {self.record_every!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError("schedule", f"must be one of {SCHEDULES}, got {self.schedule!r}")


def resolve_step_size(config: TrainConfig, feat: GradientFeatures, data: LabeledDataset) -> float:
    """Step size actually used.

    fixed: ``step_size`` as given. theorem: lambda_min(G) / (d n)^2 times
    ``step_size`` (an O(c/(dn)^2) schedule). curvature: ``step_size`` / lambda_max(G),
    so step_size < 2 keeps the linearized dynamics stable.
    """
    eta = float(config.step_size)
    if config.schedule == "fixed":
        pass
    else:
        ev = np.linalg.eigvalsh(feat.gram)
        if config.schedule == "theorem":
            eta *= ev[0] / (data.d * data.n) ** 2
        else:
            eta /= ev[-1]
    if config.mode == "flow" and eta > 1e-3 / (data.d * data.n):
        log.warning("flow mode with eta=%.3g exceeds the 1e-3/(d n) guidance", eta)
    return eta


COLUMNS = ("iter", "loss", "v_perp", "v_par", "dist_minnorm_sq", "dist_init_sq",
           "max_unit_drift", "sign_flips", "wall_ms")


class Record(NamedTuple):
    iter: int
    loss: float
    v_perp: float
    v_par: float
    dist_minnorm_sq: float
    dist_init_sq: float
    max_unit_drift: float
    sign_flips: int
    wall_ms: float


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    step_size: float = None
    stop_reason: str = None
    monotone_violations: int = 0
    first_violation: int = None
    wall_seconds: float = 0.0

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def final(self) -> Record:
        return self.records[-1]

    def summary(self) -> dict:
        out = self.final._asdict()
        out.update(step_size=self.step_size, stop_reason=self.stop_reason,
                   monotone_violations=self.monotone_violations, first_violation=self.first_violation)
        return out


def residual(params: NetworkParams, data: LabeledDataset):
    """(f - Y, activation mask at current w)."""
    Z = data.augmented @ params.hidden_weights.T
    f = np.maximum(Z, 0.0) @ params.output_signs / np.sqrt(params.width)
    return f - data.labels, Z >= 0


def _apply_step(params, data, res, mask, eta):
    scale = params.output_signs / np.sqrt(params.width)
    grad = scale[:, None] * ((mask * res[:, None]).T @ data.augmented)
    params.hidden_weights -= eta * grad


def gd_step(params: NetworkParams, data: LabeledDataset, eta: float, iteration: int = 0) -> NetworkParams:
    """One in-place step w <- w - eta * sum_i grad f(x_i, w) (f(x_i, w) - y_i)."""
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    res, mask = residual(params, data)
    if not np.all(np.isfinite(res)):
        raise DivergenceError(f"non-finite outputs at iteration {iteration}", iteration)
    _apply_step(params, data, res, mask, eta)
    if not np.all(np.isfinite(params.hidden_weights)):
        raise DivergenceError(f"non-finite weights after iteration {iteration}", iteration)
    return params


def _record(k, loss, params, feat, sol, mask, t0, wall_clock):
    W, W0 = params.hidden_weights, params.initial_weights
    v_perp, v_par = lyapunov(feat, sol, W)
    drift = W - W0
    return Record(
        iter=k,
        loss=float(loss),
        v_perp=v_perp,
        v_par=v_par,
        dist_minnorm_sq=float(np.sum((W - sol.w_star) ** 2)),
        dist_init_sq=float(np.sum(drift * drift)),
        max_unit_drift=float(np.sqrt(np.max(np.sum(drift * drift, axis=1)))),
        sign_flips=int(np.count_nonzero(mask != feat.mask)),
        wall_ms=round((time.perf_counter() - t0) * 1e3, 3) if wall_clock else 0.0,
    )


class _Workspace:
    """Preallocated (n, m) buffers; avoids reallocating ~n*m arrays every step."""

    def __init__(self, params, data):
        n, m = data.n, params.width
        self.Xt = np.ascontiguousarray(data.augmented)
        self.y = data.labels
        self.scale = params.output_signs / np.sqrt(m)
        self.Z = np.empty((n, m))
        self.mask = np.empty((n, m), dtype=bool)
        self.R = np.empty((n, m))
        self.grad = np.empty((m, self.Xt.shape[1]))

    def residual(self, W):
        np.matmul(self.Xt, W.T, out=self.Z)
        np.greater_equal(self.Z, 0.0, out=self.mask)
        np.maximum(self.Z, 0.0, out=self.Z)
        return self.Z @ self.scale - self.y

    def step(self, W, res, eta):
        np.multiply(self.mask, res[:, None], out=self.R)
        np.matmul(self.R.T, self.Xt, out=self.grad)
        self.grad *= (eta * self.scale)[:, None]
        W -= self.grad


def train(params: NetworkParams, data: LabeledDataset, config: TrainConfig,
          features: GradientFeatures, sol: MinNormSolution, callback=None) -> Trajectory:
    """Run GD until loss <= loss_tol or max_iters steps; params end in the terminal state.

    ``callback(k, params)`` is invoked before every step when given.
    """
    config.validate()
    eta = resolve_step_size(config, features, data)
    traj = Trajectory(step_size=eta)
    ws = _Workspace(params, data)
    W = params.hidden_weights
    t0 = time.perf_counter()
    prev = np.inf
    k = 0
    while True:
        with np.errstate(over="ignore", invalid="ignore"):
            res = ws.residual(W)
            loss = float(res @ res)
        if not (np.isfinite(loss) and np.all(np.isfinite(W))):
            traj.stop_reason = "diverged"
            traj.wall_seconds = time.perf_counter() - t0
            raise DivergenceError(f"divergence at iteration {k} (loss={loss})", k, traj)
        if loss > prev:
            traj.monotone_violations += 1
            if traj.first_violation is None:
                traj.first_violation = k
                log.warning("loss increased at iteration %d: %.6g -> %.6g", k, prev, loss)
        prev = loss
        done = loss <= config.loss_tol or k >= config.max_iters
        if done or k % config.record_every == 0:
            traj.records.append(_record(k, loss, params, features, sol, ws.mask, t0, config.wall_clock))
        if done:
            traj.stop_reason = "converged" if loss <= config.loss_tol else "max_iters"
            break
        if callback is not None:
            callback(k, params)
        with np.errstate(over="ignore", invalid="ignore"):
            ws.step(W, res, eta)
        k += 1
    traj.wall_seconds = time.perf_counter() - t0
    return traj


def decay_rate(traj: Trajectory, loss_ceiling=1.0) -> float:
    """Fitted per-iteration rate r in loss ~ exp(-r k), over records with loss below ``loss_ceiling``.

    For the linearized dynamics the slowest mode gives r = -2 log(1 - eta lambda_min(G)) ~ 2 c eta.
    """
    it, loss = traj.column("iter"), traj.column("loss")
    keep = (loss <= loss_ceiling) & (loss > 0)
    if keep.sum() < 3:
        return float("nan")
    return float(-np.polyfit(it[keep], np.log(loss[keep]), 1)[0])


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
