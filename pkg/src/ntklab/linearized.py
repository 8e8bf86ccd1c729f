"""Initialization Jacobian, min-norm interpolant of the linearized network, Lyapunov terms.

The Jacobian at initialization has a rank-structured form: column i, block k is
``(a_k/sqrt(m)) * mask[i, k] * x_aug_i``. Everything here works through that
structure and the n x n Gram system, so memory stays O(n*m) and the
m(d+1) x m(d+1) projector is never formed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import SPDFactor, spd_factor, spectral_norm
from .model import LabeledDataset, NetworkParams, forward
from .errors import DimensionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientFeatures:
    augmented: np.ndarray      # (n, d+1)
    mask: np.ndarray           # (n, m) activation pattern at w(0)
    output_signs: np.ndarray   # (m,)
    gram: np.ndarray           # G = J0^T J0, (n, n)
    f0: np.ndarray             # outputs at w(0)
    gram_factor: SPDFactor = field(repr=False)

    @property
    def n(self):
        return self.mask.shape[0]

    @property
    def width(self):
        return self.mask.shape[1]

    @property
    def jitter(self):
        return self.gram_factor.jitter

    @property
    def _scale(self):
        return self.output_signs / np.sqrt(self.width)

    def jt(self, v):
        """J0^T v for a weight-space vector v (flat or (m, d+1))."""
        V = np.asarray(v, dtype=float).reshape(self.width, -1)
        return (self.mask * (self.augmented @ V.T)) @ self._scale

    def j(self, c):
        """J0 c for an n-vector c, returned as an (m, d+1) array."""
        c = np.asarray(c, dtype=float)
        return self._scale[:, None] * ((self.mask * c[:, None]).T @ self.augmented)

    @property
    def columns(self):
        """Materialized Jacobian, shape (m*(d+1), n). Only for small problems."""
        return np.stack([self.j(e).ravel() for e in np.eye(self.n)], axis=1)


@dataclass(frozen=True)
class MinNormSolution:
    w_star: np.ndarray  # (m, d+1)
    dual: np.ndarray    # G^{-1} (Y - f0)


def build_features(params: NetworkParams, data: LabeledDataset) -> GradientFeatures:
    Xt = data.augmented
    if Xt.shape[1] != params.hidden_weights.shape[1]:
        raise DimensionError(f"data has d={data.d} but network expects d={params.input_dim}")
    mask = Xt @ params.initial_weights.T >= 0
    maskf = mask.astype(float)
    G = (Xt @ Xt.T) * (maskf @ maskf.T) / params.width
    f0 = forward(params, Xt, at_init=True)
    for arr in (mask, G, f0):
        arr.setflags(write=False)
    return GradientFeatures(Xt, mask, params.output_signs, G, f0, spd_factor(G, "Gram"))


def min_norm_solution(feat: GradientFeatures, params: NetworkParams, Y) -> MinNormSolution:
    """argmin ||w - w(0)|| subject to f_L(x_i, w) = y_i for all i.

    Computed as w(0) + J0 G^{-1} (Y - f0), which equals P0_perp w(0) + J0 G^{-1} Y
    since J0^T w(0) = f0 for ReLU.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (feat.n,):
        raise DimensionError(f"labels must have shape ({feat.n},)")
    dual = feat.gram_factor.solve(Y - feat.f0)
    w_star = params.initial_weights + feat.j(dual)
    return MinNormSolution(w_star, dual)


def project_parallel(feat: GradientFeatures, v):
    """P0 v = J0 G^{-1} J0^T v, returned flat."""
    v = np.asarray(v, dtype=float)
    return feat.j(feat.gram_factor.solve(feat.jt(v))).reshape(v.shape)


def lyapunov(feat: GradientFeatures, sol: MinNormSolution, w):
    """(V_perp, V_par) = (||P0_perp (w - w*)||^2, ||P0 (w - w*)||^2).

    Both parts are computed directly rather than by subtraction so that V_perp
    keeps relative accuracy when it is tiny next to V_par.
    """
    U = np.asarray(w, dtype=float).reshape(sol.w_star.shape) - sol.w_star
    par = feat.j(feat.gram_factor.solve(feat.jt(U)))
    v_par = float(np.sum(par * par))
    v_perp = float(np.sum((U - par) ** 2))
    total = float(np.sum(U * U))
    if total - v_par - v_perp < -1e-8 * max(total, 1e-300):
        log.warning("Lyapunov split lost accuracy: %g + %g vs %g", v_perp, v_par, total)
    return max(v_perp, 0.0), max(v_par, 0.0)


def current_gram(params: NetworkParams, data: LabeledDataset):
    """grad f^T grad f at the current weights."""
    Xt = data.augmented
    maskf = (Xt @ params.hidden_weights.T >= 0).astype(float)
    return (Xt @ Xt.T) * (maskf @ maskf.T) / params.width


def concentration_diagnostics(params: NetworkParams, data: LabeledDataset,
                              feat: GradientFeatures, H=None) -> dict:
    """Measured counterparts of the high-probability events used in the analysis."""
    Xt = data.augmented
    flips = (Xt @ params.initial_weights.T >= 0) != (Xt @ params.hidden_weights.T >= 0)
    sq = np.sum(Xt * Xt, axis=1)
    out = {
        # each flipped (i, k) contributes ||x_i||^2 / m to ||grad f - grad f0||_F^2
        "jac_dev_fro": float(np.sqrt(flips.astype(float) @ np.ones(params.width) @ sq / params.width)),
        "gram_dev_current": spectral_norm(current_gram(params, data) - feat.gram),
        "f0_norm": float(np.linalg.norm(feat.f0)),
        "max_unit_drift": float(np.max(np.linalg.norm(params.hidden_weights - params.initial_weights, axis=1))),
    }
    if H is not None:
        out["gram_dev_H"] = spectral_norm(feat.gram - H)
    return out
