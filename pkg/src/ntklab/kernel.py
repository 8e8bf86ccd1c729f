"""Infinite-width NTK of the bias-augmented shallow ReLU network.

    K(x, y) = s * (pi - arccos(s / rho^2)) / (2 pi),   s = x_aug . y_aug

By default rho^2 = |x_aug| |y_aug| (the angle form, valid for any norms). Passing
``norm_sq=d+1`` gives the fixed normalization used when inputs live on the
sqrt(d)-sphere; the two agree there. The feature-map expansion in powers of x.y
is an identity for the fixed normalization only.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DatasetError, DimensionError, ParallelPointsError
from .linalg import spd_factor
from .model import LabeledDataset, NetworkParams, augment

log = logging.getLogger(__name__)

DEFAULT_P_MAX = 400
DEFAULT_K_MAX = 40
CLAMP_WARN = 1e-9


def _cosines(S, norm_sq):
    C = S / norm_sq
    excess = np.max(np.abs(C)) - 1.0 if C.size else 0.0
    if excess > CLAMP_WARN:
        log.warning("arccos argument exceeds [-1, 1] by %.3g; clamping", excess)
    return np.clip(C, -1.0, 1.0)


def ntk_matrix(A, B, norm_sq=None):
    """K evaluated on all pairs of rows of augmented inputs A (p, D) and B (q, D)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"dimension mismatch {A.shape[1]} vs {B.shape[1]}")
    S = A @ B.T
    if norm_sq is None:
        na = np.linalg.norm(A, axis=1)
        nb = np.linalg.norm(B, axis=1)
        if np.any(na == 0) or np.any(nb == 0):
            raise ValueError("NTK undefined for zero-norm inputs")
        theta = _angles(A / na[:, None], B / nb[:, None])
    else:
        theta = np.arccos(_cosines(S, norm_sq))
    return S * (np.pi - theta) / (2 * np.pi)


def _angles(U, V):
    """Angles between unit rows, 2 atan2(|u - v|, |u + v|); accurate near 0 and pi unlike arccos."""
    # |u -+ v|^2 = 2 -+ 2 u.v would lose the same digits as arccos, so form them directly
    out = np.empty((U.shape[0], V.shape[0]))
    rows = max(1, 2_000_000 // max(1, V.size))
    for i in range(0, U.shape[0], rows):
        Ui = U[i:i + rows, None, :]
        minus = np.linalg.norm(Ui - V[None], axis=-1)
        plus = np.linalg.norm(Ui + V[None], axis=-1)
        out[i:i + rows] = 2 * np.arctan2(minus, plus)
    return out


def ntk(x_aug, y_aug, norm_sq=None) -> float:
    return float(ntk_matrix(x_aug, y_aug, norm_sq)[0, 0])


def series_coefficients(p_max: int) -> np.ndarray:
    """Normalized coefficients cbar_{2p}, p = 1..p_max, of t*arcsin(t)/(2 pi).

    cbar_2 = 1/(2 pi); cbar_{2p+2} = cbar_{2p} (2p-1)^2 / (2p (2p+1)).
    """
    c = np.empty(p_max)
    if p_max == 0:
        return c
    c[0] = 1.0 / (2 * np.pi)
    for p in range(1, p_max):
        c[p] = c[p - 1] * (2 * p - 1) ** 2 / (2 * p * (2 * p + 1))
    return c


def ntk_series(x_aug, y_aug, p_max: int = 500, norm_sq=None) -> float:
    """Truncated power series of K in t = s / rho^2 (arcsin expansion)."""
    x = np.asarray(x_aug, dtype=float)
    y = np.asarray(y_aug, dtype=float)
    s = float(x @ y)
    rho2 = float(np.linalg.norm(x) * np.linalg.norm(y)) if norm_sq is None else float(norm_sq)
    t = s / rho2
    u = t * t
    acc = 0.0
    for c in series_coefficients(p_max)[::-1]:
        acc = (acc + c) * u
    return rho2 * (t / 4 + acc)


@dataclass(frozen=True)
class FeatureMapCoefficients:
    d: int
    degree_cap: int
    series_cap: int
    coeffs: np.ndarray
    tail_bound: float
    radius: float = 1.0  # |x.y| <= radius for which tail_bound is certified

    def evaluate(self, u):
        """sum_k d_k u^k for u = x.y."""
        return np.polynomial.polynomial.polyval(u, self.coeffs)


def feature_coefficients(d: int, k_max: int = DEFAULT_K_MAX, p_max: int = DEFAULT_P_MAX,
                         radius: float = 1.0) -> FeatureMapCoefficients:
    """Coefficients d_k of K(x, y) = sum_k d_k (x.y)^k under the d+1 normalization.

    ``tail_bound`` bounds the error of the truncated expansion for |x.y| <= radius:
    the dropped degrees k > k_max via the majorant (radius/R)^(k_max+1) g(R) with
    R = d (inside the radius of convergence), plus the dropped p > p_max terms via
    a geometric tail. It is inf when no certificate exists (radius >= d).
    """
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    if k_max > 2 * p_max:
        raise ValueError(f"k_max={k_max} needs p_max >= {math.ceil(k_max / 2)}")
    D = d + 1.0
    p = np.arange(1, p_max + 1)
    log_c = np.log(series_coefficients(p_max)) + math.log(D)  # c_{2p} carries a factor d+1
    log_w = log_c - 2 * p * math.log(D)                       # c_{2p} / (d+1)^{2p}
    coeffs = np.zeros(k_max + 1)
    coeffs[0] = 0.25 + np.exp(log_w).sum()
    if k_max >= 1:
        coeffs[1] = 0.25 + (2 * p * np.exp(log_w)).sum()
    for k in range(2, k_max + 1):
        sel = p >= math.ceil(k / 2)
        pp = p[sel]
        log_binom = gammaln(2 * pp + 1) - gammaln(k + 1) - gammaln(2 * pp - k + 1)
        terms = log_w[sel] + log_binom
        top = terms.max()
        coeffs[k] = math.exp(top) * np.exp(terms - top).sum()

    R = float(d)
    if radius >= R:
        tail = math.inf
    else:
        g_R = (1 + R) * (np.pi - np.arccos(min((1 + R) / D, 1.0))) / (2 * np.pi)
        k_tail = (radius / R) ** (k_max + 1) * g_R
        r = (1 + radius) / D
        c_next = series_coefficients(p_max + 1)[-1] * D
        p_tail = c_next * r ** (2 * (p_max + 1)) / (1 - r * r)
        tail = float(k_tail + p_tail)
    return FeatureMapCoefficients(d, k_max, p_max, coeffs, tail, radius)


def gram_H(data, check=True) -> np.ndarray:
    """H_ij = K(x_i, x_j). With ``check`` the matrix is certified PD by Cholesky."""
    Xt = data.augmented if isinstance(data, LabeledDataset) else np.asarray(data, dtype=float)
    H = ntk_matrix(Xt, Xt)
    H = 0.5 * (H + H.T)
    if check:
        spd_factor(H, "H", ladder=(0.0,))
    return H


def empirical_ntk_matrix(params: NetworkParams, A, B):
    """K^(m) = (1/m) sum_k (x.y) 1{w_k(0).x >= 0} 1{w_k(0).y >= 0}, on augmented rows."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    W0 = params.initial_weights
    if A.shape[1] != W0.shape[1] or B.shape[1] != W0.shape[1]:
        raise DimensionError("augmented inputs do not match the network")
    Ma = (A @ W0.T >= 0).astype(float)
    Mb = (B @ W0.T >= 0).astype(float)
    return (A @ B.T) * (Ma @ Mb.T) / params.width


def empirical_ntk(params: NetworkParams, x_aug, y_aug) -> float:
    return float(empirical_ntk_matrix(params, x_aug, y_aug)[0, 0])


@dataclass(frozen=True)
class EigenBoundReport:
    theta_min: float
    cos_theta_min: float
    lower_bound: float
    upper_bound: float
    exact_lambda_min: float
    gershgorin_bound: float
    sandwich_ok: bool
    theta_min_ge_1: bool

    def as_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()}


def gershgorin_series_bound(Xt, d, p_max=DEFAULT_P_MAX) -> float:
    """sum_p c_2p * max(0, 1 - max_i sum_{j != i} t_ij^{2p}) with t = x_i.x_j/(d+1)."""
    T = (Xt @ Xt.T) / (d + 1.0)
    np.fill_diagonal(T, 0.0)
    T2 = T * T
    c = series_coefficients(p_max) * (d + 1.0)
    total = 0.0
    P = np.ones_like(T2)
    for cp in c:
        P *= T2
        total += cp * max(0.0, 1.0 - P.sum(axis=1).max())
    return total


def eigen_bounds(data: LabeledDataset, rtol=1e-9) -> EigenBoundReport:
    """Lower/upper bounds on lambda_min(H) for inputs on the sqrt(d)-sphere.

    The Gershgorin argument needs max_{i!=j} |x_i.x_j| / (d+1) (absolute value, so that
    nearly antipodal pairs are covered); the upper bound uses the pair with the
    largest signed inner product and the test vector (e_a - e_b)/sqrt(2).
    """
    n, d = data.n, data.d
    if n < 2:
        raise DatasetError("eigenvalue bounds need at least two points")
    if abs(data.input_radius - math.sqrt(d)) > rtol * math.sqrt(d):
        raise DatasetError(
            f"eigen_bounds assumes |x| = sqrt(d) = {math.sqrt(d):.6g}, got {data.input_radius:.6g}")
    Xt = data.augmented
    D = d + 1.0
    C = (Xt @ Xt.T) / D
    np.fill_diagonal(C, -np.inf)
    a, b = np.unravel_index(np.argmax(C), C.shape)
    cos_signed = float(C[a, b])
    np.fill_diagonal(C, 0.0)
    cos_abs = float(np.max(np.abs(C)))
    if cos_signed >= 1.0 or cos_abs >= 1.0:
        raise ParallelPointsError("parallel points: cos(theta_min) >= 1")
    theta = math.acos(max(cos_signed, -1.0))

    if cos_abs == 0.0:
        lower = D / (8 * math.pi)
    else:
        lower = D / (8 * math.pi) * math.sqrt(math.log(1 / cos_abs) / math.log(2 * n / cos_abs))
    upper = 0.5 * D * (1 - (1 - theta / math.pi) * cos_signed)

    H = gram_H(Xt)
    lam = float(np.linalg.eigvalsh(H)[0])
    slack = 1e-9 * max(1.0, abs(lam))
    ok = (lower <= lam + slack) and (lam <= upper + slack)
    if theta >= 1.0:
        log.info("theta_min = %.3f >= 1 rad: the closed-form bounds are outside their stated regime", theta)
    return EigenBoundReport(theta, cos_signed, lower, upper, lam,
                            gershgorin_series_bound(Xt, d), ok, theta >= 1.0)


class KernelRegressor:
    """Minimum-RKHS-norm interpolant f_KR(x) = h(x)^T H^{-1} Y."""

    def __init__(self, data: LabeledDataset):
        self.data = data
        self.H = gram_H(data, check=False)
        self.factor = spd_factor(self.H, "H", ladder=(0.0,))
        self.alpha = self.factor.solve(data.labels)

    def predict_augmented(self, Xt):
        return ntk_matrix(Xt, self.data.augmented) @ self.alpha

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self.predict_augmented(augment(np.atleast_2d(x)))
        return float(out[0]) if single else out


def kernel_regression(data: LabeledDataset, x):
    """f_KR at raw (non-augmented) query point(s) x."""
    return KernelRegressor(data)(x)
