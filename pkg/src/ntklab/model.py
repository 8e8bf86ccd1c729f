"""Shallow ReLU network in the NTK parameterization.

    f(x, w) = (1/sqrt(m)) * sum_k a_k * relu(w_k . x_aug),   x_aug = [x, 1]

Hidden weights are stored as an ``(m, d+1)`` array; when a flat weight-space
vector is needed it is ``W.ravel()`` (unit-major, coordinate-minor). The output
signs ``a`` are drawn once and never trained.

All evaluation functions accept a single augmented input of shape ``(d+1,)`` or
a batch of shape ``(n, d+1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError, DimensionError, ParallelPointsError

NORM_RTOL = 1e-9
PARALLEL_ATOL = 1e-12


def augment(X):
    """Append the constant bias coordinate: x -> [x, 1]."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return np.append(X, 1.0)
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    label_bound: float = None  # C_y; defaults to max |y|
    augmented: np.ndarray = field(init=False, repr=False)
    input_radius: float = field(init=False)

    def __post_init__(self):
        X = np.array(self.inputs, dtype=float)
        Y = np.array(self.labels, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise DimensionError(f"inputs must be 2-D, got shape {X.shape}")
        if X.shape[0] != Y.shape[0]:
            raise DimensionError(f"{X.shape[0]} inputs but {Y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DatasetError("inputs and labels must be finite")

        norms = np.linalg.norm(X, axis=1)
        r = float(norms[0])
        if r <= 0:
            raise DatasetError("inputs must be nonzero")
        if np.any(np.abs(norms - r) > NORM_RTOL * r):
            raise DatasetError(
                f"all inputs must share one norm; got range [{norms.min()}, {norms.max()}]")
        check_not_parallel(X)

        c_y = float(np.max(np.abs(Y))) if self.label_bound is None else float(self.label_bound)
        if np.any(np.abs(Y) > c_y):
            raise DatasetError(f"labels exceed the recorded bound C_y={c_y}")

        for name, arr in (("inputs", X), ("labels", Y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        Xt = augment(X)
        Xt.setflags(write=False)
        object.__setattr__(self, "augmented", Xt)
        object.__setattr__(self, "label_bound", c_y)
        object.__setattr__(self, "input_radius", r)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.inputs, labels)


def check_not_parallel(X):
    """Raise ParallelPointsError if any two rows of X are (anti)parallel."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        return
    gram = X @ X.T
    norms = np.linalg.norm(X, axis=1)
    slack = np.outer(norms, norms) - np.abs(gram)
    np.fill_diagonal(slack, np.inf)
    i, j = np.unravel_index(np.argmin(slack), slack.shape)
    if slack[i, j] < PARALLEL_ATOL:
        raise ParallelPointsError(f"points {i} and {j} are parallel")


@dataclass
class NetworkParams:
    hidden_weights: np.ndarray
    output_signs: np.ndarray
    init_scale: float
    initial_weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        W = np.array(self.hidden_weights, dtype=float)
        a = np.array(self.output_signs, dtype=float)
        if W.ndim != 2 or a.shape != (W.shape[0],):
            raise DimensionError(f"weights {W.shape} and signs {a.shape} disagree")
        if not np.all(np.abs(a) == 1.0):
            raise ValueError("output signs must be exactly +1 or -1")
        W0 = W.copy() if self.initial_weights is None else np.array(self.initial_weights, dtype=float)
        if W0.shape != W.shape:
            raise DimensionError("initial_weights shape differs from hidden_weights")
        a.setflags(write=False)
        W0.setflags(write=False)
        self.hidden_weights = W
        self.output_signs = a
        self.initial_weights = W0

    @property
    def width(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.hidden_weights.shape[1] - 1

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.hidden_weights.copy(), self.output_signs,
                             self.init_scale, self.initial_weights)

    def reset(self):
        self.hidden_weights = np.array(self.initial_weights)


def initialize(m: int, d: int, kappa: float = 1.0, seed=None) -> NetworkParams:
    """Draw w_k(0) ~ N(0, kappa^2 I_{d+1}) and a_k uniform on {-1, +1}."""
    if int(m) != m or m < 1:
        raise ValueError(f"width m must be a positive integer, got {m}")
    if int(d) != d or d < 1:
        raise ValueError(f"input dimension d must be a positive integer, got {d}")
    if not kappa > 0:
        raise ValueError(f"init scale kappa must be positive, got {kappa}")
    rng = np.random.default_rng(seed)
    W0 = rng.normal(0.0, kappa, size=(int(m), int(d) + 1))
    a = 2.0 * rng.integers(0, 2, size=int(m)) - 1.0
    return NetworkParams(W0, a, float(kappa))


def _as_batch(params, x_aug):
    x = np.asarray(x_aug, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.hidden_weights.shape[1]:
        raise DimensionError(
            f"expected augmented inputs of length {params.hidden_weights.shape[1]}, got shape {x.shape}")
    return X, single


def _weights(params, at_init):
    return params.initial_weights if at_init else params.hidden_weights


def activation_mask(params, x_aug, at_init=False):
    """Indicator 1{w_k . x_aug >= 0}, shape (n, m) (or (m,) for one input)."""
    X, single = _as_batch(params, x_aug)
    mask = X @ _weights(params, at_init).T >= 0
    return mask[0] if single else mask


def forward(params: NetworkParams, x_aug, at_init=False):
    X, single = _as_batch(params, x_aug)
    Z = X @ _weights(params, at_init).T
    out = np.maximum(Z, 0.0) @ params.output_signs / np.sqrt(params.width)
    return float(out[0]) if single else out


def gradient_features(params: NetworkParams, x_aug, at_init=False):
    """Weight-space gradient of f at x_aug, flattened unit-major.

    Block k is (a_k / sqrt(m)) * 1{w_k . x_aug >= 0} * x_aug. For a batch the
    result has shape (n, m*(d+1)); prefer the matrix-free helpers in
    ``ntklab.linearized`` when m is large.
    """
    X, single = _as_batch(params, x_aug)
    mask = X @ _weights(params, at_init).T >= 0
    scale = params.output_signs / np.sqrt(params.width)
    J = (mask * scale)[:, :, None] * X[:, None, :]
    J = J.reshape(X.shape[0], -1)
    return J[0] if single else J


def linearized_forward(params: NetworkParams, w_query, x_aug):
    """First-order Taylor model around w(0), evaluated at ``w_query``.

    Because ReLU is positively homogeneous this is just the network with the
    activation pattern frozen at w(0).
    """
    X, single = _as_batch(params, x_aug)
    Wq = np.asarray(w_query, dtype=float)
    if Wq.size != params.hidden_weights.size:
        raise DimensionError(f"w_query has {Wq.size} entries, expected {params.hidden_weights.size}")
    Wq = Wq.reshape(params.hidden_weights.shape)
    mask = X @ params.initial_weights.T >= 0
    out = (mask * (X @ Wq.T)) @ params.output_signs / np.sqrt(params.width)
    return float(out[0]) if single else out


def sign_flip_count(params: NetworkParams, x_aug):
    """Number of hidden units whose activation at x_aug differs from initialization."""
    X, single = _as_batch(params, x_aug)
    flips = np.count_nonzero((X @ params.initial_weights.T >= 0) != (X @ params.hidden_weights.T >= 0), axis=1)
    return int(flips[0]) if single else flips
