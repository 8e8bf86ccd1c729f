"""Small dense linear-algebra helpers: SPD factorization with jitter, power iteration."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, lapack

from .errors import DegenerateGramError

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


@dataclass(frozen=True)
class SPDFactor:
    """Lower Cholesky factor of ``M + jitter * I``."""

    lower: np.ndarray
    jitter: float

    def solve(self, b):
        return cho_solve((self.lower, True), b)


def spd_factor(M, what="Gram", ladder=JITTER_LADDER) -> SPDFactor:
    """Cholesky with deterministic jitter escalation.

    Jitter levels are multiples of tr(M)/n; the first level that factorizes wins.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    scale = np.trace(M) / n if n else 0.0
    pivot = None
    for level in ladder:
        jitter = level * scale
        c, info = lapack.dpotrf(M + jitter * np.eye(n), lower=1, clean=1)
        if info == 0:
            if jitter > 0:
                log.warning("%s factorized only with jitter %.3g", what, jitter)
            return SPDFactor(np.tril(c), float(jitter))
        if info > 0:
            pivot = float(c[info - 1, info - 1])
    raise DegenerateGramError(
        f"degenerate {what}: Cholesky failed at max jitter, smallest pivot {pivot:.3g}",
        smallest_pivot=pivot)


def power_iteration(A, tol=1e-12, max_iter=10_000, seed=0):
    """Largest-magnitude eigenvalue of a symmetric matrix and its eigenvector."""
    A = np.asarray(A, dtype=float)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        Av = A @ v
        nrm = np.linalg.norm(Av)
        if nrm == 0.0:
            return 0.0, v
        lam_new = float(v @ Av)
        v = Av / nrm
        if abs(abs(lam_new) - abs(lam)) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            break
        lam = lam_new
    return lam, v


def spectral_norm(A, **kw) -> float:
    """Operator 2-norm of a symmetric matrix via power iteration."""
    return abs(power_iteration(A, **kw)[0])
