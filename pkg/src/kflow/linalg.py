"""Regularized Gram factorization with nugget escalation."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lapack

from .errors import SingularGram

log = logging.getLogger("kflow.linalg")

NUGGET_REL = 1e-10
NUGGET_CAP = 1e-4
RCOND_MIN = 1e-15
RESIDUAL_TOL = 1e-8


def default_nugget(K) -> float:
    return NUGGET_REL * max(float(np.mean(np.abs(np.diag(K)))), 1e-300)


class GramFactor:
    """Factorization of ``K + nugget * I``: Cholesky when possible, else Bunch-Kaufman."""

    def __init__(self, K, nugget, method, data):
        self.K = K
        self.nugget = nugget
        self.method = method
        self._data = data

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def _raw_solve(self, B):
        if self.method == "cholesky":
            return cho_solve(self._data, B, check_finite=False)
        ldu, ipiv = self._data
        B2 = B.reshape(self.n, -1)
        x, info = lapack.dsytrs(ldu, ipiv, B2, lower=1)
        if info != 0:
            raise SingularGram(f"dsytrs failed with info={info}")
        return x.reshape(B.shape)

    def matvec(self, c):
        return self.K @ c + self.nugget * c

    def solve(self, B, max_refine=4):
        """Solve, then refine iteratively while the residual keeps shrinking."""
        B = np.asarray(B, dtype=float)
        c = self._raw_solve(B)
        r = B - self.matvec(c)
        err = np.max(np.abs(r)) if r.size else 0.0
        for _ in range(max_refine):
            if err == 0.0:
                break
            c_new = c + self._raw_solve(r)
            r_new = B - self.matvec(c_new)
            err_new = np.max(np.abs(r_new))
            if not err_new < err:
                break
            c, r, err = c_new, r_new, err_new
        return c

    def residual(self, c, B) -> float:
        return float(np.max(np.abs(self.matvec(c) - B))) if B.size else 0.0


def _try_factor(K, nugget):
    A = K + nugget * np.eye(K.shape[0])
    try:
        return GramFactor(K, nugget, "cholesky", cho_factor(A, lower=True, check_finite=False))
    except LinAlgError:
        pass
    ldu, ipiv, info = lapack.dsytrf(A, lower=1)
    if info != 0:
        return None
    anorm = float(np.max(np.sum(np.abs(A), axis=0)))
    rcond, _ = lapack.dsycon(ldu, ipiv, anorm, lower=1)
    if not rcond > RCOND_MIN:
        return None
    return GramFactor(K, nugget, "bunch-kaufman", (ldu, ipiv))


def factorize(K, nugget=None, rhs=None, escalate=True, cap=NUGGET_CAP):
    """Factor ``K + nugget*I`` and solve for ``rhs``.

    Starting from ``nugget`` (default: 1e-10 times the mean diagonal), the
    nugget is multiplied by 10 until the factorization succeeds *and* the
    refined solution satisfies ``|(K + nugget I) c - rhs|_inf <= 1e-8 *
    max(1, |rhs|_inf)``. Returns ``(factor, c)`` where ``c`` is ``None`` if no
    right-hand side was given.
    """
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise SingularGram("Gram matrix has non-finite entries")
    lam = default_nugget(K) if nugget is None else float(nugget)
    start = lam
    while True:
        factor = _try_factor(K, lam)
        if factor is not None:
            if rhs is None:
                return factor, None
            rhs_arr = np.asarray(rhs, dtype=float)
            c = factor.solve(rhs_arr)
            tol = RESIDUAL_TOL * max(1.0, float(np.max(np.abs(rhs_arr))) if rhs_arr.size else 1.0)
            if np.all(np.isfinite(c)) and factor.residual(c, rhs_arr) <= tol:
                if lam != start:
                    log.debug("nugget escalated %.3g -> %.3g (n=%d)", start, lam, K.shape[0])
                return factor, c
        if not escalate:
            break
        nxt = lam * 10.0 if lam > 0 else default_nugget(K)
        if nxt > cap * (1 + 1e-12):
            break
        log.debug("escalating nugget %.3g -> %.3g", lam, nxt)
        lam = nxt
    raise SingularGram(f"Gram matrix of size {K.shape[0]} not factorizable up to nugget {lam:.3g}")
