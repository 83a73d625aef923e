"""Structured linear algebra for low-rank-plus-diagonal covariance matrices.

Everything here works on ``A + Phi^T Phi`` where ``Phi`` is m x N and
``A = noise * I + diag`` (optionally plus a block-diagonal correction).  Solves
and log-determinants cost O(N m^2) via Woodbury's lemma and Sylvester's
determinant theorem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla

from .exceptions import CholeskyError


def cholesky_jittered(M, max_tries=10, min_jitter=0.0):
    """Lower Cholesky factor of ``M + jitter * I``.

    Tries ``min_jitter`` (default 0) first, then 1e-10 * mean(diag(M))
    escalated by a factor of ten per attempt.  Returns ``(L, jitter)``.
    """
    M = np.asarray(M, dtype=float)
    if M.shape[0] == 0:
        return np.zeros((0, 0)), 0.0
    eye = np.eye(M.shape[0])
    try:
        return np.linalg.cholesky(M + min_jitter * eye if min_jitter else M), min_jitter
    except np.linalg.LinAlgError:
        pass
    base = 1e-10 * abs(float(np.mean(np.diag(M))))
    if base == 0.0 or not np.isfinite(base):
        base = 1e-10
    jitter = max(base, 10.0 * min_jitter)
    for _ in range(max_tries):
        try:
            return np.linalg.cholesky(M + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    try:
        min_eig = float(np.linalg.eigvalsh(M)[0])
    except np.linalg.LinAlgError:
        min_eig = float("nan")
    raise CholeskyError(
        f"matrix not positive definite after jitter {jitter / 10:g} "
        f"(min eigenvalue estimate {min_eig:g})",
        min_eig=min_eig,
        jitter=jitter / 10,
    )


def chol_logdet(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def solve_lower(L, B):
    return sla.solve_triangular(L, B, lower=True, check_finite=False)


def cho_solve(L, B):
    return sla.cho_solve((L, True), B, check_finite=False)


@dataclass
class LowRankPlusDiag:
    """``noise * I + diag + blockdiag(blocks) + factor^T factor``.

    ``blocks`` is a sequence of ``(start, stop, matrix)`` entries adding a
    dense symmetric correction on contiguous index ranges.
    """

    factor: np.ndarray
    noise: float
    diag: Optional[np.ndarray] = None
    blocks: Optional[Sequence] = None

    def __post_init__(self):
        self.factor = np.atleast_2d(np.asarray(self.factor, dtype=float))
        if self.noise <= 0:
            raise ValueError("noise variance must be positive")

    @property
    def n(self):
        return self.factor.shape[1]

    @property
    def m(self):
        return self.factor.shape[0]

    def dense(self):
        M = self.factor.T @ self.factor
        M[np.diag_indices_from(M)] += self.noise
        if self.diag is not None:
            M[np.diag_indices_from(M)] += self.diag
        for start, stop, B in self.blocks or ():
            M[start:stop, start:stop] += B
        return M

    def matvec(self, v):
        out = self.noise * v + self.factor.T @ (self.factor @ v)
        if self.diag is not None:
            out = out + (self.diag * v.T).T
        for start, stop, B in self.blocks or ():
            out[start:stop] += B @ v[start:stop]
        return out

    def factorize(self):
        return WoodburyFactor(self)


class WoodburyFactor:
    """Precomputed factorization for repeated solves with a :class:`LowRankPlusDiag`."""

    def __init__(self, rep):
        self.rep = rep
        n = rep.n
        base = np.full(n, float(rep.noise))
        if rep.diag is not None:
            base = base + rep.diag
        if np.any(base <= 0):
            raise CholeskyError("diagonal part is not positive", min_eig=float(base.min()))
        self._inv_diag = 1.0 / base
        self._block_chol = []
        self._logdet_a = 0.0
        covered = np.zeros(n, bool)
        for start, stop, B in rep.blocks or ():
            Ab = B + np.diag(base[start:stop])
            L, _ = cholesky_jittered(Ab)
            self._block_chol.append((start, stop, L))
            self._logdet_a += chol_logdet(L)
            covered[start:stop] = True
        self._logdet_a += float(np.sum(np.log(base[~covered])))
        self._covered = covered

        # inner m x m system I + Phi A^-1 Phi^T
        self._ainv_phit = self.apply_a_inv(rep.factor.T)
        C = rep.factor @ self._ainv_phit
        C[np.diag_indices_from(C)] += 1.0
        self._chol_c, self.inner_jitter = cholesky_jittered(C)
        self.logdet = self._logdet_a + chol_logdet(self._chol_c)

    def apply_a_inv(self, B):
        B = np.asarray(B, dtype=float)
        out = (self._inv_diag * B.T).T
        for start, stop, L in self._block_chol:
            out[start:stop] = cho_solve(L, B[start:stop])
        return out

    def solve(self, b):
        """(A + Phi^T Phi)^-1 b for a vector or N x k matrix."""
        ainv_b = self.apply_a_inv(b)
        if self.rep.m == 0:
            return ainv_b
        inner = cho_solve(self._chol_c, self.rep.factor @ ainv_b)
        return ainv_b - self._ainv_phit @ inner

    def trace_inverse(self):
        """tr((A + Phi^T Phi)^-1) for the pure diagonal case."""
        if self.rep.blocks:
            raise NotImplementedError("trace of inverse needs a diagonal A")
        W = solve_lower(self._chol_c, self._ainv_phit.T)
        return float(np.sum(self._inv_diag) - np.sum(W**2))


def woodbury_solve(rep, b):
    """Solve (A + Phi^T Phi) x = b in O(N m^2)."""
    return rep.factorize().solve(b)


def lowrank_logdet(rep):
    """log det(A + Phi^T Phi) = log det A + log det(I + Phi A^-1 Phi^T)."""
    return rep.factorize().logdet


def psd_residual_check(K, Khat):
    """Smallest eigenvalue of K - Khat (dense)."""
    R = np.asarray(K, dtype=float) - np.asarray(Khat, dtype=float)
    R = 0.5 * (R + R.T)
    return float(np.linalg.eigvalsh(R)[0])


def contiguous_blocks(n, size):
    """Index ranges [start, stop) of size ``size`` covering 0..n-1 in order."""
    size = max(1, int(size))
    return [(s, min(s + size, n)) for s in range(0, n, size)]
