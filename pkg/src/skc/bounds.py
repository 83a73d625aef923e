"""Lower and upper bounds sandwiching the exact GP log marginal likelihood.

Lower bound: the variational (Titsias) bound built on a Nystrom approximation
``Khat = K_nm K_mm^-1 K_mn = Phi^T Phi`` with a trace correction.  Upper bound:
the Nystrom log-determinant term plus a conjugate-gradient bound on the
quadratic term, which holds for every iterate alpha since

    -1/2 y^T (K + s I)^-1 y <= 1/2 alpha^T (K + s I) alpha - alpha^T y.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels as kern
from .exceptions import NumericalError
from .gp import LOG_2PI, _xy, exact_logml
from .linalg import (
    LowRankPlusDiag,
    cholesky_jittered,
    contiguous_blocks,
    solve_lower,
)
from .rff import sample_rff

PRECONDITIONERS = ("cg", "nystrom", "fic", "pic")
DENSE_BYTES = 1 << 30


@dataclass
class InducingSet:
    points: np.ndarray
    source_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if P.shape[0] < 1:
            raise ValueError("an inducing set needs at least one point")
        keep = _distinct_rows(P)
        if keep.size < P.shape[0]:
            warnings.warn(f"dropped {P.shape[0] - keep.size} duplicate inducing point(s)", stacklevel=3)
            P = P[keep]
            if self.source_indices is not None:
                self.source_indices = np.asarray(self.source_indices)[keep]
        self.points = P

    @property
    def m(self):
        return self.points.shape[0]

    @classmethod
    def random_subset(cls, data, m, rng):
        """Uniform random subset of the training inputs, without replacement."""
        X, _ = _xy(data)
        if not 1 <= m <= X.shape[0]:
            raise ValueError(f"m must lie in [1, {X.shape[0]}], got {m}")
        idx = np.sort(rng.choice(X.shape[0], size=m, replace=False))
        return cls(X[idx], idx)

    @classmethod
    def all_points(cls, data):
        X, _ = _xy(data)
        return cls(X, np.arange(X.shape[0]))

    def prefix(self, m):
        """First ``m`` points; nested subsets of one random ordering grow monotonically."""
        idx = None if self.source_indices is None else self.source_indices[:m]
        return InducingSet(self.points[:m], idx)


def _distinct_rows(P, tol=1e-12):
    order = np.lexsort(P.T[::-1])
    keep = [order[0]]
    for i in order[1:]:
        if np.max(np.abs(P[i] - P[keep[-1]])) > tol:
            keep.append(i)
    return np.sort(np.array(keep))


def _points(Z):
    return Z.points if isinstance(Z, InducingSet) else np.atleast_2d(np.asarray(Z, dtype=float))


# ---------------------------------------------------------------------------
# Nystrom approximation and the variational lower bound
# ---------------------------------------------------------------------------


@dataclass
class NystromParts:
    """Intermediate quantities shared by the bounds for one (model, data, Z)."""

    phi: np.ndarray
    chol_mm: np.ndarray
    jitter: float
    kmn: np.ndarray
    kdiag: np.ndarray
    grads: Optional[tuple] = None


def nystrom_jitter(Kmm, noise, kdiag=None):
    """Jitter floor for K_mm given the noise level.

    Entries of K_mm carry round-off of order u * max(diag); an ill-conditioned
    solve amplifies it into the residual diagonal K - Khat, which the bound
    divides by the noise.  The floor keeps that error well below the noise.
    Any jitter keeps Khat <= K, so the bounds stay valid.

    With ``kdiag`` (the prior variances at the N data points) the floor depends
    on the data only, so it is the same for every inducing subset of the data;
    a fixed jitter acts like noisy inducing observations, which keeps the lower
    bound nondecreasing over nested inducing sets.
    """
    if noise is None or Kmm.shape[0] == 0:
        return 0.0
    d = float(np.max(np.diag(Kmm)))
    size = Kmm.shape[0]
    if kdiag is not None and len(kdiag):
        d = max(d, float(np.max(kdiag)))
        size = max(size, len(kdiag))
    return 10.0 * size * np.finfo(float).eps * d * d / noise


def _nystrom_parts(kernel, X, Z, with_grads=False, noise=None):
    Zp = _points(Z)
    if with_grads:
        Kmm, dKmm = kern.gram(kernel, Zp, with_grads=True)
        Kmn, dKmn = kern.cross_gram(kernel, Zp, X, with_grads=True)
        kd, dkd = kern.kernel_diag(kernel, X, with_grads=True)
    else:
        Kmm = kern.gram(kernel, Zp)
        Kmn = kern.cross_gram(kernel, Zp, X)
        kd = kern.kernel_diag(kernel, X)
    L, jitter = cholesky_jittered(Kmm, min_jitter=nystrom_jitter(Kmm, noise, kd))
    phi = solve_lower(L, Kmn)
    grads = (dKmm, dKmn, dkd) if with_grads else None
    return NystromParts(phi, L, jitter, Kmn, kd, grads)


def nystrom(kernel, X, Z, noise=1.0):
    """Low-rank factor Phi = L^-1 K_mn (L L^T = K_mm + jitter) so that Phi^T Phi = Khat."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    parts = _nystrom_parts(kernel, X, Z, noise=noise)
    return LowRankPlusDiag(parts.phi, noise)


def var_lower_bound(model, data, Z, grad=False):
    """Variational lower bound on log ML; with ``grad=True`` also its HyperVector gradient.

    log N(y | 0, Khat + s I) - tr(K - Khat) / (2 s), evaluated in O(N m^2).
    """
    X, y = _xy(data)
    n = X.shape[0]
    s = model.noise
    parts = _nystrom_parts(model.kernel, X, Z, with_grads=grad, noise=s)
    phi = parts.phi
    fac = LowRankPlusDiag(phi, s).factorize()
    beta = fac.solve(y)
    # each residual k_ii - |phi_i|^2 is nonnegative in exact arithmetic
    trace_gap = float(np.sum(np.maximum(parts.kdiag - np.sum(phi**2, axis=0), 0.0)))
    value = -0.5 * fac.logdet - 0.5 * float(y @ beta) - 0.5 * n * LOG_2PI - 0.5 * trace_gap / s
    if not np.isfinite(value):
        raise NumericalError("variational lower bound is not finite")
    if not grad:
        return value

    dKmm, dKmn, dkd = parts.grads
    # Wt = K_mm^-1 K_mn (m x N)
    Wt = solve_triangular(parts.chol_mm.T, phi, lower=False, check_finite=False)
    W = Wt.T
    sinv_w = fac.solve(W)
    # G W with G = -1/2 S^-1 + 1/2 beta beta^T + I / (2 s): adjoint of Khat
    GW = -0.5 * sinv_w + 0.5 * np.outer(beta, beta @ W) + W / (2.0 * s)
    WtGW = Wt @ GW
    GWt = GW.T
    g = np.array(
        [
            2.0 * float(np.sum(GWt * dmn)) - float(np.sum(WtGW * dmm)) - 0.5 * float(np.sum(dd)) / s
            for dmm, dmn, dd in zip(dKmm, dKmn, dkd)
        ]
    )
    tr_sinv = fac.trace_inverse()
    d_noise = -0.5 * tr_sinv + 0.5 * float(beta @ beta) + 0.5 * trace_gap / s**2
    return value, np.append(g, s * d_noise)


def nld_upper_bound(model, data, Z):
    """-1/2 log det(Khat + s I) >= -1/2 log det(K + s I)."""
    X, _ = _xy(data)
    rep = nystrom(model.kernel, X, Z, model.noise)
    return -0.5 * rep.factorize().logdet


# ---------------------------------------------------------------------------
# conjugate-gradient bound on the quadratic term
# ---------------------------------------------------------------------------


class KernelOperator:
    """Matrix-vector products with K + s I.

    The dense matrix is kept when it fits in ``max_dense_bytes``; otherwise rows
    are recomputed in chunks on every product.  Either way a product is O(N^2).
    """

    def __init__(self, kernel, X, noise, max_dense_bytes=DENSE_BYTES, chunk=512):
        self.kernel = kernel
        self.X = X
        self.noise = noise
        self.chunk = chunk
        n = X.shape[0]
        if n * n * 8 <= max_dense_bytes:
            K = kern.gram(kernel, X)
            K[np.diag_indices(n)] += noise
            self.dense = K
        else:
            self.dense = None

    def __call__(self, v):
        if self.dense is not None:
            return self.dense @ v
        out = np.empty_like(v)
        n = self.X.shape[0]
        for start in range(0, n, self.chunk):
            stop = min(start + self.chunk, n)
            rows = kern.cross_gram(self.kernel, self.X[start:stop], self.X)
            out[start:stop] = rows @ v
        return out + self.noise * v


@dataclass
class CGConfig:
    preconditioner: str = "pic"
    max_iter: Optional[int] = None
    tol: float = 1e-10
    block_size: Optional[int] = None

    def __post_init__(self):
        if self.preconditioner is None:
            self.preconditioner = "cg"
        self.preconditioner = self.preconditioner.lower()
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")


@dataclass
class NIPBound:
    value: float
    iterations: int
    converged: bool
    alpha: np.ndarray
    history: list = field(default_factory=list)


def _psd_part(B):
    """Clip negative eigenvalues of a block of K - Khat.

    The residual is PSD in exact arithmetic but can lose that to cancellation
    when the kernel variance dwarfs the noise.  Any SPD preconditioner keeps
    the NIP bound valid, so clipping only affects convergence speed.
    """
    B = 0.5 * (B + B.T)
    w, V = np.linalg.eigh(B)
    if w[0] >= 0:
        return B
    return (V * np.maximum(w, 0.0)) @ V.T


def build_preconditioner(model, X, Z, kind, block_size=None):
    """Woodbury-form preconditioner for K + s I, or ``None`` for plain CG."""
    if kind == "cg":
        return None
    if Z is None:
        raise ValueError(f"preconditioner {kind!r} needs inducing points")
    parts = _nystrom_parts(model.kernel, X, Z, noise=model.noise)
    phi = parts.phi
    if kind == "nystrom":
        rep = LowRankPlusDiag(phi, model.noise)
    elif kind == "fic":
        corr = np.maximum(parts.kdiag - np.sum(phi**2, axis=0), 0.0)
        rep = LowRankPlusDiag(phi, model.noise, diag=corr)
    else:
        size = block_size or phi.shape[0]
        blocks = []
        for start, stop in contiguous_blocks(X.shape[0], size):
            Kb = kern.gram(model.kernel, X[start:stop])
            Pb = phi[:, start:stop]
            blocks.append((start, stop, _psd_part(Kb - Pb.T @ Pb)))
        rep = LowRankPlusDiag(phi, model.noise, blocks=blocks)
    return rep.factorize()


def nip_upper_bound(
    model,
    data,
    preconditioner="pic",
    Z=None,
    max_iter=None,
    tol=1e-10,
    block_size=None,
    operator=None,
):
    """Upper bound on -1/2 y^T (K + s I)^-1 y from (preconditioned) CG iterates.

    Returns the smallest bound seen over the iterations, re-evaluated exactly
    at its iterate.
    """
    X, y = _xy(data)
    n = X.shape[0]
    if max_iter is None:
        max_iter = _points(Z).shape[0] if Z is not None else n
    A = operator or KernelOperator(model.kernel, X, model.noise)
    M = build_preconditioner(model, X, Z, (preconditioner or "cg").lower(), block_size)
    precond = (lambda r: r) if M is None else M.solve

    alpha = np.zeros(n)
    r = y.copy()
    ynorm = float(np.linalg.norm(y))
    history = [0.0]
    best, best_alpha = 0.0, alpha.copy()
    converged = float(np.linalg.norm(r)) <= tol * ynorm
    it = 0
    if not converged and max_iter > 0:
        z = precond(r)
        p = z.copy()
        rz = float(r @ z)
        for it in range(1, max_iter + 1):
            Ap = A(p)
            pAp = float(p @ Ap)
            if not np.isfinite(pAp) or pAp <= 0:
                raise NumericalError(f"CG breakdown at iteration {it} (p^T A p = {pAp:g})")
            step = rz / pAp
            alpha = alpha + step * p
            r = r - step * Ap
            value = -0.5 * float(alpha @ (y + r))
            if not np.isfinite(value):
                raise NumericalError(f"non-finite CG bound at iteration {it}")
            history.append(value)
            if value < best:
                best, best_alpha = value, alpha.copy()
            if float(np.linalg.norm(r)) <= tol * ynorm:
                converged = True
                break
            z = precond(r)
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
    if it > 0:
        best = 0.5 * float(best_alpha @ A(best_alpha)) - float(best_alpha @ y)
        best = min(best, 0.0)
        if best == 0.0:
            best_alpha = np.zeros(n)
    return NIPBound(best, it, converged, best_alpha, history)


# ---------------------------------------------------------------------------
# the sandwich
# ---------------------------------------------------------------------------


@dataclass
class SandwichResult:
    lower: float
    upper: float
    nld_ub: float
    nip_ub: float
    cg_iterations: int
    cg_converged: bool
    m: int
    min_eig_khat: Optional[float] = None


def sandwich(model, data, Z, cg=None):
    """Lower and upper bounds on the exact log marginal likelihood at fixed hyperparameters."""
    cg = cg or CGConfig()
    X, y = _xy(data)
    n = X.shape[0]
    Zp = _points(Z)
    lower = var_lower_bound(model, data, Z)
    rep = nystrom(model.kernel, X, Z, model.noise)
    nld = -0.5 * rep.factorize().logdet
    nip = nip_upper_bound(
        model,
        data,
        preconditioner=cg.preconditioner,
        Z=Z,
        max_iter=cg.max_iter if cg.max_iter is not None else Zp.shape[0],
        tol=cg.tol,
        block_size=cg.block_size,
    )
    upper = nld + nip.value - 0.5 * n * LOG_2PI
    return SandwichResult(
        lower=float(lower),
        upper=float(upper),
        nld_ub=float(nld),
        nip_ub=float(nip.value),
        cg_iterations=nip.iterations,
        cg_converged=nip.converged,
        m=Zp.shape[0],
        min_eig_khat=_min_eig_gram_of_factor(rep.factor, n),
    )


def _min_eig_gram_of_factor(phi, n):
    """Smallest eigenvalue of Phi^T Phi (N x N), via the m x m Gram Phi Phi^T."""
    m = phi.shape[0]
    if m < n:
        return 0.0
    ev = np.linalg.eigvalsh(phi @ phi.T)
    return float(max(ev[m - n], 0.0))


@dataclass
class Prop1Diagnostic:
    applies: bool
    lambda_hat_min: float
    ub_slack: Optional[float] = None
    lb_slack: Optional[float] = None
    ub_slack_le_lb_slack: Optional[bool] = None


def prop1_diagnostic(model, data, Z, sw, exact=None, tol=1e-8):
    """Check the sufficient condition under which the upper bound beats the lower bound.

    ``lambda_hat_min`` is the smallest eigenvalue of Khat + s I.  The condition
    applies when CG converged and lambda_hat_min >= 2 s; the slack comparison
    is reported whenever the exact value is available.
    """
    X, _ = _xy(data)
    if sw.min_eig_khat is not None:
        lam_phi = sw.min_eig_khat
    else:
        lam_phi = _min_eig_gram_of_factor(nystrom(model.kernel, X, Z, model.noise).factor, X.shape[0])
    lam = model.noise + lam_phi
    applies = bool(sw.cg_converged and lam >= 2.0 * model.noise)
    if exact is None:
        exact = exact_logml(model, data).logml
    ub_slack = sw.upper - exact
    lb_slack = exact - sw.lower
    return Prop1Diagnostic(applies, lam, ub_slack, lb_slack, bool(ub_slack <= lb_slack + tol))


# ---------------------------------------------------------------------------
# stochastic upper bound on the log-determinant term
# ---------------------------------------------------------------------------


@dataclass
class RFFBound:
    mean: float
    stderr: float
    draws: np.ndarray


def rff_nld_upper_bound(model, data, m_f, samples, rng):
    """Monte-Carlo estimate of E[-1/2 log det(Phi^T Phi + s I)] with RFF features.

    Each draw's expectation upper-bounds the exact NLD by Jensen's inequality.
    """
    X, _ = _xy(data)
    draws = []
    for _ in range(samples):
        feat = sample_rff(model.kernel, m_f, rng, ndim=X.shape[1])
        rep = LowRankPlusDiag(feat.features(X), model.noise)
        draws.append(-0.5 * rep.factorize().logdet)
    draws = np.array(draws)
    stderr = float(draws.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("nan")
    return RFFBound(float(draws.mean()), stderr, draws)
