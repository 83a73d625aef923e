"""Exact O(N^3) Gaussian-process quantities: log marginal likelihood, its
log-determinant / quadratic-form split, analytic gradients, BIC and the
posterior slope of a linear component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels as kern
from .linalg import cho_solve, chol_logdet, cholesky_jittered

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GPModel:
    kernel: object
    noise: float

    def __post_init__(self):
        if not self.noise > 0:
            raise ValueError(f"noise variance must be positive, got {self.noise}")

    def __str__(self):
        return f"{kern.to_string(self.kernel)} | noise={self.noise!r}"


def pack(model):
    """HyperVector: unconstrained kernel parameters (depth-first), log noise last."""
    return np.append(kern.get_params(model.kernel), np.log(model.noise))


def unpack(model, theta):
    theta = np.asarray(theta, dtype=float)
    return GPModel(kern.set_params(model.kernel, theta[:-1]), float(np.exp(theta[-1])))


def hyper_labels(model):
    return kern.param_labels(model.kernel) + ["log noise"]


def _xy(data):
    if isinstance(data, tuple):
        X, y = data
        X = np.asarray(X, dtype=float)
        return (X[:, None] if X.ndim == 1 else X), np.asarray(y, dtype=float)
    return data.X, data.y


class LogML(NamedTuple):
    logml: float
    nld: float
    nip: float


@dataclass
class LogMLGrad:
    value: LogML
    grad: np.ndarray
    grad_nld: np.ndarray
    grad_nip: np.ndarray


def _decompose(K, y, noise):
    n = K.shape[0]
    C = K.copy()
    C[np.diag_indices(n)] += noise
    L, jitter = cholesky_jittered(C)
    alpha = cho_solve(L, y)
    nld = -0.5 * chol_logdet(L)
    nip = -0.5 * float(y @ alpha)
    return LogML(nld + nip - 0.5 * n * LOG_2PI, nld, nip), L, alpha


def exact_logml(model, data):
    """log N(y | 0, K + noise I) together with its NLD and NIP terms."""
    X, y = _xy(data)
    K = kern.gram(model.kernel, X)
    value, _, _ = _decompose(K, y, model.noise)
    return value


def exact_logml_grad(model, data):
    """Exact log ML and its gradient over the HyperVector layout of :func:`pack`."""
    X, y = _xy(data)
    n = X.shape[0]
    K, dKs = kern.gram(model.kernel, X, with_grads=True)
    value, L, alpha = _decompose(K, y, model.noise)
    Cinv = cho_solve(L, np.eye(n))
    g_nld = [-0.5 * float(np.sum(Cinv * dK)) for dK in dKs]
    g_nip = [0.5 * float(alpha @ dK @ alpha) for dK in dKs]
    # noise: dC/dlog(noise) = noise * I
    g_nld.append(-0.5 * model.noise * float(np.trace(Cinv)))
    g_nip.append(0.5 * model.noise * float(alpha @ alpha))
    g_nld = np.array(g_nld)
    g_nip = np.array(g_nip)
    return LogMLGrad(value, g_nld + g_nip, g_nld, g_nip)


@dataclass(frozen=True)
class BICScore:
    value: float
    logml: float
    p: int
    n: int


def bic_penalty(p, n):
    return 0.5 * p * np.log(n)


def bic(model, data, logml, include_noise=True):
    """log ML - p/2 log N, with p counted on the (unexpanded) kernel."""
    n = data.n if hasattr(data, "n") else len(_xy(data)[1])
    p = kern.count_hyperparameters(model.kernel, include_noise=include_noise)
    return BICScore(float(logml - bic_penalty(p, n)), float(logml), p, n)


def lin_slope(model, data, dim=None):
    """Posterior slope of the LIN component on ``dim``.

    Uses var * u^T [var u u^T + noise I]^-1 y with u = x - offset, which by the
    rank-one Woodbury identity equals var * u^T y / (noise + var * u^T u).
    """
    X, y = _xy(data)
    lins = [b for b in kern.bases(model.kernel) if b.kind == kern.LIN]
    if dim is not None:
        lins = [b for b in lins if b.dim == dim]
    if not lins:
        where = "" if dim is None else f" on dimension {dim}"
        raise ValueError(f"kernel has no LIN factor{where}")
    b = lins[0]
    var, off = b.params
    u = X[:, b.dim] - off
    return float(var * (u @ y) / (model.noise + var * (u @ u)))
