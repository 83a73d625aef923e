"""MAP hyperparameter optimization with random restarts.

Priors and initial distributions (all on the unconstrained HyperVector scale)::

    noise      init log s2 ~ N(log 0.1, 0.25)         prior log s2 ~ N(0, 0.2)
    LIN        init var = exp(V), V ~ TN(1, (-inf, 0]); off = exp(Z / 2)
               priors: log-uniform (contribute 0)
    SE         init len = exp(Z / 2), var = 0.1 exp(Z / 2)
               prior log len ~ N(0, 0.01); log var log-uniform
    PER        init len = exp(Z / 2), var = 0.1 exp(Z / 2),
               per = exp(p_min + W) or exp(p_max + U) w.p. 1/2,
               W ~ TN(0.5, [0, inf)), U ~ TN(0.5, (-inf, 0])
               prior log len ~ t(0, 1, nu=4);
               log per ~ 1/2 N(p_min - 0.5, 0.25) + 1/2 N(p_max - 2, 0.5)
               with p_min = log(10 range / N), p_max = log(range / 5)

The second argument of every N(., .) and TN(., .) is a variance.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize as sopt
from scipy import special, stats

from . import kernels as kern
from .bounds import var_lower_bound
from .exceptions import NumericalError, SKCError
from .gp import GPModel, exact_logml_grad, pack, unpack

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# prior densities on unconstrained parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float

    def logpdf(self, v):
        d = v - self.mean
        return -0.5 * np.log(2 * np.pi * self.var) - 0.5 * d * d / self.var, -d / self.var


@dataclass(frozen=True)
class LogUniform:
    """Improper flat density on the log scale; contributes nothing."""

    def logpdf(self, v):
        return 0.0, 0.0


@dataclass(frozen=True)
class StudentT:
    mean: float
    var: float
    nu: float

    def logpdf(self, v):
        d = v - self.mean
        nu, s2 = self.nu, self.var
        const = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * np.log(nu * np.pi * s2)
        q = 1 + d * d / (nu * s2)
        return const - 0.5 * (nu + 1) * np.log(q), -(nu + 1) * d / (nu * s2 * q)


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple
    means: tuple
    vars: tuple

    def logpdf(self, v):
        logs = []
        grads = []
        for w, mu, var in zip(self.weights, self.means, self.vars):
            lp, g = Gaussian(mu, var).logpdf(v)
            logs.append(np.log(w) + lp)
            grads.append(g)
        logs = np.array(logs)
        total = special.logsumexp(logs)
        resp = np.exp(logs - total)
        return float(total), float(resp @ np.array(grads))


@dataclass
class PriorConfig:
    noise_init_mean: float = float(np.log(0.1))
    noise_init_var: float = 0.25
    noise_prior_mean: float = 0.0
    noise_prior_var: float = 0.2
    se_len_prior_var: float = 0.01
    per_len_t_var: float = 1.0
    per_len_t_nu: float = 4.0
    per_short_offset: float = -0.5
    per_short_var: float = 0.25
    per_long_offset: float = -2.0
    per_long_var: float = 0.5
    per_init_trunc_var: float = 0.5
    per_min_steps: float = 10.0
    per_max_fraction: float = 5.0
    lin_var_init_var: float = 1.0

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown prior settings: {sorted(unknown)}")
        return cls(**d)


def period_limits(data, dim, cfg=None):
    """(p_min, p_max) on the log-period scale for one input dimension."""
    cfg = cfg or PriorConfig()
    rng_x = data.x_range(dim) if hasattr(data, "x_range") else float(np.ptp(data[0][:, dim]))
    n = data.n if hasattr(data, "n") else data[0].shape[0]
    return float(np.log(cfg.per_min_steps * rng_x / n)), float(np.log(rng_x / cfg.per_max_fraction))


def priors_for(model, data, cfg=None):
    """One prior entry per HyperVector coordinate."""
    cfg = cfg or PriorConfig()
    out = []
    for b in kern.bases(model.kernel):
        if b.kind == kern.SE:
            out += [LogUniform(), Gaussian(0.0, cfg.se_len_prior_var)]
        elif b.kind == kern.LIN:
            out += [LogUniform(), LogUniform()]
        else:
            pmin, pmax = period_limits(data, b.dim, cfg)
            out += [
                LogUniform(),
                StudentT(0.0, cfg.per_len_t_var, cfg.per_len_t_nu),
                GaussianMixture(
                    (0.5, 0.5),
                    (pmin + cfg.per_short_offset, pmax + cfg.per_long_offset),
                    (cfg.per_short_var, cfg.per_long_var),
                ),
            ]
    out.append(Gaussian(cfg.noise_prior_mean, cfg.noise_prior_var))
    return out


def log_prior(hyper, priors):
    """Sum of per-coordinate log densities and its gradient."""
    hyper = np.asarray(hyper, dtype=float)
    if len(priors) != hyper.size:
        raise ValueError("one prior entry is needed per hyperparameter")
    total = 0.0
    grad = np.zeros_like(hyper)
    for i, (p, v) in enumerate(zip(priors, hyper)):
        lp, g = p.logpdf(v)
        total += lp
        grad[i] = g
    return float(total), grad


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _truncnorm(rng, var, low, high):
    sd = np.sqrt(var)
    return float(stats.truncnorm.rvs(low / sd, high / sd, scale=sd, random_state=rng))


def init_base(b, data, rng, cfg=None):
    """Fresh random parameters for one base kernel (same kind and dimension)."""
    cfg = cfg or PriorConfig()
    z = rng.standard_normal
    if b.kind == kern.SE:
        return kern.se(b.dim, var=0.1 * np.exp(z() / 2), len=np.exp(z() / 2))
    if b.kind == kern.LIN:
        v = _truncnorm(rng, cfg.lin_var_init_var, -np.inf, 0.0)
        return kern.lin(b.dim, var=np.exp(v), off=np.exp(z() / 2))
    pmin, pmax = period_limits(data, b.dim, cfg)
    length = np.exp(z() / 2)
    if rng.random() < 0.5:
        period = np.exp(pmin + _truncnorm(rng, cfg.per_init_trunc_var, 0.0, np.inf))
    else:
        period = np.exp(pmax + _truncnorm(rng, cfg.per_init_trunc_var, -np.inf, 0.0))
    return kern.per(b.dim, var=0.1 * np.exp(z() / 2), len=length, per=period)


def _map_bases(k, fn):
    if isinstance(k, kern.BaseKernel):
        return fn(k)
    return type(k)(tuple(_map_bases(c, fn) for c in k.children))


def init_noise(rng, cfg=None):
    cfg = cfg or PriorConfig()
    return float(np.exp(cfg.noise_init_mean + np.sqrt(cfg.noise_init_var) * rng.standard_normal()))


def init_hyperparameters(kernel, data, rng, cfg=None):
    """Random initial model: every base kernel and the noise drawn from their init laws."""
    k = _map_bases(kernel, lambda b: init_base(b, data, rng, cfg))
    return GPModel(k, init_noise(rng, cfg))


def inherit_hyperparameters(parent, child, data, rng, perturb=0.1, cfg=None):
    """Initial model for ``child`` reusing the optimized parameters of ``parent``.

    ``parent`` is an :class:`OptimizeResult` or :class:`GPModel`.  ``child``
    must equal the parent structure or extend it by one base kernel through a
    sum or product.  Shared parameters are copied and perturbed by Gaussian
    noise with standard deviation ``perturb`` on the unconstrained scale; the
    new base kernel is drawn fresh.
    """
    pmodel = parent.model if isinstance(parent, OptimizeResult) else parent
    pk = kern.canonical(pmodel.kernel)
    child = kern.canonical(child)

    def jitter_base(b):
        th = kern.get_params(b) + perturb * rng.standard_normal(len(b.params))
        return kern.set_params(b, th)

    def copy_from(src):
        return _map_bases(src, jitter_base)

    if kern.structure(child) == kern.structure(pk):
        new_k = copy_from(pk)
    else:
        if isinstance(child, kern.BaseKernel):
            raise SKCError("child kernel does not extend the parent structure")
        kind = type(child)
        items = list(pk.children) if type(pk) is kind else [pk]
        remaining = list(child.children)
        matched = []
        for item in items:
            key = kern.structure(item)
            pos = next((i for i, c in enumerate(remaining) if kern.structure(c) == key), None)
            if pos is None:
                raise SKCError(
                    f"child {kern.structure(child)} does not extend parent {kern.structure(pk)}"
                )
            remaining.pop(pos)
            matched.append(copy_from(item))
        if len(remaining) != 1 or not isinstance(remaining[0], kern.BaseKernel):
            raise SKCError(
                f"child {kern.structure(child)} must add exactly one base kernel to "
                f"{kern.structure(pk)}"
            )
        new_k = kern.canonical(kind(tuple(matched + [init_base(remaining[0], data, rng, cfg)])))
    log_noise = np.log(pmodel.noise) + perturb * rng.standard_normal()
    return GPModel(new_k, float(np.exp(log_noise)))


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass
class OptimizerConfig:
    max_iter: int = 500
    gtol: float = 1e-5
    # box on unconstrained parameters keeps exp() finite
    log_bound: float = 12.0
    log_noise_min: float = float(np.log(1e-6))
    offset_bound: float = 1e3
    perturb: float = 0.1
    workers: int = 1


@dataclass
class RestartStats:
    index: int
    objective: float
    energy: float
    iterations: int
    converged: bool
    message: str = ""


@dataclass
class OptimizeResult:
    model: GPModel
    hyper: np.ndarray
    objective: float
    energy: float
    restart_index: int
    iterations: int
    converged: bool
    restarts: list = field(default_factory=list)

    @property
    def log_prior(self):
        return self.energy - self.objective


def objective_and_grad(model, data, Z=None):
    """LB (or exact log ML when ``Z`` is None) and its HyperVector gradient."""
    if Z is None:
        r = exact_logml_grad(model, data)
        return r.value.logml, r.grad
    return var_lower_bound(model, data, Z, grad=True)


def _bounds(model, cfg):
    mask = kern.is_log_scaled(model.kernel)
    out = [(-cfg.log_bound, cfg.log_bound) if m else (-cfg.offset_bound, cfg.offset_bound) for m in mask]
    out.append((cfg.log_noise_min, cfg.log_bound))
    return out


def _clip(theta, bounds):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(theta, lo, hi)


def optimize_single(start, data, Z=None, priors=None, cfg=None, trace=None):
    """Maximize energy = objective + log prior from one starting model with L-BFGS-B.

    ``trace``, if a list, receives the energy at every accepted iterate.
    """
    cfg = cfg or OptimizerConfig()
    if priors is None:
        priors = priors_for(start, data)
    bounds = _bounds(start, cfg)
    theta0 = _clip(pack(start), bounds)
    best = {"energy": -np.inf, "theta": theta0, "objective": -np.inf}
    seen = {}

    def fun(theta):
        model = unpack(start, theta)
        try:
            obj, g = objective_and_grad(model, data, Z)
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError):
            return 1e300, np.zeros_like(theta)
        lp, gp = log_prior(theta, priors)
        energy = obj + lp
        if not (np.isfinite(energy) and np.all(np.isfinite(g))):
            return 1e300, np.zeros_like(theta)
        if energy > best["energy"]:
            best.update(energy=energy, theta=theta.copy(), objective=obj)
        if trace is not None:
            seen[theta.tobytes()] = energy
        return -energy, -(g + gp)

    def accepted(theta):
        if trace is not None and theta.tobytes() in seen:
            trace.append(seen[theta.tobytes()])

    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        res = sopt.minimize(
            fun,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=accepted,
            options={"maxiter": cfg.max_iter, "gtol": cfg.gtol},
        )
    theta = best["theta"]
    if not np.isfinite(best["energy"]):
        raise NumericalError("optimizer found no finite objective value")
    model = unpack(start, theta)
    return model, theta, best["objective"], best["energy"], int(res.nit), bool(res.success), str(res.message)


def derive_seed(master, *keys):
    """Deterministic child seed from a master seed and integer/string keys."""
    ints = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        ints.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(ints)


def optimize_map(kernel_or_model, data, Z=None, restarts=10, seed=0, starts=None, priors_cfg=None, cfg=None):
    """Best-of-``restarts`` MAP fit of a kernel.

    ``Z=None`` optimizes the exact log ML (CKS mode); otherwise the variational
    lower bound on inducing set ``Z``.  ``starts`` optionally supplies initial
    models (e.g. inherited from a parent) used before cold random starts.
    Restart ``i`` draws from a generator seeded by (seed, i), so the result does
    not depend on whether restarts run in parallel.  The restart with the
    highest objective (prior excluded) is returned.
    """
    cfg = cfg or OptimizerConfig()
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    kernel = kernel_or_model.kernel if isinstance(kernel_or_model, GPModel) else kernel_or_model
    starts = list(starts or [])

    def run(i):
        rng = np.random.default_rng(derive_seed(seed, i))
        start = starts[i] if i < len(starts) else init_hyperparameters(kernel, data, rng, priors_cfg)
        priors = priors_for(start, data, priors_cfg)
        try:
            model, theta, obj, energy, nit, ok, msg = optimize_single(start, data, Z, priors, cfg)
        except NumericalError as exc:
            logger.debug("restart %d failed: %s", i, exc)
            return None, RestartStats(i, float("-inf"), float("-inf"), 0, False, str(exc))
        return (model, theta), RestartStats(i, obj, energy, nit, ok, msg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(run, range(restarts)))
    else:
        outcomes = [run(i) for i in range(restarts)]

    stats_list = [s for _, s in outcomes]
    valid = [i for i, (fit, _) in enumerate(outcomes) if fit is not None]
    if not valid:
        raise NumericalError("all optimizer restarts failed")
    best = max(valid, key=lambda i: (stats_list[i].objective, -i))
    (model, theta), st = outcomes[best]
    return OptimizeResult(
        model=model,
        hyper=theta,
        objective=st.objective,
        energy=st.energy,
        restart_index=best,
        iterations=st.iterations,
        converged=st.converged,
        restarts=stats_list,
    )
