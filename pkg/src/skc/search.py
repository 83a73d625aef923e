"""Kernel structure search.

``run_cks`` is the exact greedy search scored by BIC.  ``run_skc`` scores each
candidate with a BIC interval [lower, upper] from the variational lower bound
and the Nystrom/CG upper bound at hyperparameters optimized on the lower bound,
keeps a buffer of up to S kernels whose intervals overlap the incumbent, and
uses the upper bound to rank.  Mode ``skc-lb`` ranks by the lower bound only.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels as kern
from .bounds import InducingSet, SandwichResult, sandwich
from .config import RunConfig
from .exceptions import ConfigError, NumericalError
from .gp import GPModel, bic_penalty, exact_logml
from .optimize import derive_seed, inherit_hyperparameters, optimize_map

logger = logging.getLogger(__name__)


@dataclass
class BICInterval:
    lower: float
    upper: float
    model: GPModel
    m: int
    sandwich: Optional[SandwichResult] = None

    def overlaps(self, other):
        return self.lower <= other.upper and other.lower <= self.upper


@dataclass
class Candidate:
    """One evaluated kernel: its interval, fit statistics and place in the tree."""

    id: int
    depth: int
    structure: str
    parent: Optional[int]
    interval: Optional[BICInterval] = None
    p: int = 0
    status: str = "ok"
    error: str = ""
    restart_objectives: list = field(default_factory=list)
    best_restart: int = -1
    iterations: int = 0
    converged: bool = False
    exact_bic: Optional[float] = None
    seconds: float = 0.0
    in_buffer: bool = False

    @property
    def ok(self):
        return self.status == "ok"

    @property
    def lower(self):
        return self.interval.lower

    @property
    def upper(self):
        return self.interval.upper

    @property
    def model(self):
        return self.interval.model

    @property
    def kernel_string(self):
        return kern.to_string(kern.canonical(self.model.kernel))


@dataclass
class SearchResult:
    mode: str
    chosen: Candidate
    candidates: list
    depth_reached: int
    inducing_indices: Optional[np.ndarray] = None
    seconds: float = 0.0

    def by_depth(self):
        out = {}
        for c in self.candidates:
            out.setdefault(c.depth, []).append(c)
        return out


# ---------------------------------------------------------------------------
# candidate generation and ranking
# ---------------------------------------------------------------------------


def base_kernels(ndim, kinds=kern.BASE_KINDS):
    return [kern.base(kind, d) for d in range(ndim) for kind in kinds]


def _unique(kernels, exclude=()):
    seen = set(exclude)
    out = []
    for k in kernels:
        k = kern.canonical(k)
        key = kern.structure(k)
        if key not in seen:
            seen.add(key)
            out.append(k)
    return out


def expand_candidates(k, ndim, kinds=kern.BASE_KINDS):
    """All k + B and k * B over base kinds and dimensions, canonicalized and deduplicated."""
    bs = base_kernels(ndim, kinds)
    return _unique([kern.Sum((k, b)) for b in bs] + [kern.Product((k, b)) for b in bs])


def replacement_candidates(k, ndim, kinds=kern.BASE_KINDS):
    """All kernels obtained by replacing one base kernel of ``k`` by another."""
    out = []
    n_bases = len(kern.bases(k))
    for pos in range(n_bases):
        for b in base_kernels(ndim, kinds):
            out.append(_replace_base(k, pos, b))
    return _unique(out, exclude={kern.canonical_structure(k)})


def _replace_base(k, pos, new):
    counter = iter(range(10**9))

    def build(node):
        if isinstance(node, kern.BaseKernel):
            return new if next(counter) == pos else node
        return type(node)(tuple(build(c) for c in node.children))

    return build(k)


def rank_by_interval(cands, key="upper"):
    """Best first: by upper bound (or lower for ``key="lower"``), then canonical string.

    Ordering by upper bound respects interval dominance (a.lower > b.upper
    implies a.upper > b.upper) and breaks ties inside overlapping groups.
    """
    def sort_key(c):
        iv = c.interval if isinstance(c, Candidate) else c
        name = c.structure if isinstance(c, Candidate) else kern.canonical_structure(iv.model.kernel)
        return (-getattr(iv, key), name)

    return sorted(cands, key=sort_key)


# ---------------------------------------------------------------------------
# candidate evaluation
# ---------------------------------------------------------------------------


class _Evaluator:
    def __init__(self, data, config, Z):
        self.data = data
        self.config = config
        self.Z = Z
        self.candidates = []
        self.seen = {}

    def _seed(self, depth, structure):
        return int(derive_seed(self.config.seed, "candidate", depth, structure).generate_state(1)[0])

    def fit(self, kernel, depth, parent):
        """Fit one kernel; returns a Candidate (status 'failed' on numerical trouble)."""
        cfg = self.config
        structure = kern.canonical_structure(kernel)
        cand = Candidate(
            id=-1,
            depth=depth,
            structure=structure,
            parent=parent.id if parent is not None else None,
            p=kern.count_hyperparameters(kernel, include_noise=cfg.count_noise),
        )
        t0 = time.perf_counter()
        seed = self._seed(depth, structure)
        starts = []
        if parent is not None:
            rng = np.random.default_rng(derive_seed(seed, "inherit"))
            try:
                starts.append(
                    inherit_hyperparameters(
                        parent.model, kernel, self.data, rng, cfg.optimizer.perturb, cfg.priors
                    )
                )
            except Exception as exc:  # replacement moves are not extensions
                logger.debug("no inheritance for %s: %s", structure, exc)
        try:
            res = optimize_map(
                kernel,
                self.data,
                self.Z,
                restarts=cfg.restarts,
                seed=seed,
                starts=starts,
                priors_cfg=cfg.priors,
                cfg=cfg.optimizer,
            )
            pen = bic_penalty(cand.p, self.data.n)
            if self.Z is None:
                value = exact_logml(res.model, self.data).logml - pen
                cand.interval = BICInterval(value, value, res.model, self.data.n, None)
                cand.exact_bic = value
            else:
                sw = sandwich(res.model, self.data, self.Z, cfg.cg)
                cand.interval = BICInterval(sw.lower - pen, sw.upper - pen, res.model, sw.m, sw)
                if cfg.audit_exact:
                    cand.exact_bic = exact_logml(res.model, self.data).logml - pen
            cand.restart_objectives = [s.objective for s in res.restarts]
            cand.best_restart = res.restart_index
            cand.iterations = res.iterations
            cand.converged = res.converged
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
            cand.status = "failed"
            cand.error = str(exc)
            logger.warning("candidate %s failed: %s", structure, exc)
        cand.seconds = time.perf_counter() - t0
        return cand

    def evaluate(self, jobs, depth):
        """Fit (kernel, parent) pairs, skipping structures already evaluated."""
        todo = []
        for kernel, parent in jobs:
            key = kern.canonical_structure(kernel)
            if key in self.seen:
                continue
            self.seen[key] = None
            todo.append((kernel, parent))
        if self.config.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.config.workers) as pool:
                results = list(pool.map(lambda kp: self.fit(kp[0], depth, kp[1]), todo))
        else:
            results = [self.fit(k, depth, p) for k, p in todo]
        for cand in results:
            cand.id = len(self.candidates)
            self.candidates.append(cand)
            self.seen[cand.structure] = cand
        return [c for c in results if c.ok]


def _check_exact_size(data, config):
    if data.n > config.max_exact_n and not config.allow_large_exact:
        raise ConfigError(
            f"exact search on N={data.n} exceeds the cap of {config.max_exact_n}; "
            "set allow_large_exact to override"
        )


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


def run_cks(data, config=None):
    """Greedy compositional kernel search scored by exact BIC."""
    config = config or RunConfig(mode="cks")
    _check_exact_size(data, config)
    t0 = time.perf_counter()
    ev = _Evaluator(data, config, None)
    level = ev.evaluate([(b, None) for b in base_kernels(data.d, config.base_kinds)], 0)
    if not level:
        raise NumericalError("every depth-0 kernel failed to fit")
    best = rank_by_interval(level)[0]
    depth = 0
    for depth in range(1, config.depth + 1):
        k = best.model.kernel
        jobs = [(c, best) for c in expand_candidates(k, data.d, config.base_kinds)]
        jobs += [(c, None) for c in replacement_candidates(k, data.d, config.base_kinds)]
        level = ev.evaluate(jobs, depth)
        if not level:
            depth -= 1
            break
        top = rank_by_interval(level)[0]
        if top.upper > best.upper:
            best = top
        elif config.early_stop:
            break
    return SearchResult("cks", best, ev.candidates, depth, None, time.perf_counter() - t0)


def run_skc(data, config=None):
    """Scalable kernel composition over BIC intervals with a kernel buffer."""
    config = config or RunConfig()
    if config.m > data.n:
        raise ConfigError(f"m={config.m} exceeds the number of data points N={data.n}")
    if config.audit_exact:
        _check_exact_size(data, config)
    key = "lower" if config.mode == "skc-lb" else "upper"
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(config.seed, "inducing"))
    if config.m == data.n:
        Z = InducingSet.all_points(data)
    else:
        Z = InducingSet.random_subset(data, config.m, rng)
    ev = _Evaluator(data, config, Z)

    level = ev.evaluate([(b, None) for b in base_kernels(data.d, config.base_kinds)], 0)
    if not level:
        raise NumericalError("every depth-0 kernel failed to fit")
    best = rank_by_interval(level, key)[0]
    depth = 0
    for depth in range(1, config.depth + 1):
        overlapping = [c for c in level if c.interval.overlaps(best.interval)]
        buffer = rank_by_interval(overlapping, key)[: config.buffer]
        for c in buffer:
            c.in_buffer = True
        jobs = [
            (child, parent)
            for parent in buffer
            for child in expand_candidates(parent.model.kernel, data.d, config.base_kinds)
        ]
        new = ev.evaluate(jobs, depth)
        if not new:
            depth -= 1
            break
        top = rank_by_interval(new, key)[0]
        if getattr(top, key) > getattr(best, key):
            best = top
            level = new
        else:
            break
    return SearchResult(config.mode, best, ev.candidates, depth, Z.source_indices, time.perf_counter() - t0)


def run_search(data, config):
    """Dispatch on ``config.mode``."""
    if config.mode == "cks":
        return run_cks(data, config)
    return run_skc(data, config)
