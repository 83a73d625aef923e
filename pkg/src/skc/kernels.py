"""Compositional kernel grammar: SE, LIN and PER base kernels under sums and products.

Kernel expressions are immutable trees.  Each base kernel carries its own
hyperparameters (in their natural, constrained units); optimizers work on the
unconstrained view returned by :func:`get_params`, where positive quantities
are log-transformed and the LIN offset is left as is.

Expressions serialize to a canonical text form such as::

    SE(d=0;var=0.44;len=60.5) * PER(d=0;var=1.1;len=1089.0;per=1.003) + LIN(d=1;var=2.0;off=0.3)

which :func:`parse_kernel` reads back losslessly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .exceptions import KernelDimensionError

SE = "SE"
LIN = "LIN"
PER = "PER"
BASE_KINDS = (SE, LIN, PER)

PARAM_NAMES = {
    SE: ("var", "len"),
    LIN: ("var", "off"),
    PER: ("var", "len", "per"),
}
# LIN offset is the only unconstrained hyperparameter
_LOG_SCALED = {"var": True, "len": True, "per": True, "off": False}
_DEFAULTS = {"var": 1.0, "len": 1.0, "per": 1.0, "off": 0.0}


@dataclass(frozen=True)
class BaseKernel:
    kind: str
    dim: int
    params: tuple

    def __post_init__(self):
        if self.kind not in PARAM_NAMES:
            raise ValueError(f"unknown base kernel kind {self.kind!r}")
        if self.dim < 0:
            raise ValueError("dimension index must be non-negative")
        names = PARAM_NAMES[self.kind]
        if len(self.params) != len(names):
            raise ValueError(f"{self.kind} expects parameters {names}")
        params = tuple(float(v) for v in self.params)
        for name, value in zip(names, params):
            if not np.isfinite(value):
                raise ValueError(f"{self.kind}.{name} must be finite")
            if _LOG_SCALED[name] and value <= 0:
                raise ValueError(f"{self.kind}.{name} must be positive, got {value}")
        object.__setattr__(self, "params", params)

    @property
    def names(self):
        return PARAM_NAMES[self.kind]

    def param(self, name):
        return self.params[self.names.index(name)]

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Sum:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Sum needs at least two children")

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Product:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Product needs at least two children")

    def __str__(self):
        return to_string(self)


KernelExpr = Union[BaseKernel, Sum, Product]


def se(dim=0, var=1.0, len=1.0):
    return BaseKernel(SE, dim, (var, len))


def lin(dim=0, var=1.0, off=0.0):
    return BaseKernel(LIN, dim, (var, off))


def per(dim=0, var=1.0, len=1.0, per=1.0):
    return BaseKernel(PER, dim, (var, len, per))


def base(kind, dim=0, **params):
    names = PARAM_NAMES[kind]
    return BaseKernel(kind, dim, tuple(params.get(n, _DEFAULTS[n]) for n in names))


# ---------------------------------------------------------------------------
# tree utilities
# ---------------------------------------------------------------------------


def bases(k):
    """Base kernels of ``k`` in depth-first order."""
    if isinstance(k, BaseKernel):
        return [k]
    out = []
    for c in k.children:
        out.extend(bases(c))
    return out


def max_dim(k):
    return max(b.dim for b in bases(k))


def check_dims(k, ndim):
    for b in bases(k):
        if b.dim >= ndim:
            raise KernelDimensionError(b, ndim)


def count_hyperparameters(k, include_noise=True):
    """Number of hyperparameters (SE: 2, LIN: 2, PER: 3, plus one for noise)."""
    return sum(len(b.params) for b in bases(k)) + (1 if include_noise else 0)


def n_params(k):
    return count_hyperparameters(k, include_noise=False)


def get_params(k):
    """Unconstrained kernel hyperparameters, depth-first."""
    out = []
    for b in bases(k):
        for name, value in zip(b.names, b.params):
            out.append(np.log(value) if _LOG_SCALED[name] else value)
    return np.array(out, dtype=float)


def set_params(k, theta):
    """Return a copy of ``k`` with unconstrained hyperparameters ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_params(k),):
        raise ValueError(f"expected {n_params(k)} parameters, got {theta.shape}")
    it = iter(theta)

    def build(node):
        if isinstance(node, BaseKernel):
            vals = []
            for name in node.names:
                v = float(next(it))
                vals.append(float(np.exp(v)) if _LOG_SCALED[name] else v)
            return BaseKernel(node.kind, node.dim, tuple(vals))
        return type(node)(tuple(build(c) for c in node.children))

    return build(k)


def param_labels(k):
    """Human-readable labels matching the :func:`get_params` layout."""
    labels = []
    for i, b in enumerate(bases(k)):
        for name in b.names:
            prefix = "log " if _LOG_SCALED[name] else ""
            labels.append(f"{prefix}{b.kind}{b.dim}[{i}].{name}")
    return labels


def is_log_scaled(k):
    """Boolean mask over the :func:`get_params` layout."""
    return np.array([_LOG_SCALED[n] for b in bases(k) for n in b.names])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _base_eval(b, xa, xb, with_grads):
    """Evaluate base kernel on broadcastable coordinate arrays."""
    if b.kind == SE:
        s, l = b.params
        r2 = (xa - xb) ** 2
        K = s * np.exp(-0.5 * r2 / l**2)
        if not with_grads:
            return K, None
        return K, [K, K * r2 / l**2]
    if b.kind == LIN:
        s, c = b.params
        ua = xa - c
        ub = xb - c
        K = s * ua * ub
        if not with_grads:
            return K, None
        return K, [K, -s * (ua + ub)]
    s, l, p = b.params
    a = np.pi * np.abs(xa - xb) / p
    sin_a = np.sin(a)
    K = s * np.exp(-2.0 * sin_a**2 / l**2)
    if not with_grads:
        return K, None
    return K, [K, K * 4.0 * sin_a**2 / l**2, K * 2.0 * a * np.sin(2.0 * a) / l**2]


def _eval(k, xa, xb, with_grads):
    if isinstance(k, BaseKernel):
        return _base_eval(k, xa[k.dim], xb[k.dim], with_grads)
    parts = [_eval(c, xa, xb, with_grads) for c in k.children]
    if isinstance(k, Sum):
        K = parts[0][0]
        for Kc, _ in parts[1:]:
            K = K + Kc
        if not with_grads:
            return K, None
        return K, [g for _, gs in parts for g in gs]
    values = [p[0] for p in parts]
    K = values[0]
    for v in values[1:]:
        K = K * v
    if not with_grads:
        return K, None
    grads = []
    for i, (_, gs) in enumerate(parts):
        others = None
        for j, v in enumerate(values):
            if j != i:
                others = v if others is None else others * v
        grads.extend(g * others for g in gs)
    return K, grads


def _columns(X, outer):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if outer == "row":
        return [X[:, d][:, None] for d in range(X.shape[1])], X.shape[1]
    if outer == "col":
        return [X[:, d][None, :] for d in range(X.shape[1])], X.shape[1]
    return [X[:, d] for d in range(X.shape[1])], X.shape[1]


def _as_points(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def cross_gram(k, A, B, with_grads=False):
    """Matrix of k(A_i, B_j); optionally also the gradients w.r.t. :func:`get_params`."""
    A = _as_points(A)
    B = _as_points(B)
    check_dims(k, min(A.shape[1], B.shape[1]))
    if A.shape[0] == 0 or B.shape[0] == 0:
        K = np.zeros((A.shape[0], B.shape[0]))
        return (K, [K.copy() for _ in range(n_params(k))]) if with_grads else K
    ca, _ = _columns(A, "row")
    cb, _ = _columns(B, "col")
    K, grads = _eval(k, ca, cb, with_grads)
    K = np.broadcast_to(K, (A.shape[0], B.shape[0])).copy()
    if with_grads:
        grads = [np.broadcast_to(g, K.shape).copy() for g in grads]
        return K, grads
    return K


def _mirror(M):
    return np.triu(M) + np.triu(M, 1).T


def gram(k, X, with_grads=False):
    """Symmetric Gram matrix of ``k`` on the rows of ``X``."""
    X = _as_points(X)
    if X.shape[0] < 1:
        raise ValueError("gram needs at least one point")
    out = cross_gram(k, X, X, with_grads)
    if with_grads:
        K, grads = out
        return _mirror(K), [_mirror(g) for g in grads]
    return _mirror(out)


def kernel_diag(k, X, with_grads=False):
    """Diagonal k(x_i, x_i) without forming the Gram matrix."""
    X = _as_points(X)
    check_dims(k, X.shape[1])
    cols, _ = _columns(X, "flat")
    K, grads = _eval(k, cols, cols, with_grads)
    K = np.broadcast_to(K, (X.shape[0],)).copy()
    if with_grads:
        return K, [np.broadcast_to(g, K.shape).copy() for g in grads]
    return K


def eval_kernel(k, x, x2):
    """Scalar k(x, x2) for two D-vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    return float(cross_gram(k, x[None, :], x2[None, :])[0, 0])


def amplitude(k):
    """k(x, x) for stationary expressions; ``None`` if any LIN factor is present."""
    if isinstance(k, BaseKernel):
        return None if k.kind == LIN else k.params[0]
    vals = [amplitude(c) for c in k.children]
    if any(v is None for v in vals):
        return None
    return float(np.sum(vals) if isinstance(k, Sum) else np.prod(vals))


# ---------------------------------------------------------------------------
# algebraic normal forms
# ---------------------------------------------------------------------------


def _terms(k):
    """Sum-of-products expansion as a list of factor lists."""
    if isinstance(k, BaseKernel):
        return [[k]]
    if isinstance(k, Sum):
        return [t for c in k.children for t in _terms(c)]
    terms = [[]]
    for c in k.children:
        terms = [t + u for t in terms for u in _terms(c)]
    return terms


def expand_sum_of_products(k):
    """Distribute products over sums, giving a flat Sum of Products of bases."""
    terms = [f[0] if len(f) == 1 else Product(tuple(f)) for f in _terms(k)]
    return terms[0] if len(terms) == 1 else Sum(tuple(terms))


def structure(k):
    """Parameter-free key, e.g. ``SE0 * PER0 + LIN1``.  Not canonicalized."""
    if isinstance(k, BaseKernel):
        return f"{k.kind}{k.dim}"
    if isinstance(k, Sum):
        return " + ".join(structure(c) for c in k.children)
    return " * ".join(
        f"({structure(c)})" if isinstance(c, Sum) else structure(c) for c in k.children
    )


def canonical(k):
    """Flatten nested sums/products and sort children deterministically."""
    if isinstance(k, BaseKernel):
        return k
    kind = type(k)
    flat = []
    for c in k.children:
        c = canonical(c)
        if type(c) is kind:
            flat.extend(c.children)
        else:
            flat.append(c)
    flat.sort(key=lambda c: (structure(c), to_string(c)))
    return kind(tuple(flat))


def canonical_structure(k):
    return structure(canonical(k))


def depth(k):
    """Number of base kernels minus one; base kernels are depth 0."""
    return len(bases(k)) - 1


# ---------------------------------------------------------------------------
# text form
# ---------------------------------------------------------------------------


def _fmt(v, precision):
    return repr(float(v)) if precision is None else f"{v:.{precision}g}"


def to_string(k, precision=None):
    """Text form; ``precision=None`` gives the lossless representation."""
    if isinstance(k, BaseKernel):
        fields = [f"d={k.dim}"] + [
            f"{n}={_fmt(v, precision)}" for n, v in zip(k.names, k.params)
        ]
        return f"{k.kind}({';'.join(fields)})"
    if isinstance(k, Sum):
        return " + ".join(to_string(c, precision) for c in k.children)
    return " * ".join(
        f"({to_string(c, precision)})" if isinstance(c, Sum) else to_string(c, precision)
        for c in k.children
    )


_TOKEN = re.compile(
    r"\s*(?:(?P<base>(?:SE|LIN|PER))(?:(?P<num>\d+)|\((?P<args>[^)]*)\))?|(?P<op>[+*()]))"
)


def parse_kernel(text):
    """Parse the text form (``SE(d=0;var=1.0;len=2.0)``; ``SE0`` for defaults)."""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse kernel at {text[pos:]!r}")
        pos = m.end()
        if m.group("base"):
            tokens.append(("base", _parse_base(m.group("base"), m.group("num"), m.group("args"))))
        else:
            tokens.append(("op", m.group("op")))
        while pos < len(text) and text[pos].isspace():
            pos += 1

    idx = 0

    def peek():
        return tokens[idx] if idx < len(tokens) else (None, None)

    def expr():
        nonlocal idx
        items = [term()]
        while peek() == ("op", "+"):
            idx += 1
            items.append(term())
        return items[0] if len(items) == 1 else Sum(tuple(items))

    def term():
        nonlocal idx
        items = [factor()]
        while peek() == ("op", "*"):
            idx += 1
            items.append(factor())
        return items[0] if len(items) == 1 else Product(tuple(items))

    def factor():
        nonlocal idx
        kind, value = peek()
        if kind == "base":
            idx += 1
            return value
        if (kind, value) == ("op", "("):
            idx += 1
            node = expr()
            if peek() != ("op", ")"):
                raise ValueError("unbalanced parentheses in kernel expression")
            idx += 1
            return node
        raise ValueError(f"unexpected token {value!r} in kernel expression")

    if not tokens:
        raise ValueError("empty kernel expression")
    node = expr()
    if idx != len(tokens):
        raise ValueError("trailing tokens in kernel expression")
    return node


def _parse_base(kind, num, args):
    fields = {}
    if args:
        for item in args.split(";"):
            if not item.strip():
                continue
            key, _, val = item.partition("=")
            fields[key.strip()] = val.strip()
    dim = int(num) if num is not None else int(fields.pop("d", 0))
    params = {}
    for name in PARAM_NAMES[kind]:
        params[name] = float(fields.pop(name)) if name in fields else _DEFAULTS[name]
    if fields:
        raise ValueError(f"unknown fields {sorted(fields)} for {kind}")
    return base(kind, dim, **params)
