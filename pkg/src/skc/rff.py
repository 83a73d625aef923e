"""Random Fourier features for arbitrary sum/product kernel expressions.

Each feature is a random function g(x) with E[g(x) g(x')] = k(x, x').  Base
kernels give

* SE / PER: ``sqrt(2 a) cos(v x_d + b)`` with v drawn from the spectral density;
* LIN: the deterministic ``sqrt(var) (x_d - off)``.

A sum picks one child (probability proportional to its amplitude k(0) when all
children are stationary, uniformly otherwise) and rescales by the inverse
selection probability.  A product multiplies independent child features, and
stationary factors are merged by adding their frequencies.  The feature count
therefore stays at ``m_f`` however large the expression grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import SpectralTruncationError
from .kernels import LIN, PER, SE, BaseKernel, Sum, amplitude, bases


@dataclass
class RFFSample:
    """A draw of ``m_f`` random features.

    ``frequencies`` has one row per feature; rows of features without a
    stationary part are zero and flagged by ``has_cos == False``.
    ``linear_features[j]`` lists the ``(dim, offset)`` LIN factors of feature j.
    """

    frequencies: np.ndarray
    phases: np.ndarray
    scales: np.ndarray
    has_cos: np.ndarray
    linear_features: list = field(default_factory=list)

    @property
    def m_f(self):
        return self.frequencies.shape[0]

    @property
    def amplitude(self):
        return float(np.mean(self.scales**2))

    def features(self, X):
        """Feature matrix Phi (m_f x N) with Phi^T Phi an unbiased Gram estimate."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        G = np.ones((self.m_f, X.shape[0]))
        cos_rows = np.flatnonzero(self.has_cos)
        if cos_rows.size:
            arg = self.frequencies[cos_rows] @ X.T + self.phases[cos_rows, None]
            G[cos_rows] = np.sqrt(2.0) * np.cos(arg)
        for j, lin_terms in enumerate(self.linear_features):
            for dim, off in lin_terms:
                G[j] *= X[:, dim] - off
        return G * (self.scales[:, None] / np.sqrt(self.m_f))


def per_spectrum(lengthscale, tol=1e-6, max_terms=100_000):
    """Weights of the PER kernel's discrete spectrum at harmonics n = 0..n_max.

    Returns ``w`` with ``w[0] + 2 * sum(w[1:])`` = 1 after renormalization;
    harmonic n sits at frequency 2 pi n / period.
    """
    z = 1.0 / lengthscale**2
    # ive(n, z) = I_n(z) exp(-z); total mass over n in Z is exactly one
    chunk = 64
    weights = [special.ive(0, z)]
    mass = weights[0]
    n = 1
    while mass < 1.0 - tol:
        if n > max_terms:
            raise SpectralTruncationError(
                f"PER spectrum truncated at {max_terms} harmonics covers only "
                f"{mass:.8f} of the mass (lengthscale {lengthscale:g})",
                mass,
            )
        block = special.ive(np.arange(n, n + chunk), z)
        for w in block:
            weights.append(w)
            mass += 2.0 * w
            n += 1
            if mass >= 1.0 - tol:
                break
    w = np.array(weights)
    return w / (w[0] + 2.0 * w[1:].sum())


def _sample_per_harmonics(b, size, rng, tol, max_terms):
    w = per_spectrum(b.params[1], tol, max_terms)
    probs = np.concatenate([w[:1], 2.0 * w[1:]])
    n = rng.choice(len(w), size=size, p=probs / probs.sum())
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * n


def _draw(k, size, ndim, rng, opts):
    """Vectorized draw of ``size`` features for sub-expression ``k``.

    Returns (freq [size x D], scale [size], has_cos [size], lin list-of-lists).
    ``scale`` collects the amplitude factors so that g = scale * cos-part * lin-part.
    """
    freq = np.zeros((size, ndim))
    if isinstance(k, BaseKernel):
        if k.kind == SE:
            freq[:, k.dim] = rng.standard_normal(size) / k.params[1]
            return freq, np.full(size, np.sqrt(k.params[0])), np.ones(size, bool), [[] for _ in range(size)]
        if k.kind == PER:
            n = _sample_per_harmonics(k, size, rng, *opts)
            freq[:, k.dim] = 2.0 * np.pi * n / k.params[2]
            return freq, np.full(size, np.sqrt(k.params[0])), np.ones(size, bool), [[] for _ in range(size)]
        return (
            freq,
            np.full(size, np.sqrt(k.params[0])),
            np.zeros(size, bool),
            [[(k.dim, k.params[1])] for _ in range(size)],
        )

    if isinstance(k, Sum):
        amps = [amplitude(c) for c in k.children]
        if all(a is not None for a in amps):
            probs = np.asarray(amps, dtype=float)
        else:
            probs = np.ones(len(k.children))
        probs = probs / probs.sum()
        choice = rng.choice(len(k.children), size=size, p=probs)
        scale = np.empty(size)
        has_cos = np.zeros(size, bool)
        lin = [None] * size
        for i, child in enumerate(k.children):
            rows = np.flatnonzero(choice == i)
            if rows.size == 0:
                continue
            f, s, h, l = _draw(child, rows.size, ndim, rng, opts)
            freq[rows] = f
            scale[rows] = s / np.sqrt(probs[i])
            has_cos[rows] = h
            for r, terms in zip(rows, l):
                lin[r] = terms
        return freq, scale, has_cos, lin

    scale = np.ones(size)
    has_cos = np.zeros(size, bool)
    lin = [[] for _ in range(size)]
    for child in k.children:
        f, s, h, l = _draw(child, size, ndim, rng, opts)
        freq += f
        scale *= s
        has_cos |= h
        for r in range(size):
            lin[r] = lin[r] + l[r]
    return freq, scale, has_cos, lin


def sample_rff(k, m_f, rng, ndim=None, tol=1e-6, max_terms=100_000):
    """Draw ``m_f`` random features for expression ``k``.

    ``ndim`` defaults to one more than the largest dimension used by ``k``.
    """
    if m_f < 1:
        raise ValueError("m_f must be at least 1")
    if ndim is None:
        ndim = max(b.dim for b in bases(k)) + 1
    freq, scale, has_cos, lin = _draw(k, m_f, ndim, rng, (tol, max_terms))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=m_f)
    return RFFSample(freq, phases, scale, has_cos, lin)


def rff_gram(sample, X, X2=None):
    """Estimate of the Gram (or cross-Gram) matrix from one feature draw."""
    P = sample.features(X)
    P2 = P if X2 is None else sample.features(X2)
    return P.T @ P2
