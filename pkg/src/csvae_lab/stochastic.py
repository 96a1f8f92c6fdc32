"""Probability building blocks over autodiff tensors.

Diagonal Gaussians carry log-variance as the learned quantity so positivity
of sigma holds by construction. All reductions run over the trailing axis:
a (D,) input yields a scalar, a (B, D) batch yields per-example values of
shape (B,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, log_softmax

PROB_CLAMP = 1e-12
LOG_2PI = float(np.log(2.0 * np.pi))

EXCLUSIVE = "exclusive"  # softmax over K mutually exclusive classes
BERNOULLI = "bernoulli"  # independent per-attribute binary labels


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class DiagGaussian:
    """Mean / log-variance pair of a diagonal-covariance Gaussian."""

    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        self.mu = _lift(self.mu)
        self.log_var = _lift(self.log_var)
        if self.mu.shape != self.log_var.shape:
            raise ValueError(f"mu/log_var shape mismatch: {self.mu.shape} vs {self.log_var.shape}")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def sigma(self) -> Tensor:
        return (self.log_var * 0.5).exp()


@dataclass
class CategoricalDist:
    """Class scores: softmax over K classes or independent Bernoulli logits."""

    logits: Tensor
    mode: str = BERNOULLI

    def __post_init__(self):
        self.logits = _lift(self.logits)
        if self.mode not in (EXCLUSIVE, BERNOULLI):
            raise ValueError(f"unknown mode {self.mode!r}")

    def probs(self) -> np.ndarray:
        """Detached class probabilities (per class group they sum to 1)."""
        z = self.logits.data
        if self.mode == EXCLUSIVE:
            e = np.exp(z - z.max(axis=-1, keepdims=True))
            return e / e.sum(axis=-1, keepdims=True)
        return 1.0 / (1.0 + np.exp(-z))


def reparam_sample(g: DiagGaussian, noise: np.ndarray) -> Tensor:
    """mu + sigma * noise; differentiable w.r.t. mu and log_var."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != g.mu.shape:
        raise ValueError(f"noise shape {noise.shape} does not match {g.mu.shape}")
    return g.mu + g.sigma() * Tensor(noise)


def kl_diag_gaussians(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p), summed over the trailing dimension."""
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: {q.dim} vs {p.dim}")
    diff = q.mu - p.mu
    term = (p.log_var - q.log_var) * 0.5 \
        + (q.log_var.exp() + diff * diff) * (p.log_var * -1.0).exp() * 0.5 \
        - 0.5
    return term.sum(axis=-1)


def gaussian_nll(x, g: DiagGaussian) -> Tensor:
    """Negative log density of x under g, summed over the trailing dimension."""
    x = _lift(x)
    if x.shape[-1] != g.dim:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {g.dim}")
    diff = x - g.mu
    term = 0.5 * LOG_2PI + g.log_var * 0.5 + diff * diff * (g.log_var * -1.0).exp() * 0.5
    return term.sum(axis=-1)


def _clamped_probs(d: CategoricalDist) -> Tensor:
    if d.mode == EXCLUSIVE:
        p = log_softmax(d.logits).exp()
    else:
        p = d.logits.sigmoid()
    return p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)


def categorical_neg_entropy(d: CategoricalDist) -> Tensor:
    """Sum of q(y) log q(y); <= 0, maximal (0) for a deterministic q."""
    p = _clamped_probs(d)
    if d.mode == EXCLUSIVE:
        return (p * p.log()).sum(axis=-1)
    q = 1.0 - p
    return (p * p.log() + q * q.log()).sum(axis=-1)


def categorical_cross_entropy(d: CategoricalDist, y) -> Tensor:
    """-log q(y), summed over attribute groups. y: one-hot or {0,1}^k."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != d.logits.shape:
        raise ValueError(f"label shape {y.shape} does not match logits {d.logits.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    if d.mode == EXCLUSIVE and not np.allclose(y.sum(axis=-1), 1.0):
        raise ValueError("exclusive mode expects one-hot labels")
    p = _clamped_probs(d)
    yt = Tensor(y)
    if d.mode == EXCLUSIVE:
        return -(yt * p.log()).sum(axis=-1)
    return -(yt * p.log() + (1.0 - yt) * (1.0 - p).log()).sum(axis=-1)
