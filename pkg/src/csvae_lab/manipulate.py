"""Attribute switching and W-subspace exploration.

Each model kind gets its own switching function: the VAE translates latent
codes by class-mean differences, the conditional kinds decode under a
rescaled one-hot label, and the subspace model decodes the unchanged z next
to a chosen point of W. Switching always decodes posterior means, never
samples, so outputs are reproducible.

For a single attribute, "switch class i to j" degenerates to toggling the
attribute state; the functions below therefore speak of attribute indices
and target states.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .data import LabeledDataset
from .errors import DataError
from .models import Model, ModelSpec, decode, encode


def class_latent_mean(model: Model, dataset: LabeledDataset, attr: int,
                      state: int = 1, split: int | None = None) -> np.ndarray:
    """Mean encoded z over the examples with y[attr] == state."""
    sub = dataset.subset(split) if split is not None else dataset
    mask = sub.y[:, attr] == state
    if not mask.any():
        raise DataError(f"no examples with attribute {attr} == {state}")
    y = sub.y[mask] if model.spec.kind != "vae" else None
    code = encode(model, sub.x[mask], y)
    return code.z.mean(axis=0)


def switch_vae(model: Model, x: np.ndarray, i: int, j: int, means: dict) -> np.ndarray:
    """Translate the encoding by means[j] - means[i] and decode."""
    if model.spec.kind != "vae":
        raise ValueError("switch_vae requires a vae model")
    z = encode(model, x).z
    translation = np.asarray(means[j], dtype=np.float64) - np.asarray(means[i], dtype=np.float64)
    return decode(model, z + translation).mu.data


def switch_condvae(model: Model, x: np.ndarray, y: np.ndarray, j: int, p: float) -> np.ndarray:
    """Encode under the true labels, decode under p * onehot(j)."""
    if model.spec.kind not in ("condvae", "condvae_info"):
        raise ValueError("switch_condvae requires a condvae or condvae_info model")
    x = np.asarray(x)
    z = encode(model, x, y).z
    target = np.zeros((x.shape[0], model.spec.k))
    target[:, j] = p
    return decode(model, z, y=target).mu.data


def switch_csvae(model: Model, x: np.ndarray, p: np.ndarray,
                 keep_blocks: tuple = (), y: np.ndarray | None = None) -> np.ndarray:
    """Decode (z-mean of x, p). Off-target blocks of p are zero (the off-prior
    mean); blocks listed in keep_blocks retain the input's encoded value
    instead, which preserves unrelated attributes during joint manipulation
    (this variant needs the input's true labels y for the w-encoder)."""
    spec = model.spec
    if spec.kind != "csvae":
        raise ValueError("switch_csvae requires a csvae model")
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (spec.w_dim,):
        raise ValueError(f"p must have shape ({spec.w_dim},)")
    x = np.asarray(x)
    z = model.parts["enc_z"](model._xt(x), None).mu.data
    w = np.tile(p, (x.shape[0], 1))
    if keep_blocks:
        if y is None:
            raise ValueError("keep_blocks requires the input labels y")
        encoded_w = encode(model, x, y).w
        d = spec.w_dim_per_attr
        for blk in keep_blocks:
            w[:, blk * d:(blk + 1) * d] = encoded_w[:, blk * d:(blk + 1) * d]
    return decode(model, z, w=w).mu.data


def embed_block(spec: ModelSpec, attr: int, point) -> np.ndarray:
    """Place a W_i point into a full W vector, zeros in every other block."""
    point = np.asarray(point, dtype=np.float64).reshape(-1)
    if point.size != spec.w_dim_per_attr:
        raise ValueError(f"block point must have {spec.w_dim_per_attr} entries")
    full = np.zeros(spec.w_dim)
    d = spec.w_dim_per_attr
    full[attr * d:(attr + 1) * d] = point
    return full


# -- W-grid -----------------------------------------------------------------------


@dataclass
class WGrid:
    attr: int
    center: np.ndarray
    half_extent: np.ndarray
    steps: tuple
    points: list  # full W vectors, exactly zero outside block `attr`


def w_grid(spec: ModelSpec, attr: int, steps, extent=None, center=None) -> WGrid:
    """Axis-aligned lattice in W_attr centred on the attr-on prior mean.

    extent is the half-width per dimension (default two prior sigmas);
    steps may be an int or a per-dimension tuple. steps == 1 yields the
    centre point alone. center overrides the default grid centre.
    """
    d = spec.w_dim_per_attr
    steps = (steps,) * d if np.isscalar(steps) else tuple(steps)
    if len(steps) != d or any(s < 1 for s in steps):
        raise ValueError("steps must be positive, one per W_i dimension")
    if center is None:
        center = np.full(d, spec.prior_mean_y1)
    else:
        center = np.broadcast_to(np.asarray(center, dtype=np.float64), (d,)).copy()
    if extent is None:
        extent = 2.0 * spec.prior_sigma_y1
    half = np.full(d, float(extent)) if np.isscalar(extent) else np.asarray(extent, float)
    axes = [np.linspace(c - h, c + h, s) if s > 1 else np.array([c])
            for c, h, s in zip(center, half, steps)]
    points = [embed_block(spec, attr, np.array(combo)) for combo in product(*axes)]
    return WGrid(attr=attr, center=center, half_extent=half, steps=steps, points=points)


# -- principal components in W_i ------------------------------------------------------


def eig2x2_symmetric(m: np.ndarray):
    """Closed-form eigendecomposition of a symmetric 2x2 matrix.

    Returns (values desc, column eigenvectors)."""
    a, b, c = m[0, 0], m[0, 1], m[1, 1]
    half_tr = 0.5 * (a + c)
    disc = np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
    lo, hi = half_tr - disc, half_tr + disc
    if abs(b) < 1e-300 * max(1.0, abs(a), abs(c)):
        vecs = np.eye(2) if a >= c else np.eye(2)[:, ::-1]
        return np.array([max(a, c), min(a, c)]), vecs
    v1 = np.array([hi - c, b])
    v1 /= np.linalg.norm(v1)
    v2 = np.array([-v1[1], v1[0]])
    return np.array([hi, lo]), np.column_stack([v1, v2])


def fit_principal_components(points: np.ndarray, n_components: int):
    """Principal directions of a point cloud via its sample covariance.

    Returns (components (m, d) rows, variances (m,), mean (d,)); m may fall
    below n_components when the covariance is rank deficient."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < n_components + 1:
        raise ValueError("need at least n_components + 1 points")
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / (points.shape[0] - 1)
    if cov.shape == (2, 2):
        values, vectors = eig2x2_symmetric(cov)
    else:
        values, vectors = np.linalg.eigh(cov)
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
    tol = max(1e-12, 1e-9 * max(values.max(), 0.0))
    rank = int(np.sum(values > tol))
    m = max(1, min(n_components, rank))  # rank deficiency returns fewer, never zero
    return vectors[:, :m].T, np.maximum(values[:m], 0.0), mean


@dataclass
class PcaBasis:
    attr: int
    components: np.ndarray   # (m, w_dim_per_attr), orthonormal rows
    variances: np.ndarray    # (m,), non-increasing
    mean: np.ndarray         # (w_dim_per_attr,)


def w_pca(model: Model, dataset: LabeledDataset, attr: int, n_components: int,
          split: int | None = None) -> PcaBasis:
    """Principal components of the encoded W_attr block over y[attr] == 1."""
    if model.spec.kind != "csvae":
        raise ValueError("w_pca requires a csvae model")
    sub = dataset.subset(split) if split is not None else dataset
    mask = sub.y[:, attr] == 1
    if mask.sum() < n_components + 1:
        raise DataError(f"need more than {n_components} examples with attribute {attr} on")
    code = encode(model, sub.x[mask], sub.y[mask])
    d = model.spec.w_dim_per_attr
    block = code.w[:, attr * d:(attr + 1) * d]
    comps, variances, mean = fit_principal_components(block, n_components)
    return PcaBasis(attr=attr, components=comps, variances=variances, mean=mean)


def pca_sampling_points(spec: ModelSpec, basis: PcaBasis, coefficients=(1.0, 2.0)) -> list:
    """Linear-combination points mean +- c*sqrt(var)*component, embedded in W."""
    points = [embed_block(spec, basis.attr, basis.mean)]
    for comp, var in zip(basis.components, basis.variances):
        for c in coefficients:
            offset = c * np.sqrt(var) * comp
            points.append(embed_block(spec, basis.attr, basis.mean + offset))
            points.append(embed_block(spec, basis.attr, basis.mean - offset))
    return points
