"""Accordance maps, ground-truth and predicted superpixel affinity graphs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import autodiff as ad
from .scene import LabeledScene, SuperpixelMap


class ResolutionError(ValueError):
    pass


@dataclass
class AffinityGraph:
    affinity: np.ndarray     # N x N
    foreground: np.ndarray   # N booleans
    kind: str                # "ground_truth" or "predicted"

    @property
    def n(self) -> int:
        return self.affinity.shape[0]


def accordance_map(scene: LabeledScene) -> np.ndarray:
    """Per-pixel person id, 0 on background."""
    return scene.instance_map()


def majority_vote(values, groups, n_groups) -> np.ndarray:
    """Most frequent value per group.

    Ties go to the smallest non-zero value; zero only wins when it is the
    unique most frequent value.
    """
    values = np.asarray(values).ravel()
    groups = np.asarray(groups).ravel()
    n_vals = int(values.max()) + 1 if values.size else 1
    counts = np.zeros((n_groups, n_vals), dtype=np.int64)
    np.add.at(counts, (groups, values), 1)
    best = counts.max(axis=1)
    winner = np.zeros(n_groups, dtype=np.int64)
    if n_vals > 1:
        fg = counts[:, 1:]
        hit = fg == best[:, None]
        has = hit.any(axis=1) & (best > 0)
        winner[has] = np.argmax(hit[has], axis=1) + 1
    return winner


def superpixel_majority(m, sp: SuperpixelMap) -> np.ndarray:
    m = np.asarray(m)
    if m.shape != sp.assignment.shape:
        raise ValueError(f"accordance map {m.shape} and superpixels {sp.assignment.shape} differ")
    return majority_vote(m, sp.assignment, sp.n)


def gt_affinity(sigma_gt, n: int | None = None) -> AffinityGraph:
    sigma = np.asarray(sigma_gt, dtype=np.int64)
    if n is not None and sigma.size != n:
        raise ValueError(f"expected {n} superpixel ids, got {sigma.size}")
    fg = sigma > 0
    a = ((sigma[:, None] == sigma[None, :]) & fg[:, None]).astype(np.float64)
    return AffinityGraph(a, fg, "ground_truth")


def downsample_nearest(sp: SuperpixelMap, out_shape) -> np.ndarray:
    """Superpixel ids sampled at the centres of an ``out_shape`` grid."""
    h, w = sp.assignment.shape
    ho, wo = out_shape
    ys = np.minimum(((np.arange(ho) + 0.5) * h / ho).astype(int), h - 1)
    xs = np.minimum(((np.arange(wo) + 0.5) * w / wo).astype(int), w - 1)
    return sp.assignment[np.ix_(ys, xs)]


def pooling_matrix(sp: SuperpixelMap, feature_shape, alignment: str = "area") -> np.ndarray:
    """N x (H'' W'') matrix whose rows average feature cells over one superpixel.

    ``alignment="area"`` weights each feature cell by the number of image
    pixels of the superpixel that fall into it, which is the superpixel mean
    of the nearest-upsampled feature map. ``alignment="nearest"`` first
    downsamples the superpixel map by nearest neighbour and averages the
    cells it keeps; a superpixel that vanishes raises ResolutionError.
    """
    ho, wo = feature_shape
    h, w = sp.assignment.shape
    if alignment == "nearest":
        small = downsample_nearest(sp, (ho, wo)).ravel()
        counts = np.bincount(small, minlength=sp.n)
        if (counts == 0).any():
            missing = np.flatnonzero(counts == 0)
            raise ResolutionError(f"{missing.size} superpixels vanish at feature resolution {ho}x{wo}")
        pool = np.zeros((sp.n, ho * wo))
        pool[small, np.arange(ho * wo)] = 1.0
        return pool / counts[:, None]
    if alignment != "area":
        raise ValueError(f"unknown alignment {alignment!r}")
    cy = np.minimum((np.arange(h) * ho) // h, ho - 1)
    cx = np.minimum((np.arange(w) * wo) // w, wo - 1)
    cell = (cy[:, None] * wo + cx[None, :]).ravel()
    pool = np.zeros((sp.n, ho * wo))
    np.add.at(pool, (sp.assignment.ravel(), cell), 1.0)
    sizes = pool.sum(axis=1)
    if (sizes == 0).any():
        raise ResolutionError("empty superpixel")
    return pool / sizes[:, None]


def pool_features(features, pool) -> ad.Var:
    """Superpixel means of an H'' x W'' x C feature map (differentiable)."""
    f = ad.const(features)
    flat = ad.reshape(f, (-1, f.shape[-1]))
    return ad.matmul(pool, flat)


def predicted_affinity_var(features, pool, theta: float = 1.0) -> ad.Var:
    if theta <= 0:
        raise ValueError("theta must be positive")
    return ad.gaussian_kernel(pool_features(features, pool), theta)


def predicted_affinity(features, sp: SuperpixelMap, theta: float = 1.0,
                       alignment: str = "area") -> AffinityGraph:
    features = np.asarray(features, dtype=np.float64)
    pool = pooling_matrix(sp, features.shape[:2], alignment)
    a = predicted_affinity_var(features, pool, theta).value
    return AffinityGraph(a, np.ones(sp.n, dtype=bool), "predicted")
