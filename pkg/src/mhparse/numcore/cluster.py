from __future__ import annotations

import numpy as np


def farthest_point_init(points, k, rng):
    n = points.shape[0]
    centers = [int(rng.integers(n))]
    d2 = ((points - points[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        centers.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[centers].copy()


def wcss(points, labels, centers=None) -> float:
    """Within-cluster sum of squares; centers default to the cluster means."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if centers is None:
        centers = np.zeros((int(labels.max()) + 1, points.shape[1]))
        for c in np.unique(labels):
            centers[c] = points[labels == c].mean(axis=0)
    return float(((points - centers[labels]) ** 2).sum())


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, return_history: bool = False):
    """Lloyd's k-means with deterministic farthest-point seeding.

    The first center is drawn from ``seed``; every further center is the
    point farthest from the centers chosen so far. A cluster that empties
    out is re-seeded with the point farthest from its current center.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = farthest_point_init(points, k, rng)
    labels = np.full(n, -1)
    history = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2[np.arange(n), new]))
            new[far] = c
            counts = np.bincount(new, minlength=k)
        history.append(wcss(points, new, centers))
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
        history.append(wcss(points, labels, centers))
    if return_history:
        return labels, history
    return labels
