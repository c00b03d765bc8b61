"""Spectral clustering of foreground superpixels into person instances."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityGraph, majority_vote
from .numcore import kmeans, sym_eigs
from .parsernet import ParsingMap, predicted_count, upsample_bilinear
from .scene import (InvariantError, SceneFormatError, SuperpixelMap, _loads, _require,
                    rle_decode, rle_encode, superpixel_adjacency)


@dataclass
class InstanceParsing:
    instance_ids: np.ndarray    # H x W person ids, 0 background
    categories: np.ndarray      # H x W category ids
    confidences: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.confidences)

    def person_masks(self):
        return [self.instance_ids == i for i in range(1, self.count + 1)]

    def validate(self):
        ids = self.instance_ids
        if not np.array_equal(ids > 0, self.categories > 0):
            raise ValueError("instance and category foreground disagree")
        present = np.unique(ids[ids > 0])
        if not np.array_equal(present, np.arange(1, len(self.confidences) + 1)):
            raise ValueError("instance ids are not contiguous or confidences are missing")
        return self


def spectral_embedding(affinity, k: int) -> np.ndarray:
    """Row-normalised eigenvectors of the k smallest eigenvalues of ``I - D^-1/2 A D^-1/2``."""
    a = np.asarray(affinity, dtype=np.float64)
    d = a.sum(axis=1)
    dinv = np.where(d > 0, 1.0 / np.sqrt(np.maximum(d, 1e-300)), 0.0)
    lap = np.eye(a.shape[0]) - dinv[:, None] * a * dinv[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = sym_eigs(lap, k)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs / np.where(norms > 0, norms, 1.0)


def spectral_clusters(affinity, k: int, seed: int = 0) -> np.ndarray:
    """Cluster labels in ``[0, k)`` for the nodes of a dense affinity matrix."""
    n = affinity.shape[0]
    k = int(min(max(k, 1), n))
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    return kmeans(spectral_embedding(affinity, k), k, seed=seed)


def _relabel_contiguous(labels):
    """Map cluster labels to 1..K in order of first appearance."""
    out = np.zeros_like(labels)
    seen = {}
    for i, v in enumerate(labels):
        if v not in seen:
            seen[v] = len(seen) + 1
        out[i] = seen[v]
    return out


def pixel_categories(parsing, image_hw) -> np.ndarray:
    """Per-pixel argmax category; accepts a ParsingMap or an H x W label map."""
    if isinstance(parsing, ParsingMap):
        probs = upsample_bilinear(parsing.probabilities, image_hw)
        return np.argmax(probs, axis=-1)
    return np.asarray(parsing, dtype=np.int64)


def foreground_probability(parsing, image_hw) -> np.ndarray:
    if isinstance(parsing, ParsingMap):
        return np.clip(upsample_bilinear(parsing.foreground_probability(), image_hw), 0.0, 1.0)
    return (np.asarray(parsing) > 0).astype(np.float64)


def cluster_superpixels(pred: AffinityGraph, categories, sp: SuperpixelMap, count_pred: float, seed: int = 0):
    """Per-superpixel instance ids (0 = background) from the affinity graph."""
    node_cat = majority_vote(categories, sp.assignment, sp.n)
    fg = np.flatnonzero(node_cat > 0)
    ids = np.zeros(sp.n, dtype=np.int64)
    if fg.size == 0:
        return ids
    k = min(predicted_count(count_pred), fg.size)
    sub = pred.affinity[np.ix_(fg, fg)]
    labels = spectral_clusters(sub, k, seed)
    ids[fg] = _relabel_contiguous(labels)
    return ids


def fuse(instance_ids, categories, sp: SuperpixelMap | None = None, q=None) -> InstanceParsing:
    """Combine a pixel instance map with a pixel category map.

    A pixel keeps its instance only where the category map is foreground.
    Foreground pixels without an instance join the instance of the
    neighbouring superpixel that shares the longest border with theirs;
    with no such neighbour they become background. Instance ids are then
    made contiguous and each instance is scored by the mean of ``q`` over
    its pixels.
    """
    inst = np.asarray(instance_ids, dtype=np.int64).copy()
    cats = np.asarray(categories, dtype=np.int64)
    inst[cats == 0] = 0
    orphan = (cats > 0) & (inst == 0)
    if orphan.any() and sp is not None:
        node_inst = majority_vote(inst, sp.assignment, sp.n)
        adj = superpixel_adjacency(sp)
        for s in np.unique(sp.assignment[orphan]):
            neigh = np.flatnonzero(adj[s] > 0)
            neigh = neigh[node_inst[neigh] > 0]
            if neigh.size == 0:
                continue
            border = {}
            for t in neigh:
                border[node_inst[t]] = border.get(node_inst[t], 0) + adj[s, t]
            best = max(sorted(border), key=lambda i: border[i])
            m = orphan & (sp.assignment == s)
            inst[m] = best
    present = np.unique(inst[inst > 0])
    remap = np.zeros(int(inst.max()) + 1 if inst.size else 1, dtype=np.int64)
    remap[present] = np.arange(1, present.size + 1)
    inst = remap[inst]
    out_cats = np.where(inst > 0, cats, 0)
    q = np.ones(inst.shape) if q is None else np.asarray(q, dtype=np.float64)
    conf = [float(q[inst == i].mean()) for i in range(1, present.size + 1)]
    return InstanceParsing(inst, out_cats, conf)


def cluster_instances(pred: AffinityGraph, parsing, sp: SuperpixelMap, count_pred: float,
                      seed: int = 0) -> InstanceParsing:
    """Instance-aware parsing from a predicted affinity graph and the global parsing.

    ``parsing`` may be a ParsingMap (probabilities are upsampled to image
    size) or an H x W category map, e.g. a ground-truth one.
    """
    if count_pred < 1:
        raise ValueError("count_pred must be >= 1")
    hw = sp.assignment.shape
    cats = pixel_categories(parsing, hw)
    q = foreground_probability(parsing, hw)
    node_ids = cluster_superpixels(pred, cats, sp, count_pred, seed)
    result = fuse(node_ids[sp.assignment], cats, sp, q)
    result.meta["requested_k"] = predicted_count(count_pred)
    result.meta["superpixel_ids"] = node_ids
    return result


def adjusted_rand_index(a, b) -> float:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return (x * (x - 1) / 2.0).sum()

    n = a.size
    sum_ij = comb2(table)
    sum_a = comb2(table.sum(axis=1))
    sum_b = comb2(table.sum(axis=0))
    total = n * (n - 1) / 2.0
    expected = sum_a * sum_b / total if total else 0.0
    max_idx = 0.5 * (sum_a + sum_b)
    if max_idx == expected:
        return 1.0
    return float((sum_ij - expected) / (max_idx - expected))


# ------------------------------------------------------------------ files

def prediction_to_dict(pred: InstanceParsing) -> dict:
    h, w = pred.instance_ids.shape
    meta = {k: v for k, v in pred.meta.items() if isinstance(v, (int, float, str, bool, list, dict))}
    return {
        "format": "mhparse-prediction",
        "version": 1,
        "height": int(h),
        "width": int(w),
        "person_count": pred.count,
        "part_labels": rle_encode(pred.categories),
        "person_masks": [rle_encode(m.astype(np.int64)) for m in pred.person_masks()],
        "confidences": [float(c) for c in pred.confidences],
        "meta": meta,
    }


def prediction_from_dict(doc, path=None) -> InstanceParsing:
    if _require(doc, "format", str, path) != "mhparse-prediction":
        raise SceneFormatError("not a prediction file", path=path)
    h = _require(doc, "height", int, path)
    w = _require(doc, "width", int, path)
    conf = _require(doc, "confidences", list, path)
    try:
        cats = rle_decode(_require(doc, "part_labels", list, path), (h, w), "part_labels")
        masks = [rle_decode(m, (h, w), f"person_masks[{i}]").astype(bool)
                 for i, m in enumerate(_require(doc, "person_masks", list, path))]
    except SceneFormatError as exc:
        raise SceneFormatError(str(exc), path=path) from None
    if len(conf) != len(masks) or not all(isinstance(c, (int, float)) and 0.0 <= c <= 1.0 for c in conf):
        raise InvariantError("need one confidence in [0, 1] per person mask", path=path)
    ids = np.zeros((h, w), dtype=np.int64)
    for i, m in enumerate(masks, start=1):
        if (ids[m] > 0).any():
            raise InvariantError("person masks overlap", path=path)
        ids[m] = i
    pred = InstanceParsing(ids, cats, [float(c) for c in conf], doc.get("meta", {}))
    try:
        pred.validate()
    except ValueError as exc:
        raise InvariantError(str(exc), path=path) from None
    return pred


def save_prediction(pred: InstanceParsing, path) -> None:
    with open(path, "w") as fh:
        json.dump(prediction_to_dict(pred), fh, separators=(",", ":"))
        fh.write("\n")


def load_prediction(path) -> InstanceParsing:
    with open(path) as fh:
        text = fh.read()
    return prediction_from_dict(_loads(text, path), path)


def from_scene(scene, confidence: float = 1.0) -> InstanceParsing:
    """Ground-truth annotations expressed as a prediction."""
    ids = scene.instance_map()
    return InstanceParsing(ids, np.where(ids > 0, scene.part_labels, 0),
                           [confidence] * scene.person_count).validate()
