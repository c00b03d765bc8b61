"""Inference on one scene: parsing, affinity, clustering, fusion and CRF refinement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import crf, parsernet
from .affinity import AffinityGraph, gt_affinity, predicted_affinity, superpixel_majority
from .instance import InstanceParsing, cluster_instances, foreground_probability, fuse, pixel_categories
from .parsernet import ModelConfig
from .scene import LabeledScene, make_superpixels

ORACLES = ("none", "affinity", "seg", "all")


@dataclass(frozen=True)
class ClusteringConfig:
    superpixel_size: int = 32
    seed: int = 0
    gt_count: bool = False     # use the annotated person count instead of the count head


@dataclass
class InferenceResult:
    parsing: InstanceParsing
    affinity: AffinityGraph
    meta: dict = field(default_factory=dict)


def infer_scene(gen: dict, scene: LabeledScene, model_cfg: ModelConfig = ModelConfig(),
                cluster_cfg: ClusteringConfig = ClusteringConfig(), crf_cfg: crf.CrfConfig | None = None,
                oracle: str = "none", theta: float = 1.0) -> InferenceResult:
    """Instance-aware parsing of ``scene.image``.

    ``oracle`` swaps predicted inputs for annotated ones: ``affinity`` uses
    the ground-truth superpixel affinity, ``seg`` the ground-truth part
    labels as global parsing, ``all`` both. Annotations are otherwise unused.
    """
    if oracle not in ORACLES:
        raise ValueError(f"oracle must be one of {ORACLES}")
    parsing_map, feats, count = parsernet.forward(gen, scene.image, model_cfg)
    hw = scene.shape
    sp = make_superpixels(scene.image, cluster_cfg.superpixel_size)
    if oracle in ("affinity", "all"):
        graph = gt_affinity(superpixel_majority(scene.instance_map(), sp), sp.n)
    else:
        graph = predicted_affinity(feats, sp, theta)
    parsing = scene.part_labels if oracle in ("seg", "all") else parsing_map
    if cluster_cfg.gt_count or oracle == "all":
        count = float(scene.person_count)
    result = cluster_instances(graph, parsing, sp, max(count, 1.0), cluster_cfg.seed)
    result.meta["count_pred"] = float(count)
    result.meta["superpixels"] = sp.n
    result.meta["oracle"] = oracle
    if crf_cfg is not None and result.count > 0:
        q = foreground_probability(parsing, hw)
        up = parsernet.upsample_bilinear(feats, hw)
        cats = pixel_categories(parsing, hw)
        problem = crf.build_problem(q, result.instance_ids, result.count, up, scene.image)
        labels = crf.mean_field(problem, crf_cfg)
        refined = fuse(labels, cats, sp, q)
        refined.meta.update(result.meta)
        refined.meta["refined"] = True
        result = refined
    result.meta.pop("superpixel_ids", None)
    return InferenceResult(result, graph, {"count_pred": float(count)})


def dump_affinity(path, graph: AffinityGraph) -> None:
    np.savetxt(path, graph.affinity, delimiter=",", fmt="%.6g")
