"""Human-centric instance parsing metrics: AP^p, AP^p_vol, PCP and box closeness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import bounding_box

VOL_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def person_parts(masks, part_labels) -> list:
    """One part map per person: category ids inside the mask, 0 elsewhere."""
    labels = np.asarray(part_labels)
    return [np.where(np.asarray(m, dtype=bool), labels, 0) for m in masks]


def category_ious(pred, gt) -> dict:
    """Per-category IOU over categories present in either part map (background excluded)."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    cats = np.union1d(np.unique(pred), np.unique(gt))
    out = {}
    for c in cats[cats > 0]:
        p, g = pred == c, gt == c
        out[int(c)] = float((p & g).sum() / (p | g).sum())
    return out


def part_overlap(pred, gt) -> float:
    """Mean per-category part IOU between two person part maps."""
    ious = category_ious(pred, gt)
    return float(np.mean(list(ious.values()))) if ious else 0.0


@dataclass
class MatchResult:
    pred_gt: list            # matched GT index or None, per prediction
    pred_overlap: list       # best overlap seen at match time, per prediction
    gt_matched: list

    @property
    def true_positives(self):
        return [g is not None for g in self.pred_gt]


def _order(confidences):
    conf = np.asarray(confidences, dtype=np.float64)
    return np.argsort(-conf, kind="stable")


def match(preds, confidences, gts, threshold: float, overlaps=None) -> MatchResult:
    """Greedy matching in order of decreasing confidence.

    Each prediction takes the unmatched GT person with the highest part
    overlap (lowest index on ties) if that overlap reaches ``threshold``.
    """
    if overlaps is None:
        overlaps = np.array([[part_overlap(p, g) for g in gts] for p in preds]).reshape(len(preds), len(gts))
    pred_gt = [None] * len(preds)
    pred_ov = [0.0] * len(preds)
    taken = np.zeros(len(gts), dtype=bool)
    for i in _order(confidences):
        if taken.all():
            continue
        row = np.where(taken, -np.inf, overlaps[i])
        j = int(np.argmax(row))
        pred_ov[i] = float(row[j])
        if row[j] >= threshold:
            pred_gt[i] = j
            taken[j] = True
    return MatchResult(pred_gt, pred_ov, taken.tolist())


def average_precision(tp_flags, confidences, n_gt: int) -> float:
    """All-points interpolated area under the precision/recall curve."""
    if n_gt == 0:
        return 1.0 if len(tp_flags) == 0 else 0.0
    if len(tp_flags) == 0:
        return 0.0
    tp = np.asarray(tp_flags, dtype=np.float64)[_order(confidences)]
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float((envelope * tp).sum() / n_gt)


@dataclass
class SceneEval:
    """Part maps and confidences for one image."""
    preds: list
    confidences: list
    gts: list

    def overlaps(self):
        return np.array([[part_overlap(p, g) for g in self.gts] for p in self.preds]).reshape(
            len(self.preds), len(self.gts))


def _as_list(scenes):
    return [scenes] if isinstance(scenes, SceneEval) else list(scenes)


def _pooled_matches(scenes, threshold):
    flags, conf, n_gt, per = [], [], 0, []
    for s in scenes:
        ov = s.overlaps()
        m = match(s.preds, s.confidences, s.gts, threshold, ov)
        flags += m.true_positives
        conf += list(s.confidences)
        n_gt += len(s.gts)
        per.append(m)
    return flags, conf, n_gt, per


def ap_p(scenes, threshold: float = 0.5) -> float:
    """AP^p over one or more scenes; predictions are pooled across scenes."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    flags, conf, n_gt, _ = _pooled_matches(_as_list(scenes), threshold)
    return average_precision(flags, conf, n_gt)


def ap_p_vol(scenes) -> float:
    scenes = _as_list(scenes)
    return float(np.mean([ap_p(scenes, t) for t in VOL_THRESHOLDS]))


def pcp(scenes, threshold: float = 0.5) -> float:
    """Share of correctly parsed categories per GT person, missed persons scoring 0."""
    scenes = _as_list(scenes)
    scores = []
    for s in scenes:
        m = match(s.preds, s.confidences, s.gts, threshold, s.overlaps())
        per_gt = [0.0] * len(s.gts)
        for i, j in enumerate(m.pred_gt):
            if j is None:
                continue
            gt_cats = [c for c in np.unique(s.gts[j]) if c > 0]
            if not gt_cats:
                continue
            ious = category_ious(s.preds[i], s.gts[j])
            per_gt[j] = sum(ious[int(c)] > threshold for c in gt_cats) / len(gt_cats)
        scores += per_gt
    if not scores:
        n_pred = sum(len(s.preds) for s in scenes)
        return 1.0 if n_pred == 0 else 0.0
    return float(np.mean(scores))


def box_iou(a, b) -> float:
    """IOU of inclusive pixel boxes ``(y0, x0, y1, x1)``."""
    iy = min(a[2], b[2]) - max(a[0], b[0]) + 1
    ix = min(a[3], b[3]) - max(a[1], b[1]) + 1
    inter = max(iy, 0) * max(ix, 0)
    area = lambda r: (r[2] - r[0] + 1) * (r[3] - r[1] + 1)
    return inter / float(area(a) + area(b) - inter)


def average_box_iou(masks) -> float:
    """Mean bounding-box IOU over unordered person pairs of one image (0 below two persons)."""
    boxes = [bounding_box(m) for m in masks]
    boxes = [b for b in boxes if b is not None]
    vals = [box_iou(boxes[i], boxes[j]) for i in range(len(boxes)) for j in range(i + 1, len(boxes))]
    return float(np.mean(vals)) if vals else 0.0


def mean_average_iou(scenes) -> float:
    """Dataset closeness statistic; ``scenes`` holds LabeledScenes or lists of person masks."""
    vals = [average_box_iou(getattr(s, "person_masks", s)) for s in scenes]
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class MetricReport:
    ap_p: dict
    ap_p_vol: float
    pcp: float
    pcp_threshold: float
    closeness: float
    per_scene: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"format": "mhparse-metrics", "version": 1,
                "ap_p": {f"{t:g}": v for t, v in self.ap_p.items()},
                "ap_p_vol": self.ap_p_vol, "pcp": self.pcp, "pcp_threshold": self.pcp_threshold,
                "closeness": self.closeness, "per_scene": self.per_scene}

    def table(self) -> str:
        """Plain-text table in percent, columns named like the usual AP^p report."""
        cols = [(f"AP^p_{t:g}", v) for t, v in self.ap_p.items()]
        cols += [("AP^p_vol", self.ap_p_vol), (f"PCP_{self.pcp_threshold:g}", self.pcp)]
        head = " | ".join(f"{name:>9}" for name, _ in cols)
        row = " | ".join(f"{100 * v:9.2f}" for _, v in cols)
        return f"{head}\n{'-' * len(head)}\n{row}\n"


def evaluate(scenes, names=None, thresholds=(0.5,), pcp_threshold: float = 0.5,
             gt_masks=None) -> MetricReport:
    """Full report over a list of SceneEval items."""
    scenes = _as_list(scenes)
    names = names or [str(i) for i in range(len(scenes))]
    per = []
    for name, s in zip(names, scenes):
        per.append({"scene": name, "predictions": len(s.preds), "persons": len(s.gts),
                    "ap_p": {f"{t:g}": ap_p(s, t) for t in thresholds},
                    "pcp": pcp(s, pcp_threshold)})
    closeness = mean_average_iou(gt_masks) if gt_masks is not None else \
        mean_average_iou([[g > 0 for g in s.gts] for s in scenes])
    return MetricReport({float(t): ap_p(scenes, t) for t in thresholds}, ap_p_vol(scenes),
                        pcp(scenes, pcp_threshold), pcp_threshold, closeness, per)
