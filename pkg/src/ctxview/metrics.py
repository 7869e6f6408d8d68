"""Viewpoint-aware detection metrics.

MPPE is the mean per-class recall of viewpoint predictions on matched
objects; AP and AVP integrate the all-points interpolated precision/recall
curve, AVP additionally requiring the predicted bin to be right.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scene import iou, match_indices


def confusion_matrix(true_bins, pred_bins, K):
    """K x K counts, rows true bin, columns predicted bin."""
    cm = np.zeros((K, K), dtype=np.int64)
    t = np.asarray(true_bins, dtype=np.int64)
    p = np.asarray(pred_bins, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("true and predicted bins differ in length")
    if t.size and (t.min() < 0 or p.min() < 0 or t.max() >= K or p.max() >= K):
        raise ValueError(f"bins must lie in [0, {K})")
    np.add.at(cm, (t, p), 1)
    return cm


def mppe(cm):
    """Mean of the row-normalized diagonal over rows with at least one count."""
    cm = np.asarray(cm, dtype=float)
    support = cm.sum(axis=1)
    rows = support > 0
    if not rows.any():
        raise ValueError("confusion matrix has no true instances")
    return float(np.mean(np.diag(cm)[rows] / support[rows]))


def _ranked(scenes):
    ranked = [(-h.score, s.image_id, k) for s in scenes for k, h in enumerate(s.hypotheses)]
    ranked.sort()
    return ranked


def average_precision(scenes, iou_threshold=0.5, require_viewpoint=True):
    """AP over all scenes; with ``require_viewpoint`` this is AVP.

    Hypotheses are ranked by score (ties by image id, then list position) and
    matched greedily in that order.  A hypothesis whose best same-category
    annotation reaches the threshold and is unclaimed claims it; it counts as
    a true positive only if the bin also matches (for AVP).
    """
    n_gt = sum(len(s.annotations) for s in scenes)
    if n_gt == 0:
        raise ValueError("no annotations to evaluate against")
    by_id = {s.image_id: s for s in scenes}
    claimed = {s.image_id: np.zeros(len(s.annotations), dtype=bool) for s in scenes}
    hits = []
    for _, image_id, k in _ranked(scenes):
        scene = by_id[image_id]
        h = scene.hypotheses[k]
        overlaps = np.array([iou(h.box, a.box) if a.category == h.category else -1.0
                             for a in scene.annotations])
        hit = False
        if overlaps.size:
            best = int(np.argmax(overlaps))
            if overlaps[best] >= iou_threshold and not claimed[image_id][best]:
                claimed[image_id][best] = True
                hit = not require_viewpoint or scene.annotations[best].viewpoint == h.viewpoint
        hits.append(hit)
    if not hits:
        return 0.0
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def avp(scenes, iou_threshold=0.5):
    return average_precision(scenes, iou_threshold, require_viewpoint=True)


def ap(scenes, iou_threshold=0.5):
    return average_precision(scenes, iou_threshold, require_viewpoint=False)


class ErrorKind(enum.Enum):
    CORRECT = "correct"
    NEARBY = "nearby"
    OPPOSITE = "opposite"
    OTHER = "other"


def classify_error(true_bin, pred_bin, K) -> ErrorKind:
    """Group a prediction by circular bin distance.

    Opposite means half a turn away, which only exists for even K.
    """
    delta = abs(int(true_bin) - int(pred_bin)) % K
    d = min(delta, K - delta)
    if d == 0:
        return ErrorKind.CORRECT
    if d == 1:
        return ErrorKind.NEARBY
    if K % 2 == 0 and d == K // 2:
        return ErrorKind.OPPOSITE
    return ErrorKind.OTHER


def default_split_threshold(scenes):
    if not scenes:
        raise ValueError("no scenes to derive a split threshold from")
    return int(round(np.mean([len(s.annotations) for s in scenes])))


def split_low_high(scenes, threshold=None):
    """Scenes with at most ``threshold`` annotations, and the rest.

    The threshold defaults to the rounded mean number of annotations.
    Returns ``(low, high, threshold)``.
    """
    if threshold is None:
        threshold = default_split_threshold(scenes)
    low = [s for s in scenes if len(s.annotations) <= threshold]
    high = [s for s in scenes if len(s.annotations) > threshold]
    return low, high, threshold


def matched_pairs(scenes, iou_threshold=0.5):
    """(true bin, predicted bin) for every hypothesis matched to an annotation."""
    pairs = []
    for s in scenes:
        for h, a in zip(s.hypotheses, match_indices(s.hypotheses, s.annotations, iou_threshold)):
            if a is not None:
                pairs.append((s.annotations[a].viewpoint, h.viewpoint))
    return pairs


@dataclass
class EvalReport:
    K: int
    n_images: int
    n_annotations: int
    n_hypotheses: int
    n_matched: int
    mppe: Optional[float]
    ap: Optional[float]
    avp: Optional[float]
    confusion: list
    taxonomy: dict
    split: Optional[dict] = None
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("K", "n_images", "n_annotations", "n_hypotheses",
                                             "n_matched", "mppe", "ap", "avp", "confusion", "taxonomy",
                                             "notes")}
        if self.split is not None:
            out["split"] = {
                "threshold": self.split["threshold"],
                "low": self.split["low"].to_dict(),
                "high": self.split["high"].to_dict(),
            }
        return out


def evaluate(scenes, K, iou_threshold=0.5, split_threshold=None, with_split=True) -> EvalReport:
    """Metrics for scenes whose hypotheses carry predicted bins.

    Metrics without support (no annotations, no matched hypotheses) are None.
    """
    pairs = matched_pairs(scenes, iou_threshold)
    cm = confusion_matrix([t for t, _ in pairs], [p for _, p in pairs], K)
    taxonomy = {kind.value: 0 for kind in ErrorKind}
    for t, p in pairs:
        taxonomy[classify_error(t, p, K).value] += 1
    n_gt = sum(len(s.annotations) for s in scenes)
    report = EvalReport(
        K=K,
        n_images=len(scenes),
        n_annotations=n_gt,
        n_hypotheses=sum(len(s.hypotheses) for s in scenes),
        n_matched=len(pairs),
        mppe=mppe(cm) if pairs else None,
        ap=ap(scenes, iou_threshold) if n_gt else None,
        avp=avp(scenes, iou_threshold) if n_gt else None,
        confusion=cm.tolist(),
        taxonomy=taxonomy,
        notes={"iou_threshold": iou_threshold, "ap_interpolation": "all-points",
               "avp_duplicates": "bin-incorrect match claims its annotation"},
    )
    if with_split and scenes:
        low, high, thr = split_low_high(scenes, split_threshold)
        report.split = {
            "threshold": thr,
            "low": evaluate(low, K, iou_threshold, with_split=False),
            "high": evaluate(high, K, iou_threshold, with_split=False),
        }
    return report
