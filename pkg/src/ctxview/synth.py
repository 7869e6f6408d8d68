"""Synthetic scenes with a planted relational rule, and brute-force oracles.

The planted rule mimics road lanes: objects sit in horizontal bands and
every object of a band shares that band's viewpoint.  With the default
narrow bands box heights come from a fixed range, so a neighbor's vertical
offset relative to the source height tells apart same-band and other-band
neighbors almost perfectly.  The perspective layout uses wide bands and
heights growing with the row, which leaves single relations ambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .scene import BBox, ObjectHypothesis, Scene, annotation, iou

SEQUENCE_LENGTH = 20


@dataclass(frozen=True)
class ScoreDist:
    mean: float
    std: float

    def sample(self, rng):
        return float(rng.normal(self.mean, self.std))


@dataclass(frozen=True)
class PlantedRule:
    K: int = 4
    # (y_low, y_high, viewpoint bin), in pixels
    lane_bands: tuple = ((154.0, 166.0, 0), (214.0, 226.0, 1), (274.0, 286.0, 2), (334.0, 346.0, 3))
    sigma: float = 1.0
    rho: float = 0.0
    fp_rate: float = 0.0
    tp_score: ScoreDist = ScoreDist(0.8, 0.1)
    mp_score: ScoreDist = ScoreDist(0.5, 0.15)
    fp_score: ScoreDist = ScoreDist(0.3, 0.15)
    # viewpoints drawn at random, ignoring the bands: relations carry no signal
    independent: bool = False
    min_objects: int = 2
    max_objects: int = 10
    height_range: tuple = (34.0, 42.0)
    # when set, box height grows linearly below this horizon row instead
    horizon: Optional[float] = None
    aspect: float = 1.6
    image_width: float = 1242.0
    category: str = "Car"

    def __post_init__(self):
        if not self.lane_bands:
            raise ValueError("planted rule needs at least one lane band")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.sigma < 0 or self.fp_rate < 0:
            raise ValueError("sigma and fp_rate must be nonnegative")
        if self.K < 2:
            raise ValueError(f"need at least 2 viewpoint bins, got K={self.K}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("object count range is empty")
        bands = sorted((float(lo), float(hi), int(b)) for lo, hi, b in self.lane_bands)
        for lo, hi, b in bands:
            if not lo < hi:
                raise ValueError(f"empty band ({lo}, {hi})")
            if not 0 <= b < self.K:
                raise ValueError(f"band viewpoint {b} outside [0, {self.K})")
        for (_, hi, _), (lo, _, _) in zip(bands, bands[1:]):
            if lo < hi:
                raise ValueError("lane bands overlap")
        object.__setattr__(self, "lane_bands", tuple(bands))

    @classmethod
    def with_bins(cls, K, top=160.0, spacing=60.0, half_width=6.0, **kw):
        """K bands ``spacing`` pixels apart, band k carrying viewpoint k."""
        bands = tuple((top + k * spacing - half_width, top + k * spacing + half_width, k)
                      for k in range(K))
        return cls(K=K, lane_bands=bands, **kw)

    @classmethod
    def perspective(cls, **kw):
        """Four wide bands with perspective-scaled boxes.

        Within-band offsets are comparable to between-band ones here, so
        single relations are far less decisive than with narrow bands.
        """
        bands = ((150.0, 190.0, 0), (190.0, 240.0, 1), (240.0, 300.0, 2), (300.0, 370.0, 3))
        return cls(K=4, lane_bands=bands, horizon=110.0, **kw)


def _box_at(rng, rule, cy):
    if rule.horizon is None:
        h = rng.uniform(*rule.height_range)
    else:
        h = max(8.0, 0.22 * (cy - rule.horizon))
    w = rule.aspect * h
    cx = rng.uniform(w / 2, rule.image_width - w / 2)
    return BBox(float(cx), float(cy), float(w), float(h))


def _jitter(rng, box, sigma):
    if sigma == 0:
        return box
    dx, dy, dw, dh = rng.normal(0.0, sigma, size=4)
    return BBox(box.cx + dx, box.cy + dy, max(1.0, box.w + dw), max(1.0, box.h + dh))


def _corrupt(rng, b, K, rho):
    if rho > 0 and rng.random() < rho:
        # uniform over the other K-1 bins: a corrupted bin is never the true one
        return int((b + rng.integers(1, K)) % K)
    return b


def generate_scene(rule: PlantedRule, image_id: str, rng) -> Scene:
    n = int(rng.integers(rule.min_objects, rule.max_objects + 1))
    band_idx = rng.integers(0, len(rule.lane_bands), size=n)
    annotations = []
    for k in band_idx:
        lo, hi, b = rule.lane_bands[k]
        for _ in range(50):
            box = _box_at(rng, rule, rng.uniform(lo, hi))
            if all(iou(box, a.box) < 0.3 for a in annotations):
                break
        vp = int(rng.integers(0, rule.K)) if rule.independent else b
        annotations.append(annotation(rule.category, box, vp))

    hypotheses = []
    for a in annotations:
        vp = _corrupt(rng, a.viewpoint, rule.K, rule.rho)
        dist = rule.tp_score if vp == a.viewpoint else rule.mp_score
        hypotheses.append(ObjectHypothesis(rule.category, _jitter(rng, a.box, rule.sigma),
                                           dist.sample(rng), vp))
    lo_all, hi_all = rule.lane_bands[0][0], rule.lane_bands[-1][1]
    for _ in range(int(rng.poisson(rule.fp_rate)) if rule.fp_rate > 0 else 0):
        for _ in range(50):
            box = _box_at(rng, rule, rng.uniform(lo_all, hi_all))
            if all(iou(box, a.box) < 0.3 for a in annotations):
                break
        hypotheses.append(ObjectHypothesis(rule.category, box, rule.fp_score.sample(rng),
                                           int(rng.integers(0, rule.K))))
    return Scene(image_id, tuple(hypotheses), tuple(annotations))


def image_id_for(index):
    return f"{index // SEQUENCE_LENGTH:04d}_{index % SEQUENCE_LENGTH:06d}"


def generate_scenes(rule: PlantedRule, n_scenes, seed=0):
    """Deterministic (train, val, test) scene lists.

    ``n_scenes`` is a total, split chronologically per sequence into thirds, or
    an explicit ``(n_train, n_val, n_test)`` triple.  Each scene draws from its
    own child seed.
    """
    counts = None
    if isinstance(n_scenes, (tuple, list)):
        counts = [int(c) for c in n_scenes]
        if len(counts) != 3 or min(counts) < 0:
            raise ValueError("scene counts must be three nonnegative integers")
        total = sum(counts)
    else:
        total = int(n_scenes)
    if total < 3:
        raise ValueError(f"need at least 3 scenes, got {total}")
    children = np.random.SeedSequence(seed).spawn(total)
    scenes = [generate_scene(rule, image_id_for(i), np.random.default_rng(children[i]))
              for i in range(total)]
    if counts is None:
        from .io import chronological_split
        return chronological_split(scenes)
    a, b = counts[0], counts[0] + counts[1]
    return scenes[:a], scenes[a:b], scenes[b:]


def oracle_posterior(conditionals: Sequence[float], priors: Sequence[float]) -> float:
    """Three-state Bayes ratio evaluated directly in linear space."""
    num = conditionals[0] * priors[0]
    den = sum(c * p for c, p in zip(conditionals, priors))
    if den == 0:
        raise ZeroDivisionError("all likelihood-prior products are zero")
    return num / den


def oracle_avp(scenes, threshold=0.5, require_viewpoint=True):
    """Average (viewpoint) precision by exhaustive ranked-list enumeration.

    For every cutoff n of the score-ranked list the top-n prefix is matched
    from scratch and precision/recall counted; the all-points interpolated
    area is then summed cutoff by cutoff.
    """
    n_gt = sum(len(s.annotations) for s in scenes)
    ranked = []
    for s in scenes:
        for k, h in enumerate(s.hypotheses):
            ranked.append((-h.score, s.image_id, k, h))
    ranked.sort(key=lambda t: t[:3])
    by_id = {s.image_id: s for s in scenes}
    precision, recall = [], []
    for n in range(1, len(ranked) + 1):
        tp = 0
        claimed = set()
        for _, image_id, _, h in ranked[:n]:
            anns = by_id[image_id].annotations
            overlaps = [iou(h.box, a.box) if a.category == h.category else -1.0 for a in anns]
            if not overlaps:
                continue
            best = max(range(len(anns)), key=lambda a: (overlaps[a], -a))
            if overlaps[best] < threshold or (image_id, best) in claimed:
                continue
            claimed.add((image_id, best))
            if not require_viewpoint or anns[best].viewpoint == h.viewpoint:
                tp += 1
        precision.append(tp / n)
        recall.append(tp / n_gt if n_gt else 0.0)
    area, prev = 0.0, 0.0
    for n in range(len(ranked)):
        area += (recall[n] - prev) * max(precision[n:])
        prev = recall[n]
    return area


def oracle_mppe(pairs, K):
    """Mean per-class recall from (true, predicted) pairs, classes with support only."""
    recalls = []
    for k in range(K):
        preds = [p for t, p in pairs if t == k]
        if preds:
            recalls.append(sum(1 for p in preds if p == k) / len(preds))
    return sum(recalls) / len(recalls)
