"""Attributed pairwise relations between objects of a scene."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scene import ObjectHypothesis, bin_center


class RelationFormat(enum.Enum):
    RF1 = "rf1"  # relative location, relative scale, neighbor viewpoint
    RF2 = "rf2"  # relative location and scale only

    @property
    def dim(self):
        return 6 if self is RelationFormat.RF1 else 4

    @classmethod
    def parse(cls, text):
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown relation format {text!r}; expected rf1 or rf2") from None


@dataclass(frozen=True)
class RelationVector:
    rx: float
    ry: float
    rsw: float
    rsh: float
    neighbor_viewpoint: Optional[int]
    source_category: str
    target_category: str
    K: int = 8

    @property
    def format(self):
        return RelationFormat.RF2 if self.neighbor_viewpoint is None else RelationFormat.RF1


def extract_relation(o_i: ObjectHypothesis, o_j: ObjectHypothesis,
                     fmt: RelationFormat = RelationFormat.RF1, K: int = 8) -> RelationVector:
    """Relation r_ij of neighbor ``o_j`` seen from ``o_i``.

    Offsets are normalized by the source box size, scales are target/source
    ratios.  RF1 also carries the neighbor's viewpoint bin.
    """
    bi, bj = o_i.box, o_j.box
    if not (bi.w > 0 and bi.h > 0):
        raise ValueError("source box must have positive width and height")
    return RelationVector(
        rx=(bj.cx - bi.cx) / bi.w,
        ry=(bj.cy - bi.cy) / bi.h,
        rsw=bj.w / bi.w,
        rsh=bj.h / bi.h,
        neighbor_viewpoint=o_j.viewpoint if fmt is RelationFormat.RF1 else None,
        source_category=o_i.category,
        target_category=o_j.category,
        K=K,
    )


def extract_scene_relations(objects, fmt=RelationFormat.RF1, K=8):
    """All m(m-1) ordered relations among ``objects`` (a Scene or a sequence).

    Returned in row-major (i, j) order, skipping i == j.
    """
    objs = getattr(objects, "hypotheses", objects)
    return [extract_relation(oi, oj, fmt, K)
            for i, oi in enumerate(objs)
            for j, oj in enumerate(objs) if i != j]


def featurize(r: RelationVector) -> np.ndarray:
    """Numeric encoding used by the density estimates.

    The neighbor viewpoint enters as (cos, sin) of its bin center so that
    bins K-1 and 0 stay adjacent.
    """
    base = [r.rx, r.ry, r.rsw, r.rsh]
    if r.neighbor_viewpoint is not None:
        theta = bin_center(r.neighbor_viewpoint, r.K)
        base += [math.cos(theta), math.sin(theta)]
    return np.asarray(base, dtype=float)


def pair_features(objects, fmt=RelationFormat.RF1, K=8):
    """Vectorized ``featurize(extract_relation(o_i, o_j))`` for all ordered pairs.

    Returns ``(feats, pairs)`` where ``feats[n]`` is the feature of the pair
    ``pairs[n] = (i, j)``.  Values match :func:`featurize` exactly.
    """
    m = len(objects)
    if m < 2:
        return np.zeros((0, fmt.dim)), np.zeros((0, 2), dtype=int)
    ii, jj = np.nonzero(~np.eye(m, dtype=bool))
    geo = np.array([[o.box.cx, o.box.cy, o.box.w, o.box.h] for o in objects], dtype=float)
    gi, gj = geo[ii], geo[jj]
    cols = [(gj[:, 0] - gi[:, 0]) / gi[:, 2], (gj[:, 1] - gi[:, 1]) / gi[:, 3],
            gj[:, 2] / gi[:, 2], gj[:, 3] / gi[:, 3]]
    if fmt is RelationFormat.RF1:
        theta = np.array([bin_center(o.viewpoint, K) for o in objects])[jj]
        # math.cos/sin per element keeps bit-parity with featurize()
        cols += [np.array([math.cos(t) for t in theta]), np.array([math.sin(t) for t in theta])]
    return np.column_stack(cols), np.column_stack([ii, jj])
