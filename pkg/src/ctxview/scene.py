"""Objects, viewpoints, hypothesis states and scenes.

Boxes are stored in center form (cx, cy, w, h), in pixels.  Viewpoints are
discrete bin indices in ``[0, K)``; bin ``k`` is centered at ``2*pi*k/K``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ValueError(f"box center must be finite, got ({self.cx}, {self.cy})")
        if not (self.w > 0 and self.h > 0) or not (math.isfinite(self.w) and math.isfinite(self.h)):
            raise ValueError(f"box size must be positive, got w={self.w} h={self.h}")

    @classmethod
    def from_corners(cls, left, top, right, bottom):
        return cls((left + right) / 2.0, (top + bottom) / 2.0, right - left, bottom - top)

    def corners(self):
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class ViewpointBin:
    index: int
    K: int = 8

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"need at least 2 viewpoint bins, got K={self.K}")
        if not 0 <= self.index < self.K:
            raise ValueError(f"bin index {self.index} outside [0, {self.K})")

    def __int__(self):
        return self.index

    def __index__(self):
        return self.index

    @property
    def center(self):
        """Bin-center angle in radians, in [0, 2*pi)."""
        return bin_center(self.index, self.K)


def bin_center(index, K):
    return 2.0 * math.pi * index / K


class State(enum.Enum):
    """Admissible (viewpoint, detection) label combinations.

    ``PP`` is a true hypothesis with correct viewpoint, ``MP`` a true
    hypothesis with wrong viewpoint and ``MM`` a false hypothesis.  A false
    hypothesis with a correct viewpoint does not exist and has no member.
    """

    PP = "pp"
    MP = "mp"
    MM = "mm"

    @classmethod
    def from_flags(cls, true_positive: bool, viewpoint_correct: bool) -> "State":
        if true_positive:
            return cls.PP if viewpoint_correct else cls.MP
        if viewpoint_correct:
            raise ValueError("a false positive cannot carry a correct viewpoint")
        return cls.MM

    @property
    def true_positive(self):
        return self is not State.MM

    @property
    def viewpoint_correct(self):
        return self is State.PP


STATES = (State.PP, State.MP, State.MM)


@dataclass(frozen=True)
class ObjectHypothesis:
    """A detected or annotated object.

    ``bin_scores`` optionally holds a detector's per-bin scores; when absent
    the local response is the score on the predicted bin only.
    """

    category: str
    box: BBox
    score: float
    viewpoint: int
    state: Optional[State] = None
    bin_scores: Optional[tuple] = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")
        if self.viewpoint < 0:
            raise ValueError(f"negative viewpoint bin {self.viewpoint}")

    def with_state(self, state):
        return replace(self, state=state)


@dataclass(frozen=True)
class Scene:
    image_id: str
    hypotheses: tuple = ()
    annotations: tuple = ()

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be nonempty")
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        object.__setattr__(self, "annotations", tuple(self.annotations))


def annotation(category, box, viewpoint):
    """Ground-truth object; annotations always carry score 1."""
    return ObjectHypothesis(category, box, 1.0, viewpoint)


def iou(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def discretize_viewpoint(angle: float, K: int = 8) -> ViewpointBin:
    """Nearest-center bin for ``angle`` (radians), wrapping at +-pi."""
    if K < 2:
        raise ValueError(f"need at least 2 viewpoint bins, got K={K}")
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle}")
    step = 2.0 * math.pi / K
    # reduce first so f(theta) == f(theta + 2*pi) holds bit-for-bit
    theta = math.fmod(angle, 2.0 * math.pi)
    if theta < 0:
        theta += 2.0 * math.pi
    return ViewpointBin(int(math.floor(theta / step + 0.5)) % K, K)


def match_indices(hypotheses: Sequence[ObjectHypothesis],
                  annotations: Sequence[ObjectHypothesis],
                  iou_threshold: float = 0.5) -> list:
    """Greedy one-to-one matching, VOC style.

    Hypotheses are visited by descending score (ties by list order).  Each
    takes its highest-IoU annotation of the same category; if that overlap
    reaches the threshold and the annotation is still unclaimed it is a match,
    otherwise the hypothesis is unmatched (a duplicate when the annotation was
    already taken).  Returns the matched annotation index per hypothesis.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    order = sorted(range(len(hypotheses)), key=lambda k: -hypotheses[k].score)
    claimed = [False] * len(annotations)
    result = [None] * len(hypotheses)
    for k in order:
        hyp = hypotheses[k]
        best, best_iou = None, -1.0
        for a, ann in enumerate(annotations):
            if ann.category != hyp.category:
                continue
            ov = iou(hyp.box, ann.box)
            if ov > best_iou:
                best, best_iou = a, ov
        if best is not None and best_iou >= iou_threshold and not claimed[best]:
            claimed[best] = True
            result[k] = best
    return result


def match_scene(scene: Scene, iou_threshold: float = 0.5) -> Scene:
    """Assign a :class:`State` to every hypothesis of ``scene``."""
    idx = match_indices(scene.hypotheses, scene.annotations, iou_threshold)
    flagged = []
    for hyp, a in zip(scene.hypotheses, idx):
        if a is None:
            state = State.MM
        else:
            state = State.from_flags(True, hyp.viewpoint == scene.annotations[a].viewpoint)
        flagged.append(hyp.with_state(state))
    return replace(scene, hypotheses=tuple(flagged))
