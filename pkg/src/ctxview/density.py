"""Gaussian kernel density estimates and the learned relational model.

Densities are evaluated in log space throughout; a scene with m objects
produces m(m-1) relation factors and linear-space products underflow fast.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .relations import RelationFormat, pair_features
from .scene import STATES, State, match_indices

MIN_SAMPLES = 5
BANDWIDTH_RULE = "scott-diagonal"
_LOG_2PI = math.log(2.0 * math.pi)
# query rows evaluated per block; bounds the (queries x samples) buffer
_BLOCK = 1 << 21


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Kde:
    """Equal- or explicitly-weighted Gaussian mixture with diagonal bandwidth.

    ``bandwidth`` holds per-dimension kernel standard deviations.
    """

    samples: np.ndarray
    bandwidth: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        bw = np.asarray(self.bandwidth, dtype=float).reshape(-1)
        if samples.shape[0] < 1:
            raise InsufficientDataError("a KDE needs at least one sample")
        if bw.shape[0] != samples.shape[1]:
            raise ValueError(f"bandwidth has {bw.shape[0]} entries for {samples.shape[1]}-d samples")
        if np.any(bw <= 0) or not np.all(np.isfinite(bw)):
            raise ValueError("bandwidth entries must be positive and finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "bandwidth", bw)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != samples.shape[0] or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("weights must be nonnegative, one per sample, with positive sum")
            object.__setattr__(self, "weights", w / w.sum())

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def n(self):
        return self.samples.shape[0]

    def logpdf(self, x):
        """Log density at one point (shape (d,)) or many points (shape (q, d))."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        q = np.atleast_2d(x)
        if q.shape[1] != self.dim:
            raise ValueError(f"query dimension {q.shape[1]} does not match KDE dimension {self.dim}")
        inv = 1.0 / self.bandwidth
        mu = self.samples * inv
        qs = q * inv
        mu_sq = np.einsum("ij,ij->i", mu, mu)
        q_sq = np.einsum("ij,ij->i", qs, qs)
        log_w = np.full(self.n, -math.log(self.n)) if self.weights is None else np.log(self.weights)
        const = -np.sum(np.log(self.bandwidth)) - 0.5 * self.dim * _LOG_2PI
        out = np.empty(q.shape[0])
        step = max(1, _BLOCK // self.n)
        for start in range(0, q.shape[0], step):
            stop = start + step
            d2 = q_sq[start:stop, None] + mu_sq[None, :] - 2.0 * (qs[start:stop] @ mu.T)
            np.maximum(d2, 0.0, out=d2)
            out[start:stop] = _logsumexp_rows(log_w - 0.5 * d2)
        out += const
        return out[0] if single else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))


@dataclass(frozen=True, eq=False)
class UniformDensity:
    """Constant density 1/volume of a training bounding box.

    Stands in for a conditional that had too few samples to fit a KDE.  The
    value is returned everywhere, not only inside the box.
    """

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "low", np.asarray(self.low, dtype=float).reshape(-1))
        object.__setattr__(self, "high", np.asarray(self.high, dtype=float).reshape(-1))

    @classmethod
    def around(cls, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = _floor(hi - lo)
        return cls(lo - pad, hi + pad)

    @property
    def dim(self):
        return self.low.shape[0]

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"query dimension {x.shape[-1]} does not match density dimension {self.dim}")
        value = -float(np.sum(np.log(self.high - self.low)))
        return value if x.ndim == 1 else np.full(x.shape[0], value)

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def _logsumexp_rows(a):
    peak = a.max(axis=1)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - peak[:, None]).sum(axis=1)) + peak


def _floor(ranges):
    return 1e-3 * (np.asarray(ranges, dtype=float) + 1.0)


def scott_bandwidth(points):
    """Per-dimension Scott's rule, h_d = sigma_d * m^(-1/(d+4)), with a floor."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = pts.shape
    sigma = pts.std(axis=0, ddof=1) if m > 1 else np.zeros(d)
    h = sigma * m ** (-1.0 / (d + 4))
    return np.maximum(h, _floor(np.ptp(pts, axis=0)))


def kde_fit(points, bandwidth=None) -> Kde:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise InsufficientDataError("cannot fit a KDE to an empty sample set")
    if not np.all(np.isfinite(pts)):
        raise ValueError("KDE samples must be finite")
    if bandwidth is None:
        bw = scott_bandwidth(pts)
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (pts.shape[1],)).copy()
    return Kde(pts, bw)


def kde_eval(kde, x) -> float:
    return float(np.exp(kde.logpdf(np.asarray(x, dtype=float).reshape(-1))))


def fit_density(points, min_samples=MIN_SAMPLES, support=None):
    """KDE when there are enough points, else the uniform fallback over ``support``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)) if len(points) else np.zeros((0, 0))
    if len(points) >= min_samples:
        return kde_fit(pts)
    if support is None:
        if not len(points):
            raise InsufficientDataError("no samples and no support box for a fallback density")
        support = pts
    return UniformDensity.around(support)


@dataclass(frozen=True)
class StatePriors:
    """p(state | category) over the three admissible states."""

    p_pp: float
    p_mp: float
    p_mm: float

    def __post_init__(self):
        vals = (self.p_pp, self.p_mp, self.p_mm)
        if min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"state priors must be nonnegative and sum to 1, got {vals}")

    @classmethod
    def from_counts(cls, counts):
        n = sum(counts.get(s, 0) for s in STATES)
        if n == 0:
            raise InsufficientDataError("no flagged hypotheses to estimate priors from")
        return cls(*(counts.get(s, 0) / n for s in STATES))

    def __getitem__(self, state):
        return {State.PP: self.p_pp, State.MP: self.p_mp, State.MM: self.p_mm}[state]

    @property
    def p_false_correct(self):
        # (viewpoint correct, false hypothesis) never occurs
        return 0.0

    def as_tuple(self):
        return (self.p_pp, self.p_mp, self.p_mm)


@dataclass(eq=False)
class PairModel:
    """Relation densities for one ordered (source, target) category pair.

    ``cells[(state, bin)]`` is the density of relations whose source object is
    in ``state`` with true viewpoint ``bin``; false sources have no true
    viewpoint and use ``bin = None``.  ``counts`` holds the number of training
    relations behind each cell (also for fallback cells).
    """

    cells: dict
    counts: dict
    fallback: UniformDensity


@dataclass(eq=False)
class RelationalModel:
    fmt: RelationFormat
    K: int
    pairs: dict                  # (source, target) -> PairModel
    priors: dict                 # source category -> StatePriors
    bin_counts: dict             # source category -> length-K counts of true source viewpoints
    min_samples: int = MIN_SAMPLES
    notes: dict = field(default_factory=dict)

    @property
    def categories(self):
        return sorted(self.priors)

    def bin_prior(self, category):
        counts = np.asarray(self.bin_counts[category], dtype=float)
        # add-one smoothing keeps unseen bins possible
        return (counts + 1.0) / (counts.sum() + self.K)

    def true_log_density(self, source, target, feats):
        """log p(r | true source with viewpoint b) for every bin b, shape (n, K).

        Mixes the correctly and incorrectly predicted cells of each bin by
        their training counts.
        """
        pm = self.pairs[(source, target)]
        feats = np.atleast_2d(feats)
        out = np.empty((feats.shape[0], self.K))
        for b in range(self.K):
            n_pp = pm.counts.get((State.PP, b), 0)
            n_mp = pm.counts.get((State.MP, b), 0)
            if n_pp + n_mp == 0:
                out[:, b] = pm.fallback.logpdf(feats)
                continue
            terms = []
            for state, n in ((State.PP, n_pp), (State.MP, n_mp)):
                if n:
                    density = pm.cells.get((state, b), pm.fallback)
                    terms.append(math.log(n / (n_pp + n_mp)) + density.logpdf(feats))
            out[:, b] = logsumexp(np.vstack(terms), axis=0)
        return out

    def false_log_density(self, source, target, feats):
        pm = self.pairs[(source, target)]
        density = pm.cells.get((State.MM, None), pm.fallback)
        return density.logpdf(np.atleast_2d(feats))


def substituted_objects(scene, iou_threshold=0.5):
    """Training object set of one scene after annotation substitution.

    Every annotation is kept (state PP, its own viewpoint).  Hypotheses that
    are true with correct viewpoint are dropped, since their annotation already
    stands in for them; the remaining hypotheses keep their own box and
    predicted viewpoint.  Returns ``(objects, states, true_bins)`` plus the
    per-hypothesis state counts per category.
    """
    idx = match_indices(scene.hypotheses, scene.annotations, iou_threshold)
    objects = list(scene.annotations)
    states = [State.PP] * len(objects)
    true_bins = [a.viewpoint for a in scene.annotations]
    flagged = []
    for hyp, a in zip(scene.hypotheses, idx):
        if a is None:
            state, tb = State.MM, None
        else:
            tb = scene.annotations[a].viewpoint
            state = State.PP if hyp.viewpoint == tb else State.MP
        flagged.append((hyp.category, state))
        if state is State.PP:
            continue
        objects.append(hyp)
        states.append(state)
        true_bins.append(tb)
    return objects, states, true_bins, flagged


def fit_relational_model(train_scenes, fmt=RelationFormat.RF1, K=8,
                         iou_threshold=0.5, min_samples=MIN_SAMPLES) -> RelationalModel:
    """Learn relation densities and state priors from annotated training scenes.

    Scenes must carry both annotations and detector hypotheses.  Relations are
    pooled per ordered category pair, per source state and per source true
    viewpoint, over all ordered pairs of the substituted object set.
    """
    if not train_scenes:
        raise InsufficientDataError("no training scenes")
    pools = defaultdict(list)
    state_counts = defaultdict(lambda: defaultdict(int))
    bin_counts = defaultdict(lambda: np.zeros(K))
    seen_categories = set()
    for scene in train_scenes:
        objects, states, true_bins, flagged = substituted_objects(scene, iou_threshold)
        for cat, state in flagged:
            state_counts[cat][state] += 1
        for obj, tb in zip(objects, true_bins):
            seen_categories.add(obj.category)
            if tb is not None:
                bin_counts[obj.category][tb] += 1
        feats, pairs = pair_features(objects, fmt, K)
        for f, (i, j) in zip(feats, pairs):
            pools[(objects[i].category, objects[j].category, states[i], true_bins[i])].append(f)

    missing = sorted(c for c in seen_categories if c not in state_counts)
    if missing:
        raise InsufficientDataError(f"categories without any detector hypothesis: {missing}")
    categories = sorted(seen_categories)
    priors = {c: StatePriors.from_counts(state_counts[c]) for c in categories}

    pairs = {}
    for src in categories:
        for tgt in categories:
            keys = [k for k in pools if k[0] == src and k[1] == tgt]
            all_feats = [f for k in keys for f in pools[k]]
            if all_feats:
                fallback = UniformDensity.around(np.vstack(all_feats))
            else:
                fallback = UniformDensity(np.zeros(fmt.dim), np.ones(fmt.dim))
            cells, counts = {}, {}
            for key in sorted(keys, key=_cell_sort_key):
                state, b = key[2], key[3]
                pts = np.vstack(pools[key])
                counts[(state, b)] = len(pts)
                if len(pts) >= min_samples:
                    cells[(state, b)] = kde_fit(pts)
            pairs[(src, tgt)] = PairModel(cells, counts, fallback)

    return RelationalModel(
        fmt=fmt, K=K, pairs=pairs, priors=priors,
        bin_counts={c: bin_counts[c].copy() for c in categories},
        min_samples=min_samples,
        notes={"pooled_pairs": "all ordered pairs after annotation substitution"},
    )


def _cell_sort_key(key):
    state, b = key[2], key[3]
    return (STATES.index(state), -1 if b is None else b)
