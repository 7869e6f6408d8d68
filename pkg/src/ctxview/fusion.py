"""Fuse local and contextual responses into a final viewpoint.

Two combiners work on the coupled response Psi = [local, contextual]
(dimension 2K): MAP inference with per-class KDEs, and a linear multiclass
SVM whose cost is picked by cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import MIN_SAMPLES, InsufficientDataError, UniformDensity, kde_fit
from .svm import crammer_singer

C_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)


@dataclass(frozen=True, eq=False)
class CoupledResponse:
    local: np.ndarray
    contextual: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.local, dtype=float)
        ctx = np.asarray(self.contextual, dtype=float)
        if loc.shape != ctx.shape or loc.ndim != 1:
            raise ValueError(f"local {loc.shape} and contextual {ctx.shape} halves must be equal-length vectors")
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(ctx))):
            raise ValueError("coupled response entries must be finite")
        object.__setattr__(self, "local", loc)
        object.__setattr__(self, "contextual", ctx)

    @property
    def K(self):
        return self.local.shape[0]

    @property
    def vector(self):
        return np.concatenate([self.local, self.contextual])


def local_response(hyp, K):
    """Per-bin detector scores, or the score placed on the predicted bin."""
    if hyp.bin_scores is not None:
        scores = np.asarray(hyp.bin_scores, dtype=float)
        if scores.shape != (K,):
            raise ValueError(f"expected {K} per-bin scores, got {scores.shape[0]}")
        return scores
    if not 0 <= hyp.viewpoint < K:
        raise ValueError(f"viewpoint bin {hyp.viewpoint} outside [0, {K})")
    out = np.zeros(K)
    out[hyp.viewpoint] = hyp.score
    return out


def build_coupled_response(hyp, ctx, K) -> CoupledResponse:
    ctx_scores = np.asarray(ctx.scores, dtype=float)
    if ctx_scores.shape != (K,):
        raise ValueError(f"contextual response has {ctx_scores.shape[0]} bins, expected {K}")
    contextual = ctx_scores if ctx.defined else np.full(K, 1.0 / K)
    return CoupledResponse(local_response(hyp, K), contextual)


def _as_matrix(validation):
    if not validation:
        raise InsufficientDataError("empty validation set")
    X = np.vstack([psi.vector if isinstance(psi, CoupledResponse) else np.asarray(psi, float)
                   for psi, _ in validation])
    y = np.array([int(t) for _, t in validation])
    return X, y


@dataclass(eq=False)
class ProbFusionModel:
    densities: list   # per class: Kde, UniformDensity, or None for unseen classes
    priors: np.ndarray

    @property
    def K(self):
        return len(self.priors)

    def class_log_scores(self, psi):
        x = psi.vector if isinstance(psi, CoupledResponse) else np.asarray(psi, float)
        out = np.full(self.K, -np.inf)
        for k, dens in enumerate(self.densities):
            if dens is not None and self.priors[k] > 0:
                out[k] = np.log(self.priors[k]) + dens.logpdf(x)
        return out


def fit_prob_fusion(validation, K, min_samples=MIN_SAMPLES) -> ProbFusionModel:
    X, y = _as_matrix(validation)
    if np.any((y < 0) | (y >= K)):
        raise ValueError("true bins must lie in [0, K)")
    counts = np.bincount(y, minlength=K).astype(float)
    fallback = UniformDensity.around(X)
    densities = []
    for k in range(K):
        pts = X[y == k]
        if len(pts) == 0:
            densities.append(None)
        elif len(pts) >= min_samples:
            densities.append(kde_fit(pts))
        else:
            densities.append(fallback)
    return ProbFusionModel(densities, counts / counts.sum())


def predict_prob(model: ProbFusionModel, psi) -> int:
    return int(np.argmax(model.class_log_scores(psi)))


@dataclass(eq=False)
class LinearFusionModel:
    W: np.ndarray      # K x 2K
    bias: np.ndarray   # K
    C: float
    cv_accuracy: dict = None

    @property
    def K(self):
        return self.W.shape[0]

    def decision(self, psi):
        x = psi.vector if isinstance(psi, CoupledResponse) else np.asarray(psi, float)
        if x.shape != (self.W.shape[1],):
            raise ValueError(f"expected a {self.W.shape[1]}-d coupled response, got shape {x.shape}")
        return self.W @ x + self.bias


def predict_linear(model: LinearFusionModel, psi) -> int:
    return int(np.argmax(model.decision(psi)))


def fold_ids(n, folds, seed=0):
    """Balanced fold assignment, a fixed function of (n, folds, seed)."""
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def _fit_cs(X, y, K, C, seed):
    res = crammer_singer(X, y, K, C=C, seed=seed)
    return LinearFusionModel(res.W[:, :-1].copy(), res.W[:, -1].copy(), C)


def train_linear_fusion(validation, K, folds=3, grid=C_GRID, seed=0) -> LinearFusionModel:
    """Crammer-Singer fusion; the cost C maximizes cross-validated accuracy.

    Accuracy ties go to the smaller C.
    """
    X, y = _as_matrix(validation)
    if len(np.unique(y)) < 2:
        raise InsufficientDataError("linear fusion needs at least two classes in the validation set")
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    folds = min(folds, len(y))
    ids = fold_ids(len(y), folds, seed)
    accuracy = {}
    for C in sorted(grid):
        hits = 0
        for f in range(folds):
            train, test = ids != f, ids == f
            if len(np.unique(y[train])) < 2:
                # a fold without class variety predicts its only class
                pred = np.full(test.sum(), y[train][0])
            else:
                m = _fit_cs(X[train], y[train], K, C, seed)
                pred = np.argmax(X[test] @ m.W.T + m.bias, axis=1)
            hits += int(np.sum(pred == y[test]))
        accuracy[C] = hits / len(y)
    best = max(sorted(accuracy), key=lambda c: (accuracy[c], -c))
    model = _fit_cs(X, y, K, best, seed)
    model.cv_accuracy = accuracy
    return model
