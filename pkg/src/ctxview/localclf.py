"""Probabilistic local classifier: detector score -> neighbor weight."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .density import MIN_SAMPLES, InsufficientDataError, StatePriors, UniformDensity, kde_fit
from .scene import STATES, match_scene


class UnknownCategoryError(KeyError):
    pass


@dataclass(eq=False)
class ScoreModel:
    """Per category: score densities for each state, plus state priors.

    ``densities[category][state]`` is a 1-d KDE, or a :class:`UniformDensity`
    when the state had fewer than ``min_samples`` hypotheses.
    """

    densities: dict
    priors: dict
    min_samples: int = MIN_SAMPLES

    @property
    def categories(self):
        return sorted(self.priors)

    def state_posteriors(self, category, score):
        """Posterior over (PP, MP, MM) given the score; sums to 1."""
        if category not in self.priors:
            raise UnknownCategoryError(category)
        priors = self.priors[category].as_tuple()
        x = np.array([float(score)])
        with np.errstate(divide="ignore"):
            log_terms = np.array([
                np.log(p) + self.densities[category][s].logpdf(x) if p > 0 else -np.inf
                for s, p in zip(STATES, priors)
            ])
        total = logsumexp(log_terms)
        if not np.isfinite(total):
            # every term underflowed: nothing to update the prior with
            return np.array(priors)
        return np.exp(log_terms - total)


def fit_score_model(train_scenes, iou_threshold=0.5, min_samples=MIN_SAMPLES) -> ScoreModel:
    scores = defaultdict(lambda: defaultdict(list))
    for scene in train_scenes:
        flagged = scene.hypotheses
        if any(h.state is None for h in flagged):
            flagged = match_scene(scene, iou_threshold).hypotheses
        for h in flagged:
            scores[h.category][h.state].append(h.score)
    if not scores:
        raise InsufficientDataError("no detector hypotheses to fit a score model")
    densities, priors = {}, {}
    for cat in sorted(scores):
        by_state = scores[cat]
        everything = np.concatenate([np.asarray(v, dtype=float) for v in by_state.values()])
        fallback = UniformDensity.around(everything[:, None])
        densities[cat] = {
            s: kde_fit(np.asarray(by_state[s])[:, None]) if len(by_state[s]) >= min_samples else fallback
            for s in STATES
        }
        priors[cat] = StatePriors.from_counts({s: len(by_state[s]) for s in STATES})
    return ScoreModel(densities, priors, min_samples)


def local_weight(model: ScoreModel, o_j) -> float:
    """p(correct viewpoint, true hypothesis | score, category) for ``o_j``."""
    return float(model.state_posteriors(o_j.category, o_j.score)[0])
