"""Context-based viewpoint classification with the weighted-vote relational
neighbor classifier, in aggressive and cautious flavors.

The vote of neighbor o_j for "o_i is a true object with viewpoint a" is a
three-state Bayes posterior computed from the relation r_ij.  Relative to
the candidate a the admissible states are: true object whose viewpoint is a,
true object with another viewpoint, and false object.  Their conditionals
come from the relational model's per-source-viewpoint relation densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .localclf import local_weight
from .relations import featurize, extract_relation, pair_features

MIN_WEIGHT = 1e-6


@dataclass(frozen=True, eq=False)
class ContextualResponse:
    """Per-bin wvRN scores of one hypothesis.

    When no usable neighbor exists ``defined`` is False and ``scores`` is
    uniform.
    """

    scores: np.ndarray
    defined: bool = True

    @property
    def predicted(self):
        # np.argmax returns the first maximum: ties go to the lowest bin
        return int(np.argmax(self.scores))

    @classmethod
    def undefined(cls, K):
        return cls(np.full(K, 1.0 / K), False)


@dataclass
class PromotionTrace:
    order: list = field(default_factory=list)
    known_snapshots: list = field(default_factory=list)


def bayes_vote(log_conditionals, priors):
    """Posterior of the first of three states, computed in log space.

    ``log_conditionals`` are log p(r | state) and ``priors`` p(state); a zero
    prior removes the state.  If every term vanishes the first prior is
    returned.
    """
    priors = np.asarray(priors, dtype=float)
    with np.errstate(divide="ignore"):
        log_terms = np.asarray(log_conditionals, dtype=float) + np.log(priors)
    total = logsumexp(log_terms)
    if not np.isfinite(total):
        return float(priors[0])
    return float(np.exp(log_terms[0] - total))


def vote_terms(model, o_i, alpha, o_j):
    """Log conditionals and priors of the three states for candidate ``alpha``.

    Returns ``None`` when the category pair is not covered by the model.
    """
    key = (o_i.category, o_j.category)
    if key not in model.pairs:
        return None
    f = featurize(extract_relation(o_i, o_j, model.fmt, model.K))[None, :]
    log_true = model.true_log_density(*key, f)[0]
    log_false = float(model.false_log_density(*key, f)[0])
    q = model.bin_prior(o_i.category)
    pri = model.priors[o_i.category]
    pi_true = pri.p_pp + pri.p_mp
    others = [b for b in range(model.K) if b != alpha]
    q_other = float(np.sum(q[others]))
    log_other = logsumexp(np.log(q[others]) + log_true[others]) - math.log(q_other)
    log_cond = np.array([log_true[alpha], log_other, log_false])
    priors = np.array([pi_true * q[alpha], pi_true * q_other, pri.p_mm])
    return log_cond, priors


def vote(model, o_i, alpha, o_j) -> float:
    """p(o_i is true with viewpoint ``alpha`` | r_ij, c_i)."""
    if o_i.category not in model.priors:
        raise KeyError(f"unknown source category {o_i.category!r}")
    terms = vote_terms(model, o_i, alpha, o_j)
    if terms is None:
        return model.priors[o_i.category].p_pp
    return bayes_vote(*terms)


def vote_tensor(model, objects):
    """All votes of a scene at once: ``V[i, j, a]`` = vote(o_i at a, o_j).

    The diagonal and rows of unknown source categories are NaN.
    """
    m, K = len(objects), model.K
    V = np.full((m, m, K), np.nan)
    if m < 2:
        return V
    feats, pairs = pair_features(objects, model.fmt, K)
    groups = {}
    for n, (i, j) in enumerate(pairs):
        groups.setdefault((objects[i].category, objects[j].category), []).append(n)
    for (src, tgt), rows in groups.items():
        if src not in model.priors:
            continue
        ii, jj = pairs[rows, 0], pairs[rows, 1]
        pri = model.priors[src]
        if (src, tgt) not in model.pairs:
            V[ii, jj, :] = pri.p_pp
            continue
        f = feats[rows]
        with np.errstate(divide="ignore"):
            joint = (math.log(pri.p_pp + pri.p_mp) if pri.p_pp + pri.p_mp > 0 else -np.inf) \
                + np.log(model.bin_prior(src))[None, :] + model.true_log_density(src, tgt, f)
            false = (math.log(pri.p_mm) if pri.p_mm > 0 else -np.inf) \
                + model.false_log_density(src, tgt, f)
        total = logsumexp(np.column_stack([joint, false]), axis=1)
        votes = np.exp(joint - total[:, None])
        bad = ~np.isfinite(total)
        votes[bad] = pri.p_pp
        V[ii, jj, :] = votes
    return V


def neighbor_weights(objects, scores=None):
    """Local-classifier weights, floored so the normalizer never vanishes."""
    if scores is None:
        return np.ones(len(objects))
    w = np.array([local_weight(scores, o) for o in objects], dtype=float)
    return np.maximum(w, MIN_WEIGHT)


def _given_weights(weights, m):
    w = np.asarray(weights, dtype=float)
    if w.shape != (m,):
        raise ValueError(f"expected {m} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    return w


def _wvrn_row(V_i, w, neighbors, K):
    neighbors = [j for j in neighbors if not np.isnan(V_i[j, 0])]
    if not neighbors:
        return ContextualResponse.undefined(K)
    wn = w[neighbors]
    if wn.sum() <= 0:
        # all-zero weights carry no preference: count neighbors equally
        wn = np.ones(len(neighbors))
    return ContextualResponse(np.clip(wn @ V_i[neighbors] / wn.sum(), 0.0, 1.0))


def _objects(scene_or_objects):
    return list(getattr(scene_or_objects, "hypotheses", scene_or_objects))


def wvrn_aggressive(scene, model, scores=None, weights=None, V=None):
    """Every other object contributes to every object's contextual response.

    ``V`` may hold precomputed votes (see :func:`vote_tensor`); ``weights``
    override the local-classifier weights.
    """
    objects = _objects(scene)
    if V is None:
        V = vote_tensor(model, objects)
    m, K = len(objects), V.shape[2]
    w = neighbor_weights(objects, scores) if weights is None else _given_weights(weights, m)
    return [_wvrn_row(V[i], w, [j for j in range(m) if j != i], K) for i in range(m)]


def wvrn_cautious(scene, model, scores=None, weights=None, V=None):
    """Promote one object at a time, scoring unknown objects against known ones only.

    The seed is the object with the highest local weight.  At each step every
    unknown object is scored against the known set and the one with the
    highest per-bin maximum is promoted (ties to the lower index), keeping the
    response computed at that moment.  The seed is finally re-scored with the
    second promoted object as its only context.
    """
    objects = _objects(scene)
    if V is None:
        V = vote_tensor(model, objects)
    m, K = len(objects), V.shape[2]
    trace = PromotionTrace()
    responses = [ContextualResponse.undefined(K) for _ in range(m)]
    if m == 0:
        return responses, trace
    w = neighbor_weights(objects, scores) if weights is None else _given_weights(weights, m)

    seed = int(np.argmax(w))
    known = [seed]
    unknown = [i for i in range(m) if i != seed]
    trace.order.append(seed)
    trace.known_snapshots.append([])
    while unknown:
        scored = [_wvrn_row(V[u], w, known, K) for u in unknown]
        peaks = [r.scores.max() if r.defined else -np.inf for r in scored]
        k = int(np.argmax(peaks))
        best = unknown.pop(k)
        trace.known_snapshots.append(list(known))
        responses[best] = scored[k]
        known.append(best)
        trace.order.append(best)
    if m >= 2:
        responses[seed] = _wvrn_row(V[seed], w, [trace.order[1]], K)
    return responses, trace


def contextual_responses(scene, model, mode="aggressive", scores=None, weights=None):
    if mode == "aggressive":
        return wvrn_aggressive(scene, model, scores, weights)
    if mode == "cautious":
        return wvrn_cautious(scene, model, scores, weights)[0]
    raise ValueError(f"unknown inference mode {mode!r}; expected aggressive or cautious")
