import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxview.density import PairModel, RelationalModel, StatePriors, UniformDensity
from ctxview.relations import RelationFormat
from ctxview.relclf import (ContextualResponse, bayes_vote, contextual_responses, vote, vote_tensor,
                            wvrn_aggressive, wvrn_cautious)
from ctxview.scene import BBox, ObjectHypothesis, State
from ctxview.synth import oracle_posterior


def obj(cx, vp=0, cat="Car", score=0.5):
    return ObjectHypothesis(cat, BBox(cx, 100.0, 40.0, 25.0), score, vp)


def test_bayes_vote_examples():
    log_c = np.log([0.4, 0.2, 0.4])
    assert bayes_vote(log_c, [0.5, 0.3, 0.2]) == pytest.approx(0.20 / 0.34, rel=1e-12)
    assert bayes_vote(np.log([0.3, 0.3, 0.3]), [0.5, 0.3, 0.2]) == pytest.approx(0.5, rel=1e-12)
    assert bayes_vote(log_c, [1.0, 0.0, 0.0]) == 1.0


def test_bayes_vote_survives_underflow():
    # linear-space products would be 0/0 here
    log_c = np.array([-2000.0, -2001.0, -2003.0])
    expected = 1.0 / (1.0 + math.exp(-1.0) * 0.3 / 0.5 + math.exp(-3.0) * 0.2 / 0.5)
    assert bayes_vote(log_c, [0.5, 0.3, 0.2]) == pytest.approx(expected, rel=1e-12)
    assert bayes_vote(np.full(3, -np.inf), [0.5, 0.3, 0.2]) == 0.5


def constant_model(true_values, false_value, priors=(0.5, 0.3, 0.2), bin_counts=None, K=4):
    """Relational model whose cells are constant densities with chosen values."""
    dim = RelationFormat.RF1.dim
    cells, counts = {}, {}
    for b, v in enumerate(true_values):
        cells[(State.PP, b)] = UniformDensity(np.zeros(dim), np.r_[1.0 / v, np.ones(dim - 1)])
        counts[(State.PP, b)] = 10
    cells[(State.MM, None)] = UniformDensity(np.zeros(dim), np.r_[1.0 / false_value, np.ones(dim - 1)])
    counts[(State.MM, None)] = 10
    pm = PairModel(cells, counts, UniformDensity(np.zeros(dim), np.ones(dim)))
    bc = np.ones(K) if bin_counts is None else np.asarray(bin_counts, float)
    return RelationalModel(RelationFormat.RF1, K, {("Car", "Car"): pm}, {"Car": StatePriors(*priors)},
                           {"Car": bc})


def test_vote_against_linear_oracle():
    model = constant_model([0.4, 0.1, 0.3, 0.2], 0.25, bin_counts=[3, 1, 0, 2])
    q = (np.array([3, 1, 0, 2]) + 1.0) / 10.0
    for alpha in range(4):
        others = [b for b in range(4) if b != alpha]
        vals = np.array([0.4, 0.1, 0.3, 0.2])
        cond = [vals[alpha], float(np.dot(q[others], vals[others]) / q[others].sum()), 0.25]
        pri = [0.8 * q[alpha], 0.8 * q[others].sum(), 0.2]
        assert vote(model, obj(0), alpha, obj(60)) == pytest.approx(oracle_posterior(cond, pri), abs=1e-12)


def test_vote_equal_conditionals_gives_pp_prior():
    model = constant_model([0.3] * 4, 0.3, bin_counts=[5, 5, 5, 5])
    # with equal densities the vote is the prior of "true with bin alpha"
    assert vote(model, obj(0), 2, obj(60)) == pytest.approx(0.8 * 0.25, rel=1e-12)


def test_vote_certain_prior():
    model = constant_model([0.3, 0.1, 0.1, 0.1], 0.5, priors=(1.0, 0.0, 0.0))
    # no false state; a single bin with all the mass of the true prior
    model.bin_counts["Car"] = np.array([1e12, 0, 0, 0])
    assert vote(model, obj(0), 0, obj(60)) == pytest.approx(1.0, abs=1e-9)


def test_vote_missing_pair_and_unknown_source():
    model = constant_model([0.4, 0.1, 0.3, 0.2], 0.25)
    model.priors["Van"] = StatePriors(0.7, 0.2, 0.1)
    assert vote(model, obj(0, cat="Van"), 0, obj(60)) == 0.7
    with pytest.raises(KeyError):
        vote(model, obj(0, cat="Bus"), 0, obj(60))


def test_vote_tensor_matches_scalar_votes(lane_data, lane_models):
    _, (_, _, test) = lane_data
    model, _ = lane_models
    for scene in test[:5]:
        objs = list(scene.hypotheses)
        V = vote_tensor(model, objs)
        for i in range(len(objs)):
            assert np.all(np.isnan(V[i, i]))
            for j in range(len(objs)):
                if i != j:
                    for a in range(model.K):
                        assert V[i, j, a] == pytest.approx(vote(model, objs[i], a, objs[j]), rel=1e-9, abs=1e-12)


def test_wvrn_hand_example():
    V = np.full((3, 3, 2), np.nan)
    V[0, 1] = 0.8
    V[0, 2] = 0.2
    V[1, [0, 2]] = 0.5
    V[2, [0, 1]] = 0.5
    resp = wvrn_aggressive([obj(0), obj(60), obj(120)], None, weights=[1.0, 1.0, 3.0], V=V)
    assert resp[0].scores.tolist() == pytest.approx([0.35, 0.35])


def test_single_neighbor_is_its_vote():
    V = np.full((2, 2, 3), np.nan)
    V[0, 1] = [0.1, 0.7, 0.2]
    V[1, 0] = [0.3, 0.3, 0.9]
    resp = wvrn_aggressive([obj(0), obj(60)], None, weights=[0.2, 5.0], V=V)
    assert resp[0].scores.tolist() == pytest.approx([0.1, 0.7, 0.2])
    assert resp[0].predicted == 1


def test_lonely_object_is_undefined(lane_models):
    model, scores = lane_models
    for mode in ("aggressive", "cautious"):
        (r,) = contextual_responses([obj(0)], model, mode, scores)
        assert not r.defined
        assert r.scores.tolist() == [0.25] * 4
        assert r.predicted == 0


def test_argmax_ties_go_to_lowest_bin():
    assert ContextualResponse(np.array([0.2, 0.5, 0.5])).predicted == 1


def random_votes(rng, m, K):
    V = rng.uniform(0, 1, size=(m, m, K))
    V[np.arange(m), np.arange(m)] = np.nan
    return V


def test_cautious_seed_is_highest_weight(rng):
    V = random_votes(rng, 3, 4)
    _, trace = wvrn_cautious([obj(0), obj(60), obj(120)], None, weights=[0.5, 0.9, 0.2], V=V)
    assert trace.order[0] == 1
    assert sorted(trace.order) == [0, 1, 2]


def test_cautious_two_objects_equal_aggressive(rng):
    V = random_votes(rng, 2, 4)
    objs = [obj(0), obj(60)]
    agg = wvrn_aggressive(objs, None, weights=[0.3, 0.8], V=V)
    cau, _ = wvrn_cautious(objs, None, weights=[0.3, 0.8], V=V)
    for a, c in zip(agg, cau):
        assert a.scores.tolist() == c.scores.tolist()


def brute_cautious(V, w):
    """Reference promotion loop written directly from the protocol."""
    m = V.shape[0]
    seed = int(np.argmax(w))
    known, unknown = [seed], [i for i in range(m) if i != seed]
    out = [None] * m
    order = [seed]
    while unknown:
        best, best_peak, best_scores = None, -1.0, None
        for u in unknown:
            scores = sum(w[j] * V[u, j] for j in known) / sum(w[j] for j in known)
            if scores.max() > best_peak:
                best, best_peak, best_scores = u, scores.max(), scores
        out[best] = best_scores
        known.append(best)
        unknown.remove(best)
        order.append(best)
    if m > 1:
        out[seed] = V[seed, order[1]].copy()
    return out, order


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_cautious_matches_reference(m, K, seed):
    rng = np.random.default_rng(seed)
    V = random_votes(rng, m, K)
    w = rng.uniform(0.01, 1, size=m)
    resp, trace = wvrn_cautious([obj(60 * k) for k in range(m)], None, weights=w, V=V)
    ref, order = brute_cautious(V, w)
    assert trace.order == order
    for r, e in zip(resp, ref):
        np.testing.assert_allclose(r.scores, e, rtol=1e-12)
    # everyone but the seed was scored against a nonempty known set
    assert all(len(s) >= 1 for s in trace.known_snapshots[1:])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(2, 6), st.integers(0, 2**32 - 1), st.sampled_from([1e-3, 1.0, 1e3]))
def test_weight_scaling_invariance_and_bounds(m, K, seed, c):
    rng = np.random.default_rng(seed)
    V = random_votes(rng, m, K)
    w = rng.uniform(0.01, 1, size=m)
    objs = [obj(60 * k) for k in range(m)]
    for run in (lambda ww: wvrn_aggressive(objs, None, weights=ww, V=V),
                lambda ww: wvrn_cautious(objs, None, weights=ww, V=V)[0]):
        base, scaled = run(w), run(w * c)
        for a, b in zip(base, scaled):
            assert np.all((a.scores >= 0) & (a.scores <= 1))
            np.testing.assert_allclose(a.scores, b.scores, rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_aggressive_permutation_equivariance(m, seed):
    rng = np.random.default_rng(seed)
    V = random_votes(rng, m, 4)
    w = rng.uniform(0.01, 1, size=m)
    perm = rng.permutation(m)
    objs = [obj(60 * k) for k in range(m)]
    base = wvrn_aggressive(objs, None, weights=w, V=V)
    permuted = wvrn_aggressive([objs[p] for p in perm], None, weights=w[perm], V=V[np.ix_(perm, perm)])
    for k, p in enumerate(perm):
        np.testing.assert_allclose(permuted[k].scores, base[p].scores, rtol=1e-12)


def test_all_zero_weights_count_neighbors_equally():
    V = np.full((3, 3, 2), np.nan)
    V[0, 1] = [0.4, 0.6]
    V[0, 2] = [0.8, 0.2]
    resp = wvrn_aggressive([obj(0), obj(60), obj(120)], None, weights=[0.0, 0.0, 0.0], V=V)
    assert resp[0].scores.tolist() == pytest.approx([0.6, 0.4])


def test_invalid_weights():
    V = random_votes(np.random.default_rng(0), 2, 3)
    for bad in ([1.0, -0.5], [1.0, np.nan], [1.0]):
        with pytest.raises(ValueError):
            wvrn_aggressive([obj(0), obj(60)], None, weights=bad, V=V)


def test_fitted_model_scores_in_unit_interval(lane_data, lane_models):
    _, (_, _, test) = lane_data
    model, scores = lane_models
    for scene in test:
        for mode in ("aggressive", "cautious"):
            for r in contextual_responses(scene, model, mode, scores):
                assert np.all((r.scores >= 0) & (r.scores <= 1))


def test_unknown_mode(lane_models):
    model, scores = lane_models
    with pytest.raises(ValueError):
        contextual_responses([obj(0), obj(60)], model, "greedy", scores)
