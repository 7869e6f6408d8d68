import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxview.density import (InsufficientDataError, Kde, StatePriors, UniformDensity, fit_density,
                             fit_relational_model, kde_eval, kde_fit, scott_bandwidth)
from ctxview.relations import RelationFormat
from ctxview.scene import BBox, ObjectHypothesis, Scene, State, annotation


def naive_kde(samples, bandwidth, x):
    """Direct sum of product Gaussians, one kernel at a time."""
    total = 0.0
    for s in samples:
        term = 1.0
        for xd, sd, hd in zip(x, s, bandwidth):
            term *= math.exp(-0.5 * ((xd - sd) / hd) ** 2) / (math.sqrt(2 * math.pi) * hd)
        total += term
    return total / len(samples)


def test_single_point_peak():
    kde = kde_fit([[0.0]])
    h = kde.bandwidth[0]
    assert kde_eval(kde, [0.0]) == pytest.approx(1 / (math.sqrt(2 * math.pi) * h), rel=1e-12)


def test_two_points_forced_bandwidth():
    kde = kde_fit([[-1.0], [1.0]], bandwidth=1.0)
    assert kde_eval(kde, [0.0]) == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-12)
    assert kde_eval(kde, [0.0]) == pytest.approx(0.24197, abs=1e-5)


def test_closed_form_gaussian():
    kde = kde_fit([[0.0]], bandwidth=2.0)
    assert kde_eval(kde, [2.0]) == pytest.approx(math.exp(-0.5) / (2 * math.sqrt(2 * math.pi)), rel=1e-12)
    assert kde_eval(kde, [2.0]) == pytest.approx(0.12099, abs=1e-5)


def test_far_tail_vanishes(rng):
    pts = rng.normal(size=(30, 2))
    kde = kde_fit(pts)
    far = pts.max(axis=0) + 100 * kde.bandwidth
    assert kde_eval(kde, far) < 1e-30


def test_single_point_kde_peaks_at_sample():
    kde = kde_fit([[3.0, -1.0]])
    peak = kde_eval(kde, [3.0, -1.0])
    for dx in (1e-3, 0.1, 1.0):
        assert kde_eval(kde, [3.0 + dx, -1.0]) < peak


def test_empty_fit_rejected():
    with pytest.raises(InsufficientDataError):
        kde_fit(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        kde_fit([[np.nan]])


def test_dimension_mismatch():
    kde = kde_fit([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        kde_eval(kde, [0.0])


def test_scott_rule_and_floor():
    pts = np.array([[0.0, 5.0], [1.0, 5.0], [3.0, 5.0]])
    h = scott_bandwidth(pts)
    assert h[0] == pytest.approx(np.std(pts[:, 0], ddof=1) * 3 ** (-1 / 6))
    # zero-variance column gets the floor
    assert h[1] == pytest.approx(1e-3)


def test_matches_naive_oracle(rng):
    for d in (1, 2, 4, 6):
        pts = rng.normal(size=(int(rng.integers(1, 40)), d)) * rng.uniform(0.1, 3, size=d)
        kde = kde_fit(pts)
        for x in rng.normal(size=(20, d)):
            assert kde_eval(kde, x) == pytest.approx(naive_kde(pts, kde.bandwidth, x), rel=1e-10, abs=1e-300)


def test_weighted_kde_matches_oracle(rng):
    pts = rng.normal(size=(5, 2))
    w = rng.uniform(0.1, 1, size=5)
    kde = Kde(pts, [0.5, 0.7], w)
    x = np.array([0.2, -0.1])
    expected = sum(wi / w.sum() * naive_kde([p], [0.5, 0.7], x) for wi, p in zip(w, pts))
    assert kde_eval(kde, x) == pytest.approx(expected, rel=1e-12)


def test_batched_and_single_evaluation_agree(rng):
    kde = kde_fit(rng.normal(size=(50, 3)))
    q = rng.normal(size=(40, 3))
    batch = kde.logpdf(q)
    np.testing.assert_allclose(batch, [kde.logpdf(x) for x in q], rtol=1e-13)


def test_logpdf_stays_finite_far_away():
    kde = kde_fit([[0.0], [0.1]], bandwidth=0.01)
    assert np.isfinite(kde.logpdf([50.0]))
    assert kde.pdf([50.0]) == 0.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 15), st.just(1)), elements=st.floats(-5, 5)))
def test_one_dimensional_integral(points):
    kde = kde_fit(points)
    h = kde.bandwidth[0]
    grid = np.linspace(points.min() - 10 * h, points.max() + 10 * h, 20001)
    vals = kde.pdf(grid[:, None])
    assert np.all(vals >= 0)
    assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.just(1)), elements=st.floats(-5, 5)),
       st.floats(-6, 6))
def test_continuity(points, x):
    kde = kde_fit(points)
    h = kde.bandwidth[0]
    delta = 1e-8
    # |f'| <= max_u |phi_h'(u)| = 1 / (h^2 sqrt(2 pi e))
    bound = delta / (h * h * math.sqrt(2 * math.pi * math.e))
    assert abs(kde.pdf([x]) - kde.pdf([x + delta])) <= bound * (1 + 1e-6) + 1e-12


def test_uniform_density_is_constant_everywhere():
    u = UniformDensity.around(np.array([[0.0, 0.0], [2.0, 4.0]]))
    inside = u.pdf([1.0, 1.0])
    assert u.pdf([100.0, -100.0]) == inside
    assert inside == pytest.approx(1 / float(np.prod(u.high - u.low)))


def test_fit_density_falls_back_below_min_samples():
    assert isinstance(fit_density(np.zeros((3, 2)), min_samples=5), UniformDensity)
    assert isinstance(fit_density(np.random.default_rng(0).normal(size=(6, 2)), min_samples=5), Kde)
    with pytest.raises(InsufficientDataError):
        fit_density([], min_samples=5)


def test_state_priors_validation():
    p = StatePriors.from_counts({State.PP: 60, State.MP: 20, State.MM: 20})
    assert p.as_tuple() == pytest.approx((0.6, 0.2, 0.2))
    assert p.p_false_correct == 0.0
    with pytest.raises(ValueError):
        StatePriors(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        StatePriors(1.2, -0.2, 0.0)


# -- relational model training --------------------------------------------

def _box(k, row=0):
    return BBox(60.0 * k + 30, 40.0 + 50 * row, 40.0, 25.0)


def _scene(i, n_pp, n_mp, n_fp, cats=("Car",)):
    anns, hyps = [], []
    for k in range(n_pp + n_mp):
        cat = cats[k % len(cats)]
        a = annotation(cat, _box(k), k % 4)
        anns.append(a)
        vp = a.viewpoint if k < n_pp else (a.viewpoint + 1) % 4
        hyps.append(ObjectHypothesis(cat, a.box, 0.9 if k < n_pp else 0.5, vp))
    for k in range(n_fp):
        hyps.append(ObjectHypothesis(cats[k % len(cats)], _box(k, row=3), 0.2, k % 4))
    return Scene(f"0000_{i:06d}", hyps, anns)


def test_all_correct_training_set():
    scenes = [_scene(i, 4, 0, 0) for i in range(10)]
    model = fit_relational_model(scenes, RelationFormat.RF1, K=4)
    assert model.priors["Car"].as_tuple() == (1.0, 0.0, 0.0)
    states = {state for (state, _) in model.pairs[("Car", "Car")].cells}
    assert states == {State.PP}


def test_priors_from_state_proportions():
    scenes = [_scene(i, 3, 1, 1) for i in range(20)]
    model = fit_relational_model(scenes, RelationFormat.RF2, K=4)
    assert model.priors["Car"].as_tuple() == pytest.approx((0.6, 0.2, 0.2))
    assert sum(model.priors["Car"].as_tuple()) == pytest.approx(1.0, abs=1e-12)


def test_pair_count_is_categories_squared():
    single = fit_relational_model([_scene(i, 3, 1, 1) for i in range(5)], RelationFormat.RF1, 4)
    assert len(single.pairs) == 1
    two = fit_relational_model([_scene(i, 4, 2, 2, cats=("Car", "Van")) for i in range(5)], RelationFormat.RF1, 4)
    assert sorted(two.pairs) == [("Car", "Car"), ("Car", "Van"), ("Van", "Car"), ("Van", "Van")]


def test_cells_have_format_dimension():
    scenes = [_scene(i, 3, 1, 1) for i in range(20)]
    for fmt in RelationFormat:
        model = fit_relational_model(scenes, fmt, 4)
        for pm in model.pairs.values():
            assert pm.fallback.dim == fmt.dim
            assert all(c.dim == fmt.dim for c in pm.cells.values())


def test_sparse_cells_use_fallback():
    scenes = [_scene(i, 3, 1, 1) for i in range(2)]
    model = fit_relational_model(scenes, RelationFormat.RF1, 4, min_samples=5)
    pm = model.pairs[("Car", "Car")]
    for key, n in pm.counts.items():
        assert (key in pm.cells) == (n >= 5)
    f = np.zeros((1, 6))
    assert np.all(np.isfinite(model.true_log_density("Car", "Car", f)))
    assert np.all(np.isfinite(model.false_log_density("Car", "Car", f)))


def test_training_is_deterministic():
    scenes = [_scene(i, 3, 1, 1) for i in range(10)]
    a = fit_relational_model(scenes, RelationFormat.RF1, 4)
    b = fit_relational_model(scenes, RelationFormat.RF1, 4)
    f = np.random.default_rng(1).normal(size=(30, 6))
    assert np.array_equal(a.true_log_density("Car", "Car", f), b.true_log_density("Car", "Car", f))


def test_training_errors():
    with pytest.raises(InsufficientDataError):
        fit_relational_model([], RelationFormat.RF1, 4)
    only_annotations = [Scene("0000_000000", (), (annotation("Car", _box(0), 0), annotation("Car", _box(1), 1)))]
    with pytest.raises(InsufficientDataError):
        fit_relational_model(only_annotations, RelationFormat.RF1, 4)


def test_bin_prior_is_smoothed():
    scenes = [_scene(i, 3, 1, 1) for i in range(10)]
    model = fit_relational_model(scenes, RelationFormat.RF1, 8)
    q = model.bin_prior("Car")
    assert q.sum() == pytest.approx(1.0)
    assert np.all(q > 0)
