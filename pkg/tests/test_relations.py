import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxview.relations import (RelationFormat, extract_relation, extract_scene_relations, featurize,
                               pair_features)
from ctxview.scene import BBox, ObjectHypothesis, Scene


def obj(cx, cy, w, h, vp=0, cat="Car"):
    return ObjectHypothesis(cat, BBox(cx, cy, w, h), 0.5, vp)


def test_identity_relation():
    a = obj(10, 20, 4, 2, vp=2)
    r = extract_relation(a, a, RelationFormat.RF1)
    assert (r.rx, r.ry, r.rsw, r.rsh, r.neighbor_viewpoint) == (0, 0, 1, 1, 2)


def test_worked_relation():
    oi, oj = obj(100, 50, 40, 20), obj(180, 70, 80, 40)
    r = extract_relation(oi, oj, RelationFormat.RF1)
    assert (r.rx, r.ry, r.rsw, r.rsh) == (2.0, 1.0, 2.0, 2.0)
    r2 = extract_relation(oi, oj, RelationFormat.RF2)
    assert r2.neighbor_viewpoint is None
    assert r2.format is RelationFormat.RF2
    assert featurize(r2).shape == (4,)
    assert featurize(r).shape == (6,)


def test_relation_is_asymmetric():
    oi, oj = obj(100, 50, 40, 20), obj(180, 70, 80, 40)
    assert featurize(extract_relation(oi, oj)).tolist() != featurize(extract_relation(oj, oi)).tolist()


@pytest.mark.parametrize("m,expected", [(0, 0), (1, 0), (3, 6), (5, 20)])
def test_scene_relation_count(m, expected):
    objs = [obj(10 * k, 5, 4, 3) for k in range(m)]
    assert len(extract_scene_relations(Scene("x", objs))) == expected


def test_featurize_examples():
    oi, oj = obj(100, 50, 40, 20), obj(180, 70, 80, 40)
    assert featurize(extract_relation(oi, oj, RelationFormat.RF2)).tolist() == [2, 1, 2, 2]
    f0 = featurize(extract_relation(oi, obj(180, 70, 80, 40, vp=0), RelationFormat.RF1, K=8))
    assert f0[4:].tolist() == [1.0, 0.0]
    f2 = featurize(extract_relation(oi, obj(180, 70, 80, 40, vp=2), RelationFormat.RF1, K=8))
    assert f2[4] == pytest.approx(0.0, abs=1e-15)
    assert f2[5] == 1.0


def test_featurize_injective_on_bin_centers():
    for K in (2, 3, 8, 17, 100, 360):
        codes = {(round(math.cos(2 * math.pi * b / K), 12), round(math.sin(2 * math.pi * b / K), 12))
                 for b in range(K)}
        assert len(codes) == K


def test_format_parse():
    assert RelationFormat.parse("RF2") is RelationFormat.RF2
    with pytest.raises(ValueError):
        RelationFormat.parse("rf3")


ints = st.integers(-300, 300)
sizes = st.integers(1, 120)
int_objects = st.lists(st.builds(obj, ints, ints, sizes, sizes, st.integers(0, 7)), min_size=2, max_size=6)


@settings(max_examples=100)
@given(int_objects, ints, ints, st.sampled_from([0.25, 0.5, 2.0, 8.0]))
def test_translation_and_scale_invariance_exact(objs, dx, dy, c):
    # integer coordinates and power-of-two scales keep all arithmetic exact
    moved = [obj(o.box.cx + dx, o.box.cy + dy, o.box.w, o.box.h, o.viewpoint) for o in objs]
    scaled = [obj(o.box.cx * c, o.box.cy * c, o.box.w * c, o.box.h * c, o.viewpoint) for o in objs]
    base = [featurize(r).tolist() for r in extract_scene_relations(objs)]
    assert [featurize(r).tolist() for r in extract_scene_relations(moved)] == base
    assert [featurize(r).tolist() for r in extract_scene_relations(scaled)] == base


@settings(max_examples=100)
@given(st.lists(st.builds(obj, st.floats(-300, 300), st.floats(-300, 300), st.floats(1, 100), st.floats(1, 100)),
                min_size=2, max_size=6),
       st.floats(-50, 50), st.floats(0.1, 10))
def test_similarity_invariance_arbitrary(objs, d, c):
    moved = [obj((o.box.cx + d) * c, (o.box.cy - d) * c, o.box.w * c, o.box.h * c, o.viewpoint) for o in objs]
    a = np.array([featurize(r) for r in extract_scene_relations(objs)])
    b = np.array([featurize(r) for r in extract_scene_relations(moved)])
    np.testing.assert_allclose(b, a, rtol=1e-9, atol=1e-9)


@settings(max_examples=60)
@given(int_objects, st.sampled_from(list(RelationFormat)))
def test_pair_features_match_scalar_path(objs, fmt):
    feats, pairs = pair_features(objs, fmt, 8)
    expected = [featurize(extract_relation(objs[i], objs[j], fmt, 8)) for i, j in pairs]
    assert feats.tolist() == [e.tolist() for e in expected]
    assert len(pairs) == len(objs) * (len(objs) - 1)
