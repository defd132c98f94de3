"""Property tests for the invariants each module promises."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semmap import io
from semmap.bki import OsbkiMap, SbkiMap, SparseKernel, kernel_eval
from semmap.geometry import FREE_LABEL, LabeledCloud, cell_key, sample_free_points, traverse_ray
from semmap.metrics import ConfusionAccumulator, finalize
from semmap.ndt import NdtMap

coord = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)
cell = st.sampled_from([0.05, 0.1, 0.15, 0.2])
fast = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def clouds(draw, max_points=40, n_classes=4):
    n = draw(st.integers(1, max_points))
    pts = draw(arrays(np.float64, (n, 3), elements=st.floats(-0.5, 0.5)))
    labels = draw(arrays(np.int64, n, elements=st.sampled_from([*range(n_classes), FREE_LABEL])))
    return pts, labels


@fast
@given(vec3, vec3, cell)
def test_traversal_is_face_connected(a, b, c):
    keys = traverse_ray(a, b, c)
    assert keys[0] == cell_key(a, c) and keys[-1] == cell_key(b, c)
    steps = np.abs(np.diff(np.array(keys), axis=0)).sum(axis=1) if len(keys) > 1 else np.empty(0)
    assert np.all(steps == 1)
    assert len(set(keys)) == len(keys)


@fast
@given(vec3, vec3, cell)
def test_traversal_reverses(a, b, c):
    assert set(traverse_ray(a, b, c)) == set(traverse_ray(b, a, c))


@fast
@given(vec3, vec3, st.floats(0.01, 0.5), st.floats(0.0, 0.3))
def test_free_samples_short_of_endpoint(a, b, spacing, margin):
    length = float(np.linalg.norm(b - a))
    for p in sample_free_points(a, b, spacing, margin):
        d = float(np.linalg.norm(p.position - a))
        assert d < length - margin + 1e-9


@fast
@given(st.floats(0.01, 2.0), st.floats(0.1, 5.0), st.lists(st.floats(0.0, 3.0), min_size=2, max_size=20))
def test_kernel_support_and_monotone(length, sigma0, ds):
    k = SparseKernel(length, sigma0)
    ds = np.sort(np.array(ds))
    vals = kernel_eval(k, ds)
    assert np.all(vals[ds >= length] == 0)
    assert np.all(np.diff(vals) <= 1e-12 * sigma0)
    assert np.all(vals <= sigma0 + 1e-12)


@fast
@given(arrays(np.float64, (30, 3), elements=st.floats(-1.0, 1.0)), st.randoms(use_true_random=False))
def test_welford_order_independent(pts, rnd):
    a = NdtMap(5.0, 2).insert_points(pts, np.ones(len(pts), int))
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    b = NdtMap(5.0, 2).insert_points(pts[perm], np.ones(len(pts), int))
    ca, cb = a.cell((0, 0, 0)), b.cell((0, 0, 0))
    if ca.n:
        scale = max(1.0, float(np.abs(ca.m2).max()))
        np.testing.assert_allclose(ca.mean, cb.mean, atol=1e-12)
        np.testing.assert_allclose(ca.m2, cb.m2, atol=1e-9 * scale)
        assert np.all(np.linalg.eigvalsh(ca.m2) >= -1e-9 * scale)


@fast
@given(clouds())
def test_hits_never_lower_occupancy(cloud):
    pts, labels = cloud
    m = NdtMap(0.1, 4).insert_points(pts[:1], [0])
    key = cell_key(pts[0], 0.1)
    before = m.cell(key).log_odds
    sem = labels != FREE_LABEL
    if sem.any():
        m.insert_points(pts[sem], labels[sem])
    assert m.cell(key).log_odds >= before


@fast
@given(clouds(), st.integers(1, 4))
def test_osbki_semantics_ignore_free_count(cloud, factor):
    pts, labels = cloud
    free = labels == FREE_LABEL
    extra = np.repeat(pts[free], factor, axis=0)
    a = OsbkiMap(0.1, 4, SparseKernel(0.2))
    b = OsbkiMap(0.1, 4, SparseKernel(0.2))
    a.integrate_cloud(LabeledCloud(np.zeros(3), pts, labels))
    b.integrate_cloud(LabeledCloud(
        np.zeros(3), np.vstack([pts, extra]), np.concatenate([labels, np.full(len(extra), FREE_LABEL)])
    ))
    for key in a.grid.keys():
        np.testing.assert_allclose(a.voxel(key)[2:], b.voxel(key)[2:], atol=1e-12)


@fast
@given(clouds())
def test_bki_support_grows_with_length(cloud):
    pts, labels = cloud
    keys = []
    for length in (0.1, 0.4):
        m = SbkiMap(0.1, 4, SparseKernel(length))
        m.integrate_cloud(LabeledCloud(np.zeros(3), pts, labels))
        keys.append({tuple(k) for k in m.grid.keys()})
    assert keys[0] <= keys[1]


@fast
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    arrays(np.int64, (n, n), elements=st.integers(0, 100)),
    arrays(np.int64, n, elements=st.integers(0, 30)),
)))
def test_iou_below_pixel_accuracy(data):
    counts, invalid = data
    rep = finalize(ConfusionAccumulator(len(invalid), counts=counts, invalid_by_class=invalid))
    assert np.all(rep.per_class_iou <= rep.per_class_pacc + 1e-15)
    if rep.per_class_iou.size:
        assert rep.miou <= rep.mpacc + 1e-15
        assert 0.0 <= rep.inv_ratio <= 1.0


@fast
@given(clouds(), st.sampled_from(["sndt", "sbki", "osbki"]))
def test_serialization_round_trip(cloud, backend):
    pts, labels = cloud
    if backend == "sndt":
        m = NdtMap(0.1, 4)
    else:
        m = (SbkiMap if backend == "sbki" else OsbkiMap)(0.1, 4, SparseKernel(0.2))
    m.integrate_cloud(LabeledCloud(np.zeros(3), pts, labels))
    data = io.map_to_bytes(m)
    assert io.map_to_bytes(io.map_from_bytes(data)) == data
