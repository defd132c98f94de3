import numpy as np
import pytest

from semmap._validation import RejectedInputError
from semmap.bki import OsbkiMap, SbkiMap, SparseKernel
from semmap.estimator import SemanticMapper, evaluate_map
from semmap.geometry import CameraIntrinsics, LabeledCloud, Pose
from semmap.metrics import ConfusionAccumulator, accumulate, finalize
from semmap.ndt import NdtMap
from semmap.render import INVALID_FREE, UNKNOWN, RenderedFrame, Renderer, backproject

INTR = CameraIntrinsics(20.0, 20.0, 4.0, 4.0, 9, 9)


def _wall_cloud(z=2.0, label=3, with_free=False):
    g = np.linspace(-1.0, 1.0, 81)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])
    cloud = LabeledCloud(np.zeros(3), pts, np.full(len(pts), label))
    return cloud.with_free_samples(0.1, 0.05) if with_free else cloud


class TestBackproject:
    @pytest.mark.parametrize("backend", ["sndt", "sbki", "osbki"])
    def test_single_wall(self, backend):
        if backend == "sndt":
            m = NdtMap(0.1, 5)
        else:
            m = (SbkiMap if backend == "sbki" else OsbkiMap)(0.1, 5, SparseKernel(0.15))
        m.integrate_cloud(_wall_cloud(with_free=backend != "sndt"))
        frame = backproject(m, Pose.identity(), INTR)
        assert frame.labels[4, 4] == 3
        assert abs(frame.depth_hit[4, 4] - 2.0) <= 0.1

    def test_empty_map_unknown(self):
        frame = backproject(NdtMap(0.1, 3), Pose.identity(), INTR)
        assert np.all(frame.labels == UNKNOWN)
        assert np.all(frame.depth_hit == 0)

    def test_free_evidence_gives_invalid_free(self):
        m = NdtMap(0.1, 5)
        m.integrate_cloud(_wall_cloud())
        # look away from the wall through the freed cells
        behind = Pose(np.diag([1.0, -1.0, -1.0]), (0, 0, -0.05))
        frame = backproject(m, behind, INTR, max_range=0.9)
        assert np.all(frame.labels == UNKNOWN)
        frame = backproject(m, Pose(np.eye(3), (0, 0, 0.5)), INTR, max_range=1.0)
        assert np.all(frame.labels[3:6, 3:6] == INVALID_FREE)

    def test_deterministic(self, room_frames, small_intr):
        _, frames = room_frames
        m = SemanticMapper("sndt", cell_size=0.1).fit(frames, intrinsics=small_intr)
        r = m.renderer()
        a = r.render(frames[0][2], small_intr)
        b = r.render(frames[0][2], small_intr)
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_to_indexed(self):
        f = RenderedFrame(np.array([[1, INVALID_FREE, UNKNOWN]]), np.zeros((1, 3)))
        assert f.to_indexed().tolist() == [[1, 255, 254]]

    def test_unsupported_map(self):
        with pytest.raises(RejectedInputError):
            Renderer(object())


class TestAccumulate:
    def test_all_void_unchanged(self):
        acc = ConfusionAccumulator(3)
        accumulate(acc, np.ones((4, 4), int), np.zeros((4, 4), int), void_id=0)
        assert acc.counts.sum() == 0 and acc.total_valid_gt_count == 0

    def test_perfect_frame(self):
        gt = np.array([[1, 2], [2, 1]])
        acc = accumulate(ConfusionAccumulator(3), gt, gt, 0)
        assert np.count_nonzero(acc.counts - np.diag(np.diag(acc.counts))) == 0
        assert acc.invalid_count == 0

    def test_ten_percent_invalid(self):
        gt = np.ones((10, 10), int)
        pred = gt.copy()
        pred[0, :] = INVALID_FREE
        rep = finalize(accumulate(ConfusionAccumulator(2), pred, gt, 0))
        assert rep.inv_ratio == pytest.approx(0.10)

    def test_shape_mismatch(self):
        with pytest.raises(RejectedInputError):
            accumulate(ConfusionAccumulator(2), np.ones((2, 2)), np.ones((2, 3)), 0)

    def test_merge_is_associative(self):
        rng = np.random.default_rng(0)
        accs = []
        for _ in range(3):
            a = ConfusionAccumulator(4)
            accumulate(a, rng.integers(-2, 4, (5, 5)), rng.integers(0, 4, (5, 5)), 0)
            accs.append(a)
        x = accs[0].merge(accs[1]).merge(accs[2])
        y = accs[0].merge(accs[1].merge(accs[2]))
        np.testing.assert_array_equal(x.counts, y.counts)
        np.testing.assert_array_equal(x.invalid_by_class, y.invalid_by_class)


class TestFinalize:
    def test_diagonal(self):
        acc = ConfusionAccumulator(3, counts=np.diag([4, 5, 6]))
        rep = finalize(acc)
        assert rep.miou == rep.mpacc == 1.0 and rep.inv_ratio == 0.0

    def test_two_class_example(self):
        # class 1: TP 8, 2 invalid; class 2: TP 5, 2 predicted from... class 0 is void
        counts = np.zeros((3, 3), np.int64)
        counts[1, 1] = 8
        counts[2, 2] = 5
        counts[0, 2] = 2  # two false positives of class 2 from a non-evaluated class
        acc = ConfusionAccumulator(3, counts=counts, invalid_by_class=np.array([0, 2, 0]))
        rep = finalize(acc, gt_present_classes={1, 2})
        np.testing.assert_allclose(rep.per_class_iou, [0.8, 5 / 7])
        np.testing.assert_allclose(rep.per_class_pacc, [0.8, 1.0])
        assert round(rep.miou, 4) == 0.7571
        assert round(rep.mpacc, 4) == 0.9
        assert rep.inv_ratio == pytest.approx(2 / 17)

    def test_empty(self):
        rep = finalize(ConfusionAccumulator(3))
        assert rep.empty and np.isnan(rep.miou) and np.isnan(rep.inv_ratio)

    def test_all_pixels_normalization(self):
        gt = np.array([[0, 1], [1, 1]])
        pred = np.array([[1, UNKNOWN], [1, 1]])
        acc = accumulate(ConfusionAccumulator(2), pred, gt, 0)
        assert finalize(acc).inv_ratio == pytest.approx(1 / 3)
        assert finalize(acc, inv_normalization="all").inv_ratio == pytest.approx(1 / 4)

    def test_random_matrices_iou_below_pacc(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(2, 8))
            acc = ConfusionAccumulator(
                n, counts=rng.integers(0, 50, (n, n)), invalid_by_class=rng.integers(0, 10, n)
            )
            rep = finalize(acc)
            assert np.all(rep.per_class_iou <= rep.per_class_pacc + 1e-15)
            assert rep.miou <= rep.mpacc + 1e-15


def test_noise_degrades_quality(small_intr):
    from semmap import synth

    scores = []
    for p in (0.0, 0.1, 0.3):
        scene = synth.room_scene(noise=p, seed=2, n_poses=4)
        clean = scene.with_noise(0.0)
        noisy = [(*synth.render_frame(scene, q, small_intr, i), q) for i, q in enumerate(scene.trajectory)]
        gt = [(*synth.render_frame(clean, q, small_intr, i), q) for i, q in enumerate(scene.trajectory)]
        m = SemanticMapper("sndt", cell_size=0.1).fit(noisy, intrinsics=small_intr)
        scores.append(evaluate_map(m.map_, gt, small_intr, 0).miou)
    assert scores[0] >= scores[1] >= scores[2]
