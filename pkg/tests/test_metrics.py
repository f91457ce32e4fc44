import numpy as np
import pytest

from weakseg.metrics import EvalReport, binarize, dice, expansion_ratio, size_bounds
from weakseg.tensor import Tensor


def dice_bruteforce(a, b):
    """Pixel-by-pixel counting loop, independent of the vectorized path."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    inter = na = nb = 0
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            na += a[y, x]
            nb += b[y, x]
            inter += a[y, x] and b[y, x]
    return 1.0 if na + nb == 0 else 2.0 * inter / (na + nb)


class TestBinarize:
    def test_inclusive_threshold(self):
        probs = Tensor(np.full((1, 2, 2), 0.5))
        assert binarize(probs, 0.5).all()

    def test_degenerate_high_threshold(self):
        probs = Tensor(np.random.default_rng(0).uniform(0, 0.99, (1, 4, 4)))
        assert not binarize(probs, 1.0 - 1e-9).any()

    def test_monotone_in_threshold(self):
        probs = np.random.default_rng(1).uniform(0, 1, (8, 8))
        lower = binarize(probs, 0.3)
        higher = binarize(probs, 0.7)
        assert not np.any(higher & ~lower)

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2)), 0.0)


class TestDice:
    def test_identical_masks(self):
        m = np.zeros((4, 4), dtype=bool)
        m[1:3, 1:3] = True
        assert dice(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = True
        b[3, 3] = True
        assert dice(a, b) == 0.0

    def test_half_overlap_oracle(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, :4] = True          # |A| = 4
        b[0, 2:], b[1, :2] = True, True  # |B| = 4, overlap 2
        assert dice(a, b) == 0.5

    def test_both_empty_is_one(self):
        z = np.zeros((3, 3), dtype=bool)
        assert dice(z, z) == 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            dice(np.zeros((2, 2), bool), np.zeros((3, 3), bool))

    def test_matches_bruteforce_on_100_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.random((6, 6)) < rng.uniform(0, 1)
            b = rng.random((6, 6)) < rng.uniform(0, 1)
            assert abs(dice(a, b) - dice_bruteforce(a, b)) < 1e-12

    def test_symmetry_and_self_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = rng.random((5, 5)) < 0.5
            b = rng.random((5, 5)) < 0.5
            assert dice(a, b) == dice(b, a)
            assert dice(a, a) == 1.0


class TestSizeBounds:
    def test_hand_example(self):
        masks = []
        for area in (100, 200, 150):
            m = np.zeros((20, 20), dtype=bool)
            m.reshape(-1)[:area] = True
            masks.append(m)
        b = size_bounds(masks)
        assert b.a == pytest.approx(90.0)
        assert b.b == pytest.approx(220.0)

    def test_single_mask(self):
        m = np.zeros((10, 10), dtype=bool)
        m[:5, :4] = True  # area 20
        b = size_bounds([m])
        assert (b.a, b.b) == (pytest.approx(18.0), pytest.approx(22.0))

    def test_ordering_invariant(self):
        rng = np.random.default_rng(4)
        masks = [rng.random((8, 8)) < 0.5 for _ in range(10)]
        masks = [m if m.any() else np.ones((8, 8), bool) for m in masks]
        b = size_bounds(masks)
        assert b.a < b.b

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            size_bounds([np.zeros((4, 4), dtype=bool)])


class TestExpansionRatio:
    def test_identity(self):
        m = np.zeros((5, 5), dtype=bool)
        m[1:4, 1:4] = True
        assert expansion_ratio(m, m) == 1.0

    def test_empty_prediction(self):
        gt = np.ones((4, 4), dtype=bool)
        assert expansion_ratio(np.zeros((4, 4), bool), gt) == 0.0

    def test_definition_arithmetic(self):
        gt = np.zeros((20, 20), dtype=bool)
        gt.reshape(-1)[:100] = True
        pred = np.zeros((20, 20), dtype=bool)
        pred.reshape(-1)[:150] = True
        assert expansion_ratio(pred, gt) == pytest.approx(1.5)

    def test_empty_gt_rejected(self):
        with pytest.raises(ValueError):
            expansion_ratio(np.ones((2, 2), bool), np.zeros((2, 2), bool))

    def test_scale_consistent_under_2x_blockup(self):
        rng = np.random.default_rng(5)
        pred = rng.random((6, 6)) < 0.5
        gt = rng.random((6, 6)) < 0.5
        gt[0, 0] = True
        big_pred = np.repeat(np.repeat(pred, 2, 0), 2, 1)
        big_gt = np.repeat(np.repeat(gt, 2, 0), 2, 1)
        assert expansion_ratio(pred, gt) == pytest.approx(
            expansion_ratio(big_pred, big_gt))


class TestEvalReport:
    def test_mean_is_arithmetic_mean(self):
        rep = EvalReport([0, 1], [0.4, 0.8], [10, 20], [12, 18], [0.8, 1.1])
        assert rep.mean_dice == pytest.approx(0.6)
        assert rep.mean_expansion == pytest.approx(0.95)

    def test_csv_schema(self):
        rep = EvalReport([3], [0.5], [7], [9], [7 / 9])
        lines = rep.to_csv().strip().split("\n")
        assert lines[0] == "sample_id,dice,pred_area,gt_area,expansion_ratio"
        assert lines[1].startswith("3,0.5,7,9,")
