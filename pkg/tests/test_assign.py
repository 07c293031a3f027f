import math

import numpy as np
import pytest

from dcfl.assign import (
    DcflConfig,
    GtInstance,
    PredictionField,
    assign,
    assignment_to_dict,
    finalize_labels,
    labels_from_rle,
    labels_rle,
    maxiou_assign,
    prior_gt_gjsd,
    pt_score,
    select_cps,
    select_mps,
    uniform_predictions,
)
from dcfl.errors import ConfigError, ShapeError
from dcfl.gaussianstat import gaussian_from_box, gjsd
from dcfl.geom import OBox
from dcfl.priorfield import build_prior_field


def gt(cx, cy, w, h, theta=0.0, class_id=0, difficulty=0):
    return GtInstance(OBox(cx, cy, w, h, theta), class_id, difficulty)


def random_scene(rng, image=96, strides=(8, 16), n_gts=None):
    field = build_prior_field(image, image, strides=strides, scale_factor=4)
    count = int(rng.integers(1, 7)) if n_gts is None else n_gts
    gts = []
    for _ in range(count):
        w = rng.uniform(3, 40)
        h = w * rng.uniform(0.4, 1.0)
        gts.append(
            gt(
                rng.uniform(5, image - 5),
                rng.uniform(5, image - 5),
                w,
                h,
                rng.uniform(-math.pi / 2, math.pi / 2),
                class_id=int(rng.integers(0, 3)),
            )
        )
    return field, gts


class TestConfig:
    def test_defaults(self):
        cfg = DcflConfig()
        assert (cfg.k, cfg.q, cfg.g, cfg.w1, cfg.alpha) == (16, 12, 0.8, 0.7, 0.5)
        assert cfg.strides == (8, 16, 32, 64, 128)
        assert cfg.scale_factor == 4.0
        assert cfg.n_offsets == 9

    def test_q_exceeding_k_rejected(self):
        with pytest.raises(ConfigError):
            DcflConfig(k=16, q=20)

    def test_bad_g_rejected(self):
        with pytest.raises(ConfigError):
            DcflConfig(g=0.0)


class TestSelectCps:
    def test_single_prior_selected(self):
        field = build_prior_field(8, 8, strides=(8,), scale_factor=4)
        out = select_cps(field, [gt(4, 4, 10, 10)], k=16)
        assert out == [(0,)]

    def test_coincident_prior_ranks_first(self):
        field = build_prior_field(32, 32, strides=(8,), scale_factor=4)
        # gt identical to the prior box at (12, 12): side 32, axis aligned
        out = select_cps(field, [gt(12, 12, 32, 32)], k=5)
        locs = field.locations[list(out[0])]
        np.testing.assert_array_equal(locs[0], [12, 12])
        scores = prior_gt_gjsd(field, [gt(12, 12, 32, 32)])
        assert scores[out[0][0], 0] == 0.0

    def test_matches_bruteforce_sort(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            field, gts = random_scene(rng)
            scores = prior_gt_gjsd(field, gts, 0.5)
            got = select_cps(field, gts, k=16, scores=scores)
            for j in range(len(gts)):
                col = scores[:, j]
                oracle = sorted(range(field.num_priors), key=lambda i: (col[i], i))[:16]
                assert list(got[j]) == oracle

    def test_deliberate_ties_break_by_index(self):
        # shift prior 1 exactly onto prior 0: the two prior Gaussians become
        # bit-identical, so their scores tie exactly and the lower flat
        # index must win the better rank
        from dcfl.priorfield import OffsetField, update_priors

        field = build_prior_field(16, 8, strides=(8,), scale_factor=4)
        delta = 2.0 * (field.locations[0] - field.locations[1]) / 8.0
        offsets = np.zeros((2, 1, 2))
        offsets[1, 0] = delta
        moved = update_priors(field, OffsetField(offsets))
        np.testing.assert_array_equal(moved.locations[0], moved.locations[1])
        g = gt(9, 5, 16, 16)
        scores = prior_gt_gjsd(moved, [g])
        assert scores[0, 0] == scores[1, 0]
        out = select_cps(moved, [g], k=1)
        assert out == [(0,)]

    def test_matrix_matches_scalar_gjsd(self):
        rng = np.random.default_rng(22)
        field, gts = random_scene(rng, image=32)
        scores = prior_gt_gjsd(field, gts, 0.5)
        for i in (0, field.num_priors // 2, field.num_priors - 1):
            p = gaussian_from_box(field.prior_box(i))
            for j, g in enumerate(gts):
                expected = gjsd(p, gaussian_from_box(g.box), 0.5)
                assert scores[i, j] == pytest.approx(expected, abs=1e-9)


class TestPtScore:
    def test_direct_formula(self):
        g = gt(0, 0, 4, 4)
        # disjoint box contributes no IoU: PT = 0.5 * cls
        assert pt_score([0.6], OBox(100, 100, 4, 4, 0), g) == pytest.approx(0.3)
        # half cls, 0.4 IoU worth of overlap
        box = OBox(0, 0, 4, 4, 0)
        assert pt_score([1.0], box, g) == 1.0

    def test_perfect_prediction(self):
        g = gt(3, 4, 6, 2, 0.5)
        assert pt_score([1.0], OBox(3, 4, 6, 2, 0.5), g) == 1.0

    def test_worthless_prediction(self):
        g = gt(0, 0, 4, 4)
        assert pt_score([0.0], OBox(50, 50, 2, 2, 0), g) == 0.0


class TestSelectMps:
    def test_q_at_least_cps_keeps_all(self):
        field = build_prior_field(16, 16, strides=(8,), scale_factor=4)
        gts = [gt(8, 8, 10, 10)]
        cps = select_cps(field, gts, k=16)
        preds = uniform_predictions(field)
        assert select_mps(cps, preds, gts, q=16) == [tuple(cps[0])]

    def test_equal_pt_keeps_lowest_indices(self):
        field = build_prior_field(32, 32, strides=(8,), scale_factor=4)
        gts = [gt(16, 16, 8, 8)]
        cps = [(5, 2, 9, 0)]
        scores = np.full((field.num_priors, 1), 0.5)
        boxes = np.tile([1000.0, 1000.0, 1.0, 1.0, 0.0], (field.num_priors, 1))
        preds = PredictionField(scores, boxes)  # all PT identical (0.25)
        assert select_mps(cps, preds, gts, q=2) == [(0, 2)]

    def test_matches_bruteforce_sort(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            field, gts = random_scene(rng, image=48)
            n = field.num_priors
            preds = PredictionField(
                rng.random((n, 3)),
                np.column_stack(
                    [
                        rng.uniform(0, 48, n),
                        rng.uniform(0, 48, n),
                        rng.uniform(2, 30, n),
                        rng.uniform(2, 30, n),
                        rng.uniform(-1.5, 1.5, n),
                    ]
                ),
            )
            cps = select_cps(field, gts, k=16)
            got = select_mps(cps, preds, gts, q=12)
            for j, g in enumerate(gts):
                pts = {i: pt_score(preds.scores[i], preds.box(i), g) for i in cps[j]}
                oracle = sorted(cps[j], key=lambda i: (-pts[i], i))[:12]
                assert list(got[j]) == oracle


class TestFinalizeLabels:
    def test_center_prior_scores_one_and_passes(self):
        field = build_prior_field(8, 8, strides=(8,), scale_factor=4)
        gts = [gt(4, 4, 32, 32)]  # gt centered on the single prior
        result = finalize_labels([(0,)], field, gts, DcflConfig())
        assert result.per_gt[0].positives == (0,)
        assert result.per_gt[0].dgmm_scores[0] == pytest.approx(1.0, abs=1e-12)
        assert math.exp(-0.8) == pytest.approx(0.4493, abs=1e-4)

    def test_far_prior_negative_without_fallback(self):
        field = build_prior_field(16, 8, strides=(8,), scale_factor=4)
        # gt sits on prior 0; prior 1 is ~80 sigma away for a 0.4 px box
        gts = [gt(4.0, 4.0, 0.4, 0.4)]
        result = finalize_labels([(0, 1)], field, gts, DcflConfig())
        assert 1 not in result.per_gt[0].positives
        assert result.labels[1] == -1

    def test_fallback_keeps_best_sample(self):
        field = build_prior_field(16, 8, strides=(8,), scale_factor=4)
        # tiny gt between the two priors: every candidate fails the gate
        gts = [gt(7.0, 4.0, 0.5, 0.5)]
        result = finalize_labels([(0, 1)], field, gts, DcflConfig())
        assert result.per_gt[0].positives == (0,)
        assert result.per_gt[0].dgmm_scores[0] < math.exp(-0.8)

    def test_contested_prior_goes_to_lower_gt_index(self):
        field = build_prior_field(8, 8, strides=(8,), scale_factor=4)
        twin = gt(4, 4, 32, 32)
        result = finalize_labels([(0,), (0,)], field, [twin, twin], DcflConfig())
        assert result.labels[0] == 0
        assert result.per_gt[0].positives == (0,)
        # the losing twin has no other candidate left to reclaim
        assert result.per_gt[1].positives == ()

    def test_emptied_gt_reclaims_unassigned_candidate(self):
        field = build_prior_field(16, 8, strides=(8,), scale_factor=4)
        twin = gt(4, 4, 32, 32)
        result = finalize_labels([(0, 1), (0, 1)], field, [twin, twin], DcflConfig())
        assert result.per_gt[0].positives and result.per_gt[1].positives
        assert set(result.per_gt[0].positives).isdisjoint(result.per_gt[1].positives)


class TestAssign:
    def test_every_gt_gets_a_positive(self):
        rng = np.random.default_rng(24)
        cfg = DcflConfig(strides=(8, 16))
        for _ in range(100):
            field, gts = random_scene(rng)
            result = assign((96, 96), gts, cfg)
            for a in result.per_gt:
                assert len(a.positives) >= 1

    def test_nesting_invariant(self):
        rng = np.random.default_rng(25)
        cfg = DcflConfig(strides=(8, 16))
        for _ in range(20):
            field, gts = random_scene(rng)
            result = assign((96, 96), gts, cfg)
            for a in result.per_gt:
                assert set(a.positives) <= set(a.mps) <= set(a.cps)
                assert len(a.cps) == min(cfg.k, field.num_priors)
                assert len(a.mps) == min(cfg.q, len(a.cps))

    def test_labels_consistent_with_per_gt(self):
        rng = np.random.default_rng(26)
        field, gts = random_scene(rng)
        result = assign((96, 96), gts, DcflConfig(strides=(8, 16)))
        for a in result.per_gt:
            for i in a.positives:
                assert result.labels[i] == a.gt_index
        assert result.num_positives == sum(len(a.positives) for a in result.per_gt)

    def test_deterministic(self):
        rng = np.random.default_rng(27)
        _, gts = random_scene(rng)
        cfg = DcflConfig(strides=(8, 16))
        r1 = assign((96, 96), gts, cfg)
        r2 = assign((96, 96), gts, cfg)
        np.testing.assert_array_equal(r1.labels, r2.labels)
        assert r1.per_gt == r2.per_gt

    def test_empty_gts(self):
        result = assign((32, 32), [], DcflConfig(strides=(8,)))
        assert result.per_gt == ()
        assert np.all(result.labels == -1)

    def test_joint_scaling_preserves_cps_sets(self):
        rng = np.random.default_rng(28)
        for _ in range(10):
            field, gts = random_scene(rng, image=64, strides=(8, 16))
            cps = select_cps(field, gts, k=16)
            for c in (0.1, 10.0):
                field_c = build_prior_field(64 * c, 64 * c, strides=(8 * c, 16 * c), scale_factor=4)
                gts_c = [
                    GtInstance(
                        OBox(g.box.cx * c, g.box.cy * c, g.box.w * c, g.box.h * c, g.box.theta),
                        g.class_id,
                    )
                    for g in gts
                ]
                cps_c = select_cps(field_c, gts_c, k=16)
                for a, b in zip(cps, cps_c):
                    assert set(a) == set(b)

    def test_prediction_shape_mismatch(self):
        field = build_prior_field(32, 32, strides=(8,), scale_factor=4)
        preds = uniform_predictions(field)
        with pytest.raises(ShapeError):
            assign((64, 64), [gt(10, 10, 4, 4)], DcflConfig(strides=(8,)), predictions=preds)

    def test_scale_balance_vs_maxiou(self):
        # positives(4 px) / positives(64 px) must be steeper under the
        # coarse-to-fine pipeline than under the max-IoU baseline
        rng = np.random.default_rng(29)
        cfg = DcflConfig()
        gts = []
        for side in (4.0, 16.0, 64.0):
            for _ in range(10):
                gts.append(
                    gt(
                        rng.uniform(40, 760),
                        rng.uniform(40, 760),
                        side,
                        side,
                        rng.uniform(-math.pi / 2, math.pi / 2),
                    )
                )
        field = build_prior_field(800, 800, cfg.strides, cfg.scale_factor)
        ours = assign((800, 800), gts, cfg)
        base = maxiou_assign(field, gts)

        def mean_pos(result, lo, hi):
            counts = [
                len(a.positives)
                for a, g in zip(result.per_gt, gts)
                if lo <= g.box.size < hi
            ]
            return sum(counts) / len(counts)

        ours_ratio = mean_pos(ours, 2, 8) / mean_pos(ours, 32, 128)
        base_ratio = mean_pos(base, 2, 8) / max(mean_pos(base, 32, 128), 1e-9)
        assert ours_ratio > base_ratio


class TestMaxIouAssign:
    def test_identical_prior_is_positive(self):
        field = build_prior_field(8, 8, strides=(8,), scale_factor=4)
        gts = [gt(4, 4, 32, 32)]
        result = maxiou_assign(field, gts)
        assert result.per_gt[0].positives == (0,)

    def test_tiny_gt_gets_nothing(self):
        field = build_prior_field(64, 64, strides=(8,), scale_factor=4)
        result = maxiou_assign(field, [gt(32, 32, 4, 4)])
        assert result.per_gt[0].positives == ()
        assert np.all(result.labels == -1)

    def test_empty_gts(self):
        field = build_prior_field(32, 32, strides=(8,), scale_factor=4)
        result = maxiou_assign(field, [])
        assert np.all(result.labels == -1)

    def test_threshold_validation(self):
        field = build_prior_field(32, 32, strides=(8,), scale_factor=4)
        with pytest.raises(ConfigError):
            maxiou_assign(field, [], pos_thr=0.4, neg_thr=0.5)


class TestSerialization:
    def test_rle_roundtrip(self):
        rng = np.random.default_rng(30)
        labels = rng.integers(-1, 3, size=200)
        runs = labels_rle(labels)
        np.testing.assert_array_equal(labels_from_rle(runs, 200), labels)

    def test_dict_shape(self):
        rng = np.random.default_rng(31)
        _, gts = random_scene(rng)
        cfg = DcflConfig(strides=(8, 16))
        result = assign((96, 96), gts, cfg)
        doc = assignment_to_dict(result, cfg)
        assert list(doc) == ["config", "num_priors", "per_gt", "per_prior_labels"]
        assert doc["per_prior_labels"]["encoding"] == "rle"
        total = sum(count for _, count in doc["per_prior_labels"]["runs"])
        assert total == doc["num_priors"]
