"""Matching, interpolated AP, and the full evaluator against brute force."""

import numpy as np
import pytest

from msfk.datasets import Annotation, Category, Dataset, ImageRecord, IntegrityError, ground_truths
from msfk.evaluation import EvalConfig, average_precision, evaluate, match_detections
from msfk.geometry import BBox, Detection, GroundTruth

from bruteforce import bf_evaluate
from util import make_dataset, random_detections


def det(box, score, class_id=1, image_id=1):
    return Detection(box, score, class_id, image_id)


def gt(box, class_id=1, image_id=1):
    return GroundTruth(box, class_id, image_id)


class TestConfig:
    def test_defaults(self):
        cfg = EvalConfig()
        assert len(cfg.iou_thresholds) == 10
        assert cfg.iou_thresholds[0] == 0.5
        assert cfg.iou_thresholds[-1] == 0.95
        assert cfg.recall_points == 101
        assert cfg.max_dets_per_image == 100

    def test_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(iou_thresholds=(0.5, 0.5))
        with pytest.raises(ValueError):
            EvalConfig(iou_thresholds=())
        with pytest.raises(ValueError):
            EvalConfig(recall_points=1)


class TestMatchDetections:
    def test_simple_tp(self):
        labeled = match_detections(
            [det(BBox(0, 0, 10, 10), 0.9)],
            [gt(BBox(0, 0, 10, 8))],  # IoU 0.8
            0.5,
        )
        assert labeled[0][1] is True

    def test_single_match_rule(self):
        box = BBox(0, 0, 10, 10)
        labeled = match_detections([det(box, 0.9), det(box, 0.8)], [gt(box)], 0.5)
        assert [flag for _, flag in labeled] == [True, False]
        assert labeled[0][0].score == 0.9

    def test_greedy_order_hand_trace(self):
        # highest-score detection takes the shared box first, the exact
        # duplicate then goes unmatched even though it fits perfectly
        g0, g1 = gt(BBox(0, 0, 10, 10)), gt(BBox(20, 0, 30, 10))
        a = det(BBox(0, 0, 12, 10), 0.9)    # IoU 0.833 with g0 only
        b = det(BBox(0, 0, 10, 10), 0.8)    # IoU 1.0 with g0, now taken
        c = det(BBox(19, 0, 29, 10), 0.7)   # IoU 0.818 with g1
        labeled = match_detections([a, b, c], [g0, g1], 0.5)
        assert [(d.score, flag) for d, flag in labeled] == [(0.9, True), (0.8, False), (0.7, True)]

    def test_iou_tie_takes_lower_gt_index(self):
        g0, g1 = gt(BBox(0, 0, 10, 10)), gt(BBox(10, 0, 20, 10))
        middle = det(BBox(5, 0, 15, 10), 0.9)  # IoU 1/3 with both
        labeled = match_detections([middle, det(BBox(0, 0, 10, 10), 0.8)], [g0, g1], 0.3)
        assert labeled[0][1] is True
        # g0 was taken by the tie, so the exact copy of g0 is now unmatched
        assert labeled[1][1] is False


class TestAveragePrecision:
    def test_perfect_detector(self):
        assert average_precision([True], 1) == 1.0

    def test_tp_then_fp(self):
        assert average_precision([True, False], 1) == 1.0

    def test_fp_then_tp(self):
        assert average_precision([False, True], 1) == 0.5

    def test_no_gt_no_dets_skipped(self):
        assert average_precision([], 0) is None

    def test_no_gt_with_dets_is_zero(self):
        assert average_precision([False, False], 0) == 0.0

    def test_bounded(self):
        rng = np.random.default_rng(81)
        for _ in range(100):
            n = int(rng.integers(1, 20))
            labels = [bool(rng.integers(0, 2)) for _ in range(n)]
            num_gt = max(1, sum(labels) + int(rng.integers(0, 4)))
            ap = average_precision(labels, num_gt)
            assert 0.0 <= ap <= 1.0


def dataset_from_gts(gts, num_classes=3, size=(100, 100)):
    image_ids = sorted({g.image_id for g in gts}) or [1]
    images = tuple(ImageRecord(i, f"{i}.jpg", size[0], size[1]) for i in image_ids)
    categories = tuple(Category(c, f"class_{c}") for c in range(1, num_classes + 1))
    annotations = tuple(
        Annotation(i + 1, g.image_id, g.class_id,
                   (g.box.x1, g.box.y1, g.box.x2 - g.box.x1, g.box.y2 - g.box.y1))
        for i, g in enumerate(gts)
    )
    return Dataset(images, annotations, categories)


class TestEvaluate:
    def test_perfect_case(self):
        rng = np.random.default_rng(82)
        ds = make_dataset(rng, num_images=3, anns_per_image=(1, 3))
        dets = [
            Detection(g.box, 1.0, g.class_id, g.image_id)
            for g in ground_truths(ds)
        ]
        report = evaluate(ds, dets)
        assert report.map == 1.0
        assert report.map50 == 1.0
        assert report.map75 == 1.0

    def test_no_detections(self):
        rng = np.random.default_rng(83)
        ds = make_dataset(rng, num_images=2, anns_per_image=(1, 2))
        report = evaluate(ds, [])
        assert report.map == 0.0
        for c in report.classes:
            assert all(v == 0.0 for v in c.ap_by_iou.values())

    def test_handcrafted_fixture_matches_brute_force(self):
        gts = [
            gt(BBox(10, 10, 30, 30), 1, 1), gt(BBox(50, 50, 80, 80), 2, 1),
            gt(BBox(0, 0, 20, 20), 1, 2),
            gt(BBox(40, 10, 60, 40), 2, 3), gt(BBox(70, 70, 90, 90), 1, 3),
        ]
        dets = [
            det(BBox(11, 11, 30, 30), 0.95, 1, 1),   # near-exact
            det(BBox(50, 50, 79, 80), 0.9, 2, 1),
            det(BBox(5, 5, 22, 22), 0.7, 1, 2),      # moderate IoU
            det(BBox(40, 12, 61, 40), 0.85, 2, 3),
            det(BBox(0, 0, 9, 9), 0.6, 1, 3),        # miss
            det(BBox(70, 70, 90, 90), 0.4, 1, 3),    # late exact hit
        ]
        ds = dataset_from_gts(gts, num_classes=2)
        cfg = EvalConfig()
        report = evaluate(ds, dets, cfg)
        expected = bf_evaluate(
            [1, 2, 3], [1, 2], dets, gts, list(cfg.iou_thresholds)
        )
        for c in report.classes:
            assert c.ap_by_iou == expected[c.class_id]

    def test_random_instances_match_brute_force_exactly(self):
        rng = np.random.default_rng(84)
        cfg = EvalConfig()
        for _ in range(100):
            num_images = int(rng.integers(1, 6))
            gts = []
            dets = []
            for image_id in range(1, num_images + 1):
                for _ in range(int(rng.integers(0, 11))):
                    from util import random_box
                    gts.append(gt(random_box(rng), int(rng.integers(1, 4)), image_id))
                dets.extend(random_detections(rng, int(rng.integers(0, 11)),
                                              image_id=image_id))
            ds = dataset_from_gts(gts or [gt(BBox(0, 0, 1, 1), 1, 1)], num_classes=3)
            image_ids = [im.image_id for im in ds.images]
            dets = [d for d in dets if d.image_id in set(image_ids)]
            report = evaluate(ds, dets, cfg)
            expected = bf_evaluate(image_ids, [1, 2, 3],
                                   dets, ground_truths(ds), list(cfg.iou_thresholds))
            got = {c.class_id: c.ap_by_iou for c in report.classes}
            assert got == expected

    def test_ap_monotone_in_threshold(self):
        rng = np.random.default_rng(85)
        for _ in range(50):
            ds = make_dataset(rng, num_images=3, anns_per_image=(1, 4))
            dets = []
            for g in ground_truths(ds):
                if rng.uniform() < 0.7:
                    jitter = rng.uniform(-4, 4, size=4)
                    x1 = min(g.box.x1 + jitter[0], g.box.x2)
                    y1 = min(g.box.y1 + jitter[1], g.box.y2)
                    box = BBox(x1, y1, max(g.box.x2 + jitter[2], x1),
                               max(g.box.y2 + jitter[3], y1))
                    dets.append(Detection(box, float(rng.uniform(0.2, 1.0)),
                                          g.class_id, g.image_id))
            report = evaluate(ds, dets)
            for c in report.classes:
                values = [c.ap_by_iou[t] for t in sorted(c.ap_by_iou)]
                assert values == sorted(values, reverse=True)

    def test_appended_unmatched_low_score_detection_never_raises_ap(self):
        rng = np.random.default_rng(86)
        for _ in range(30):
            ds = make_dataset(rng, num_images=2, anns_per_image=(1, 3))
            dets = random_detections(rng, int(rng.integers(1, 10)))
            dets = [d for d in dets if d.image_id in {im.image_id for im in ds.images}]
            base = evaluate(ds, dets)
            lowest = min((d.score for d in dets), default=0.5)
            junk = Detection(BBox(95, 95, 99.5, 99.5), max(lowest - 0.1, 0.0), 1, 1)
            extended = evaluate(ds, dets + [junk])
            for b, e in zip(base.classes, extended.classes):
                for t in b.ap_by_iou:
                    assert e.ap_by_iou[t] <= b.ap_by_iou[t]

    def test_duplicate_detection_penalty(self):
        # two ground truths, two clean hits; epsilon-lower duplicates insert
        # an FP before the second TP and must strictly lower AP50
        gts = [gt(BBox(0, 0, 10, 10), 1, 1), gt(BBox(30, 0, 40, 10), 1, 1)]
        clean = [
            det(BBox(0, 0, 10, 10), 0.9, 1, 1),
            det(BBox(30, 0, 40, 10), 0.8, 1, 1),
        ]
        ds = dataset_from_gts(gts, num_classes=1)
        base = evaluate(ds, clean)
        duplicated = clean + [
            Detection(d.box, d.score - 0.01, d.class_id, d.image_id) for d in clean
        ]
        dup = evaluate(ds, duplicated)
        assert dup.classes[0].ap_by_iou[0.5] < base.classes[0].ap_by_iou[0.5]

    def test_zero_gt_class_excluded(self):
        gts = [gt(BBox(0, 0, 10, 10), 1, 1)]
        ds = dataset_from_gts(gts, num_classes=2)
        report = evaluate(ds, [det(BBox(0, 0, 10, 10), 0.9, 2, 1)])
        assert report.excluded_class_ids == (2,)
        assert [c.class_id for c in report.classes] == [1]

    def test_max_dets_cap(self):
        gts = [gt(BBox(0, 0, 10, 10), 1, 1)]
        ds = dataset_from_gts(gts, num_classes=1)
        # the true hit is ranked below 3 junk detections and the cap drops it
        dets = [det(BBox(50, 50, 60, 60), 0.9 - 0.01 * i, 1, 1) for i in range(3)]
        dets.append(det(BBox(0, 0, 10, 10), 0.5, 1, 1))
        capped = evaluate(ds, dets, EvalConfig(max_dets_per_image=3))
        assert capped.classes[0].ap_by_iou[0.5] == 0.0
        uncapped = evaluate(ds, dets, EvalConfig(max_dets_per_image=100))
        assert uncapped.classes[0].ap_by_iou[0.5] > 0.0

    def test_dangling_ids(self):
        ds = make_dataset(np.random.default_rng(87))
        with pytest.raises(IntegrityError):
            evaluate(ds, [det(BBox(0, 0, 1, 1), 0.5, 1, image_id=999)])
        with pytest.raises(IntegrityError):
            evaluate(ds, [det(BBox(0, 0, 1, 1), 0.5, 999, image_id=1)])


class TestReport:
    def test_all_column_equals_map50(self):
        rng = np.random.default_rng(88)
        ds = make_dataset(rng, num_images=3, anns_per_image=(1, 3))
        dets = [Detection(g.box, 0.9, g.class_id, g.image_id) for g in ground_truths(ds)]
        report = evaluate(ds, dets)
        payload = report.to_json_dict()
        assert payload["all"] == payload["map50"]

    def test_table_layout(self):
        rng = np.random.default_rng(89)
        ds = make_dataset(rng, num_images=2, anns_per_image=(1, 2))
        dets = [Detection(g.box, 1.0, g.class_id, g.image_id) for g in ground_truths(ds)]
        table = evaluate(ds, dets).format_table()
        header, row, _ = table.split("\n")
        assert header.split()[-1] == "All"
        assert row.split()[-1] == "1.000000"
