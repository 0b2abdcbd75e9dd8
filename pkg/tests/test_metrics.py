import numpy as np
import pytest

from fusevos.core import LabelMask, ObjectSet
from fusevos.io import frame_filename, write_label_mask
from fusevos.metrics import (
    boundary_f,
    boundary_match_counts,
    combine_summaries,
    default_boundary_tolerance,
    dilate_chebyshev,
    evaluate_masks,
    evaluate_sequence,
    extract_boundary,
    jaccard,
    jf_mean,
    records_to_csv,
    round_half_up,
)

from oracles import oracle_boundary_f, oracle_boundary_points, oracle_jaccard


def square(h, w, top, left, size):
    m = np.zeros((h, w), dtype=bool)
    m[top : top + size, left : left + size] = True
    return m


class TestJaccard:
    def test_identical_nonempty(self):
        m = square(5, 5, 1, 1, 3)
        assert jaccard(m, m) == 1.0

    def test_disjoint(self):
        p = square(6, 6, 0, 0, 2)
        g = square(6, 6, 4, 4, 2)
        assert jaccard(p, g) == 0.0

    def test_hand_counted_overlap(self):
        # left two columns vs top two rows of a 4x4 grid: 4 px overlap of 12
        p = np.zeros((4, 4), dtype=bool)
        p[:, :2] = True
        g = np.zeros((4, 4), dtype=bool)
        g[:2, :] = True
        assert jaccard(p, g) == 4 / 12
        assert jaccard(p, g) == oracle_jaccard(p, g)

    def test_empty_conventions(self):
        e = np.zeros((3, 3), dtype=bool)
        f = square(3, 3, 0, 0, 2)
        assert jaccard(e, e) == 1.0
        assert jaccard(e, f) == 0.0
        assert jaccard(f, e) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            jaccard(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))

    def test_matches_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            p = rng.random((16, 16)) < rng.uniform(0, 0.8)
            g = rng.random((16, 16)) < rng.uniform(0, 0.8)
            assert jaccard(p, g) == oracle_jaccard(p, g)


class TestExtractBoundary:
    def test_empty(self):
        assert extract_boundary(np.zeros((4, 4), dtype=bool)).sum() == 0

    def test_single_pixel(self):
        m = np.zeros((5, 5), dtype=bool)
        m[2, 2] = True
        np.testing.assert_array_equal(extract_boundary(m), m)

    def test_solid_4x4(self):
        # all 12 image-border pixels are boundary, the 4 interior are not
        m = np.ones((4, 4), dtype=bool)
        boundary = extract_boundary(m)
        assert boundary.sum() == 12
        assert not boundary[1:3, 1:3].any()

    def test_matches_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            m = rng.random((10, 10)) < 0.5
            expected = np.zeros_like(m)
            for y, x in oracle_boundary_points(m):
                expected[y, x] = True
            np.testing.assert_array_equal(extract_boundary(m), expected)


class TestDilateChebyshev:
    def test_radius_zero_is_identity(self):
        rng = np.random.default_rng(1)
        m = rng.random((8, 8)) < 0.3
        np.testing.assert_array_equal(dilate_chebyshev(m, 0), m)

    def test_matches_distance_definition(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            m = rng.random((9, 9)) < 0.15
            tol = int(rng.integers(0, 4))
            pts = np.argwhere(m)
            expected = np.zeros_like(m)
            for y in range(9):
                for x in range(9):
                    if pts.size and np.max(
                        np.abs(pts - (y, x)), axis=1
                    ).min() <= tol:
                        expected[y, x] = True
            np.testing.assert_array_equal(dilate_chebyshev(m, tol), expected)


class TestBoundaryF:
    def test_identical(self):
        m = square(8, 8, 2, 2, 4)
        assert boundary_f(m, m, tol=0) == 1.0

    def test_translated_square(self):
        # 3x3 squares offset by one pixel inside a 6x6 grid
        p = square(6, 6, 1, 1, 3)
        g = square(6, 6, 2, 1, 3)
        assert boundary_f(p, g, tol=1) == 1.0
        assert boundary_f(p, g, tol=0) < 1.0
        assert boundary_f(p, g, tol=0) == oracle_boundary_f(p, g, 0)

    def test_empty_conventions(self):
        e = np.zeros((5, 5), dtype=bool)
        f = square(5, 5, 1, 1, 2)
        assert boundary_f(e, e, tol=1) == 1.0
        assert boundary_f(e, f, tol=1) == 0.0
        assert boundary_f(f, e, tol=1) == 0.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            p = rng.random((16, 16)) < rng.uniform(0.1, 0.6)
            g = rng.random((16, 16)) < rng.uniform(0.1, 0.6)
            for tol in (0, 1, 2):
                assert boundary_f(p, g, tol) == oracle_boundary_f(p, g, tol)

    def test_monotone_in_tol(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            p = rng.random((12, 12)) < 0.4
            g = rng.random((12, 12)) < 0.4
            values = [boundary_f(p, g, tol) for tol in range(4)]
            assert all(a <= b for a, b in zip(values, values[1:]))

    def test_symmetry(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            p = rng.random((12, 12)) < 0.4
            g = rng.random((12, 12)) < 0.4
            tol = int(rng.integers(0, 3))
            assert boundary_f(p, g, tol) == boundary_f(g, p, tol)

    def test_match_counts_sides(self):
        p = square(6, 6, 1, 1, 3)
        g = square(6, 6, 2, 1, 3)
        counts = boundary_match_counts(p, g, tol=1)
        assert counts.tp_pred + counts.fp == extract_boundary(p).sum()
        assert counts.tp_gt + counts.fn == extract_boundary(g).sum()
        assert 0.0 <= counts.precision <= 1.0
        assert 0.0 <= counts.recall <= 1.0

    def test_default_tolerance(self):
        assert default_boundary_tolerance(64, 64) == 1
        assert default_boundary_tolerance(480, 854) == 8


class TestJfMean:
    @pytest.mark.parametrize(
        "j,f,expected",
        [
            (0.8410, 0.8864, 0.8637),
            (0.8372, 0.8859, 0.8616),
            (0.8357, 0.8810, 0.8584),
            (1.0, 1.0, 1.0),
        ],
    )
    def test_values(self, j, f, expected):
        assert round_half_up(jf_mean(j, f), 4) == expected

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            jf_mean(1.2, 0.5)
        with pytest.raises(ValueError):
            jf_mean(0.5, -0.1)

    def test_round_half_up_behaviour(self):
        assert round_half_up(0.85835, 4) == 0.8584
        assert round_half_up(0.86155, 4) == 0.8616
        assert round_half_up(0.00005, 4) == 0.0001
        assert round_half_up(0.12344, 4) == 0.1234


def shifted_mask(h, w, top, left, size):
    labels = np.zeros((h, w), dtype=np.int32)
    labels[top : top + size, left : left + size] = 1
    return labels


class TestEvaluateMasks:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = [LabelMask(rng.integers(0, 3, size=(12, 12)).astype(np.int32)) for _ in range(4)]
        records, summary = evaluate_masks(gt, gt, ObjectSet((1, 2)))
        assert summary.j == summary.f == summary.jf == 1.0
        assert all(r.j == r.f == 1.0 for r in records)

    def test_all_background_prediction(self):
        gt = [LabelMask(shifted_mask(8, 8, 2, 2, 3)) for _ in range(3)]
        empty = [LabelMask(np.zeros((8, 8), dtype=np.int32)) for _ in range(3)]
        _, summary = evaluate_masks(empty, gt, ObjectSet((1,)))
        assert summary.j == summary.f == summary.jf == 0.0

    def test_first_frame_excluded(self):
        gt = [LabelMask(shifted_mask(8, 8, 2, 2, 3)) for _ in range(3)]
        preds = [LabelMask(np.zeros((8, 8), dtype=np.int32))] + gt[1:]
        _, summary = evaluate_masks(preds, gt, ObjectSet((1,)))
        assert summary.jf == 1.0

    def test_hand_computed_j(self):
        """3 frames, 2 objects; per-object J means hand-counted."""
        def frame(obj2_left):
            labels = np.zeros((8, 8), dtype=np.int32)
            labels[1:3, 1:3] = 1            # object 1: 2x2 block
            labels[4:7, obj2_left : obj2_left + 3] = 2  # object 2: 3x3 block
            return labels

        gt = [LabelMask(frame(4)) for _ in range(3)]
        # frame 1: object 1 exact, object 2 shifted right by one column:
        #   intersection 3x2=6, union 9+9-6=12 -> J=0.5
        pred1 = frame(5)
        # frame 2: object 2 exact, object 1 halved: intersection 2, union 4
        pred2 = frame(4)
        pred2[1:3, 2] = 0
        preds = [gt[0], LabelMask(pred1), LabelMask(pred2)]
        records, summary = evaluate_masks(preds, gt, ObjectSet((1, 2)))
        j_obj1 = [r.j for r in records if r.object_id == 1]
        j_obj2 = [r.j for r in records if r.object_id == 2]
        assert j_obj1 == [1.0, 0.5]
        assert j_obj2 == [0.5, 1.0]
        by_object = {o.object_id: o.j for o in summary.objects}
        assert by_object == {1: 0.75, 2: 0.75}
        assert summary.j == 0.75

    def test_summary_mean_identity(self):
        rng = np.random.default_rng(3)
        gt = [LabelMask(rng.integers(0, 3, size=(10, 10)).astype(np.int32)) for _ in range(4)]
        preds = [LabelMask(rng.integers(0, 3, size=(10, 10)).astype(np.int32)) for _ in range(4)]
        _, summary = evaluate_masks(preds, gt, ObjectSet((1, 2)))
        assert abs(summary.jf - (summary.j + summary.f) / 2) < 1e-12

    def test_needs_two_frames(self):
        gt = [LabelMask(np.zeros((4, 4), dtype=np.int32))]
        with pytest.raises(ValueError, match="at least 2"):
            evaluate_masks(gt, gt, ObjectSet((1,)))

    def test_unknown_prediction_ids_warn(self):
        gt = [LabelMask(shifted_mask(8, 8, 2, 2, 3)) for _ in range(2)]
        stray = shifted_mask(8, 8, 2, 2, 3)
        stray[0, 0] = 9
        preds = [gt[0], LabelMask(stray)]
        _, summary = evaluate_masks(preds, gt, ObjectSet((1,)))
        assert any("9" in w for w in summary.warnings)
        assert summary.j == 1.0  # stray id is background for object 1


class TestEvaluateSequence:
    def write_frames(self, directory, masks):
        for k, m in enumerate(masks):
            write_label_mask(m, directory / frame_filename(k, "png"))

    def test_pred_equals_gt(self, tmp_path):
        rng = np.random.default_rng(1)
        masks = [LabelMask(rng.integers(0, 3, size=(10, 10)).astype(np.int32)) for _ in range(4)]
        self.write_frames(tmp_path / "gt", masks)
        self.write_frames(tmp_path / "pred", masks)
        records, summary = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        assert summary.jf == 1.0
        assert {r.frame_index for r in records} == {1, 2, 3}

    def test_missing_frame(self, tmp_path):
        rng = np.random.default_rng(2)
        masks = [LabelMask(rng.integers(0, 2, size=(6, 6)).astype(np.int32)) for _ in range(3)]
        self.write_frames(tmp_path / "gt", masks)
        self.write_frames(tmp_path / "pred", masks[:2])
        with pytest.raises(FileNotFoundError, match="frame_00002"):
            evaluate_sequence(tmp_path / "pred", tmp_path / "gt")

    def test_infers_objects_from_gt(self, tmp_path):
        masks = [LabelMask(shifted_mask(8, 8, 1, 1, 4)) for _ in range(3)]
        self.write_frames(tmp_path / "gt", masks)
        self.write_frames(tmp_path / "pred", masks)
        _, summary = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        assert [o.object_id for o in summary.objects] == [1]

    def test_csv_output(self, tmp_path):
        masks = [LabelMask(shifted_mask(8, 8, 1, 1, 4)) for _ in range(3)]
        self.write_frames(tmp_path / "gt", masks)
        self.write_frames(tmp_path / "pred", masks)
        records, _ = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
        out = tmp_path / "records.csv"
        records_to_csv(records, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "video,object,frame,J,F"
        assert len(lines) == 1 + len(records)


def test_combine_summaries_means_over_objects():
    gt_a = [LabelMask(shifted_mask(8, 8, 1, 1, 4)) for _ in range(3)]
    preds_a = [gt_a[0]] + [LabelMask(np.zeros((8, 8), dtype=np.int32))] * 2
    _, bad = evaluate_masks(preds_a, gt_a, ObjectSet((1,)), video="a")
    _, good = evaluate_masks(gt_a, gt_a, ObjectSet((1,)), video="b")
    combined = combine_summaries([bad, good])
    assert combined.j == 0.5
    assert {v.video for v in combined.videos} == {"a", "b"}


def test_flip_invariance_of_metrics():
    rng = np.random.default_rng(21)
    for _ in range(100):
        p = rng.random((10, 14)) < 0.4
        g = rng.random((10, 14)) < 0.4
        assert jaccard(p, g) == jaccard(p[:, ::-1], g[:, ::-1])
        assert boundary_f(p, g, 1) == boundary_f(p[:, ::-1], g[:, ::-1], 1)
