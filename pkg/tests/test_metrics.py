"""Metric formulas against scalar brute-force oracles."""

import math

import numpy as np
import pytest

from vcut.errors import ArgumentError, ShapeError
from vcut.metrics import (
    background_consistency,
    block_matching_flow,
    cosine_probe,
    dynamic_degree,
    motion_smoothness,
    subject_consistency,
    video_image_background_consistency,
    video_image_subject_consistency,
    video_motion_score,
)
from vcut.tensorops import Rng


def brute_force_consistency(rows, anchor_row=None):
    """Direct scalar evaluation: normalize, then average the two dot products."""
    normed = []
    for row in rows:
        n = math.sqrt(sum(v * v for v in row))
        normed.append([v / n for v in row])
    anchor = normed[0] if anchor_row is None else None
    if anchor_row is not None:
        n = math.sqrt(sum(v * v for v in anchor_row))
        anchor = [v / n for v in anchor_row]
    total = 0.0
    T = len(normed)
    for t in range(1, T):
        d_anchor = sum(a * b for a, b in zip(anchor, normed[t]))
        d_prev = sum(a * b for a, b in zip(normed[t - 1], normed[t]))
        total += 0.5 * (d_anchor + d_prev)
    return total / (T - 1)


class TestSubjectConsistency:
    def test_identical_rows_score_one(self):
        seq = np.tile(Rng(0).uniform(0.1, 1.0, (1, 6), np.float64), (5, 1))
        assert subject_consistency(seq) == 1.0

    def test_mutually_orthogonal_rows_score_zero(self):
        assert subject_consistency(np.eye(3)) == 0.0

    def test_random_against_brute_force(self):
        for seed in range(100):
            rng = Rng(seed)
            T = 2 + int(rng.next_u64(1)[0] % 7)
            seq = rng.uniform(-1.0, 1.0, (T, 12), np.float64) + 1e-3
            got = subject_consistency(seq)
            want = brute_force_consistency(seq.tolist())
            assert abs(got - want) <= 1e-9

    def test_scaling_invariance(self):
        rng = Rng(5)
        seq = rng.uniform(0.1, 1.0, (4, 8), np.float64)
        scales = rng.uniform(0.5, 10.0, (4, 1), np.float64)
        assert abs(subject_consistency(seq) - subject_consistency(seq * scales)) <= 1e-12

    def test_too_short(self):
        with pytest.raises(ArgumentError):
            subject_consistency(np.ones((1, 4)))

    def test_zero_row_rejected(self):
        seq = np.ones((3, 4))
        seq[1] = 0.0
        with pytest.raises(ArgumentError):
            subject_consistency(seq)


class TestVideoImageConsistency:
    def test_reference_equals_frames(self):
        row = Rng(1).uniform(0.1, 1.0, (8,), np.float64)
        seq = np.tile(row, (4, 1))
        assert video_image_subject_consistency(seq, row) == 1.0

    def test_orthogonal_reference_identical_frames(self):
        seq = np.tile(np.array([1.0, 0.0]), (3, 1))
        ref = np.array([0.0, 1.0])
        # each term: 0.5 * (0 + 1) -> 0.5
        assert video_image_subject_consistency(seq, ref) == 0.5

    def test_random_against_brute_force(self):
        for seed in range(50):
            rng = Rng(seed + 1000)
            seq = rng.uniform(-1.0, 1.0, (5, 9), np.float64) + 1e-3
            ref = rng.uniform(-1.0, 1.0, (9,), np.float64) + 1e-3
            got = video_image_subject_consistency(seq, ref)
            want = brute_force_consistency(seq.tolist(), ref.tolist())
            assert abs(got - want) <= 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            video_image_subject_consistency(np.ones((3, 4)), np.ones(5))


class TestBackgroundConsistency:
    def test_same_functional_as_subject(self):
        rng = Rng(7)
        seq = rng.uniform(-1.0, 1.0, (6, 10), np.float64) + 1e-3
        assert background_consistency(seq) == subject_consistency(seq)

    def test_video_image_variant_shares_kernel(self):
        rng = Rng(8)
        seq = rng.uniform(-1.0, 1.0, (4, 6), np.float64) + 1e-3
        ref = rng.uniform(-1.0, 1.0, (6,), np.float64) + 1e-3
        assert video_image_background_consistency(seq, ref) == video_image_subject_consistency(seq, ref)


class TestMotionSmoothness:
    def test_constant_video_scores_one(self):
        frames = np.full((5, 4, 4), 0.25)
        assert motion_smoothness(frames) == 1.0

    def test_linear_motion_scores_one(self):
        frames = np.stack([np.full((4, 4), v) for v in (0.0, 0.5, 1.0)])
        assert motion_smoothness(frames) == 1.0

    def test_alternating_video_scores_zero(self):
        frames = np.stack([np.full((2, 2), v) for v in (0.0, 1.0, 0.0)])
        # midpoint prediction is 0 everywhere, actual odd frame is 1 -> MAE 1
        assert motion_smoothness(frames) == 0.0

    def test_even_count_rejected(self):
        with pytest.raises(ArgumentError):
            motion_smoothness(np.zeros((4, 2, 2)))

    def test_custom_interpolator(self):
        frames = np.stack([np.full((2, 2), v) for v in (0.0, 1.0, 0.0)])
        perfect = lambda evens: np.ones((1, 2, 2))
        assert motion_smoothness(frames, interpolator=perfect) == 1.0

    def test_hand_computed_mae(self):
        frames = np.stack([np.full((2, 2), v) for v in (0.0, 0.75, 1.0)])
        # predicted odd frame 0.5, actual 0.75 -> MAE 0.25 -> score 0.75
        assert motion_smoothness(frames) == 0.75


class TestDynamicDegree:
    def test_zero_flows(self):
        flows = [np.zeros((2, 4, 4, 2))]
        assert dynamic_degree(flows) == 0.0

    def test_uniform_motion(self):
        flow = np.zeros((1, 4, 4, 2))
        flow[..., 0] = 10.0
        assert dynamic_degree([flow], threshold=1.0) == 1.0
        assert video_motion_score(flow) == 10.0

    def test_mixed_set(self):
        still = np.zeros((1, 4, 4, 2))
        moving = np.zeros((1, 4, 4, 2))
        moving[..., 1] = 10.0
        assert dynamic_degree([still, moving], threshold=1.0) == 0.5

    def test_top_fraction_uses_ceiling(self):
        # 4 magnitudes, top 5% -> exactly one value: the largest
        flow = np.zeros((1, 2, 2, 2))
        flow[0, 0, 0] = [3.0, 4.0]  # magnitude 5
        assert video_motion_score(flow) == 5.0

    def test_empty_set_rejected(self):
        with pytest.raises(ArgumentError):
            dynamic_degree([])

    def test_threshold_above_max_gives_zero(self):
        flow = np.full((1, 2, 2, 2), 0.3)
        assert dynamic_degree([flow], threshold=10.0) == 0.0


class TestCosineProbe:
    def test_identical(self):
        v = Rng(3).uniform(0.1, 1.0, (16,), np.float64)
        assert abs(cosine_probe(v, v) - 1.0) <= 1e-12

    def test_orthogonal(self):
        assert cosine_probe([1.0, 0.0], [0.0, 2.0]) == 0.0

    def test_antipodal(self):
        v = Rng(4).uniform(0.1, 1.0, (8,), np.float64)
        assert abs(cosine_probe(v, -v) + 1.0) <= 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(ArgumentError):
            cosine_probe([0.0, 0.0], [1.0, 0.0])


class TestBlockMatchingFlow:
    def test_recovers_uniform_shift(self):
        rng = Rng(9)
        base = rng.uniform(0.0, 1.0, (16, 16), np.float64)
        shifted = np.roll(base, 2, axis=1)  # move content 2 px right
        flow = block_matching_flow(np.stack([base, shifted]), block=4, radius=3)
        inner = flow[0, 4:12, 4:12]
        assert np.median(inner[..., 0]) == 2.0
        assert np.median(inner[..., 1]) == 0.0

    def test_static_video_zero_flow(self):
        frame = Rng(10).uniform(0.0, 1.0, (8, 8), np.float64)
        flow = block_matching_flow(np.stack([frame, frame]), block=4, radius=2)
        assert not flow.any()
