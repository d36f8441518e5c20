"""Video-quality metric formulas over embedding, frame and flow arrays.

Everything here is embedder-agnostic: per-frame feature vectors, RGB-ish
frame stacks and optical-flow fields arrive as plain arrays (typically read
from VTEN files), and the functions evaluate the scoring formulas exactly.
Feature rows are L2-normalized internally, so scores are invariant under
positive per-row scaling.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, ShapeError


def _unit_rows(seq: np.ndarray, name: str = "sequence") -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ShapeError(f"{name} must be [frames, dim], got {seq.shape}")
    norms = np.sqrt((seq * seq).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        raise ArgumentError(f"{name} contains a zero vector; cannot normalize")
    return seq / norms


def _unit_dots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # cosine of a vector with itself is 1 by definition; the bitwise-equal
    # override keeps that exact where normalization rounding would not
    dots = (a * b).sum(axis=1)
    dots[(a == b).all(axis=1)] = 1.0
    return dots


def _chained_consistency(seq: np.ndarray, anchor: np.ndarray) -> float:
    """Mean over t>=2 of the average of anchor.d_t and d_{t-1}.d_t."""
    T = seq.shape[0]
    if T < 2:
        raise ArgumentError(f"need at least 2 frames, got {T}")
    to_anchor = _unit_dots(np.broadcast_to(anchor, seq[1:].shape), seq[1:])
    to_prev = _unit_dots(seq[:-1], seq[1:])
    return float(0.5 * (to_anchor + to_prev).mean())


def subject_consistency(seq) -> float:
    """Identity stability across frames: each frame scored against the first
    frame and its predecessor, averaged. Rows are per-frame features."""
    seq = _unit_rows(seq)
    return _chained_consistency(seq, seq[0])


def video_image_subject_consistency(seq, reference) -> float:
    """Like subject_consistency but anchored to a reference-image feature."""
    seq = _unit_rows(seq)
    ref = _unit_rows(np.asarray(reference)[None, :], "reference")[0]
    if ref.shape[0] != seq.shape[1]:
        raise ShapeError(f"reference dim {ref.shape[0]} != sequence dim {seq.shape[1]}")
    return _chained_consistency(seq, ref)


def background_consistency(seq) -> float:
    """Background stability; structurally the same functional as
    subject_consistency evaluated on background features."""
    return subject_consistency(seq)


def video_image_background_consistency(seq, reference) -> float:
    return video_image_subject_consistency(seq, reference)


def midpoint_interpolator(even_frames: np.ndarray) -> np.ndarray:
    """Predict each dropped odd frame as the mean of its even neighbours."""
    return 0.5 * (even_frames[:-1] + even_frames[1:])


def motion_smoothness(frames, value_range=(0.0, 1.0), interpolator=midpoint_interpolator) -> float:
    """Drop the odd-numbered frames, re-estimate them from the even ones and
    score 1 - MAE/range, clamped to [0, 1]. Needs an odd frame count >= 3."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2:
        raise ShapeError(f"frames must be [T, ...pixels...], got {frames.shape}")
    T = frames.shape[0]
    if T < 3 or T % 2 == 0:
        raise ArgumentError(f"motion smoothness needs an odd frame count >= 3, got {T}")
    lo, hi = value_range
    if not hi > lo:
        raise ArgumentError(f"bad value range [{lo}, {hi}]")
    predicted = np.asarray(interpolator(frames[0::2]), dtype=np.float64)
    actual = frames[1::2]
    if predicted.shape != actual.shape:
        raise ShapeError(f"interpolator produced {predicted.shape}, expected {actual.shape}")
    mae = np.abs(predicted - actual).mean()
    return float(np.clip(1.0 - mae / (hi - lo), 0.0, 1.0))


def flow_magnitudes(flow: np.ndarray) -> np.ndarray:
    """Per-pixel displacement magnitudes of a [T-1, H, W, 2] flow field."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 4 or flow.shape[-1] != 2:
        raise ShapeError(f"flow field must be [T-1, H, W, 2], got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ArgumentError("flow field contains non-finite values")
    return np.sqrt(flow[..., 0] ** 2 + flow[..., 1] ** 2)


def top_fraction_mean(values: np.ndarray, fraction: float = 0.05) -> float:
    """Mean of the largest ``fraction`` of values (at least one value)."""
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    k = max(1, int(np.ceil(fraction * flat.size)))
    return float(flat[-k:].mean())


def video_motion_score(flow: np.ndarray, fraction: float = 0.05) -> float:
    """Pooled motion statistic for one video: mean of the top-5% magnitudes."""
    return top_fraction_mean(flow_magnitudes(flow), fraction)


def dynamic_degree(flows, threshold: float = 1.0, fraction: float = 0.05) -> float:
    """Fraction of videos whose pooled motion statistic exceeds the threshold."""
    flows = list(flows)
    if not flows:
        raise ArgumentError("dynamic degree needs at least one video")
    dynamic = sum(1 for flow in flows if video_motion_score(flow, fraction) > threshold)
    return dynamic / len(flows)


def cosine_probe(a, b) -> float:
    """Cosine similarity between two feature vectors (e.g. first/last frame)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ArgumentError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def block_matching_flow(frames, block: int = 8, radius: int = 4) -> np.ndarray:
    """Naive exhaustive block-matching flow estimate, [T-1, H, W, 2].

    A desk-scale stand-in for a real flow network: for each block of each
    frame pair it searches integer displacements within ``radius`` and picks
    the lowest sum of squared differences. Precomputed flow files are
    preferred whenever available.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 4:  # collapse channels to intensity
        frames = frames.mean(axis=-1)
    if frames.ndim != 3:
        raise ShapeError(f"frames must be [T, H, W] or [T, H, W, ch], got {frames.shape}")
    T, H, W = frames.shape
    if T < 2:
        raise ArgumentError("flow estimation needs at least two frames")
    flow = np.zeros((T - 1, H, W, 2))
    for t in range(T - 1):
        src, dst = frames[t], frames[t + 1]
        for by in range(0, H, block):
            for bx in range(0, W, block):
                patch = src[by : by + block, bx : bx + block]
                best, best_uv = np.inf, (0, 0)
                for dy in range(-radius, radius + 1):
                    y0, y1 = by + dy, by + dy + patch.shape[0]
                    if y0 < 0 or y1 > H:
                        continue
                    for dx in range(-radius, radius + 1):
                        x0, x1 = bx + dx, bx + dx + patch.shape[1]
                        if x0 < 0 or x1 > W:
                            continue
                        diff = patch - dst[y0:y1, x0:x1]
                        ssd = (diff * diff).sum()
                        if ssd < best:
                            best, best_uv = ssd, (dx, dy)
                flow[t, by : by + block, bx : bx + block, 0] = best_uv[0]
                flow[t, by : by + block, bx : bx + block, 1] = best_uv[1]
    return flow
