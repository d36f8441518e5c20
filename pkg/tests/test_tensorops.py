"""Numerics substrate: matmul/softmax/affine/layer_norm/rng contracts."""

import numpy as np
import pytest

from vcut.errors import ArgumentError, NumericError, ShapeError
from vcut.tensorops import Rng, affine, layer_norm, matmul, rng_uniform, softmax_lastdim


def triple_loop_matmul(a, b):
    """Scalar oracle: ascending-index accumulation, same order as the reference path."""
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), a.dtype)
    for i in range(m):
        for j in range(n):
            acc = a.dtype.type(0.0)
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        eye = np.eye(2, dtype=np.float32)
        b = np.array([[5.0, 6.0], [7.0, 8.0]], np.float32)
        assert np.array_equal(matmul(eye, b), b)

    def test_row_times_column(self):
        a = np.array([[1.0, 2.0]], np.float64)
        b = np.array([[3.0], [4.0]], np.float64)
        assert matmul(a, b).tolist() == [[11.0]]

    def test_against_triple_loop_oracle(self):
        rng = Rng(42)
        a = rng.uniform(-2.0, 2.0, (3, 4), np.float64)
        b = rng.uniform(-2.0, 2.0, (4, 2), np.float64)
        got = matmul(a, b)
        want = triple_loop_matmul(a, b)
        assert np.abs(got - want).max() <= 1e-12

    def test_batched_broadcast(self):
        rng = Rng(1)
        a = rng.uniform(-1, 1, (2, 1, 3, 4), np.float64)
        b = rng.uniform(-1, 1, (5, 4, 2), np.float64)
        got = matmul(a, b)
        assert got.shape == (2, 5, 3, 2)
        assert np.allclose(got, np.matmul(a, b), atol=1e-12)

    def test_fast_path_agrees_to_relaxed_tolerance(self):
        rng = Rng(7)
        a = rng.uniform(-1, 1, (16, 64), np.float32)
        b = rng.uniform(-1, 1, (64, 16), np.float32)
        assert np.abs(matmul(a, b) - matmul(a, b, fast=True)).max() <= 1e-4

    def test_bitwise_deterministic(self):
        rng = Rng(9)
        a = rng.uniform(-1, 1, (8, 8), np.float32)
        b = rng.uniform(-1, 1, (8, 8), np.float32)
        assert matmul(a, b).tobytes() == matmul(a.copy(), b.copy()).tobytes()

    def test_dtype_preserved(self):
        for dt in (np.float32, np.float64):
            rng = Rng(3)
            a = rng.uniform(-1, 1, (2, 3), dt)
            b = rng.uniform(-1, 1, (3, 2), dt)
            assert matmul(a, b).dtype == np.dtype(dt)

    def test_shape_errors(self):
        a = np.zeros((2, 3), np.float32) + 1
        with pytest.raises(ShapeError):
            matmul(a, np.ones((4, 2), np.float32))
        with pytest.raises(ShapeError):
            matmul(np.ones(3, np.float32), np.ones((3, 2), np.float32))
        with pytest.raises(ArgumentError):
            matmul(a, np.ones((3, 2), np.float64))


class TestSoftmax:
    def test_singleton_is_exactly_one(self):
        assert softmax_lastdim(np.array([[42.0]], np.float32)).tolist() == [[1.0]]
        # the degeneracy primitive: any finite value, any magnitude
        for v in (-1e30, -7.5, 0.0, 3e20):
            out = softmax_lastdim(np.full((2, 3, 1), v, np.float64))
            assert (out == 1.0).all()

    def test_symmetry(self):
        out = softmax_lastdim(np.array([0.0, 0.0], np.float64))
        assert np.array_equal(out, [0.5, 0.5])

    def test_exp_normalize_oracle(self):
        x = np.array([1.0, 2.0, 3.0], np.float64)
        want = np.exp(x) / np.exp(x).sum()
        assert np.abs(softmax_lastdim(x) - want).max() <= 1e-9

    def test_slices_sum_to_one(self):
        rng = Rng(5)
        x = rng.uniform(-30.0, 30.0, (4, 6, 9), np.float32)
        sums = softmax_lastdim(x).sum(axis=-1)
        assert np.abs(sums - 1.0).max() <= 1e-6

    def test_nan_raises(self):
        with pytest.raises(NumericError):
            softmax_lastdim(np.array([1.0, np.nan], np.float64))


class TestAffine:
    def test_zero_input_yields_bias(self):
        w = Rng(2).uniform(-1, 1, (3, 4), np.float32)
        bias = Rng(3).uniform(-1, 1, (4,), np.float32)
        assert np.array_equal(affine(np.zeros((2, 3), np.float32), w, bias)[0], bias)

    def test_identity_weights(self):
        x = Rng(4).uniform(-1, 1, (5, 3), np.float64)
        out = affine(x, np.eye(3), np.zeros(3))
        assert np.abs(out - x).max() == 0.0

    def test_loop_oracle(self):
        rng = Rng(6)
        x = rng.uniform(-1, 1, (2, 3), np.float64)
        w = rng.uniform(-1, 1, (3, 5), np.float64)
        b = rng.uniform(-1, 1, (5,), np.float64)
        want = triple_loop_matmul(x, w) + b
        assert np.abs(affine(x, w, b) - want).max() <= 1e-12

    def test_equals_matmul_plus_bias_exactly(self):
        rng = Rng(8)
        x = rng.uniform(-1, 1, (4, 6), np.float32)
        w = rng.uniform(-1, 1, (6, 2), np.float32)
        b = rng.uniform(-1, 1, (2,), np.float32)
        assert np.array_equal(affine(x, w, b), matmul(x, w) + b)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            affine(np.ones((2, 3), np.float32), np.ones((4, 2), np.float32), np.ones(2, np.float32))


class TestLayerNorm:
    def test_constant_slice_zeroes(self):
        x = np.array([5.0, 5.0, 5.0], np.float32)
        out = layer_norm(x, np.ones(3, np.float32), np.zeros(3, np.float32))
        assert np.array_equal(out, np.zeros(3, np.float32))

    def test_already_standardized(self):
        out = layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2))
        assert np.abs(out - [1.0, -1.0]).max() <= 1e-4

    def test_mean_variance_oracle(self):
        rng = Rng(10)
        x = rng.uniform(-3, 3, (7, 11), np.float64)
        out = layer_norm(x, np.ones(11), np.zeros(11))
        assert np.abs(out.mean(axis=-1)).max() <= 1e-5
        assert np.abs(out.var(axis=-1) - 1.0).max() <= 1e-4

    def test_eps_must_be_positive(self):
        with pytest.raises(ArgumentError):
            layer_norm(np.ones(3), np.ones(3), np.zeros(3), eps=0.0)


def splitmix64_python(seed, n):
    """Independent pure-int reference for the stream."""
    mask = (1 << 64) - 1
    out = []
    state = seed & mask
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


class TestRng:
    def test_matches_pure_python_reference(self):
        for seed in (0, 1, 123456789, 2**63):
            got = Rng(seed).next_u64(8).tolist()
            assert got == splitmix64_python(seed, 8)

    def test_same_seed_bitwise_identical(self):
        a = Rng(0).uniform(0.0, 1.0, (4, 5), np.float32)
        b = Rng(0).uniform(0.0, 1.0, (4, 5), np.float32)
        assert a.tobytes() == b.tobytes()

    def test_range_containment(self):
        lo = 1.0 - 1e-6
        x = Rng(2).uniform(lo, 1.0, (10000,), np.float32)
        assert (x >= lo).all() and (x < 1.0).all()
        y = Rng(3).uniform(-2.0, -1.5, (1000,), np.float64)
        assert (y >= -2.0).all() and (y < -1.5).all()

    def test_law_of_large_numbers(self):
        x = Rng(4).uniform(0.0, 1.0, (100_000,), np.float64)
        assert abs(x.mean() - 0.5) <= 0.01

    def test_bad_range(self):
        with pytest.raises(ArgumentError):
            rng_uniform(Rng(0), 1.0, 1.0, (3,))

    def test_stream_advances(self):
        r = Rng(0)
        first = r.uniform(0, 1, (5,))
        second = r.uniform(0, 1, (5,))
        assert not np.array_equal(first, second)
