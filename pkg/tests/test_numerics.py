import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nshash import (
    OracleError,
    ParameterError,
    Rng,
    ShapeError,
    central_diff_grad,
    gaussian_batch,
    l2_normalize_rows,
    matmul,
    pairwise_cosine,
    softmax_rows,
)

# value/temperature ranges keep exp() away from underflow so strict
# positivity is meaningful in float64
finite_matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 5), st.integers(1, 5)),
    elements=st.floats(-20, 20, allow_nan=False),
)


class TestMatmul:
    def test_identity(self):
        out = matmul(np.eye(2), np.array([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out, [[3.0, 4.0], [5.0, 6.0]])

    def test_dot_product(self):
        out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        np.testing.assert_array_equal(out, [[11.0]])

    def test_matches_triple_loop_oracle(self):
        rng = Rng(11)
        a = rng.normal(7, 5)
        b = rng.normal(5, 3)
        want = np.zeros((7, 3))
        for i in range(7):
            for j in range(3):
                for k in range(5):
                    want[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(a, b), want, atol=1e-12, rtol=0)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_associativity(self):
        rng = Rng(12)
        a, b, c = rng.normal(4, 6), rng.normal(6, 3), rng.normal(3, 5)
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)),
                                   atol=1e-9, rtol=0)


class TestSoftmaxRows:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows(np.zeros((1, 3)), 1.0), [[1 / 3] * 3],
                                   atol=1e-15)

    def test_hand_values(self):
        out = softmax_rows(np.array([[0.0, 1.0]]), 1.0)
        np.testing.assert_allclose(out, [[0.2689414213699951, 0.7310585786300049]],
                                   atol=1e-12)

    def test_overflow_safe(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]), 1.0)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out[0, 0], 1.0, atol=1e-12)

    def test_rejects_bad_tau(self):
        with pytest.raises(ParameterError):
            softmax_rows(np.zeros((1, 2)), 0.0)

    @given(finite_matrices, st.floats(0.1, 10.0))
    @settings(deadline=None, max_examples=60)
    def test_rows_sum_to_one_and_entries_open_interval(self, m, tau):
        out = softmax_rows(m, tau)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12, rtol=0)
        assert np.all(out > 0) and np.all(out < 1.0 + 1e-15)

    @given(finite_matrices, st.floats(-30, 30))
    @settings(deadline=None, max_examples=60)
    def test_shift_invariance(self, m, c):
        np.testing.assert_allclose(softmax_rows(m + c, 1.0), softmax_rows(m, 1.0),
                                   atol=1e-12, rtol=0)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize_rows(np.array([[3.0, 4.0]])),
                                   [[0.6, 0.8]], atol=1e-15)

    def test_unit_row_unchanged(self):
        row = np.array([[1.0, 0.0, 0.0]])
        np.testing.assert_allclose(l2_normalize_rows(row), row, atol=1e-15)

    def test_zero_row_guard(self):
        row = np.zeros((1, 4))
        np.testing.assert_array_equal(l2_normalize_rows(row), row)

    def test_idempotent(self):
        m = Rng(3).normal(6, 5)
        once = l2_normalize_rows(m)
        np.testing.assert_allclose(l2_normalize_rows(once), once, atol=1e-9, rtol=0)


class TestPairwiseCosine:
    def test_identical_unit_rows(self):
        a = np.array([[1.0, 0.0]])
        assert pairwise_cosine(a, a)[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        out = pairwise_cosine(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        assert out[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_45_degrees(self):
        out = pairwise_cosine(np.array([[1.0, 1.0]]), np.array([[1.0, 0.0]]))
        assert out[0, 0] == pytest.approx(0.7071067811865475, abs=1e-9)

    def test_column_mismatch(self):
        with pytest.raises(ShapeError):
            pairwise_cosine(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_range(self):
        rng = Rng(4)
        out = pairwise_cosine(rng.normal(8, 5), rng.normal(9, 5))
        assert np.all(out >= -1 - 1e-9) and np.all(out <= 1 + 1e-9)


class TestCentralDiff:
    def test_quadratic(self):
        grad = central_diff_grad(lambda v: float(v[0] ** 2), np.array([3.0]), 1e-5)
        assert grad[0] == pytest.approx(6.0, abs=1e-6)

    def test_constant(self):
        grad = central_diff_grad(lambda v: 7.5, np.arange(4.0), 1e-5)
        np.testing.assert_array_equal(grad, np.zeros(4))

    def test_polynomial_closed_form(self):
        # f(x) = sum(2 x^3 - x), df = 6 x^2 - 1
        x = np.array([0.5, -1.2, 2.0])
        grad = central_diff_grad(lambda v: float(np.sum(2 * v ** 3 - v)), x, 1e-5)
        np.testing.assert_allclose(grad, 6 * x ** 2 - 1, atol=1e-6, rtol=0)

    def test_non_finite_raises(self):
        with pytest.raises(OracleError):
            central_diff_grad(lambda v: float("nan"), np.array([1.0]), 1e-5)


class TestGaussianBatch:
    def test_zero_stddev_constant(self):
        out = gaussian_batch(Rng(1), 3, 4, mean=2.5, stddev=0.0)
        np.testing.assert_array_equal(out, np.full((3, 4), 2.5))

    def test_same_seed_identical(self):
        np.testing.assert_array_equal(gaussian_batch(Rng(9), 10, 10),
                                      gaussian_batch(Rng(9), 10, 10))

    def test_law_of_large_numbers(self):
        out = gaussian_batch(Rng(2), 1000, 100, mean=0.0, stddev=1.0)
        assert abs(out.mean()) < 0.02
        assert abs(out.std() - 1.0) < 0.02

    def test_negative_stddev_rejected(self):
        with pytest.raises(ParameterError):
            gaussian_batch(Rng(1), 2, 2, stddev=-1.0)


class TestRng:
    def test_children_are_deterministic_and_distinct(self):
        a = Rng(5).child(0).normal(4, 4)
        b = Rng(5).child(0).normal(4, 4)
        c = Rng(5).child(1).normal(4, 4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_permutation_is_permutation(self):
        perm = Rng(8).permutation(50)
        assert sorted(perm.tolist()) == list(range(50))
