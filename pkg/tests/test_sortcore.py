import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nshash import (
    ParameterError,
    Rng,
    ShapeError,
    apply_perm_hard,
    central_diff_grad,
    hard_argsort_desc,
    relative_error,
    softsort_backward,
    softsort_forward,
)
from nshash.sortcore import perm_matrix_from_hard

# score range capped so logit gaps stay clear of exp() underflow
score_vectors = st.lists(st.floats(-20, 20, allow_nan=False), min_size=2, max_size=8).map(
    lambda v: np.asarray(v)
)


def gapped_scores(rng: Rng, n: int, min_gap: float = 0.1) -> np.ndarray:
    """Random vector whose pairwise value gaps are all >= min_gap."""
    gaps = min_gap + rng.uniform(1, n - 1)[0]
    values = np.concatenate([[0.0], np.cumsum(gaps)])
    return values[rng.permutation(n)]


class TestHardArgsort:
    def test_basic(self):
        np.testing.assert_array_equal(hard_argsort_desc(np.array([3.0, 1.0, 2.0])), [0, 2, 1])

    def test_already_descending(self):
        np.testing.assert_array_equal(hard_argsort_desc(np.array([5.0, 4.0, 3.0])), [0, 1, 2])

    def test_tie_breaks_to_lower_index(self):
        np.testing.assert_array_equal(hard_argsort_desc(np.array([2.0, 2.0, 1.0])), [0, 1, 2])


class TestSoftsortForward:
    def test_two_entry_hand_values(self):
        res = softsort_forward(np.array([1.0, 0.0]), 1.0)
        e = 0.7310585786300049
        np.testing.assert_allclose(res.perm, [[e, 1 - e], [1 - e, e]], atol=1e-12)

    def test_all_equal_gives_uniform(self):
        res = softsort_forward(np.full(4, 2.5), 0.7)
        np.testing.assert_allclose(res.perm, np.full((4, 4), 0.25), atol=1e-12)

    def test_small_tau_hardens_to_argsort(self):
        s = np.array([0.9, 0.1, 0.5])
        res = softsort_forward(s, 1e-3)
        order = hard_argsort_desc(s)
        np.testing.assert_array_equal(order, [0, 2, 1])
        np.testing.assert_array_equal(res.perm.argmax(axis=1), order)
        assert np.max(np.abs(res.perm - perm_matrix_from_hard(order))) < 1e-3

    def test_rejects_bad_tau(self):
        with pytest.raises(ParameterError):
            softsort_forward(np.array([1.0, 2.0]), -1.0)

    @given(score_vectors, st.floats(0.1, 10))
    @settings(deadline=None, max_examples=60)
    def test_rows_stochastic(self, s, tau):
        res = softsort_forward(s, tau)
        np.testing.assert_allclose(res.perm.sum(axis=1), 1.0, atol=1e-12, rtol=0)
        assert np.all(res.perm > 0)

    @given(score_vectors, st.floats(-10, 10))
    @settings(deadline=None, max_examples=60)
    def test_shift_invariance(self, s, c):
        np.testing.assert_allclose(softsort_forward(s + c, 1.0).perm,
                                   softsort_forward(s, 1.0).perm, atol=1e-12, rtol=0)

    def test_column_permutation_equivariance(self):
        rng = Rng(21)
        s = rng.normal(1, 6)[0]
        pi = rng.permutation(6)
        base = softsort_forward(s, 0.5).perm
        permuted = softsort_forward(s[pi], 0.5).perm
        np.testing.assert_allclose(permuted, base[:, pi], atol=1e-12, rtol=0)

    def test_positive_scale_keeps_row_argmax(self):
        rng = Rng(22)
        for trial in range(20):
            s = gapped_scores(rng, 5)
            a = softsort_forward(s, 0.3).perm.argmax(axis=1)
            b = softsort_forward(4.2 * s, 0.3).perm.argmax(axis=1)
            np.testing.assert_array_equal(a, b)

    def test_hardening_property(self):
        rng = Rng(23)
        for trial in range(100):
            n = 3 + trial % 6
            s = gapped_scores(rng, n)
            res = softsort_forward(s, 1e-3)
            order = hard_argsort_desc(s)
            np.testing.assert_array_equal(res.perm.argmax(axis=1), order)
            assert np.max(np.abs(res.perm - perm_matrix_from_hard(order))) < 1e-3


class TestSoftsortBackward:
    def test_zero_upstream_gives_zero(self):
        res = softsort_forward(np.array([0.3, -0.2, 1.1]), 0.8)
        np.testing.assert_array_equal(softsort_backward(res, np.zeros((3, 3))), np.zeros(3))

    def test_shape_mismatch(self):
        res = softsort_forward(np.array([0.3, -0.2]), 0.8)
        with pytest.raises(ShapeError):
            softsort_backward(res, np.zeros((3, 3)))

    def test_matches_central_differences(self):
        rng = Rng(31)
        for trial in range(100):
            n = 3 + trial % 6
            s = gapped_scores(rng, n, min_gap=0.05)
            tau = 0.2 + rng.uniform(1, 1)[0, 0]
            w = rng.normal(n, n)

            def f(v):
                return float(np.sum(softsort_forward(v, tau).perm * w))

            res = softsort_forward(s, tau)
            got = softsort_backward(res, w)
            want = central_diff_grad(f, s, 1e-6)
            assert relative_error(got, want) < 1e-4

    def test_gradient_sums_to_zero(self):
        # Any loss through the (shift-invariant) soft permutation has gradient
        # orthogonal to the all-ones direction.
        rng = Rng(32)
        for _ in range(20):
            s = rng.normal(1, 6)[0]
            w = rng.normal(6, 6)
            res = softsort_forward(s, 0.7)
            assert abs(softsort_backward(res, w).sum()) < 1e-9


class TestApplyPermHard:
    def test_identity(self):
        z = Rng(41).normal(4, 3)
        np.testing.assert_array_equal(apply_perm_hard(np.arange(4), z), z)

    def test_swap(self):
        z = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(apply_perm_hard(np.array([1, 0]), z),
                                      [[3.0, 4.0], [1.0, 2.0]])

    def test_round_trip_through_inverse(self):
        rng = Rng(42)
        z = rng.normal(7, 4)
        perm = rng.permutation(7)
        inverse = np.argsort(perm)
        np.testing.assert_array_equal(apply_perm_hard(inverse, apply_perm_hard(perm, z)), z)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            apply_perm_hard(np.array([0, 1]), np.zeros((3, 2)))
