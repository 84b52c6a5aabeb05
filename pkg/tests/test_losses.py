import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deephash.losses import (
    TripletSet,
    grad_check,
    hash_likelihood_loss,
    hash_scores,
    pairwise_sq_dists,
    quantization_penalty,
    softplus,
    triplet_margin_loss,
    triplet_margin_values,
)
from oracles import naive_sq_dists

TRIPLES = TripletSet.from_list([(0, 1, 2), (1, 0, 3), (2, 3, 0), (3, 2, 5), (4, 5, 1), (5, 4, 2)])


class TestPairwise:
    def test_identical_rows(self):
        np.testing.assert_array_equal(pairwise_sq_dists(np.ones((4, 3))), 0.0)

    def test_345(self):
        assert pairwise_sq_dists([[0.0, 0.0], [3.0, 4.0]])[0, 1] == 25.0

    def test_matches_naive(self):
        U = np.random.default_rng(0).normal(size=(5, 3))
        D = pairwise_sq_dists(U)
        assert np.max(np.abs(D - naive_sq_dists(U))) < 1e-10
        assert np.all(D >= 0) and np.array_equal(D, D.T) and np.all(np.diag(D) == 0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            pairwise_sq_dists([[np.nan, 0.0]])


class TestTripletMargin:
    def test_inactive(self):
        # d_ap^2 = 1, d_an^2 = 3
        U = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, math.sqrt(3.0)]])
        loss, grad = triplet_margin_loss(U, [(0, 1, 2)], alpha=1.0)
        assert loss == 0.0 and np.all(grad == 0)

    def test_collapsed_triplet(self):
        U = np.ones((3, 4))
        loss, grad = triplet_margin_loss(U, [(0, 1, 2)], alpha=1.0)
        assert loss == 1.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_empty(self):
        loss, grad = triplet_margin_loss(np.ones((3, 2)), TripletSet([]), 1.0)
        assert loss == 0.0 and grad.shape == (3, 2) and np.all(grad == 0)

    def test_sum_reduction(self):
        U = np.random.default_rng(0).normal(size=(6, 3))
        mean, gm = triplet_margin_loss(U, TRIPLES, 2.0)
        total, gs = triplet_margin_loss(U, TRIPLES, 2.0, sum_reduction=True)
        assert total == pytest.approx(mean * len(TRIPLES))
        np.testing.assert_allclose(gs, gm * len(TRIPLES))

    def test_gradient(self):
        rng = np.random.default_rng(1)
        checked = 0
        while checked < 100:
            U = rng.normal(size=(6, 3))
            if np.min(np.abs(triplet_margin_values(U, TRIPLES, 1.0))) < 1e-3:
                continue
            # Piecewise quadratic: a wide order-2 stencil is exact away from kinks.
            err = grad_check(
                lambda V: triplet_margin_loss(V, TRIPLES, 1.0),
                U,
                h=1e-2,
                pattern_fn=lambda V: triplet_margin_values(V, TRIPLES, 1.0) >= 0,
            )
            assert err < 1e-5
            checked += 1

    def test_all_inactive_gradcheck(self):
        U = np.array([[0.0], [0.1], [5.0]])
        assert triplet_margin_loss(U, [(0, 1, 2)], 1.0)[0] == 0.0
        assert grad_check(lambda V: triplet_margin_loss(V, [(0, 1, 2)], 1.0), U) == 0.0


class TestHashLikelihood:
    def test_equal_thetas(self):
        U = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        loss, _ = hash_likelihood_loss(U, [(0, 1, 2)], alpha=0.0)
        assert loss == pytest.approx(math.log(2.0), abs=1e-15)

    def test_opposite_negative(self):
        q = np.array([1.0, -1.0])
        U = np.stack([q, q, -q])
        loss, _ = hash_likelihood_loss(U, [(0, 1, 2)], alpha=0.0)
        assert hash_scores(U, [(0, 1, 2)], 0.0)[0] == 2.0
        assert loss == pytest.approx(0.126928011042973, abs=1e-14)

    def test_score_definition(self):
        U = np.random.default_rng(2).normal(size=(6, 4)) * 3.0
        s = hash_scores(U, TRIPLES, 1.5)
        for m, (q, p, n) in enumerate(TRIPLES.as_tuples()):
            expected = 0.5 * float(U[q] @ U[p]) - 0.5 * float(U[q] @ U[n]) - 1.5
            assert s[m] == pytest.approx(expected, rel=1e-14, abs=1e-14)
        s_scaled = hash_scores(2.0 * U, TRIPLES, 1.5)
        np.testing.assert_allclose(s_scaled + 1.5, 4.0 * (s + 1.5), rtol=1e-13)

    def test_large_scores_are_finite(self):
        U = np.random.default_rng(3).normal(size=(6, 4)) * 100.0
        loss, grad = hash_likelihood_loss(U, TRIPLES, 16.0)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_gradient(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            U = rng.normal(size=(6, 3))
            assert grad_check(lambda V: hash_likelihood_loss(V, TRIPLES, 0.5), U, h=1e-4, order=4) < 1e-5

    def test_monotone_in_thetas(self):
        # u_q = e0; theta_qp = p0 / 2, theta_qn = n0 / 2
        base = np.array([[1.0, 0.0], [0.3, 0.2], [0.1, -0.4]])
        prev_n = prev_p = None
        for t in np.linspace(-3, 3, 25):
            U = base.copy()
            U[2, 0] = t
            ln = hash_likelihood_loss(U, [(0, 1, 2)], 1.0)[0]
            assert prev_n is None or ln >= prev_n
            prev_n = ln
            U = base.copy()
            U[1, 0] = t
            lp = hash_likelihood_loss(U, [(0, 1, 2)], 1.0)[0]
            assert prev_p is None or lp <= prev_p
            prev_p = lp


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50))
def test_softplus_identity(s):
    assert abs(-(s - math.log1p(math.exp(s))) - float(softplus(-s))) <= 1e-12


class TestQuantization:
    def test_exact_codes(self):
        U = np.random.default_rng(0).choice([-1.0, 1.0], size=(4, 5))
        loss, grad = quantization_penalty(U, 10.0)
        assert loss == 0.0 and np.all(grad == 0)

    def test_arithmetic(self):
        loss, grad = quantization_penalty(np.array([[0.5, -0.25]]), 10.0)
        assert loss == 8.125
        np.testing.assert_allclose(grad, [[-10.0, 15.0]])

    def test_gradient_away_from_zero(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            U = rng.normal(size=(4, 3))
            U[np.abs(U) < 1e-3] = 0.5
            assert grad_check(lambda V: quantization_penalty(V, 3.0), U) < 1e-5


def test_grad_check_exact_quadratic():
    U = np.random.default_rng(0).normal(size=(4, 3))
    assert grad_check(lambda V: (float(np.sum(V * V)), 2 * V), U, h=1e-3) < 1e-9
