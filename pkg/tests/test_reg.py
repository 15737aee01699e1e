"""Regularization losses, penalty activation, and their gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfflops.core import DfTable, DocBatch, SparseVector
from dfflops.reg import (
    ActivationParams,
    LambdaSchedule,
    PenaltyWeights,
    activ,
    activ_array,
    df_flops_loss,
    flops_loss,
    lambda_at,
    penalty_weights,
)

from conftest import random_batch

ALPHAS = (0.01, 0.1, 0.5)
BETAS = (1.0, 5.0, 10.0)


def _loss_value(batch: DocBatch, weights: np.ndarray) -> float:
    """Independent dense evaluation of the scaled batch-mean loss."""
    dense = batch.to_dense()
    means = dense.mean(axis=0)
    return float(np.sum((weights * means) ** 2))


class TestActivation:
    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("beta", BETAS)
    def test_midpoint_at_alpha(self, alpha, beta):
        assert activ(alpha, ActivationParams(alpha, beta)) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("beta", BETAS)
    def test_one_maps_to_one(self, alpha, beta):
        assert activ(1.0, ActivationParams(alpha, beta)) == 1.0

    def test_closed_form_point(self):
        # 0.01 = 0.1^2, so 0.01^(log_0.1 2) = 4 and the result is 1/(1+3^10)
        assert activ(0.01, ActivationParams(0.1, 10.0)) == pytest.approx(1 / 59050, abs=1e-12)

    def test_zero_maps_to_zero(self):
        for alpha in ALPHAS:
            for beta in BETAS:
                assert activ(0.0, ActivationParams(alpha, beta)) == 0.0

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("beta", BETAS)
    def test_nondecreasing_and_bounded_on_dense_grid(self, alpha, beta):
        xs = np.linspace(0.0, 1.0, 2001)
        ys = activ_array(xs, ActivationParams(alpha, beta))
        assert np.all(np.diff(ys) >= 0)
        assert np.all((ys >= 0) & (ys <= 1))

    def test_extreme_inputs_do_not_overflow(self):
        params = ActivationParams(0.01, 10.0)
        assert activ(1e-300, params) == 0.0
        assert 0.0 <= activ(np.nextafter(1.0, 0.0), params) <= 1.0

    def test_domain_is_enforced(self):
        with pytest.raises(ValueError):
            activ(1.5, ActivationParams())
        with pytest.raises(ValueError):
            activ(-0.1, ActivationParams())

    def test_param_validation(self):
        with pytest.raises(ValueError):
            ActivationParams(alpha=1.0)
        with pytest.raises(ValueError):
            ActivationParams(beta=0.0)


class TestPenaltyWeights:
    def test_full_df_gets_weight_one(self):
        df = DfTable(df=np.array([10]), sample_size=10, epsilon=0.0)
        assert penalty_weights(df, ActivationParams()).w[0] == 1.0

    def test_zero_df_gets_weight_zero(self):
        df = DfTable(df=np.array([0]), sample_size=10, epsilon=0.0)
        assert penalty_weights(df, ActivationParams()).w[0] == 0.0

    def test_ratio_at_alpha_gives_half(self):
        df = DfTable(df=np.array([1]), sample_size=10, epsilon=0.0)
        w = penalty_weights(df, ActivationParams(alpha=0.1, beta=10.0)).w[0]
        assert w == pytest.approx(0.5, abs=1e-12)

    def test_bounds_validated(self):
        with pytest.raises(ValueError):
            PenaltyWeights(np.array([1.2]))


class TestFlopsLoss:
    def test_single_vector_reduces_to_sum_of_squares(self):
        batch = DocBatch.of([SparseVector([0, 1], [1.0, 2.0])], 3)
        res = flops_loss(batch)
        assert res.loss == 5.0
        # grad = 2/N^2 * sum_i r_it = 2 * r_t for N = 1
        assert res.grad_per_term.tolist() == [2.0, 4.0, 0.0]

    def test_all_zero_batch(self):
        batch = DocBatch.of([SparseVector([], []), SparseVector([], [])], 2)
        res = flops_loss(batch)
        assert res.loss == 0.0
        assert np.all(res.grad_per_term == 0.0)

    def test_two_disjoint_vectors(self):
        batch = DocBatch.of([SparseVector([0], [1.0]), SparseVector([1], [1.0])], 2)
        assert flops_loss(batch).loss == pytest.approx(0.5, abs=1e-15)

    def test_matches_dense_formula(self, rng):
        for _ in range(20):
            batch = DocBatch.of(random_batch(rng, 5, 12, max_nnz=8), 12)
            res = flops_loss(batch)
            assert res.loss == pytest.approx(_loss_value(batch, np.ones(12)), rel=1e-12)

    def test_permutation_invariant(self, rng):
        vecs = random_batch(rng, 6, 10, max_nnz=6)
        loss_a = flops_loss(DocBatch.of(vecs, 10)).loss
        order = rng.permutation(6)
        loss_b = flops_loss(DocBatch.of([vecs[i] for i in order], 10)).loss
        assert loss_a == pytest.approx(loss_b, rel=1e-12)


class TestDfFlopsLoss:
    def test_hand_case(self):
        batch = DocBatch.of([SparseVector([0, 1], [2.0, 3.0])], 2)
        weights = PenaltyWeights(np.array([0.5, 1.0]))
        assert df_flops_loss(batch, weights).loss == pytest.approx(10.0, abs=1e-15)

    def test_all_one_weights_equal_flops_bitwise(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 8))
            batch = DocBatch.of(random_batch(rng, n, 15, max_nnz=10), 15)
            plain = flops_loss(batch)
            scaled = df_flops_loss(batch, PenaltyWeights.ones(15))
            assert scaled.loss == plain.loss
            assert np.array_equal(scaled.grad_per_term, plain.grad_per_term)

    def test_zero_weights_zero_loss(self, rng):
        batch = DocBatch.of(random_batch(rng, 4, 10, max_nnz=6), 10)
        res = df_flops_loss(batch, PenaltyWeights(np.zeros(10)))
        assert res.loss == 0.0

    def test_dominated_by_flops(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 8))
            batch = DocBatch.of(random_batch(rng, n, 15, max_nnz=10), 15)
            w = PenaltyWeights(rng.uniform(0.0, 1.0, size=15))
            assert df_flops_loss(batch, w).loss <= flops_loss(batch).loss

    def test_weight_length_checked(self, rng):
        batch = DocBatch.of(random_batch(rng, 2, 10, max_nnz=4), 10)
        with pytest.raises(ValueError):
            df_flops_loss(batch, PenaltyWeights.ones(9))

    def test_zero_loss_iff_weighted_means_vanish(self):
        # term 0 penalized but balanced to zero mean is impossible (weights > 0),
        # so zero loss requires w_t = 0 wherever the mean is positive
        batch = DocBatch.of([SparseVector([0], [1.0]), SparseVector([1], [2.0])], 3)
        w_hit = PenaltyWeights(np.array([0.0, 0.5, 1.0]))
        assert df_flops_loss(batch, w_hit).loss > 0.0
        w_miss = PenaltyWeights(np.array([0.0, 0.0, 1.0]))
        assert df_flops_loss(batch, w_miss).loss == 0.0

    def test_permutation_invariant(self, rng):
        vecs = random_batch(rng, 5, 10, max_nnz=6)
        w = PenaltyWeights(rng.uniform(0, 1, 10))
        loss_a = df_flops_loss(DocBatch.of(vecs, 10), w).loss
        order = rng.permutation(5)
        loss_b = df_flops_loss(DocBatch.of([vecs[i] for i in order], 10), w).loss
        assert loss_a == pytest.approx(loss_b, rel=1e-12)


def central_difference_grad(batch_dense, weights, j, t, h=1e-4):
    """Finite-difference dL/dr_jt of the scaled batch-mean loss."""

    def loss(dense):
        means = dense.mean(axis=0)
        return float(np.sum((weights * means) ** 2))

    plus = batch_dense.copy()
    plus[j, t] += h
    minus = batch_dense.copy()
    minus[j, t] -= h
    return (loss(plus) - loss(minus)) / (2 * h)


class TestGradients:
    @pytest.mark.parametrize("use_weights", [False, True])
    def test_analytic_matches_central_differences(self, rng, use_weights):
        vocab_size = 8
        for _ in range(25):
            n = int(rng.integers(1, 5))
            vecs = random_batch(rng, n, vocab_size, max_nnz=6, low=0.5, high=2.0)
            batch = DocBatch.of(vecs, vocab_size)
            if use_weights:
                w = PenaltyWeights(rng.uniform(0, 1, vocab_size))
                res = df_flops_loss(batch, w)
                w_arr = w.w
            else:
                res = flops_loss(batch)
                w_arr = np.ones(vocab_size)
            dense = batch.to_dense()
            for j in range(n):
                for t in range(vocab_size):
                    fd = central_difference_grad(dense, w_arr, j, t)
                    analytic = res.grad_per_term[t]
                    assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestLambdaSchedule:
    def test_zero_at_start(self):
        sched = LambdaSchedule(peak_lambda=0.5, warmup_steps=100)
        assert lambda_at(0, sched) == 0.0

    def test_peak_at_warmup_end(self):
        sched = LambdaSchedule(peak_lambda=0.5, warmup_steps=100)
        assert lambda_at(100, sched) == 0.5
        assert lambda_at(250, sched) == 0.5

    def test_quadratic_midpoint(self):
        sched = LambdaSchedule(peak_lambda=0.8, warmup_steps=100)
        assert lambda_at(50, sched) == pytest.approx(0.2, rel=1e-12)

    @given(st.integers(0, 10_000), st.floats(0.0, 100.0), st.integers(1, 5_000))
    def test_bounded_and_monotone(self, step, peak, warmup):
        sched = LambdaSchedule(peak_lambda=peak, warmup_steps=warmup)
        lam = lambda_at(step, sched)
        assert 0.0 <= lam <= peak
        assert lambda_at(step + 1, sched) >= lam

    def test_warmup_validation(self):
        with pytest.raises(ValueError):
            LambdaSchedule(peak_lambda=1.0, warmup_steps=0)
