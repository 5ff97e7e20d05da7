import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_psd, rel_err
from loo_kernel.dataio import one_hot
from loo_kernel.errors import ConsistencyError, DomainError, SingularityError
from loo_kernel.loo import (
    argmax_gap,
    brute_force_loo,
    loo_binary,
    loo_noisy,
    loo_regularized,
    loo_zero_reg,
)
from loo_kernel.regression import eigendecompose


def targets(rng, n, C):
    if C == 1:
        return rng.standard_normal((n, 1))
    return one_hot(rng.integers(0, C, n), C)


class TestRegularized:
    def test_hand_example(self):
        # K = I, lam = 1: A = I/2, f = Y/2, Delta = (Y/2)/(1/2) = Y
        Y = np.array([[1.0], [-2.0]])
        rep = loo_regularized(np.eye(2), Y, 1.0)
        np.testing.assert_allclose(rep.residuals, Y)
        assert rep.loss == pytest.approx(2.5)

    @pytest.mark.parametrize("lam", [1e-6, 1e-2, 1.0, 10.0])
    @pytest.mark.parametrize("C", [1, 2, 5])
    def test_matches_brute_force(self, rng, lam, C):
        n = 20
        K = random_psd(rng, n)
        Y = targets(rng, n, C)
        fast, slow = loo_regularized(K, Y, lam), brute_force_loo(K, Y, lam)
        assert rel_err(fast.loss, slow.loss) <= 1e-8
        np.testing.assert_array_equal(fast.correct, slow.correct)

    def test_eigen_path_agrees(self, rng):
        K = random_psd(rng, 15, rank=6)
        Y = targets(rng, 15, 3)
        a = loo_regularized(K, Y, 0.1)
        b = loo_regularized(K, Y, 0.1, eig=eigendecompose(K))
        assert rel_err(a.loss, b.loss) <= 1e-10

    def test_rejects_bad_inputs(self, rng):
        K = random_psd(rng, 4)
        with pytest.raises(DomainError):
            loo_regularized(K, np.ones(4), 0.0)
        with pytest.raises(ConsistencyError):
            loo_regularized(K, np.ones(5), 1.0)
        with pytest.raises(DomainError):
            loo_regularized(K + np.triu(np.ones((4, 4)), 1), np.ones(4), 1.0)

    def test_report_dict(self, rng):
        d = loo_regularized(random_psd(rng, 4), np.ones(4), 1.0).to_dict()
        assert set(d) == {"loss", "accuracy", "n", "lambda", "flagged_points"}


class TestZeroReg:
    def test_rank_deficient_matches_pinv_oracle(self, rng):
        for r in (3, 10, 18):
            K = random_psd(rng, 20, rank=r)
            Y = targets(rng, 20, 2)
            fast = loo_zero_reg(eigendecompose(K), Y)
            slow = brute_force_loo(K, Y, 0.0)
            assert rel_err(fast.loss, slow.loss) <= 1e-6

    def test_full_rank_matches_pinv_oracle(self, rng):
        K = random_psd(rng, 16) + 0.1 * np.eye(16)
        Y = targets(rng, 16, 5)
        assert rel_err(loo_zero_reg(eigendecompose(K), Y).loss, brute_force_loo(K, Y, 0.0).loss) <= 1e-6

    def test_continuity_in_lambda(self, rng):
        K = random_psd(rng, 12) + 0.5 * np.eye(12)
        Y = targets(rng, 12, 2)
        a = loo_zero_reg(eigendecompose(K), Y).loss
        b = loo_regularized(K, Y, 1e-9).loss
        assert rel_err(a, b) <= 1e-4

    def test_singular_null_space(self):
        # point 0 is spanned by the kernel alone: no null-space mass there
        K = np.diag([1.0, 0.0, 0.0])
        with pytest.raises(SingularityError) as info:
            loo_zero_reg(eigendecompose(K), np.ones(3))
        assert 0 in info.value.indices

    def test_consistency(self, rng):
        with pytest.raises(ConsistencyError):
            loo_zero_reg(eigendecompose(random_psd(rng, 3)), np.ones(4))


class TestNoisy:
    def test_matches_clean_evaluation_oracle(self, rng):
        n = 18
        K = random_psd(rng, n) + 0.1 * np.eye(n)
        Yc = targets(rng, n, 3)
        Yn = Yc.copy()
        Yn[:6] = targets(rng, 6, 3)
        fast = loo_noisy(eigendecompose(K), Yn, Yc)
        slow = brute_force_loo(K, Yn, 0.0, evaluate_against=Yc)
        assert rel_err(fast.loss, slow.loss) <= 1e-8
        np.testing.assert_array_equal(fast.correct, slow.correct)

    def test_no_noise_is_bit_exact(self, rng):
        K = random_psd(rng, 10)
        Y = targets(rng, 10, 2)
        eig = eigendecompose(K)
        a, b = loo_noisy(eig, Y, Y), loo_zero_reg(eig, Y)
        np.testing.assert_array_equal(a.residuals, b.residuals)
        assert a.loss == b.loss and a.accuracy == b.accuracy

    def test_regularized_variant(self, rng):
        K = random_psd(rng, 12, rank=5)
        Yc = targets(rng, 12, 2)
        Yn = Yc[::-1].copy()
        fast = loo_noisy(eigendecompose(K), Yn, Yc, lam=0.5, K=K)
        slow = brute_force_loo(K, Yn, 0.5, evaluate_against=Yc)
        assert rel_err(fast.loss, slow.loss) <= 1e-8

    def test_rank_deficient_rejected(self, rng):
        K = random_psd(rng, 8, rank=3)
        Y = targets(rng, 8, 2)
        with pytest.raises(DomainError, match="full-rank"):
            loo_noisy(eigendecompose(K), Y, Y)


class TestBinary:
    def test_matches_sign_agreement(self, rng):
        for lam in (0.0, 0.1):
            K = random_psd(rng, 14) + 0.05 * np.eye(14)
            y = rng.choice([-1.0, 1.0], 14)
            fast = loo_binary(K, y, lam)
            slow = brute_force_loo(K, y, lam)
            np.testing.assert_array_equal(fast.correct, np.sign(slow.predictions[:, 0]) == y)

    def test_rejects_non_sign_targets(self, rng):
        with pytest.raises(DomainError):
            loo_binary(random_psd(rng, 3), np.array([1.0, 0.0, -1.0]), 1.0)


def test_brute_force_callable_provider(rng):
    K = random_psd(rng, 9)
    Y = targets(rng, 9, 2)
    a = brute_force_loo(K, Y, 0.2)
    b = brute_force_loo(lambda r, c: K[np.ix_(r, c)], Y, 0.2)
    np.testing.assert_array_equal(a.residuals, b.residuals)


def test_argmax_gap():
    np.testing.assert_array_equal(argmax_gap(np.array([[1.0, 3.0, 2.0]])), [1.0])
    assert np.isinf(argmax_gap(np.ones((2, 1)))).all()


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 20), lam=st.floats(1e-4, 1e2), seed=st.integers(0, 10_000))
def test_closed_form_equals_brute_force_property(n, lam, seed):
    rng = np.random.default_rng(seed)
    K = random_psd(rng, n)
    Y = rng.standard_normal((n, 2))
    assert rel_err(loo_regularized(K, Y, lam).loss, brute_force_loo(K, Y, lam).loss) <= 1e-7
