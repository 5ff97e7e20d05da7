import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_psd
from loo_kernel.errors import ConsistencyError, DomainError
from loo_kernel.regression import (
    argmax_rows,
    eigendecompose,
    eval_metrics,
    fit,
    predict,
    spectral_weights,
)


class TestFit:
    def test_ridge_matches_dense_solve(self, rng):
        K = random_psd(rng, 12)
        Y = rng.standard_normal((12, 3))
        for lam in (1e-6, 1e-2, 1.0, 10.0):
            alpha = np.linalg.solve(K + lam * np.eye(12), Y)
            np.testing.assert_allclose(fit(K, Y, lam).alpha, alpha, rtol=1e-8, atol=1e-10)

    def test_eigen_route_equals_cholesky(self, rng):
        K = random_psd(rng, 10)
        Y = rng.standard_normal((10, 2))
        a = fit(K, Y, 0.3).alpha
        b = fit(K, Y, 0.3, eig=eigendecompose(K)).alpha
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_zero_lambda_is_pseudo_inverse(self, rng):
        K = random_psd(rng, 10, rank=4)
        Y = rng.standard_normal((10, 2))
        np.testing.assert_allclose(
            fit(K, Y, 0.0).alpha, np.linalg.pinv(K, rcond=1e-10, hermitian=True) @ Y, rtol=1e-6, atol=1e-8
        )

    def test_vector_targets_stay_vectors(self, rng):
        K = random_psd(rng, 5)
        assert fit(K, np.ones(5), 1.0).alpha.shape == (5,)

    def test_interpolates_full_rank(self, rng):
        K = random_psd(rng, 8)
        Y = rng.standard_normal((8, 2))
        np.testing.assert_allclose(predict(fit(K, Y, 0.0), K), Y, atol=1e-8)

    def test_errors(self, rng):
        K = random_psd(rng, 4)
        with pytest.raises(DomainError):
            fit(K, np.ones(4), -1.0)
        with pytest.raises(DomainError):
            fit(K, np.ones(4), np.nan)
        with pytest.raises(ConsistencyError):
            fit(K, np.ones(5), 1.0)
        with pytest.raises(ConsistencyError):
            predict(fit(K, np.ones(4), 1.0), np.ones((2, 3)))


def test_eigendecompose_sorted_and_reconstructs(rng):
    K = random_psd(rng, 9, rank=5)
    eig = eigendecompose(K)
    assert np.all(np.diff(eig.omega) <= 0)
    assert eig.rank == 5
    np.testing.assert_allclose(eig.reconstruct(), K, atol=1e-12)


def test_eigendecompose_rejects_asymmetric():
    with pytest.raises(DomainError):
        eigendecompose(np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_spectral_weights():
    from loo_kernel.regression import EigenDecomposition

    eig = EigenDecomposition(np.eye(3), np.array([2.0, 1.0, 1e-14]), rank=2)
    np.testing.assert_allclose(spectral_weights(eig, 0.0), [0.5, 1.0, 0.0])
    np.testing.assert_allclose(spectral_weights(eig, 1.0), [1 / 3, 0.5, 1 / (1 + 1e-14)])


def test_argmax_ties_lowest_index():
    np.testing.assert_array_equal(argmax_rows(np.array([[1.0, 1.0], [0.0, 2.0]])), [0, 1])


def test_eval_metrics_half_squared():
    loss, acc = eval_metrics(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert loss == pytest.approx(0.5)
    assert acc == 0.5


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 15), lam=st.floats(1e-3, 1e3), seed=st.integers(0, 10_000))
def test_ridge_normal_equations(n, lam, seed):
    rng = np.random.default_rng(seed)
    K = random_psd(rng, n)
    Y = rng.standard_normal((n, 2))
    alpha = fit(K, Y, lam).alpha
    np.testing.assert_allclose((K + lam * np.eye(n)) @ alpha, Y, atol=1e-8 * (1 + np.abs(Y).max()))
