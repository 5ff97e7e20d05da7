"""Kernel ridge regression, its pseudo-inverse limit, and shared eigen services."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import ConsistencyError, DomainError
from .kernels import RANK_REL_TOL, check_symmetric

# below this multiple of the top eigenvalue the ridge term is treated as roundoff
CHOLESKY_MIN_RATIO = 1e-12


@dataclass(frozen=True)
class EigenDecomposition:
    """``K = V diag(omega) V^T`` with ``omega`` descending."""

    V: NDArray[np.float64]
    omega: NDArray[np.float64]
    rank: int
    rel_tol: float = RANK_REL_TOL

    @property
    def n(self) -> int:
        return self.V.shape[0]

    def reconstruct(self) -> NDArray[np.float64]:
        return (self.V * self.omega) @ self.V.T


def _as_matrix(K) -> NDArray[np.float64]:
    values = getattr(K, "values", K)
    return np.asarray(values, dtype=np.float64)


def numerical_rank(omega, rel_tol: float = RANK_REL_TOL) -> int:
    omega = np.asarray(omega)
    if omega.size == 0 or omega[0] <= 0:
        return 0
    return int(np.count_nonzero(omega > rel_tol * omega[0]))


def eigendecompose(K, rel_tol: float = RANK_REL_TOL) -> EigenDecomposition:
    """Symmetric eigendecomposition, eigenvalues sorted descending."""
    K = _as_matrix(K)
    check_symmetric(K, tol=1e-10)
    w, V = np.linalg.eigh((K + K.T) / 2)
    w, V = w[::-1].copy(), V[:, ::-1].copy()
    return EigenDecomposition(V, w, numerical_rank(w, rel_tol), rel_tol)


def _top_eigenvalue(K) -> float:
    n = K.shape[0]
    return float(scipy.linalg.eigh(K, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])


def spectral_weights(eig: EigenDecomposition, lam: float) -> NDArray[np.float64]:
    """Diagonal of ``(K + lam I)^+`` in the eigenbasis.

    With ``lam = 0`` eigenvalues beyond the numerical rank are dropped, which
    gives the pseudo-inverse; with ``lam > 0`` only negative roundoff is
    clipped.
    """
    omega = np.maximum(eig.omega, 0.0)
    if lam == 0:
        omega = np.where(np.arange(eig.n) < eig.rank, omega, 0.0)
    denom = omega + lam
    out = np.zeros_like(denom)
    pos = denom > 0
    out[pos] = 1.0 / denom[pos]
    return out


@dataclass(frozen=True)
class RidgeModel:
    """Dual coefficients ``alpha`` with ``f(x) = K_x^T alpha``."""

    alpha: NDArray[np.float64]
    lam: float
    K: NDArray[np.float64]


def fit(
    K,
    Y,
    lam: float,
    eig: EigenDecomposition | None = None,
    rel_tol: float = RANK_REL_TOL,
) -> RidgeModel:
    """Solve ``(K + lam I) alpha = Y``; ``lam = 0`` gives ``alpha = K^+ Y``.

    Cholesky is used when ``lam`` exceeds ``1e-12`` times the top eigenvalue,
    the eigen route otherwise (with ``eig`` reused if provided).
    """
    K = _as_matrix(K)
    Y = np.asarray(Y, dtype=np.float64)
    squeeze = Y.ndim == 1
    Y2 = Y[:, None] if squeeze else Y
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DomainError(f"kernel must be square, got {K.shape}")
    if Y2.shape[0] != K.shape[0]:
        raise ConsistencyError(f"kernel has {K.shape[0]} rows but Y has {Y2.shape[0]}")
    if lam < 0 or not np.isfinite(lam):
        raise DomainError(f"lambda must be finite and >= 0, got {lam}")
    alpha = None
    if lam > 0 and eig is None and K.shape[0] > 0:
        top = _top_eigenvalue(K)
        if lam > CHOLESKY_MIN_RATIO * max(top, 0.0):
            try:
                factor = scipy.linalg.cho_factor(K + lam * np.eye(K.shape[0]))
                alpha = scipy.linalg.cho_solve(factor, Y2)
            except np.linalg.LinAlgError:
                alpha = None
    if alpha is None:
        if eig is None:
            eig = eigendecompose(K, rel_tol)
        alpha = eig.V @ (spectral_weights(eig, lam)[:, None] * (eig.V.T @ Y2))
    return RidgeModel(alpha[:, 0] if squeeze else alpha, float(lam), K)


def predict(model: RidgeModel, K_cross) -> NDArray[np.float64]:
    K_cross = np.atleast_2d(_as_matrix(K_cross))
    if K_cross.shape[1] != model.alpha.shape[0]:
        raise ConsistencyError(
            f"cross kernel has {K_cross.shape[1]} columns, model has {model.alpha.shape[0]} points"
        )
    return K_cross @ model.alpha


def argmax_rows(M) -> NDArray[np.int64]:
    """Row-wise argmax, lowest index on ties."""
    return np.argmax(np.asarray(M), axis=1)


def eval_metrics(pred, Y) -> tuple[float, float]:
    """Half squared error per row (averaged) and argmax accuracy."""
    pred = np.asarray(pred, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if pred.ndim == 1:
        pred, Y = pred[:, None], Y.reshape(-1, 1)
    if pred.shape != Y.shape:
        raise ConsistencyError(f"prediction shape {pred.shape} != target shape {Y.shape}")
    loss = 0.5 * float(np.mean(np.sum((pred - Y) ** 2, axis=1)))
    acc = float(np.mean(argmax_rows(pred) == argmax_rows(Y)))
    return loss, acc
