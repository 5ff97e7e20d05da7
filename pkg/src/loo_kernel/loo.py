"""Closed-form leave-one-out residuals, loss and accuracy for kernel regression.

Everything is built from the residual

    Delta_ik = (Y_ik - f_k(x_i)) / (1 - A_ii),   A = K (K + lam I)^{-1},

computed from one fit on the full data. The loss is the plain (unhalved)
mean over points of the squared residual row norm; accuracy checks whether
``argmax(y_i - Delta_i)`` recovers the label. :func:`brute_force_loo`
retrains ``n`` times and is the oracle for all of the closed forms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import ConsistencyError, DomainError, SingularityError
from .kernels import RANK_REL_TOL, check_symmetric
from .regression import (
    CHOLESKY_MIN_RATIO,
    EigenDecomposition,
    _as_matrix,
    _top_eigenvalue,
    argmax_rows,
    eigendecompose,
    fit,
    predict,
)

logger = logging.getLogger(__name__)

FLAG_TOL = 1e-10
SINGULAR_TOL = 1e-14


@dataclass
class LooReport:
    """Outcome of a leave-one-out computation.

    ``residuals`` are evaluation-label minus leave-one-out prediction,
    ``predictions`` the leave-one-out predictions themselves, ``diag_A`` the
    hat-matrix diagonal (NaN where not defined) and ``flags`` marks points
    whose denominator fell below ``FLAG_TOL``.
    """

    residuals: NDArray[np.float64]
    predictions: NDArray[np.float64]
    correct: NDArray[np.bool_]
    diag_A: NDArray[np.float64]
    flags: NDArray[np.bool_]
    lam: float
    loss: float
    accuracy: float

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    @property
    def flagged_points(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.flags)]

    def to_dict(self) -> dict:
        return {
            "loss": float(self.loss),
            "accuracy": float(self.accuracy),
            "n": self.n,
            "lambda": float(self.lam),
            "flagged_points": self.flagged_points,
        }


def _loss(residuals) -> float:
    return float(np.sum(residuals**2) / residuals.shape[0])


def _targets(Y) -> NDArray[np.float64]:
    Y = np.asarray(Y, dtype=np.float64)
    return Y[:, None] if Y.ndim == 1 else Y


def _build(residuals, predictions, eval_targets, diag_A, flags, lam) -> LooReport:
    correct = argmax_rows(predictions) == argmax_rows(eval_targets)
    return LooReport(
        residuals=residuals,
        predictions=predictions,
        correct=correct,
        diag_A=diag_A,
        flags=flags,
        lam=float(lam),
        loss=_loss(residuals),
        accuracy=float(np.count_nonzero(correct)) / residuals.shape[0],
    )


def _check_denominators(denom, tol: float, what: str):
    bad = np.flatnonzero(~(denom > tol))
    if bad.size:
        raise SingularityError(
            f"{what} vanishes at point(s) {bad[:10].tolist()}; leave-one-out problem is degenerate",
            bad,
        )


def _regularized_residuals(K, Y, lam, eig):
    """Residuals and ``1 - A_ii`` for ``lam > 0``."""
    n = K.shape[0]
    if eig is None and lam > CHOLESKY_MIN_RATIO * max(_top_eigenvalue(K), 0.0):
        try:
            factor = scipy.linalg.cho_factor(K + lam * np.eye(n))
            G = scipy.linalg.cho_solve(factor, np.eye(n))
            alpha = G @ Y
            # Y - K alpha = lam * alpha exactly
            return lam * alpha, lam * np.diag(G)
        except np.linalg.LinAlgError:
            pass
    if eig is None:
        eig = eigendecompose(K)
    w = lam / (lam + np.maximum(eig.omega, 0.0))
    return eig.V @ (w[:, None] * (eig.V.T @ Y)), (eig.V**2) @ w


def loo_regularized(K, Y, lam: float, eig: EigenDecomposition | None = None) -> LooReport:
    """Exact leave-one-out report for ridge parameter ``lam > 0``."""
    if not lam > 0:
        raise DomainError(f"loo_regularized needs lambda > 0, got {lam}")
    Y = _targets(Y)
    K = None if K is None else _as_matrix(K)
    if K is None and eig is None:
        raise DomainError("need a kernel matrix or its eigendecomposition")
    if K is not None:
        check_symmetric(K, tol=1e-10)
    n = K.shape[0] if K is not None else eig.n
    if Y.shape[0] != n:
        raise ConsistencyError(f"kernel has {n} rows but Y has {Y.shape[0]}")
    fit_resid, one_minus_a = _regularized_residuals(K, Y, lam, eig)
    if np.any(one_minus_a <= 0):
        _check_denominators(one_minus_a, 0.0, "1 - A_ii")
    delta = fit_resid / one_minus_a[:, None]
    return _build(delta, Y - delta, Y, 1.0 - one_minus_a, one_minus_a < FLAG_TOL, lam)


def _zero_reg_residuals(eig: EigenDecomposition, Y):
    n, r = eig.n, eig.rank
    if r < n:
        tail = eig.omega[r:]
        if tail.size and tail.min() > 0:
            logger.warning(
                "kernel is positive definite but %d eigenvalue(s) fall below the rank "
                "tolerance; using the rank-deficient branch (r=%d)",
                n - r,
                r,
            )
        P = eig.V[:, r:]
        denom = np.einsum("ij,ij->i", P, P)
        _check_denominators(denom, SINGULAR_TOL, "null-space mass")
        delta = (P @ (P.T @ Y)) / denom[:, None]
        return delta, 1.0 - denom, denom < FLAG_TOL
    inv = 1.0 / eig.omega
    W = (eig.V * inv) @ eig.V.T
    denom = np.diag(W).copy()
    delta = (W @ Y) / denom[:, None]
    return delta, np.ones(n), np.zeros(n, dtype=bool)


def loo_zero_reg(eig: EigenDecomposition, Y) -> LooReport:
    """Leave-one-out report in the ``lam -> 0`` limit.

    The branch follows the numerical rank: the null-space projector when
    ``rank < n``, inverse-eigenvalue weights when ``rank == n``.
    """
    Y = _targets(Y)
    if Y.shape[0] != eig.n:
        raise ConsistencyError(f"kernel has {eig.n} rows but Y has {Y.shape[0]}")
    delta, diag_a, flags = _zero_reg_residuals(eig, Y)
    return _build(delta, Y - delta, Y, diag_a, flags, 0.0)


def loo_noisy(
    eig: EigenDecomposition,
    Y_noisy,
    Y_clean,
    lam: float = 0.0,
    K=None,
) -> LooReport:
    """Leave-one-out report for a model trained on ``Y_noisy``, scored on ``Y_clean``.

    With ``lam = 0`` the kernel must have full numerical rank. ``lam > 0``
    uses the regularized residuals instead (``K`` optional, ``eig`` reused).
    """
    Yn, Yc = _targets(Y_noisy), _targets(Y_clean)
    if Yn.shape != Yc.shape:
        raise ConsistencyError(f"noisy targets {Yn.shape} vs clean targets {Yc.shape}")
    if Yn.shape[0] != eig.n:
        raise ConsistencyError(f"kernel has {eig.n} rows but Y has {Yn.shape[0]}")
    if lam > 0:
        fit_resid, one_minus_a = _regularized_residuals(
            None if K is None else _as_matrix(K), Yn, lam, eig if K is None else None
        )
        if np.any(one_minus_a <= 0):
            _check_denominators(one_minus_a, 0.0, "1 - A_ii")
        delta = fit_resid / one_minus_a[:, None]
        diag_a, flags = 1.0 - one_minus_a, one_minus_a < FLAG_TOL
    else:
        if eig.rank < eig.n:
            raise DomainError(
                f"noisy-label leave-one-out at lambda=0 assumes a full-rank kernel "
                f"(rank(K) = n); got rank {eig.rank} < n = {eig.n}"
            )
        delta, diag_a, flags = _zero_reg_residuals(eig, Yn)
    residuals = delta + (Yc - Yn)
    return _build(residuals, Yn - delta, Yc, diag_a, flags, lam)


def loo_binary(K_or_eig, y, lam: float) -> LooReport:
    """Binary (+-1 targets) leave-one-out report; a point counts as correct iff ``y_i Delta_i < 1``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all(np.abs(y) == 1):
        raise DomainError("binary targets must be +1 or -1")
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if isinstance(K_or_eig, EigenDecomposition):
        eig, K = K_or_eig, None
    else:
        eig, K = None, _as_matrix(K_or_eig)
    if lam > 0:
        base = loo_regularized(K, y, lam, eig=eig)
    else:
        base = loo_zero_reg(eig if eig is not None else eigendecompose(K), y)
    delta = base.residuals[:, 0]
    correct = y * delta < 1
    base.correct = correct
    base.accuracy = float(np.count_nonzero(correct)) / y.shape[0]
    return base


def brute_force_loo(
    kernel_provider,
    Y,
    lam: float,
    evaluate_against=None,
    rel_tol: float = RANK_REL_TOL,
) -> LooReport:
    """Refit on every ``n - 1`` point subproblem and score the held-out point.

    ``kernel_provider`` is either the full Gram matrix or a callable
    ``provider(rows, cols)`` returning the requested block. ``lam = 0`` uses
    pseudo-inverse fits. Scores are taken against ``evaluate_against`` (the
    training targets by default).
    """
    Y = _targets(Y)
    E = Y if evaluate_against is None else _targets(evaluate_against)
    n = Y.shape[0]
    if n < 2:
        raise DomainError("brute-force leave-one-out needs n >= 2")
    if E.shape != Y.shape:
        raise ConsistencyError(f"evaluation targets {E.shape} vs training targets {Y.shape}")
    if callable(kernel_provider):
        provider = kernel_provider
    else:
        K = _as_matrix(kernel_provider)
        provider = lambda rows, cols: K[np.ix_(rows, cols)]  # noqa: E731
    preds = np.empty_like(Y)
    everyone = np.arange(n)
    for i in range(n):
        keep = everyone[everyone != i]
        model = fit(provider(keep, keep), Y[keep], lam, rel_tol=rel_tol)
        preds[i] = predict(model, provider([i], keep))[0]
    residuals = E - preds
    return _build(residuals, preds, E, np.full(n, np.nan), np.zeros(n, dtype=bool), lam)


def argmax_gap(M) -> NDArray[np.float64]:
    """Difference between the largest and second largest entry per row (inf for one column)."""
    M = np.asarray(M)
    if M.shape[1] < 2:
        return np.full(M.shape[0], np.inf)
    top2 = np.sort(M, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]
