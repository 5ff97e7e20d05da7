"""Gram matrices for linear, NNGP, NTK and random-feature kernels (ReLU).

The infinite-width kernels follow the layer recursion

    Sigma_1(x, x')     = <x, x'> / sqrt(d)
    Sigma_{l+1}        = E[relu(z1) relu(z2)],   z ~ N(0, Sigma_l restricted to {x, x'})
    SigmaDot_{l+1}     = E[relu'(z1) relu'(z2)]
    Theta_1            = Sigma_1
    Theta_{l+1}        = Theta_l * SigmaDot_{l+1} + Sigma_{l+1}

with the ReLU expectations evaluated in arc-cosine closed form. ``depth``
counts weight matrices, so ``depth=1`` is the linear kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .errors import ConsistencyError, DomainError

Family = Literal["linear", "nngp", "ntk", "random-feature"]
FAMILIES = ("linear", "nngp", "ntk", "random-feature")

RANK_REL_TOL = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    family: Family = "ntk"
    depth: int = 1
    nonlinearity: str = "relu"
    widths: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if self.nonlinearity != "relu":
            raise DomainError(f"only relu is supported, got {self.nonlinearity!r}")
        if int(self.depth) < 1:
            raise DomainError(f"depth must be >= 1, got {self.depth}")
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if (self.family == "random-feature") != bool(widths):
            raise DomainError("widths must be given exactly for the random-feature family")
        if any(w < 1 for w in widths):
            raise DomainError(f"widths must be positive, got {widths}")


@dataclass
class KernelMatrix:
    """Training Gram block plus an optional test-vs-train block."""

    values: NDArray[np.float64]
    cross_block: NDArray[np.float64] | None = field(default=None)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def check(self, psd_tol: float = 1e-8) -> None:
        """Raise DomainError if symmetry or PSD-ness is violated."""
        check_symmetric(self.values)
        if self.n == 0:
            return
        w = np.linalg.eigvalsh(self.values)
        if w[0] < -psd_tol * max(w[-1], 0.0) and w[0] < -1e-300:
            raise DomainError(
                f"kernel is not PSD: smallest eigenvalue {w[0]:.3e}, largest {w[-1]:.3e}"
            )


def check_symmetric(K, tol: float = 1e-12) -> None:
    K = np.asarray(K)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {K.shape}")
    gap = np.abs(K - K.T)
    bound = tol * np.maximum(1.0, np.abs(K))
    if np.any(gap > bound):
        i, j = np.unravel_index(np.argmax(gap - bound), K.shape)
        raise DomainError(f"matrix is not symmetric at ({i}, {j}): gap {gap[i, j]:.3e}")


def _pair(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ConsistencyError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def linear_kernel(A, B=None) -> NDArray[np.float64]:
    """``K_ij = <a_i, b_j> / sqrt(d)``."""
    A, B = _pair(A, B)
    return A @ B.T / np.sqrt(A.shape[1])


def relu_expectations(a, b, c):
    """Gaussian ReLU moments for variances ``a``, ``b`` and covariance ``c``.

    Returns ``(E[relu(z1) relu(z2)], E[step(z1) step(z2)])``. The cosine is
    clipped to [-1, 1] before ``arccos``.
    """
    norm = np.sqrt(a * b)
    cos = np.clip(c / norm, -1.0, 1.0)
    theta = np.arccos(cos)
    sigma = norm / (2 * np.pi) * (np.sin(theta) + (np.pi - theta) * cos)
    sigma_dot = (np.pi - theta) / (2 * np.pi)
    return sigma, sigma_dot


def _layers(A, B, depth: int):
    """Yield ``(Sigma, SigmaDot)`` for levels 2..depth; level 1 is yielded first with None."""
    A, B = _pair(A, B)
    same = B is A
    for name, M in (("A", A), ("B", B)):
        zero = np.flatnonzero(~np.any(M != 0, axis=1))
        if zero.size:
            raise DomainError(f"row {int(zero[0])} of {name} has zero norm; angle undefined")
    sqrt_d = np.sqrt(A.shape[1])
    cross = A @ B.T / sqrt_d
    diag_a = np.einsum("ij,ij->i", A, A) / sqrt_d
    diag_b = diag_a if same else np.einsum("ij,ij->i", B, B) / sqrt_d
    yield cross, None
    for _ in range(depth - 1):
        cross, dot = relu_expectations(diag_a[:, None], diag_b[None, :], cross)
        if same:
            # exact symmetry and exact diagonal (theta = 0)
            cross = (cross + cross.T) / 2
            np.fill_diagonal(cross, diag_a / 2)
            dot = (dot + dot.T) / 2
            np.fill_diagonal(dot, 0.5)
        diag_a = diag_a / 2
        diag_b = diag_a if same else diag_b / 2
        yield cross, dot


def nngp_kernel(A, B=None, spec: KernelSpec | None = None) -> NDArray[np.float64]:
    """NNGP kernel ``Sigma_L`` between the rows of ``A`` and ``B``."""
    depth = 1 if spec is None else spec.depth
    if depth < 1:
        raise DomainError("depth must be >= 1")
    for sigma, _ in _layers(A, B, depth):
        pass
    return sigma


def ntk_kernel(A, B=None, spec: KernelSpec | None = None) -> NDArray[np.float64]:
    """Neural tangent kernel ``Theta_L`` between the rows of ``A`` and ``B``."""
    depth = 1 if spec is None else spec.depth
    if depth < 1:
        raise DomainError("depth must be >= 1")
    theta = None
    for sigma, dot in _layers(A, B, depth):
        theta = sigma.copy() if dot is None else theta * dot + sigma
    return theta


def _relu(x):
    return np.maximum(x, 0.0)


def _weights(spec: KernelSpec, d: int) -> list[NDArray[np.float64]]:
    rng = np.random.default_rng(spec.seed)
    fan_in = d
    Ws = []
    for m in spec.widths:
        Ws.append(rng.standard_normal((fan_in, m)) / np.sqrt(fan_in))
        fan_in = m
    return Ws


def random_feature_map(A, spec: KernelSpec) -> NDArray[np.float64]:
    """Frozen random ReLU layers ``relu(... relu(A W1) ... Wk)``.

    Weights are N(0, 1/fan_in), drawn from ``spec.seed`` layer by layer, no
    biases. Feature maps of train and test inputs built from the same spec
    share weights.
    """
    if not spec.widths:
        raise DomainError("random_feature_map needs nonempty widths")
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    h = A
    for W in _weights(spec, A.shape[1]):
        h = _relu(h @ W)
    return h


def feature_gram(phi_a, phi_b=None) -> NDArray[np.float64]:
    """``phi_a phi_b^T / m`` with ``m`` the feature count."""
    phi_b = phi_a if phi_b is None else phi_b
    K = phi_a @ phi_b.T / phi_a.shape[1]
    return (K + K.T) / 2 if phi_b is phi_a else K


def rank_of(M, rel_tol: float = RANK_REL_TOL) -> int:
    """Count singular values above ``rel_tol`` times the largest."""
    if rel_tol <= 0:
        raise DomainError("rel_tol must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] <= 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def _mlp_forward(X, Ws, w_out):
    h = X
    for W in Ws:
        h = _relu(h @ W)
    return h @ w_out


def linearization_feature_map(
    A, widths, seed: int = 0, step: float = 1e-4
) -> NDArray[np.float64]:
    """Parameter gradients of a scalar ReLU network, one row per input.

    The network is ``f(x) = w^T relu(W_k^T ... relu(W_1^T x))`` with N(0,
    1/fan_in) initialisation. Gradients use forward differences with step
    ``step * max(|theta_j|, 1e-8)``; ReLU networks are piecewise linear in each
    single parameter, so the quotient is exact unless a kink is crossed.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    widths = tuple(int(w) for w in widths)
    if not widths:
        raise DomainError("linearization_feature_map needs nonempty widths")
    rng = np.random.default_rng(seed)
    fan_in = A.shape[1]
    Ws = []
    for m in widths:
        Ws.append(rng.standard_normal((fan_in, m)) / np.sqrt(fan_in))
        fan_in = m
    w_out = rng.standard_normal(fan_in) / np.sqrt(fan_in)
    params = Ws + [w_out]
    base = _mlp_forward(A, Ws, w_out)
    columns = []
    for P in params:
        flat = P.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            h = step * max(abs(old), 1e-8)
            flat[j] = old + h
            columns.append((_mlp_forward(A, Ws, w_out) - base) / h)
            flat[j] = old
    return np.stack(columns, axis=1)


def gram(spec: KernelSpec, X_train, X_test=None) -> KernelMatrix:
    """Training Gram matrix and, if ``X_test`` is given, the cross block."""
    if spec.family == "random-feature":
        phi = random_feature_map(X_train, spec)
        values = feature_gram(phi)
        cross = None if X_test is None else feature_gram(random_feature_map(X_test, spec), phi)
        return KernelMatrix(values, cross)
    fn = {"linear": lambda A, B, s: linear_kernel(A, B), "nngp": nngp_kernel, "ntk": ntk_kernel}[
        spec.family
    ]
    values = fn(X_train, None, spec)
    values = (values + values.T) / 2
    cross = None if X_test is None else fn(X_test, X_train, spec)
    return KernelMatrix(values, cross)
