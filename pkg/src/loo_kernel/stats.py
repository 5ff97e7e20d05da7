"""Instruments for the leave-one-out spike at the interpolation threshold.

Covers Haar sampling on the sphere and on O(n), the dominating term
``g(r, lam)``, the lower bound on the leave-one-out loss at ``r = n - 1``,
and Monte-Carlo checks of the supporting distributional facts:

* ``sum_i 1 / v_i**2 >= n**2`` for every unit vector ``v`` ("b1");
* ``(sum_i y_i v_i)**2 / n ~ Beta(1/2, (n-1)/2)`` for Haar ``v`` ("b5");
* ``n X_n -> Gamma(1/2, 1)`` for ``X_n ~ Beta(1/2, n)`` ("b6");
* linear-or-faster growth in ``n`` of the exact loss at the threshold ("spike").
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.stats
from numpy.typing import NDArray

from .errors import DomainError
from .loo import brute_force_loo, loo_binary, loo_noisy, loo_regularized, loo_zero_reg
from .regression import EigenDecomposition, eigendecompose
from .seeding import derive_seed
from .special import beta_cdf, gamma_cdf

DEFAULT_SEED = 0
KS_P_THRESHOLD = 0.01


@dataclass(frozen=True)
class HaarSample:
    """Either a Haar orthogonal matrix ``V`` or a uniform unit vector ``v``."""

    seed: int
    V: NDArray[np.float64] | None = None
    v: NDArray[np.float64] | None = None


def haar_vectors(rng: np.random.Generator, trials: int, n: int) -> NDArray[np.float64]:
    """``trials`` independent uniform unit vectors in R^n, one per row."""
    w = rng.standard_normal((trials, n))
    norms = np.linalg.norm(w, axis=1)
    while np.any(norms == 0):  # measure-zero event
        bad = norms == 0
        w[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(w, axis=1)
    return w / norms[:, None]


def haar_matrix(rng: np.random.Generator, n: int) -> NDArray[np.float64]:
    """Haar orthogonal matrix: QR of a Gaussian matrix, columns sign-fixed by diag(R)."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def sample_haar_vector(n: int, seed: int = DEFAULT_SEED) -> HaarSample:
    if n < 1:
        raise DomainError("n must be >= 1")
    return HaarSample(seed=seed, v=haar_vectors(np.random.default_rng(seed), 1, n)[0])


def sample_haar_matrix(n: int, seed: int = DEFAULT_SEED) -> HaarSample:
    if n < 1:
        raise DomainError("n must be >= 1")
    return HaarSample(seed=seed, V=haar_matrix(np.random.default_rng(seed), n))


@dataclass(frozen=True)
class GTerm:
    """Value of ``g(r, lam)``; ``singular_rows`` lists rows with a zero denominator."""

    value: float
    singular_rows: tuple[int, ...] = ()


def g_denominators(eig: EigenDecomposition, lam: float, rank: int | None = None):
    r = eig.rank if rank is None else int(rank)
    if not 0 <= r <= eig.n:
        raise DomainError(f"rank {r} outside [0, {eig.n}]")
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    V2 = eig.V**2
    weights = np.ones(eig.n)
    if r:
        omega = np.maximum(eig.omega[:r], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            head = np.where(lam + omega > 0, lam / (lam + omega), 1.0)
        weights[:r] = head
    return V2 @ weights


def g_term(eig: EigenDecomposition, lam: float, rank: int | None = None) -> GTerm:
    """Sum over rows of the reciprocal leave-one-out denominator mass.

    ``rank`` defaults to ``eig.rank``; passing it explicitly evaluates the
    term at a hypothetical rank for the same eigenbasis.
    """
    denom = g_denominators(eig, lam, rank)
    zero = np.flatnonzero(denom <= 0)
    if zero.size:
        return GTerm(math.inf, tuple(int(i) for i in zero))
    return GTerm(float(np.sum(1.0 / denom)))


def spike_lower_bound(y, v) -> float:
    """``n * (y . v)**2``, a lower bound on the leave-one-out loss at ``r = n - 1``."""
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(y.shape[0] * np.dot(y, v) ** 2)


def threshold_loo_loss(y, v) -> float:
    """Exact zero-regularization leave-one-out loss when the null space is spanned by ``v``."""
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.dot(y, v) ** 2 * np.sum(1.0 / v**2) / y.shape[0])


@dataclass
class VerificationReport:
    lemma: str
    n: int | list[int]
    trials: int
    statistic: float
    threshold: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out


def _alternating(n: int) -> NDArray[np.float64]:
    return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)


def verify_lemma_b1(trials: int = 1000, n: int = 64, seed: int = DEFAULT_SEED) -> VerificationReport:
    """Check ``sum 1/v_i^2 >= n^2`` on Haar unit vectors; statistic is the smallest ratio."""
    if n < 1 or trials < 1:
        raise DomainError("need n >= 1 and trials >= 1")
    v = haar_vectors(np.random.default_rng(derive_seed(seed, "b1", n)), trials, n)
    ratio = np.sum(1.0 / v**2, axis=1) / n**2
    worst = float(ratio.min())
    return VerificationReport("b1", n, trials, worst, 1.0, bool(np.all(ratio >= 1.0)))


def projection_statistic(v, y) -> NDArray[np.float64]:
    """``(sum_i y_i v_i)**2 / n`` per row of ``v``."""
    v = np.atleast_2d(v)
    return (v @ y) ** 2 / v.shape[1]


def verify_lemma_b5(
    trials: int = 10_000, n: int = 4, seed: int = DEFAULT_SEED, y=None
) -> VerificationReport:
    """KS test of the projection statistic against Beta(1/2, (n-1)/2)."""
    if n < 2:
        raise DomainError("need n >= 2")
    y = _alternating(n) if y is None else np.asarray(y, dtype=np.float64)
    v = haar_vectors(np.random.default_rng(derive_seed(seed, "b5", n)), trials, n)
    sample = projection_statistic(v, y)
    a, b = 0.5, (n - 1) / 2
    res = scipy.stats.kstest(sample, lambda t: beta_cdf(t, a, b))
    mean = float(sample.mean())
    beta_sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    return VerificationReport(
        "b5",
        n,
        trials,
        float(res.statistic),
        KS_P_THRESHOLD,
        bool(res.pvalue > KS_P_THRESHOLD),
        {
            "p_value": float(res.pvalue),
            "sample_mean": mean,
            "beta_mean": 1.0 / n,
            "mean_z": (mean - 1.0 / n) / (beta_sd / math.sqrt(trials)),
        },
    )


def scaled_beta_ks_distance(n: int, k: float = 0.5, grid_size: int = 4000) -> float:
    """Sup distance between the CDF of ``n X``, ``X ~ Beta(k, n)``, and Gamma(k, 1)."""
    t = np.concatenate([np.geomspace(1e-8, 1.0, grid_size // 2), np.linspace(1.0, 40.0, grid_size // 2)])
    t = t[t < n]
    return float(np.max(np.abs(beta_cdf(t / n, k, n) - gamma_cdf(t, k))))


def verify_lemma_b6(
    n_list=(8, 64, 512), trials: int = 10_000, seed: int = DEFAULT_SEED
) -> VerificationReport:
    """Moments of ``n X_n`` against Gamma(1/2, 1) and shrinking CDF distance.

    Passes when the sample mean and variance at the largest ``n`` lie within
    4 standard errors of 1/2 and the exact CDF sup-distance strictly
    decreases along ``n_list``.
    """
    n_list = [int(n) for n in n_list]
    if not n_list or any(n < 1 for n in n_list):
        raise DomainError("n_list must hold positive integers")
    k = 0.5
    mu4 = 3.75  # fourth central moment of Gamma(1/2, 1): (3 + 6/k) * k**2
    se_mean = math.sqrt(k / trials)
    se_var = math.sqrt((mu4 - k**2) / trials)
    rows = []
    for n in n_list:
        rng = np.random.default_rng(derive_seed(seed, "b6", n))
        s = n * rng.beta(k, n, size=trials)
        rows.append(
            {
                "n": n,
                "mean": float(s.mean()),
                "variance": float(s.var(ddof=1)),
                "mean_z": float((s.mean() - k) / se_mean),
                "variance_z": float((s.var(ddof=1) - k) / se_var),
                "ks_distance_exact": scaled_beta_ks_distance(n, k),
                "ks_distance_sample": float(scipy.stats.kstest(s, lambda t: gamma_cdf(t, k)).statistic),
            }
        )
    last = rows[-1]
    dists = [r["ks_distance_exact"] for r in rows]
    decreasing = all(b < a for a, b in zip(dists, dists[1:]))
    moments_ok = abs(last["mean_z"]) <= 4 and abs(last["variance_z"]) <= 4
    worst_z = max(abs(last["mean_z"]), abs(last["variance_z"]))
    return VerificationReport(
        "b6", n_list, trials, worst_z, 4.0, bool(moments_ok and decreasing),
        {"per_n": rows, "ks_decreasing": decreasing},
    )


def verify_spike_growth(
    n_list=(64, 256), trials: int = 400, seed: int = DEFAULT_SEED
) -> VerificationReport:
    """Median exact threshold loss should at least double when ``n`` quadruples.

    Each trial draws a Haar ``V``, treats its last column as the one-dimensional
    null space (``r = n - 1``) and evaluates the exact leave-one-out loss. Every
    trial is also checked against the ``n (y . v)^2`` lower bound.
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 2:
        raise DomainError("need at least two sizes")
    medians, bound_ok = [], True
    for n in n_list:
        rng = np.random.default_rng(derive_seed(seed, "spike", n))
        y = _alternating(n)
        losses = np.empty(trials)
        for t in range(trials):
            v = haar_matrix(rng, n)[:, -1]
            losses[t] = threshold_loo_loss(y, v)
            bound_ok &= losses[t] >= spike_lower_bound(y, v) * (1 - 1e-12)
        medians.append(float(np.median(losses)))
    pairs = list(zip(zip(n_list, medians), zip(n_list[1:], medians[1:])))
    # median ratio normalised by the size ratio; linear growth with factor >= 2 per 4x
    growth = min((m1 / m0) / (n1 / n0) for (n0, m0), (n1, m1) in pairs)
    passed = bool(growth >= 0.5 and bound_ok)
    return VerificationReport(
        "spike", n_list, trials, growth, 0.5, passed,
        {"medians": medians, "lower_bound_holds": bool(bound_ok)},
    )


def random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> NDArray[np.float64]:
    """Random PSD matrix ``B B^T / k`` with ``B`` of shape ``(n, k)``, ``k = rank or n``."""
    k = n if rank is None else rank
    B = rng.standard_normal((n, k))
    K = B @ B.T / max(k, 1)
    return (K + K.T) / 2


def _rel(a, b) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def verify_oracle(instances: int = 20, seed: int = DEFAULT_SEED) -> VerificationReport:
    """Closed forms against brute-force retraining on random instances.

    Covers the regularized formula, both zero-regularization branches, the
    noisy-label formula and the binary accuracy rule.
    """
    rng = np.random.default_rng(derive_seed(seed, "oracle"))
    lams = (1e-6, 1e-2, 1.0, 10.0)
    worst = {"regularized": 0.0, "zero_reg": 0.0, "noisy": 0.0}
    acc_mismatch = 0
    for t in range(instances):
        n = int(rng.integers(8, 65))
        C = int(rng.choice([1, 2, 5]))
        lam = lams[t % len(lams)]
        K = random_psd(rng, n)
        Y = rng.standard_normal((n, C))
        fast, slow = loo_regularized(K, Y, lam), brute_force_loo(K, Y, lam)
        worst["regularized"] = max(worst["regularized"], _rel(fast.loss, slow.loss))
        acc_mismatch += fast.accuracy != slow.accuracy

        r = n if t % 2 else int(rng.integers(1, n))
        K0 = random_psd(rng, n, r)
        eig = eigendecompose(K0)
        fast, slow = loo_zero_reg(eig, Y), brute_force_loo(K0, Y, 0.0)
        worst["zero_reg"] = max(worst["zero_reg"], _rel(fast.loss, slow.loss))
        acc_mismatch += fast.accuracy != slow.accuracy

        labels = rng.integers(0, 3, n)
        clean = np.eye(3)[labels]
        noisy = np.eye(3)[np.where(rng.random(n) < 0.3, rng.integers(0, 3, n), labels)]
        eig_full = eigendecompose(K)
        fast = loo_noisy(eig_full, noisy, clean)
        slow = brute_force_loo(K, noisy, 0.0, evaluate_against=clean)
        worst["noisy"] = max(worst["noisy"], _rel(fast.loss, slow.loss))
        acc_mismatch += fast.accuracy != slow.accuracy

        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        fast = loo_binary(K, y, lam)
        slow = brute_force_loo(K, y, lam)
        acc_mismatch += not np.array_equal(fast.correct, y * slow.predictions[:, 0] > 0)
    tolerances = {"regularized": 1e-8, "zero_reg": 1e-6, "noisy": 1e-8}
    passed = acc_mismatch == 0 and all(worst[k] <= tolerances[k] for k in worst)
    return VerificationReport(
        "oracle", 0, instances, max(worst[k] / tolerances[k] for k in worst), 1.0, bool(passed),
        {"worst_relative_error": worst, "tolerances": tolerances, "accuracy_mismatches": int(acc_mismatch)},
    )
