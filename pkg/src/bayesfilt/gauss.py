"""Gaussian belief algebra.

Construction, conditioning, sampling and divergences for the multivariate
Gaussian beliefs carried by every filter in this package.  All operations are
pure: beliefs are immutable values, RNGs are passed in explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianBelief",
    "PrecisionBelief",
    "cholesky_with_jitter",
    "condition_linear_gaussian",
    "kl_divergence",
    "sample",
    "symmetrize",
    "to_covariance",
    "to_precision",
]

# Symmetry drift tolerated on any returned covariance.
SYMMETRY_TOL = 1e-10
# Relative jitter added (once) when a Cholesky factorization fails.
JITTER_SCALE = 1e-9


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Return the symmetric part (M + M^T)/2 of a square matrix."""
    return 0.5 * (mat + mat.T)


def cholesky_with_jitter(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``mat``, with a single scale-aware repair.

    If the factorization fails, 1e-9 * mean(diag) * I is added once and the
    factorization retried; a second failure raises ``np.linalg.LinAlgError``.
    """
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        scale = float(np.mean(np.diag(mat)))
        if scale <= 0.0:
            scale = 1.0
        jitter = JITTER_SCALE * scale * np.eye(mat.shape[0])
        try:
            return np.linalg.cholesky(mat + jitter)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "matrix not positive definite after jitter repair"
            ) from exc


def _chol_logdet(chol: np.ndarray) -> float:
    """log-determinant from a lower Cholesky factor (never via det())."""
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian posterior over a parameter vector: N(mean, cov).

    The covariance is symmetrized on construction; callers may assume
    ``cov == cov.T`` within 1e-10 for every belief produced by this package.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"cov must be square, got shape {cov.shape}")
        if mean.ndim != 1 or mean.shape[0] != cov.shape[0]:
            raise ValueError(
                f"mean/cov dimension mismatch: {mean.shape} vs {cov.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class PrecisionBelief:
    """Gaussian belief parameterized by its precision (inverse covariance)."""

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        prec = np.asarray(self.precision, dtype=float)
        if prec.ndim != 2 or prec.shape[0] != prec.shape[1]:
            raise ValueError(f"precision must be square, got shape {prec.shape}")
        if mean.ndim != 1 or mean.shape[0] != prec.shape[0]:
            raise ValueError(
                f"mean/precision dimension mismatch: {mean.shape} vs {prec.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", symmetrize(prec))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _inverse_via_cholesky(mat: np.ndarray) -> np.ndarray:
    chol = cholesky_with_jitter(mat)
    inv_chol = np.linalg.solve(chol, np.eye(mat.shape[0]))
    return symmetrize(inv_chol.T @ inv_chol)


def to_precision(belief: GaussianBelief) -> PrecisionBelief:
    """Convert a covariance-form belief to precision form (mean copied exactly)."""
    return PrecisionBelief(belief.mean, _inverse_via_cholesky(belief.cov))


def to_covariance(belief: PrecisionBelief) -> GaussianBelief:
    """Convert a precision-form belief to covariance form (mean copied exactly)."""
    return GaussianBelief(belief.mean, _inverse_via_cholesky(belief.precision))


def kl_divergence(p: GaussianBelief, q: GaussianBelief) -> float:
    """KL(p || q) between two Gaussian beliefs of equal dimension.

    Returns ``0.5 * [tr(S2^{-1} S1) + (m2-m1)^T S2^{-1} (m2-m1) - D
    + log(|S2|/|S1|)]``, clamped to be nonnegative.
    """
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    dim = p.dim
    chol_p = cholesky_with_jitter(p.cov)
    chol_q = cholesky_with_jitter(q.cov)
    # tr(S2^{-1} S1) = ||Lq^{-1} Lp||_F^2
    solved = np.linalg.solve(chol_q, chol_p)
    trace_term = float(np.sum(solved**2))
    diff = q.mean - p.mean
    white = np.linalg.solve(chol_q, diff)
    maha = float(white @ white)
    logdet_term = _chol_logdet(chol_q) - _chol_logdet(chol_p)
    val = 0.5 * (trace_term + maha - dim + logdet_term)
    return max(val, 0.0)


def condition_linear_gaussian(
    prior: GaussianBelief,
    H: np.ndarray,
    b: np.ndarray,
    R: np.ndarray,
    y: np.ndarray,
) -> GaussianBelief:
    """Exact conditional p(theta | y) for the model y = H theta + b + e.

    ``e ~ N(0, R)``.  Equals a Kalman update with static dynamics; kept here
    because it is the primitive every filter reduces to.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    cov_ht = prior.cov @ H.T
    innov_cov = symmetrize(H @ cov_ht + R)
    try:
        chol = np.linalg.cholesky(innov_cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular innovation covariance") from exc
    # K = cov H^T S^{-1} via two triangular solves
    gain = np.linalg.solve(chol.T, np.linalg.solve(chol, cov_ht.T)).T
    resid = y - (H @ prior.mean + b)
    mean = prior.mean + gain @ resid
    cov = symmetrize(prior.cov - gain @ innov_cov @ gain.T)
    return GaussianBelief(mean, cov)


def sample(belief: GaussianBelief, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. samples from the belief; returns an (n, D) matrix.

    A zero covariance is allowed here (deterministic replay); every other
    operation in the package requires positive-definite covariances.
    """
    if n == 0:
        return np.empty((0, belief.dim))
    if not np.any(belief.cov):
        return np.tile(belief.mean, (n, 1))
    chol = cholesky_with_jitter(belief.cov)
    noise = rng.standard_normal((n, belief.dim))
    return belief.mean[None, :] + noise @ chol.T
