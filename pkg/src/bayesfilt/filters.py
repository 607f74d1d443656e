"""Baseline recursive estimators.

Kalman filter (covariance and precision forms), recursive Bayesian linear
regression, the extended Kalman filter (which covers the exponential-family
variant through moment-matched linearization), a stochastic ensemble Kalman
filter, and the recursive variational Gaussian approximation (R-VGA).

All step functions are pure: they consume a belief and return a new one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .gauss import (
    GaussianBelief,
    PrecisionBelief,
    cholesky_with_jitter,
    sample,
    symmetrize,
)
from .models import (
    MeasurementModel,
    TransitionModel,
    linearize,
    sigmoid,
    softmax,
)

__all__ = [
    "Ensemble",
    "RvgaConfig",
    "ekf_step",
    "enkf_step",
    "gaussian_update",
    "kf_predict",
    "kf_update",
    "kf_update_precision",
    "recursive_linreg_step",
    "rvga_step",
]

ENKF_RIDGE = 1e-9


@dataclass(frozen=True)
class Ensemble:
    """A set of parameter samples carried by the ensemble Kalman filter."""

    members: np.ndarray  # (S, D)

    def __post_init__(self) -> None:
        members = np.atleast_2d(np.asarray(self.members, dtype=float))
        if members.shape[0] < 2:
            raise ValueError("ensemble needs at least two members")
        if not np.all(np.isfinite(members)):
            raise ValueError("ensemble members must be finite")
        object.__setattr__(self, "members", members)

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[1]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass(frozen=True)
class RvgaConfig:
    """Inner-loop configuration for R-VGA.

    ``samples`` is either a Monte-Carlo sample count or the string
    ``"exact-linearized"``, which solves each implicit inner update in closed
    form (exact for linear-Gaussian models).
    """

    inner_iterations: int = 4
    samples: Union[int, str] = 1000

    def __post_init__(self) -> None:
        if self.inner_iterations < 1:
            raise ValueError("inner_iterations must be >= 1")
        if isinstance(self.samples, str):
            if self.samples != "exact-linearized":
                raise ValueError(f"unknown samples mode: {self.samples!r}")
        elif self.samples < 1:
            raise ValueError("samples must be >= 1")


def kf_predict(belief: GaussianBelief, trans: TransitionModel) -> GaussianBelief:
    """Propagate a belief through the linear-Gaussian dynamics."""
    dim = belief.dim
    F = trans.transition_matrix(dim)
    mean = F @ belief.mean + trans.offset(dim)
    cov = symmetrize(F @ belief.cov @ F.T + trans.process_noise(dim))
    return GaussianBelief(mean, cov)


def gaussian_update(
    belief: GaussianBelief,
    H: np.ndarray,
    R: np.ndarray,
    innovation: np.ndarray,
) -> tuple[GaussianBelief, float]:
    """Shared measurement update given a precomputed innovation y - y_hat.

    Returns the updated belief and the innovation log-density
    log N(innovation; 0, H cov H^T + R).
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    innovation = np.atleast_1d(np.asarray(innovation, dtype=float))
    obs_dim = innovation.shape[0]
    cov_ht = belief.cov @ H.T
    innov_cov = symmetrize(H @ cov_ht + R)
    try:
        chol = np.linalg.cholesky(innov_cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular innovation covariance") from exc
    gain = np.linalg.solve(chol.T, np.linalg.solve(chol, cov_ht.T)).T
    mean = belief.mean + gain @ innovation
    cov = symmetrize(belief.cov - gain @ innov_cov @ gain.T)
    white = np.linalg.solve(chol, innovation)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    loglik = -0.5 * (
        obs_dim * np.log(2.0 * np.pi) + logdet + float(white @ white)
    )
    return GaussianBelief(mean, cov), loglik


def kf_update(
    belief: GaussianBelief, H, R, y
) -> tuple[GaussianBelief, float]:
    """Kalman measurement update; also returns the marginal log-likelihood."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return gaussian_update(belief, H, R, y - H @ belief.mean)


def kf_update_precision(belief: PrecisionBelief, H, R, y) -> PrecisionBelief:
    """Kalman update in precision form: precision += H^T R^{-1} H."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    chol_r = np.linalg.cholesky(R)
    ht_rinv = np.linalg.solve(chol_r.T, np.linalg.solve(chol_r, H)).T
    precision = symmetrize(belief.precision + ht_rinv @ H)
    chol_p = np.linalg.cholesky(precision)  # PD by construction for PD inputs
    resid = y - H @ belief.mean
    # mean = mean + P^{-1} H^T R^{-1} resid
    rhs = ht_rinv @ resid
    mean = belief.mean + np.linalg.solve(
        chol_p.T, np.linalg.solve(chol_p, rhs)
    )
    return PrecisionBelief(mean, precision)


def recursive_linreg_step(
    belief: GaussianBelief, x: np.ndarray, R, y
) -> GaussianBelief:
    """One step of recursive Bayesian linear regression (scalar output)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    updated, _ = kf_update(belief, x[None, :], R, y)
    return updated


def ekf_step(
    belief: GaussianBelief,
    trans: TransitionModel,
    model: MeasurementModel,
    x,
    y,
) -> tuple[GaussianBelief, float]:
    """Extended Kalman step: predict, linearize at the predicted mean, update.

    For bernoulli/categorical families the observation covariance is the
    moment-matched variance at the predicted mean, so this single function
    also implements the exponential-family EKF.  The returned log-likelihood
    is computed under the linearized Gaussian and is what the adaptive layer
    uses for hypothesis weighting.
    """
    pred = kf_predict(belief, trans)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_hat, H, R_bar = linearize(model, pred.mean, x)
    return gaussian_update(pred, H, R_bar, y - y_hat)


def enkf_step(
    ens: Ensemble,
    trans: TransitionModel,
    model: MeasurementModel,
    x,
    y,
    rng: np.random.Generator,
) -> Ensemble:
    """Stochastic (perturbed-observation) ensemble Kalman step."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    size, dim = ens.size, ens.dim
    F = trans.transition_matrix(dim)
    offset = trans.offset(dim)
    Q = trans.process_noise(dim)
    members = ens.members @ F.T + offset[None, :]
    if np.any(Q):
        members = members + rng.standard_normal((size, dim)) @ _psd_sqrt(Q).T
    preds = np.stack([model.mean_fn(members[s], x) for s in range(size)])
    obs_dim = preds.shape[1]
    R = model.R if model.R is not None else np.zeros((obs_dim, obs_dim))
    if np.any(R):
        preds = preds + rng.standard_normal((size, obs_dim)) @ _psd_sqrt(R).T
    member_anom = members - members.mean(axis=0)
    pred_anom = preds - preds.mean(axis=0)
    cross_cov = member_anom.T @ pred_anom / size
    pred_cov = symmetrize(pred_anom.T @ pred_anom / size)
    try:
        gain = np.linalg.solve(pred_cov.T, cross_cov.T).T
    except np.linalg.LinAlgError:
        ridge = ENKF_RIDGE * np.trace(pred_cov) / obs_dim
        try:
            gain = np.linalg.solve(
                (pred_cov + ridge * np.eye(obs_dim)).T, cross_cov.T
            ).T
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "singular predicted-observation covariance after ridge"
            ) from exc
    updated = members + (y[None, :] - preds) @ gain.T
    return Ensemble(updated)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """A square root of a PSD matrix (Cholesky when PD, eigen fallback)."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(mat)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


# ---------------------------------------------------------------------------
# R-VGA


def rvga_step(
    belief: GaussianBelief,
    model: MeasurementModel,
    x,
    y,
    cfg: RvgaConfig = RvgaConfig(),
    rng: np.random.Generator | None = None,
) -> GaussianBelief:
    """One R-VGA assimilation of (x, y).

    The implicit update
        mean_t = mean_{t-1} + cov_{t-1} E_{q_t}[grad log p(y|theta)]
        prec_t = prec_{t-1} - E_{q_t}[hess log p(y|theta)]
    is iterated ``inner_iterations`` times.  In exact-linearized mode each
    inner pass is solved in closed form (linearizing at the previous inner
    iterate); otherwise the expectations are Monte-Carlo averages over
    ``samples`` draws from the previous inner iterate's Gaussian.
    """
    if cfg.samples == "exact-linearized":
        return _rvga_exact(belief, model, x, y, cfg.inner_iterations)
    if rng is None:
        raise ValueError("Monte-Carlo R-VGA requires an rng")
    return _rvga_monte_carlo(belief, model, x, y, cfg, rng)


def _rvga_exact(belief, model, x, y, iters):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    current = belief
    for _ in range(iters):
        y_hat, H, R_bar = linearize(model, current.mean, x)
        # Innovation re-anchored at the previous posterior mean so that each
        # pass solves the implicit update exactly (iterated-EKF form).
        innovation = y - y_hat - H @ (belief.mean - current.mean)
        current, _ = gaussian_update(belief, H, R_bar, innovation)
    return current


def _loglik_gradient(model, theta, x, y):
    """grad_theta log p(y | theta, x) through the canonical link."""
    jac = np.atleast_2d(model.predictor_jac(theta, x))
    eta = np.atleast_1d(model.predictor(theta, x))
    if model.family == "gaussian":
        resid = np.linalg.solve(model.R, y - eta)
    elif model.family == "bernoulli":
        resid = y - sigmoid(eta)
    else:
        resid = y - softmax(eta)
    return jac.T @ resid


def _ggn_term(model, theta, x):
    """Generalized Gauss-Newton -hessian contribution J^T Lambda J (PSD)."""
    jac = np.atleast_2d(model.predictor_jac(theta, x))
    eta = np.atleast_1d(model.predictor(theta, x))
    if model.family == "gaussian":
        lam = np.linalg.inv(model.R)
    elif model.family == "bernoulli":
        p = sigmoid(eta)
        lam = np.diag(p * (1.0 - p))
    else:
        p = softmax(eta)
        lam = np.diag(p) - np.outer(p, p)
    return jac.T @ lam @ jac


def _rvga_monte_carlo(belief, model, x, y, cfg, rng):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_samples = int(cfg.samples)
    current = belief
    cov_chol = cholesky_with_jitter(belief.cov)
    prior_prec = np.linalg.solve(
        cov_chol.T, np.linalg.solve(cov_chol, np.eye(belief.dim))
    )
    for _ in range(cfg.inner_iterations):
        draws = sample(current, rng, n_samples)
        grad_mean = np.zeros(belief.dim)
        ggn_mean = np.zeros((belief.dim, belief.dim))
        for s in range(n_samples):
            grad_mean += _loglik_gradient(model, draws[s], x, y)
            ggn_mean += _ggn_term(model, draws[s], x)
        grad_mean /= n_samples
        ggn_mean /= n_samples
        precision = symmetrize(prior_prec + ggn_mean)
        chol_p = cholesky_with_jitter(precision)
        cov = np.linalg.solve(
            chol_p.T, np.linalg.solve(chol_p, np.eye(belief.dim))
        )
        mean = belief.mean + belief.cov @ grad_mean
        current = GaussianBelief(mean, symmetrize(cov))
    return current
