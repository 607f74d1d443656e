"""Outlier-robust weighted-likelihood filtering (WoLF).

Residual-based weighting functions, the weighted Kalman/EKF measurement
updates they induce, a one-dimensional EWMA variant, and posterior influence
function (PIF) diagnostics that turn the robustness theorems into numeric
checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gauss import GaussianBelief, kl_divergence, symmetrize
from .models import MeasurementModel, TransitionModel, linearize
from .filters import gaussian_update, kf_predict, kf_update

__all__ = [
    "EwmaState",
    "WeightingFn",
    "constant",
    "ewma_step",
    "imq",
    "kf_pif_closed_form",
    "mahalanobis",
    "pif",
    "thresholded_mahalanobis",
    "weight",
    "wolf_ekf_step",
    "wolf_update",
]

# Below this weight an observation is treated as fully rejected.
WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class WeightingFn:
    """Residual-based observation weight.

    kinds: ``constant`` (fixed weight w), ``imq`` (inverse multi-quadric in
    the raw residual), ``md`` (inverse multi-quadric in the Mahalanobis
    residual), ``tmd`` (hard threshold on the squared Mahalanobis residual,
    boundary inclusive).
    """

    kind: str
    c: float = 1.0
    w: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "imq", "md", "tmd"):
            raise ValueError(f"unknown weighting kind: {self.kind!r}")
        if self.kind != "constant" and self.c <= 0:
            raise ValueError("soft threshold c must be positive")
        if self.kind == "constant" and self.w < 0:
            raise ValueError("constant weight must be nonnegative")


def constant(w: float = 1.0) -> WeightingFn:
    return WeightingFn("constant", w=w)


def imq(c: float) -> WeightingFn:
    return WeightingFn("imq", c=c)


def mahalanobis(c: float = 4.0) -> WeightingFn:
    return WeightingFn("md", c=c)


def thresholded_mahalanobis(c: float = 4.0) -> WeightingFn:
    return WeightingFn("tmd", c=c)


def weight(fn: WeightingFn, y, y_hat, R=None) -> float:
    """Evaluate the weighting function on the residual y - y_hat."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=float))
    resid = y - y_hat
    if fn.kind == "constant":
        return float(fn.w)
    if fn.kind == "imq":
        return float((1.0 + resid @ resid / fn.c**2) ** -0.5)
    if R is None:
        raise ValueError("md/tmd weighting requires the observation covariance")
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        chol = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "md/tmd weighting requires positive-definite R"
        ) from exc
    white = np.linalg.solve(chol, resid)
    sq_maha = float(white @ white)
    if fn.kind == "md":
        return float((1.0 + sq_maha / fn.c**2) ** -0.5)
    return 1.0 if sq_maha <= fn.c else 0.0


def wolf_update(
    belief: GaussianBelief, H, R, y, fn: WeightingFn
) -> GaussianBelief:
    """Weighted Kalman measurement update.

    The observation precision is scaled by w^2 with w evaluated at the prior
    predictive mean H mean, i.e. posterior precision = prior precision +
    w^2 H^T R^{-1} H; implemented through the algebraically identical
    covariance-form update with R / w^2.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_hat = H @ belief.mean
    w = weight(fn, y, y_hat, R)
    if w <= WEIGHT_FLOOR:
        return belief
    updated, _ = gaussian_update(belief, H, R / w**2, y - y_hat)
    return updated


def wolf_ekf_step(
    belief: GaussianBelief,
    trans: TransitionModel,
    model: MeasurementModel,
    x,
    y,
    fn: WeightingFn,
) -> GaussianBelief:
    """Predict, linearize, then apply the weighted update.

    The weight is evaluated at the prior predictive mean h(mean_pred, x) with
    the family's (moment-matched) observation covariance.
    """
    pred = kf_predict(belief, trans)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_hat, H, R_bar = linearize(model, pred.mean, x)
    w = weight(fn, y, y_hat, R_bar)
    if w <= WEIGHT_FLOOR:
        return pred
    updated, _ = gaussian_update(pred, H, R_bar / w**2, y - y_hat)
    return updated


# ---------------------------------------------------------------------------
# 1D WoLF-EWMA


@dataclass(frozen=True)
class EwmaState:
    """State of the robust scalar filter: location m, filtered variance s2,
    process/observation scales q, r (standard deviations) and soft threshold c."""

    m: float
    s2: float
    q: float
    r: float
    c: float

    def __post_init__(self) -> None:
        if self.s2 <= 0 or self.q <= 0 or self.r <= 0 or self.c <= 0:
            raise ValueError("s2, q, r, c must all be positive")


def ewma_step(state: EwmaState, y: float) -> EwmaState:
    """One robust EWMA step: a 1D Kalman gain with the observation variance
    inflated by the squared IMQ weight of the residual."""
    y = float(y)
    w = (1.0 + (y - state.m) ** 2 / state.c**2) ** -0.5
    r_t2 = state.r**2 / w**2
    k = (state.s2 + state.q**2) / (state.s2 + state.q**2 + r_t2)
    m_new = k * y + (1.0 - k) * state.m
    s2_new = k * r_t2
    return EwmaState(m=m_new, s2=s2_new, q=state.q, r=state.r, c=state.c)


# ---------------------------------------------------------------------------
# Posterior influence function diagnostics


def pif(update_fn, belief: GaussianBelief, H, R, y, y_c) -> float:
    """KL(q(.|contaminated) || q(.|clean)) for the given update rule.

    ``update_fn`` may be the string ``"kf"``, a ``WeightingFn`` (meaning the
    corresponding WoLF update), or any callable (belief, H, R, y) -> belief.
    """
    if update_fn == "kf":
        apply = lambda obs: kf_update(belief, H, R, obs)[0]  # noqa: E731
    elif isinstance(update_fn, WeightingFn):
        apply = lambda obs: wolf_update(belief, H, R, obs, update_fn)  # noqa: E731
    elif callable(update_fn):
        apply = lambda obs: update_fn(belief, H, R, obs)  # noqa: E731
    else:
        raise TypeError(f"unsupported update_fn: {update_fn!r}")
    contaminated = apply(y_c)
    clean = apply(y)
    return kl_divergence(contaminated, clean)


def kf_pif_closed_form(belief: GaussianBelief, H, R, y, y_c) -> float:
    """Closed-form PIF of the plain Kalman update:
    0.5 * [K (y - y_c)]^T prec_post [K (y - y_c)] with K the posterior-form
    gain prec_post^{-1} H^T R^{-1}."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_c = np.atleast_1d(np.asarray(y_c, dtype=float))
    posterior, _ = kf_update(belief, H, R, y)
    prec_chol = np.linalg.cholesky(
        symmetrize(np.linalg.inv(posterior.cov))
    )
    rinv_h = np.linalg.solve(R, H)
    gain = posterior.cov @ rinv_h.T
    delta = gain @ (y - y_c)
    white = prec_chol.T @ delta
    return 0.5 * float(white @ white)
