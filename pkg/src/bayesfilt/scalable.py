"""Filters for high-dimensional parameter vectors.

Three strategies keep per-step cost manageable when the parameter count D is
large: filtering in a low-dimensional subspace found by SVD of warm-up
optimizer iterates, a coupled two-block update that projects hidden-layer
parameters while keeping the full last layer (PULSE), and a
diagonal-plus-low-rank (DLR) representation of the posterior precision (LoFi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import gaussian_update, kf_predict
from .gauss import GaussianBelief, symmetrize, to_precision
from .models import MeasurementModel, TransitionModel, linearize

__all__ = [
    "BlockBelief",
    "DlrPrecisionBelief",
    "SubspaceMap",
    "build_subspace",
    "lofi_predict",
    "lofi_update",
    "pulse_step",
    "subspace_ekf_step",
]

ORTHONORMAL_TOL = 1e-8
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class SubspaceMap:
    """Affine embedding theta = A z + theta_star with orthonormal columns."""

    A: np.ndarray
    theta_star: np.ndarray

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        theta_star = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        if A.shape[0] != theta_star.shape[0]:
            raise ValueError("offset length must match the ambient dimension")
        gram_err = np.max(np.abs(A.T @ A - np.eye(A.shape[1])))
        if gram_err > ORTHONORMAL_TOL:
            raise ValueError("projection columns must be orthonormal")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "theta_star", theta_star)

    @property
    def ambient_dim(self) -> int:
        return self.A.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self.A.shape[1]

    def to_ambient(self, z: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(z, dtype=float) + self.theta_star


def build_subspace(iterates: np.ndarray, theta_final, d: int) -> SubspaceMap:
    """Projection from the top-d right-singular vectors of optimizer iterates.

    Column signs are fixed so each column's largest-magnitude entry is
    positive, making the basis deterministic across SVD implementations.
    """
    iterates = np.atleast_2d(np.asarray(iterates, dtype=float))
    theta_final = np.atleast_1d(np.asarray(theta_final, dtype=float))
    n_iterates = iterates.shape[0]
    if d < 1:
        raise ValueError("subspace dimension must be positive")
    if n_iterates < d:
        raise ValueError(
            f"need at least d={d} iterates to build a rank-{d} subspace, "
            f"got {n_iterates}"
        )
    _, svals, vt = np.linalg.svd(iterates, full_matrices=False)
    if svals[d - 1] < RANK_RTOL * svals[0]:
        raise ValueError("rank-deficient iterate matrix")
    A = vt[:d].T.copy()
    for j in range(A.shape[1]):
        pivot = np.argmax(np.abs(A[:, j]))
        if A[pivot, j] < 0:
            A[:, j] = -A[:, j]
    return SubspaceMap(A=A, theta_star=theta_final)


def subspace_ekf_step(
    belief: GaussianBelief,
    smap: SubspaceMap,
    trans: TransitionModel,
    model: MeasurementModel,
    x,
    y,
) -> GaussianBelief:
    """EKF step on subspace coordinates; the measurement Jacobian is the
    ambient Jacobian composed with the embedding."""
    pred = kf_predict(belief, trans)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_hat, H, R_bar = linearize(model, smap.to_ambient(pred.mean), x)
    updated, _ = gaussian_update(pred, H @ smap.A, R_bar, y - y_hat)
    return updated


# ---------------------------------------------------------------------------
# PULSE: subspace hidden layers + full last layer


@dataclass(frozen=True)
class BlockBelief:
    """Factored belief over (z, w): subspace coordinates of the hidden-layer
    parameters and the raw last-layer parameters."""

    hidden: GaussianBelief
    last: GaussianBelief
    smap: SubspaceMap

    def __post_init__(self) -> None:
        if self.smap.subspace_dim != self.hidden.dim:
            raise ValueError("hidden block dimension must match the projection")

    def full_params(self) -> np.ndarray:
        """Ambient parameter vector (hidden slice first, last layer after)."""
        return np.concatenate(
            [self.smap.to_ambient(self.hidden.mean), self.last.mean]
        )


def pulse_step(bb: BlockBelief, model: MeasurementModel, x, y) -> BlockBelief:
    """Coupled update of both blocks.

    Precisions accumulate the per-block Gauss-Newton terms; the means move by
    gains solved jointly so each block accounts for the other's shift.  All
    Jacobians are evaluated at the previous block means.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    theta_bar = bb.full_params()
    split = bb.smap.ambient_dim
    y_hat, H, R_bar = linearize(model, theta_bar, x)
    Z = H[:, :split] @ bb.smap.A  # o x d_hidden
    W = H[:, split:]  # o x d_last
    obs_dim = y.shape[0]

    chol_r = np.linalg.cholesky(R_bar)
    rinv_z = np.linalg.solve(chol_r.T, np.linalg.solve(chol_r, Z))
    rinv_w = np.linalg.solve(chol_r.T, np.linalg.solve(chol_r, W))

    hidden_prec = symmetrize(to_precision(bb.hidden).precision + Z.T @ rinv_z)
    last_prec = symmetrize(to_precision(bb.last).precision + W.T @ rinv_w)
    hidden_cov = _spd_inverse(hidden_prec)
    last_cov = _spd_inverse(last_prec)

    gain_z = hidden_cov @ rinv_z.T  # d_hidden x o
    gain_w = last_cov @ rinv_w.T  # d_last x o
    eye_o = np.eye(obs_dim)
    try:
        coupled_z = np.linalg.solve(
            np.eye(bb.hidden.dim) - gain_z @ W @ gain_w @ Z,
            gain_z @ (eye_o - W @ gain_w),
        )
        coupled_w = np.linalg.solve(
            np.eye(bb.last.dim) - gain_w @ Z @ gain_z @ W,
            gain_w @ (eye_o - Z @ gain_z),
        )
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular block-coupling matrix") from exc

    innovation = y - y_hat
    hidden_mean = bb.hidden.mean + coupled_z @ innovation
    last_mean = bb.last.mean + coupled_w @ innovation
    return BlockBelief(
        hidden=GaussianBelief(hidden_mean, hidden_cov),
        last=GaussianBelief(last_mean, last_cov),
        smap=bb.smap,
    )


def _spd_inverse(mat: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(mat)
    inv_chol = np.linalg.solve(chol, np.eye(mat.shape[0]))
    return symmetrize(inv_chol.T @ inv_chol)


# ---------------------------------------------------------------------------
# LoFi: diagonal plus low rank precision


@dataclass(frozen=True)
class DlrPrecisionBelief:
    """Gaussian with precision diag(ups) + W W^T.

    The low-rank width d = W.shape[1] is part of the representation and is
    preserved by both the predict and update steps.
    """

    mean: np.ndarray
    ups: np.ndarray
    W: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        ups = np.atleast_1d(np.asarray(self.ups, dtype=float))
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if mean.ndim != 1 or ups.shape != mean.shape:
            raise ValueError("mean and diagonal must be 1-D with equal length")
        if W.shape[0] != mean.shape[0]:
            raise ValueError("low-rank factor must have one row per parameter")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(ups)) and np.all(np.isfinite(W))):
            raise ValueError("belief entries must be finite")
        if np.any(ups <= 0.0):
            raise ValueError("diagonal precision entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "ups", ups)
        object.__setattr__(self, "W", W)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    def dense_precision(self) -> np.ndarray:
        return np.diag(self.ups) + self.W @ self.W.T


def lofi_predict(belief: DlrPrecisionBelief, q: float) -> DlrPrecisionBelief:
    """Inflate the implied covariance by q*I without leaving the DLR family.

    The predicted precision inv(Sigma + q I) is again diagonal plus rank-d;
    this computes its factors exactly.
    """
    if q < 0:
        raise ValueError("process noise q must be nonnegative")
    if q == 0.0:
        return belief
    u = 1.0 / belief.ups  # diagonal variances
    shrink = u / (u + q)
    ups_pred = 1.0 / (u + q)
    inner = np.eye(belief.rank) + belief.W.T @ ((u * q / (u + q))[:, None] * belief.W)
    inner = symmetrize(inner)
    try:
        chol_inner = np.linalg.cholesky(inner)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("predict-step core matrix not PD") from exc
    # C = inner^{-1}; its Cholesky factor is inv(chol_inner)^T up to order,
    # stay explicit: C = L^{-T} L^{-1}, use chol of C directly.
    inv_chol = np.linalg.solve(chol_inner, np.eye(belief.rank))
    C = symmetrize(inv_chol.T @ inv_chol)
    W_pred = (shrink[:, None] * belief.W) @ np.linalg.cholesky(C)
    return DlrPrecisionBelief(mean=belief.mean, ups=ups_pred, W=W_pred)


def lofi_update(
    belief: DlrPrecisionBelief, model: MeasurementModel, x, y
) -> DlrPrecisionBelief:
    """Linearized measurement update in DLR form.

    The new observation contributes columns H^T R^{-T/2} to the low-rank
    factor; the mean moves by the Woodbury-form gain computed before
    truncation; the augmented factor is then cut back to width d by SVD with
    the discarded directions' diagonal mass folded into ups (the total
    precision trace is preserved).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y_hat, H, R_bar = linearize(model, belief.mean, x)
    if not np.any(H):
        return belief
    chol_r = np.linalg.cholesky(R_bar)
    # B B^T = H^T R^{-1} H
    B = np.linalg.solve(chol_r, H).T
    W_aug = np.concatenate([belief.W, B], axis=1)

    u = 1.0 / belief.ups
    inner = np.eye(W_aug.shape[1]) + W_aug.T @ (u[:, None] * W_aug)
    try:
        chol_inner = np.linalg.cholesky(symmetrize(inner))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("update-step core matrix not PD") from exc

    # gain applied to the innovation: Sigma_post H^T R^{-1} e via Woodbury
    rhs = np.linalg.solve(chol_r.T, np.linalg.solve(chol_r, y - y_hat))
    v = H.T @ rhs  # D-vector
    uv = u * v
    core = np.linalg.solve(
        chol_inner.T, np.linalg.solve(chol_inner, W_aug.T @ uv)
    )
    mean_new = belief.mean + uv - u * (W_aug @ core)

    # rank-d truncation with diagonal compensation
    left, svals, _ = np.linalg.svd(W_aug, full_matrices=False)
    d = belief.rank
    scaled = left * svals[None, :]
    W_new = scaled[:, :d]
    dropped = scaled[:, d:]
    ups_new = belief.ups + np.sum(dropped**2, axis=1)
    return DlrPrecisionBelief(mean=mean_new, ups=ups_new, W=W_new)
