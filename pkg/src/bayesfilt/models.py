"""Measurement and transition models.

Linear-Gaussian, logistic (Bernoulli) and categorical observation families, a
small MLP with an analytic reverse-accumulation Jacobian, and an Adam trainer
used by the subspace warm-up.  A ``MeasurementModel`` exposes the *mean*
function of the observation (including the link: sigmoid / softmax) together
with its Jacobian and the family's moment-matched observation covariance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_log = logging.getLogger(__name__)

__all__ = [
    "AdamResult",
    "MeasurementModel",
    "MlpSpec",
    "TransitionModel",
    "adam_train",
    "categorical_linear_model",
    "feature_gaussian_model",
    "fixed_matrix_gaussian_model",
    "linear_gaussian_model",
    "linearize",
    "logistic_model",
    "mlp_model",
    "nll",
    "nll_gradient",
    "sigmoid",
    "softmax",
]

# Floor on the Bernoulli moment-matched variance so that R-bar stays
# invertible when the logit is large; keeps the variance in (0, 0.25].
BERNOULLI_VAR_FLOOR = 1e-10
# Ridge added to the singular softmax covariance.
CATEGORICAL_RIDGE = 1e-6
LEAKY_RELU_SLOPE = 0.01


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = np.asarray(z, dtype=float)
    shifted = z - np.max(z)
    ez = np.exp(shifted)
    return ez / np.sum(ez)


@dataclass(frozen=True)
class TransitionModel:
    """Linear-Gaussian parameter dynamics theta_t = F theta_{t-1} + b + noise.

    ``F``/``b`` default to the identity / zero; ``Q`` may be a scalar q (read
    as q*I) or a full PSD matrix.
    """

    F: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    Q: object = 0.0

    def transition_matrix(self, dim: int) -> np.ndarray:
        if self.F is None:
            return np.eye(dim)
        return np.asarray(self.F, dtype=float)

    def offset(self, dim: int) -> np.ndarray:
        if self.b is None:
            return np.zeros(dim)
        return np.asarray(self.b, dtype=float)

    def process_noise(self, dim: int) -> np.ndarray:
        if np.isscalar(self.Q):
            return float(self.Q) * np.eye(dim)
        return np.asarray(self.Q, dtype=float)


@dataclass(frozen=True)
class MeasurementModel:
    """Observation model for one of the families gaussian/bernoulli/categorical.

    ``predictor``/``predictor_jac`` give the pre-link predictor eta(theta, x)
    and its Jacobian; ``mean_fn``/``jacobian_fn`` apply the family link on top
    (identity, sigmoid, softmax).  ``R`` is the Gaussian observation
    covariance and is unused by the other families.
    """

    family: str
    predictor: Callable[[np.ndarray, np.ndarray], np.ndarray]
    predictor_jac: Callable[[np.ndarray, np.ndarray], np.ndarray]
    R: Optional[np.ndarray] = None
    n_classes: Optional[int] = None

    def __post_init__(self) -> None:
        if self.family not in ("gaussian", "bernoulli", "categorical"):
            raise ValueError(f"unknown observation family: {self.family!r}")
        if self.family == "gaussian":
            if self.R is None:
                raise ValueError("gaussian family requires R")
            object.__setattr__(
                self, "R", np.atleast_2d(np.asarray(self.R, dtype=float))
            )
        if self.family == "categorical" and self.n_classes is None:
            raise ValueError("categorical family requires n_classes")

    def mean_fn(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        eta = np.atleast_1d(self.predictor(theta, x))
        if self.family == "gaussian":
            return eta
        if self.family == "bernoulli":
            return sigmoid(eta)
        return softmax(eta)

    def jacobian_fn(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        jac = np.atleast_2d(self.predictor_jac(theta, x))
        if self.family == "gaussian":
            return jac
        eta = np.atleast_1d(self.predictor(theta, x))
        if self.family == "bernoulli":
            p = sigmoid(eta)
            return (p * (1.0 - p))[:, None] * jac
        p = softmax(eta)
        link = np.diag(p) - np.outer(p, p)
        return link @ jac


def linearize(model: MeasurementModel, theta_bar: np.ndarray, x) -> tuple:
    """First-order expansion of ``model`` at ``theta_bar``.

    Returns ``(y_hat, H, R_bar)``: the predicted mean, its Jacobian and the
    family's (moment-matched) observation covariance at the expansion point.
    """
    theta_bar = np.asarray(theta_bar, dtype=float)
    y_hat = model.mean_fn(theta_bar, x)
    if not np.all(np.isfinite(y_hat)):
        raise FloatingPointError("non-finite model output at expansion point")
    H = model.jacobian_fn(theta_bar, x)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("non-finite model Jacobian at expansion point")
    if model.family == "gaussian":
        R_bar = model.R
    elif model.family == "bernoulli":
        var = np.maximum(y_hat * (1.0 - y_hat), BERNOULLI_VAR_FLOOR)
        R_bar = np.diag(var)
    else:
        R_bar = (
            np.diag(y_hat)
            - np.outer(y_hat, y_hat)
            + CATEGORICAL_RIDGE * np.eye(y_hat.shape[0])
        )
    return y_hat, H, R_bar


def nll(model: MeasurementModel, theta: np.ndarray, x, y) -> float:
    """Negative log-likelihood of ``y`` under the model at ``theta``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = model.mean_fn(np.asarray(theta, dtype=float), x)
    if model.family == "gaussian":
        resid = y - mean
        R = model.R
        chol = np.linalg.cholesky(R)
        white = np.linalg.solve(chol, resid)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        dim = y.shape[0]
        return 0.5 * (dim * np.log(2.0 * np.pi) + logdet + float(white @ white))
    if model.family == "bernoulli":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("bernoulli observations must be in {0, 1}")
        p = np.clip(mean, 1e-12, 1.0 - 1e-12)
        return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum())
    if y.shape[0] != model.n_classes or not np.isclose(y.sum(), 1.0):
        raise ValueError("categorical observations must be one-hot vectors")
    p = np.clip(mean, 1e-12, None)
    return float(-(y * np.log(p)).sum())


# ---------------------------------------------------------------------------
# Model constructors


def linear_gaussian_model(R) -> MeasurementModel:
    """Scalar-output linear regression y = x^T theta + e."""
    return MeasurementModel(
        family="gaussian",
        predictor=lambda theta, x: np.atleast_1d(np.dot(np.asarray(x, float), theta)),
        predictor_jac=lambda theta, x: np.atleast_1d(np.asarray(x, float))[None, :],
        R=R,
    )


def feature_gaussian_model(feature_fn: Callable, R) -> MeasurementModel:
    """Linear-Gaussian regression on explicit features: y = phi(x)^T theta + e."""
    return MeasurementModel(
        family="gaussian",
        predictor=lambda theta, x: np.atleast_1d(
            np.dot(np.asarray(feature_fn(x), float), theta)
        ),
        predictor_jac=lambda theta, x: np.atleast_1d(
            np.asarray(feature_fn(x), float)
        )[None, :],
        R=R,
    )


def fixed_matrix_gaussian_model(H, R) -> MeasurementModel:
    """Gaussian observations y = H theta + e with a fixed matrix H (x unused)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    return MeasurementModel(
        family="gaussian",
        predictor=lambda theta, x: H @ theta,
        predictor_jac=lambda theta, x: H,
        R=R,
    )


def logistic_model(feature_fn: Optional[Callable] = None) -> MeasurementModel:
    """Bernoulli observations with mean sigmoid(phi(x)^T theta)."""
    phi = (lambda x: x) if feature_fn is None else feature_fn
    return MeasurementModel(
        family="bernoulli",
        predictor=lambda theta, x: np.atleast_1d(
            np.dot(np.asarray(phi(x), float), theta)
        ),
        predictor_jac=lambda theta, x: np.atleast_1d(np.asarray(phi(x), float))[
            None, :
        ],
    )


def categorical_linear_model(n_classes: int, n_features: int) -> MeasurementModel:
    """Categorical observations with logits W x, theta = vec(W) row-major."""

    def predictor(theta, x):
        W = np.asarray(theta, float).reshape(n_classes, n_features)
        return W @ np.asarray(x, float)

    def predictor_jac(theta, x):
        x = np.asarray(x, float)
        jac = np.zeros((n_classes, n_classes * n_features))
        for c in range(n_classes):
            jac[c, c * n_features : (c + 1) * n_features] = x
        return jac

    return MeasurementModel(
        family="categorical",
        predictor=predictor,
        predictor_jac=predictor_jac,
        n_classes=n_classes,
    )


# ---------------------------------------------------------------------------
# MLP


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected network sizes (in, hidden..., out) with one activation.

    The flat parameter vector is packed layer-major: for each layer, the
    weight matrix (out x in, row-major) followed by its bias.  This ordering
    is relied upon by the subspace and block-filter code.
    """

    sizes: tuple
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if self.activation not in ("relu", "leaky_relu"):
            raise ValueError(f"unknown activation: {self.activation!r}")

    @property
    def n_params(self) -> int:
        return sum(
            self.sizes[i] * self.sizes[i + 1] + self.sizes[i + 1]
            for i in range(len(self.sizes) - 1)
        )

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def last_layer_start(self) -> int:
        """Index where the final layer's parameters begin in the flat vector."""
        return self.n_params - (self.sizes[-2] * self.sizes[-1] + self.sizes[-1])

    def _act(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return np.where(z > 0.0, z, LEAKY_RELU_SLOPE * z)

    def _act_deriv(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return (z > 0.0).astype(float)
        return np.where(z > 0.0, 1.0, LEAKY_RELU_SLOPE)

    def unpack(self, theta: np.ndarray) -> list:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"expected flat parameter vector of length {self.n_params}, "
                f"got shape {theta.shape}"
            )
        layers = []
        offset = 0
        for i in range(len(self.sizes) - 1):
            n_in, n_out = self.sizes[i], self.sizes[i + 1]
            W = theta[offset : offset + n_in * n_out].reshape(n_out, n_in)
            offset += n_in * n_out
            b = theta[offset : offset + n_out]
            offset += n_out
            layers.append((W, b))
        return layers

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """He-style initialization, biases zero."""
        chunks = []
        for i in range(len(self.sizes) - 1):
            n_in, n_out = self.sizes[i], self.sizes[i + 1]
            scale = np.sqrt(2.0 / n_in)
            chunks.append(scale * rng.standard_normal(n_in * n_out))
            chunks.append(np.zeros(n_out))
        return np.concatenate(chunks)

    def forward(self, theta: np.ndarray, x) -> np.ndarray:
        out, _, _ = self._forward_cached(theta, x)
        return out

    def _forward_cached(self, theta, x):
        layers = self.unpack(theta)
        a = np.atleast_1d(np.asarray(x, dtype=float))
        activations = [a]
        preacts = []
        for idx, (W, b) in enumerate(layers):
            z = W @ a + b
            preacts.append(z)
            a = z if idx == len(layers) - 1 else self._act(z)
            activations.append(a)
        return a, activations, preacts

    def jacobian(self, theta: np.ndarray, x) -> np.ndarray:
        """Analytic d output / d theta via reverse accumulation, shape (o, D)."""
        layers = self.unpack(theta)
        _, activations, preacts = self._forward_cached(theta, x)
        n_layers = len(layers)
        grad = np.eye(self.sizes[-1])  # d out / d z_last
        blocks: list = [None] * n_layers
        for l in range(n_layers - 1, -1, -1):
            W, _ = layers[l]
            # d out / d W_l (row-major flattened) and d out / d b_l
            jac_w = np.einsum("ko,i->koi", grad, activations[l]).reshape(
                self.sizes[-1], -1
            )
            blocks[l] = (jac_w, grad)
            if l > 0:
                grad = (grad @ W) * self._act_deriv(preacts[l - 1])[None, :]
        return np.concatenate(
            [np.concatenate([jw, jb], axis=1) for jw, jb in blocks], axis=1
        )


def mlp_model(spec: MlpSpec, family: str = "gaussian", R=None) -> MeasurementModel:
    """Measurement model whose predictor is the given MLP."""
    return MeasurementModel(
        family=family,
        predictor=lambda theta, x: spec.forward(theta, x),
        predictor_jac=lambda theta, x: spec.jacobian(theta, x),
        R=R,
        n_classes=spec.n_outputs if family == "categorical" else None,
    )


# ---------------------------------------------------------------------------
# Adam warm-up trainer


@dataclass(frozen=True)
class AdamResult:
    iterates: np.ndarray  # (n_stored, D) parameter snapshots
    theta_final: np.ndarray
    epoch_losses: np.ndarray
    stored_epochs: tuple = field(default=())


def nll_gradient(model: MeasurementModel, theta, x, y) -> np.ndarray:
    """Exact nll gradient via the canonical-link residual (no autodiff)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    jac = np.atleast_2d(model.predictor_jac(theta, x))
    mean = model.mean_fn(theta, x)
    if model.family == "gaussian":
        resid = np.linalg.solve(model.R, mean - y)
    else:
        resid = mean - y
    return jac.T @ resid


def adam_train(
    spec: MlpSpec,
    model: MeasurementModel,
    X: np.ndarray,
    Y: np.ndarray,
    *,
    epochs: int,
    batch_size: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    skip: int = 1,
    stride: int = 1,
    rng: np.random.Generator,
    theta0: Optional[np.ndarray] = None,
) -> AdamResult:
    """Minibatch Adam on the model's nll, storing parameter snapshots.

    Snapshots are taken after epochs ``skip, skip+stride, ...`` (1-based, up
    to ``epochs``), giving ``(epochs - skip) // stride + 1`` stored iterates;
    ``theta_final`` is the parameter vector after the last epoch.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training data")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not 1 <= skip <= epochs:
        raise ValueError("skip must lie in [1, epochs]")
    theta = (
        spec.init_params(rng) if theta0 is None else np.asarray(theta0, float).copy()
    )
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    stored = []
    stored_epochs = []
    losses = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            grad = np.zeros_like(theta)
            for i in batch:
                grad += nll_gradient(model, theta, X[i], Y[i])
            grad /= batch.shape[0]
            step += 1
            m = beta1 * m + (1.0 - beta1) * grad
            v = beta2 * v + (1.0 - beta2) * grad**2
            m_hat = m / (1.0 - beta1**step)
            v_hat = v / (1.0 - beta2**step)
            theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        loss = float(
            np.mean([nll(model, theta, X[i], Y[i]) for i in range(n)])
        )
        losses.append(loss)
        if epoch >= skip and (epoch - skip) % stride == 0:
            stored.append(theta.copy())
            stored_epochs.append(epoch)
    losses_arr = np.asarray(losses)
    # Soft sanity signal only: training on the synthetic tasks should not be
    # getting worse over any 10-epoch stretch.
    if len(losses_arr) >= 10:
        windows = losses_arr[9:] - losses_arr[:-9]
        if np.any(windows > 0):
            _log.info(
                "adam_train: loss increased over a 10-epoch window "
                "(max increase %.3g)",
                float(windows.max()),
            )
    return AdamResult(
        iterates=np.asarray(stored),
        theta_final=theta,
        epoch_losses=losses_arr,
        stored_epochs=tuple(stored_epochs),
    )
