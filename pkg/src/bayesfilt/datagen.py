"""Seeded synthetic data generators for the benchmark experiments.

Every generator is a pure function of its parameters and a seed: repeated
calls return bitwise-identical streams.  Randomness is drawn from named
counter-based substreams so that shared channels (e.g. the latent tracking
trajectory) coincide across experiment variants run with the same seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .models import MeasurementModel, TransitionModel, fixed_matrix_gaussian_model, sigmoid

__all__ = [
    "Stream",
    "substream",
    "gen_tracking2d",
    "gen_piecewise_linreg",
    "gen_periodic_drift_clf",
    "gen_drift_jumps_clf",
    "gen_bernoulli_bandit",
    "gen_sinusoidal_regression",
    "sinusoidal_clean",
    "gen_moons",
    "gen_dependent_segments",
    "gen_dji_like_returns",
    "tracking_state_space",
]

# Constant-velocity 2D tracking model.
TRACKING_DT = 0.1
TRACKING_PROCESS_NOISE = 0.10
TRACKING_MEASUREMENT_NOISE = 10.0
TRACKING_STUDENT_DOF = 2.01

# Nonlinear 1D regression target: a*x - b*cos(c*pi*x) + d*x^3.
SINUSOIDAL_COEFFS = (0.2, -10.0, 1.0, 1.0)


def substream(seed: int, stream_id: str) -> np.random.Generator:
    """Independent, replayable random generator for one named channel.

    The (seed, stream_id) pair is hashed into the key of a counter-based
    bit generator, so distinct channels of one experiment and distinct
    seeds of one channel are statistically independent, and any channel
    can be replayed in isolation.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a non-negative 64-bit integer")
    digest = hashlib.blake2b(
        stream_id.encode("utf-8"),
        key=int(seed).to_bytes(8, "little"),
        digest_size=16,
    ).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


@dataclass(frozen=True)
class Stream:
    """A finite sequence of timestamped observations with optional ground truth.

    ``y`` holds observations with shape ``(T, n_outputs)`` (1-D input is
    promoted to one column) and ``x`` per-step covariates, or ``None`` for
    experiments without exogenous inputs.  Ground-truth channels, when the
    generating process exposes them: ``theta`` (true parameters per step),
    ``changepoints`` (parameter-reset flags), ``outliers`` (corrupted
    observation flags), and ``anchors`` (segment-start covariate value per
    step, for segment-anchored regression).
    """

    t: np.ndarray
    y: np.ndarray
    x: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    changepoints: Optional[np.ndarray] = None
    outliers: Optional[np.ndarray] = None
    anchors: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=int)
        if t.ndim != 1:
            raise ValueError("time index must be one-dimensional")
        n = t.shape[0]
        object.__setattr__(self, "t", t)
        for name in ("y", "x", "theta"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.asarray(val, dtype=float)
            if val.ndim == 1:
                val = val[:, None]
            if val.ndim != 2 or val.shape[0] != n:
                raise ValueError(f"channel {name!r} must have one row per step")
            object.__setattr__(self, name, val)
        for name in ("changepoints", "outliers"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.asarray(val, dtype=bool)
            if val.shape != (n,):
                raise ValueError(f"flag channel {name!r} must have shape (T,)")
            object.__setattr__(self, name, val)
        if self.anchors is not None:
            anchors = np.asarray(self.anchors, dtype=float)
            if anchors.shape != (n,):
                raise ValueError("anchors must have shape (T,)")
            object.__setattr__(self, "anchors", anchors)

    def __len__(self) -> int:
        return self.t.shape[0]


def tracking_state_space() -> tuple[TransitionModel, MeasurementModel]:
    """Constant-velocity transition and position-measurement models.

    State layout is (position_x, position_y, velocity_x, velocity_y); only
    the two position components are observed.
    """
    dt = TRACKING_DT
    F = np.array(
        [
            [1.0, 0.0, dt, 0.0],
            [0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    transition = TransitionModel(F=F, Q=TRACKING_PROCESS_NOISE)
    measurement = fixed_matrix_gaussian_model(
        H, R=TRACKING_MEASUREMENT_NOISE * np.eye(2)
    )
    return transition, measurement


def gen_tracking2d(
    variant: str,
    T: int,
    seed: int,
    p_outlier: float = 0.05,
) -> Stream:
    """2D constant-velocity tracking with heavy-tailed or corrupted positions.

    ``variant="student"`` draws measurement noise from a Student-t via its
    Gamma scale-mixture representation; ``variant="mixture"`` doubles the
    measured position with probability ``p_outlier`` (flagged in
    ``outliers``). Both variants share the same latent trajectory for a
    given seed.
    """
    if variant not in ("student", "mixture"):
        raise ValueError("variant must be 'student' or 'mixture'")
    if T < 0:
        raise ValueError("T must be non-negative")
    rng_init = substream(seed, "tracking2d/init")
    rng_proc = substream(seed, "tracking2d/process")
    rng_meas = substream(seed, "tracking2d/measurement")
    rng_corrupt = substream(seed, "tracking2d/corruption")

    transition, _ = tracking_state_space()
    F = transition.transition_matrix(4)
    step_std = np.sqrt(TRACKING_PROCESS_NOISE)
    state = rng_init.normal(size=4)
    theta = np.empty((T, 4))
    if T > 0:
        theta[0] = state
    proc = step_std * rng_proc.normal(size=(T - 1, 4)) if T > 1 else None
    for t in range(1, T):
        state = F @ state + proc[t - 1]
        theta[t] = state

    positions = theta[:, :2]
    noise = np.sqrt(TRACKING_MEASUREMENT_NOISE) * rng_meas.normal(size=(T, 2))
    if variant == "student":
        dof = TRACKING_STUDENT_DOF
        tau = rng_corrupt.gamma(shape=dof / 2.0, scale=2.0 / dof, size=T)
        y = positions + noise / np.sqrt(tau)[:, None]
        outliers = None
    else:
        mask = rng_corrupt.random(T) < p_outlier
        y = np.where(mask[:, None], 2.0 * positions, positions) + noise
        outliers = mask
    return Stream(t=np.arange(T), y=y, theta=theta, outliers=outliers)


def gen_piecewise_linreg(
    noise: str,
    T: int,
    seed: int,
    p_change: Optional[float] = None,
    dof: float = 2.01,
) -> Stream:
    """Piecewise quadratic-in-features linear regression with parameter resets.

    Covariates are scalar ``x ~ U[-2, 2]`` expanded to features (1, x, x^2);
    coefficients are redrawn from ``U[-3, 3]^3`` with per-step probability
    ``p_change`` (default 0.001 for Gaussian unit-variance noise, 0.01 for
    Student-t noise with ``dof`` degrees of freedom and unit scale).
    """
    if noise not in ("gaussian", "student"):
        raise ValueError("noise must be 'gaussian' or 'student'")
    if T < 0:
        raise ValueError("T must be non-negative")
    if p_change is None:
        p_change = 0.001 if noise == "gaussian" else 0.01
    if not 0.0 <= p_change < 1.0:
        raise ValueError("p_change must lie in [0, 1)")
    rng_x = substream(seed, "piecewise/x")
    rng_theta = substream(seed, "piecewise/theta")
    rng_noise = substream(seed, "piecewise/noise")
    rng_cp = substream(seed, "piecewise/changepoints")

    x = rng_x.uniform(-2.0, 2.0, size=T)
    flags = np.zeros(T, dtype=bool)
    if T > 1:
        flags[1:] = rng_cp.random(T - 1) < p_change
    segment_ids = np.cumsum(flags)
    n_segments = int(segment_ids[-1]) + 1 if T > 0 else 0
    segment_params = rng_theta.uniform(-3.0, 3.0, size=(n_segments, 3))
    theta = segment_params[segment_ids] if T > 0 else np.zeros((0, 3))
    clean = theta[:, 0] + theta[:, 1] * x + theta[:, 2] * x**2
    if noise == "gaussian":
        eps = rng_noise.normal(size=T)
    else:
        eps = rng_noise.standard_t(dof, size=T)
    return Stream(
        t=np.arange(T), y=clean + eps, x=x, theta=theta, changepoints=flags
    )


def gen_periodic_drift_clf(T: int = 720, seed: int = 0) -> Stream:
    """Binary classification whose logistic weights rotate 5 degrees per step.

    True weights are (10 sin(5deg*t), 10 cos(5deg*t)); covariates are
    ``U[-3, 3]^2`` and labels Bernoulli through the logistic link.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    rng_x = substream(seed, "periodic_drift/x")
    rng_y = substream(seed, "periodic_drift/labels")
    steps = np.arange(T)
    angle = np.deg2rad(5.0 * steps)
    theta = np.stack([10.0 * np.sin(angle), 10.0 * np.cos(angle)], axis=1)
    x = rng_x.uniform(-3.0, 3.0, size=(T, 2))
    prob = sigmoid(np.sum(theta * x, axis=1))
    y = (rng_y.random(T) < prob).astype(float)
    return Stream(t=steps, y=y, x=x, theta=theta)


def gen_drift_jumps_clf(
    T: int,
    seed: int,
    p_change: float = 0.01,
    step_std: float = 0.01,
) -> Stream:
    """Binary classification whose weights drift slowly with occasional jumps.

    Weights follow a Gaussian random walk with per-coordinate step deviation
    ``step_std`` and are redrawn from ``U[-2, 2]^2`` with probability
    ``p_change`` each step; covariates and labels as in the periodic task.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if not 0.0 <= p_change < 1.0:
        raise ValueError("p_change must lie in [0, 1)")
    rng_x = substream(seed, "drift_jumps/x")
    rng_y = substream(seed, "drift_jumps/labels")
    rng_step = substream(seed, "drift_jumps/steps")
    rng_jump = substream(seed, "drift_jumps/jumps")
    rng_cp = substream(seed, "drift_jumps/changepoints")

    flags = np.zeros(T, dtype=bool)
    if T > 1:
        flags[1:] = rng_cp.random(T - 1) < p_change
    noise = np.zeros((T, 2))
    if T > 1:
        noise[1:] = step_std * rng_step.normal(size=(T - 1, 2))
    noise[flags] = 0.0  # a jump replaces the walk step
    walk = np.cumsum(noise, axis=0)
    segment_ids = np.cumsum(flags)
    n_segments = int(segment_ids[-1]) + 1 if T > 0 else 0
    starts = rng_jump.uniform(-2.0, 2.0, size=(n_segments, 2))
    first_index = np.searchsorted(segment_ids, np.arange(n_segments))
    if T > 0:
        theta = starts[segment_ids] + walk - walk[first_index[segment_ids]]
    else:
        theta = np.zeros((0, 2))

    x = rng_x.uniform(-3.0, 3.0, size=(T, 2))
    prob = sigmoid(np.sum(theta * x, axis=1))
    y = (rng_y.random(T) < prob).astype(float)
    return Stream(t=np.arange(T), y=y, x=x, theta=theta, changepoints=flags)


def gen_bernoulli_bandit(
    arms: int = 10,
    T: int = 10000,
    seed: int = 0,
    drift: float = 0.03,
) -> Stream:
    """Independent drifting Bernoulli arms with pre-realized rewards.

    Each arm's success probability starts at ``U[0, 1]`` and follows a
    Gaussian random walk clipped to [0, 1].  ``y[t, a]`` is the reward arm
    ``a`` would have paid at step ``t``, so competing policies evaluated on
    one stream see common random outcomes; ``theta`` holds the true means.
    """
    if arms < 2:
        raise ValueError("need at least two arms")
    if T < 0:
        raise ValueError("T must be non-negative")
    rng_init = substream(seed, "bandit/init")
    rng_drift = substream(seed, "bandit/drift")
    rng_reward = substream(seed, "bandit/rewards")
    theta = np.empty((T, arms))
    current = rng_init.uniform(0.0, 1.0, size=arms)
    if T > 0:
        theta[0] = current
    steps = drift * rng_drift.normal(size=(T - 1, arms)) if T > 1 else None
    for t in range(1, T):
        current = np.clip(current + steps[t - 1], 0.0, 1.0)
        theta[t] = current
    rewards = (rng_reward.random((T, arms)) < theta).astype(float)
    return Stream(t=np.arange(T), y=rewards, theta=theta)


def sinusoidal_clean(x: np.ndarray, coeffs: Sequence[float] = SINUSOIDAL_COEFFS):
    """Noise-free nonlinear regression target a*x - b*cos(c*pi*x) + d*x^3."""
    a, b, c, d = coeffs
    x = np.asarray(x, dtype=float)
    return a * x - b * np.cos(c * np.pi * x) + d * x**3


def gen_sinusoidal_regression(
    T: int = 1500,
    seed: int = 0,
    sorted_x: bool = False,
    p_outlier: float = 0.05,
    noise_var: float = 3.0,
) -> Stream:
    """Scalar nonlinear regression with uniform replacement outliers.

    Clean responses follow :func:`sinusoidal_clean` plus Gaussian noise of
    variance ``noise_var``; with probability ``p_outlier`` the response is
    replaced by ``U[-40, 40]`` (flagged in ``outliers``).  ``sorted_x=True``
    presents covariates in non-decreasing order (a correlated stream).
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    rng_x = substream(seed, "sinusoidal/x")
    rng_noise = substream(seed, "sinusoidal/noise")
    rng_corrupt = substream(seed, "sinusoidal/corruption")
    x = rng_x.uniform(-3.0, 3.0, size=T)
    if sorted_x:
        x = np.sort(x)
    y = sinusoidal_clean(x) + np.sqrt(noise_var) * rng_noise.normal(size=T)
    mask = rng_corrupt.random(T) < p_outlier
    y[mask] = rng_corrupt.uniform(-40.0, 40.0, size=int(mask.sum()))
    return Stream(t=np.arange(T), y=y, x=x, outliers=mask)


def gen_moons(T: int, noise: float = 0.1, seed: int = 0) -> Stream:
    """Two interleaving half-circles for nonlinear binary classification.

    Class 0 lies on (cos phi, sin phi) and class 1 on
    (1 - cos phi, 0.5 - sin phi) for phi ~ U[0, pi], plus isotropic Gaussian
    jitter of deviation ``noise``; class counts differ by at most one and
    arrival order is a seeded shuffle.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    rng_angle = substream(seed, "moons/angles")
    rng_jitter = substream(seed, "moons/jitter")
    rng_order = substream(seed, "moons/order")
    n_one = T // 2
    n_zero = T - n_one
    phi_zero = rng_angle.uniform(0.0, np.pi, size=n_zero)
    phi_one = rng_angle.uniform(0.0, np.pi, size=n_one)
    points = np.concatenate(
        [
            np.stack([np.cos(phi_zero), np.sin(phi_zero)], axis=1),
            np.stack([1.0 - np.cos(phi_one), 0.5 - np.sin(phi_one)], axis=1),
        ]
    )
    points = points + noise * rng_jitter.normal(size=(T, 2))
    labels = np.concatenate([np.zeros(n_zero), np.ones(n_one)])
    order = rng_order.permutation(T)
    return Stream(t=np.arange(T), y=labels[order], x=points[order])


def gen_dependent_segments(
    T: int,
    seed: int = 0,
    p_change: float = 0.01,
    coeff_scale: float = 1.0,
    noise_std: float = 0.1,
    x_step: float = 0.1,
) -> Stream:
    """Piecewise quadratic regression whose segments join continuously.

    Covariates advance on a fixed grid ``x_t = x_step * t``.  Within a
    segment the clean response is ``a + b*d + c*d^2`` with
    ``d = x_t - x_anchor`` measured from the segment's starting covariate.
    At a changepoint the slope and curvature are redrawn from
    ``U[-coeff_scale, coeff_scale]`` while the intercept is set to the old
    curve's value at the boundary, so the clean signal is continuous.
    ``anchors`` records each step's segment-start covariate.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if not 0.0 <= p_change < 1.0:
        raise ValueError("p_change must lie in [0, 1)")
    rng_cp = substream(seed, "segments/changepoints")
    rng_coef = substream(seed, "segments/coefficients")
    rng_noise = substream(seed, "segments/noise")

    x = x_step * np.arange(T, dtype=float)
    flags = np.zeros(T, dtype=bool)
    if T > 1:
        flags[1:] = rng_cp.random(T - 1) < p_change
    intercept = rng_coef.uniform(-coeff_scale, coeff_scale)
    slope, curvature = rng_coef.uniform(-coeff_scale, coeff_scale, size=2)
    anchor = x[0] if T > 0 else 0.0
    theta = np.empty((T, 3))
    anchors = np.empty(T)
    for t in range(T):
        if flags[t]:
            offset = x[t] - anchor
            intercept = intercept + slope * offset + curvature * offset**2
            slope, curvature = rng_coef.uniform(-coeff_scale, coeff_scale, size=2)
            anchor = x[t]
        anchors[t] = anchor
        theta[t] = (intercept, slope, curvature)
    delta = x - anchors
    clean = theta[:, 0] + theta[:, 1] * delta + theta[:, 2] * delta**2
    y = clean + noise_std * rng_noise.normal(size=T)
    return Stream(
        t=np.arange(T),
        y=y,
        x=x,
        theta=theta,
        changepoints=flags,
        anchors=anchors,
    )


def gen_dji_like_returns(
    T: int,
    seed: int = 0,
    outlier_times: Sequence[int] = (),
    outlier_magnitudes: Sequence[float] = (),
    sigma: float = 0.01,
) -> Stream:
    """Zero-mean Gaussian return series with spikes injected at given steps.

    Each requested spike magnitude is added to the base return at its index
    and flagged in ``outliers``.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if len(outlier_times) != len(outlier_magnitudes):
        raise ValueError("outlier times and magnitudes must align")
    rng = substream(seed, "returns/noise")
    y = sigma * rng.normal(size=T)
    flags = np.zeros(T, dtype=bool)
    for idx, magnitude in zip(outlier_times, outlier_magnitudes):
        if not 0 <= idx < T:
            raise ValueError("outlier index out of range")
        y[idx] += magnitude
        flags[idx] = True
    return Stream(t=np.arange(T), y=y, outliers=flags)
