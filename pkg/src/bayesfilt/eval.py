"""Metrics and experiment loops for the streaming benchmarks.

The experiment runner pairs a synthetic stream with a list of configured
methods and plays each method through the stream prequentially: at every
step the method predicts from its current belief and the new covariate
only, the prediction is recorded, and the observation is assimilated
afterwards.  Results come back as per-step metric tables plus scalar
summaries; serialization lives in the command-line module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import datagen
from .adaptive import (
    ConditionalPrior,
    CppState,
    RunlengthHypothesis,
    apply_conditional_prior,
    bone_predict,
    cpp_ou_step,
    initial_bank,
    rl1_oupr_step,
    rl_mmpr_step,
    rl_pr_step,
)
from .filters import ekf_step
from .gauss import GaussianBelief
from .models import MeasurementModel, TransitionModel, feature_gaussian_model, logistic_model
from .robust import (
    EwmaState,
    WeightingFn,
    ewma_step,
    wolf_ekf_step,
)

__all__ = [
    "rmedse",
    "prequential_accuracy",
    "state_rmse",
    "rolling_mean",
    "regret_curve",
    "BetaArm",
    "DiscountBetaArm",
    "RunlengthBetaArm",
    "BlendBetaArm",
    "BanditResult",
    "thompson_bandit_loop",
    "MethodSpec",
    "ExperimentConfig",
    "TrialResult",
    "run_experiment",
    "make_stream",
    "build_method",
    "EXPERIMENT_FAMILIES",
    "FILTER_IDS",
    "BANDIT_POLICY_IDS",
]


# ---------------------------------------------------------------------------
# Metrics


def rmedse(residuals) -> float:
    """Square root of the median squared residual (outlier-insensitive)."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size == 0:
        raise ValueError("rmedse requires at least one residual")
    return float(np.sqrt(np.median(residuals**2)))


def prequential_accuracy(y_pred, y_true) -> tuple[np.ndarray, np.ndarray]:
    """Per-step correctness indicators and their running mean."""
    y_pred = np.asarray(y_pred)
    y_true = np.asarray(y_true)
    if y_pred.shape != y_true.shape or y_pred.ndim != 1:
        raise ValueError("predictions and labels must be equal-length vectors")
    hits = (y_pred == y_true).astype(float)
    cumulative = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return hits, cumulative


def state_rmse(traj_est, traj_true, component: int) -> float:
    """Root of the *summed* squared error of one state component over time."""
    est = np.asarray(traj_est, dtype=float)
    true = np.asarray(traj_true, dtype=float)
    if est.shape != true.shape:
        raise ValueError("trajectories must have equal shapes")
    diff = est[:, component] - true[:, component]
    return float(np.sqrt(np.sum(diff**2)))


def rolling_mean(values, window: int) -> np.ndarray:
    """Moving average using exactly the min(t+1, window) latest values."""
    values = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be positive")
    out = np.empty_like(values)
    csum = np.cumsum(values)
    for t in range(values.size):
        lo = max(0, t - window + 1)
        total = csum[t] - (csum[lo - 1] if lo > 0 else 0.0)
        out[t] = total / (t - lo + 1)
    return out


def regret_curve(chosen, true_means) -> np.ndarray:
    """Cumulative gap between the best arm's mean and the chosen arm's."""
    chosen = np.asarray(chosen, dtype=int)
    true_means = np.asarray(true_means, dtype=float)
    if true_means.ndim != 2 or chosen.shape[0] != true_means.shape[0]:
        raise ValueError("need one row of arm means per chosen step")
    gaps = np.max(true_means, axis=1) - true_means[np.arange(chosen.size), chosen]
    return np.cumsum(gaps)


# ---------------------------------------------------------------------------
# Thompson-sampling arms (conjugate Bernoulli beliefs with adaptive variants)


class BetaArm:
    """Conjugate Beta belief over one Bernoulli arm's success rate."""

    def __init__(self, alpha: float = 1.0, beta: float = 1.0):
        if alpha <= 0 or beta <= 0:
            raise ValueError("pseudo-counts must be positive")
        self.alpha = float(alpha)
        self.beta = float(beta)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.beta(self.alpha, self.beta))

    def update(self, reward: float) -> None:
        self.alpha += reward
        self.beta += 1.0 - reward

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


class DiscountBetaArm(BetaArm):
    """Beta arm whose pseudo-counts decay toward the prior before each update.

    The decay keeps the posterior's effective sample size bounded, the
    conjugate analog of adding constant process noise to a Gaussian belief.
    """

    def __init__(self, alpha: float = 1.0, beta: float = 1.0, discount: float = 0.95):
        super().__init__(alpha, beta)
        if not 0.0 < discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        self.alpha0 = float(alpha)
        self.beta0 = float(beta)
        self.discount = float(discount)

    def update(self, reward: float) -> None:
        d = self.discount
        self.alpha = d * self.alpha + (1.0 - d) * self.alpha0
        self.beta = d * self.beta + (1.0 - d) * self.beta0
        super().update(reward)


def _bernoulli_logpmf(prob: float, reward: float) -> float:
    prob = min(max(prob, 1e-12), 1.0 - 1e-12)
    return math.log(prob) if reward >= 0.5 else math.log(1.0 - prob)


class RunlengthBetaArm:
    """Bank of runlength-indexed Beta posteriors for a changepoint-prone arm.

    Each observed reward extends every hypothesis and spawns a fresh one from
    the prior, weighted by the hazard-mixed predictive probabilities; the bank
    keeps the ``max_hypotheses`` most probable runlengths (ties to the longer
    runlength).  Thompson samples draw a hypothesis by weight, then a rate
    from its Beta posterior.
    """

    def __init__(
        self,
        alpha: float = 1.0,
        beta: float = 1.0,
        hazard: float = 0.01,
        max_hypotheses: int = 10,
    ):
        if alpha <= 0 or beta <= 0:
            raise ValueError("pseudo-counts must be positive")
        if not 0.0 < hazard < 1.0:
            raise ValueError("hazard must lie in (0, 1)")
        if max_hypotheses < 1:
            raise ValueError("need at least one hypothesis")
        self.alpha0 = float(alpha)
        self.beta0 = float(beta)
        self.hazard = float(hazard)
        self.max_hypotheses = int(max_hypotheses)
        # rows: (runlength, log joint, alpha, beta)
        self.hyps: list[tuple[int, float, float, float]] = [
            (0, 0.0, self.alpha0, self.beta0)
        ]

    def _weights(self) -> np.ndarray:
        logs = np.array([h[1] for h in self.hyps])
        logs = logs - logs.max()
        w = np.exp(logs)
        return w / w.sum()

    def sample(self, rng: np.random.Generator) -> float:
        weights = self._weights()
        idx = int(rng.choice(len(self.hyps), p=weights))
        _, _, alpha, beta = self.hyps[idx]
        return float(rng.beta(alpha, beta))

    def update(self, reward: float) -> None:
        kappa = self.hazard
        continuation = []
        joints = []
        for r, log_joint, alpha, beta in self.hyps:
            loglik = _bernoulli_logpmf(alpha / (alpha + beta), reward)
            continuation.append(
                (
                    r + 1,
                    log_joint + math.log1p(-kappa) + loglik,
                    alpha + reward,
                    beta + 1.0 - reward,
                )
            )
            joints.append(log_joint)
        loglik0 = _bernoulli_logpmf(self.alpha0 / (self.alpha0 + self.beta0), reward)
        top = max(joints)
        evidence = top + math.log(sum(math.exp(j - top) for j in joints))
        reset = (
            0,
            loglik0 + math.log(kappa) + evidence,
            self.alpha0 + reward,
            self.beta0 + 1.0 - reward,
        )
        merged = continuation + [reset]
        merged.sort(key=lambda h: (h[1], h[0]), reverse=True)
        self.hyps = merged[: self.max_hypotheses]

    @property
    def mean(self) -> float:
        weights = self._weights()
        return float(
            sum(w * a / (a + b) for w, (_, _, a, b) in zip(weights, self.hyps))
        )


class BlendBetaArm:
    """Single Beta belief with a soft reset toward the prior.

    Before each update the continuation probability of the incoming reward is
    weighed against a changepoint at the hazard rate; the pseudo-counts are
    blended toward the prior by that probability, or replaced by the prior
    outright when it drops to ``epsilon`` or below.
    """

    def __init__(
        self,
        alpha: float = 1.0,
        beta: float = 1.0,
        hazard: float = 0.01,
        epsilon: float = 0.5,
    ):
        if alpha <= 0 or beta <= 0:
            raise ValueError("pseudo-counts must be positive")
        if not 0.0 < hazard < 1.0:
            raise ValueError("hazard must lie in (0, 1)")
        if not 0.0 <= epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        self.alpha0 = float(alpha)
        self.beta0 = float(beta)
        self.hazard = float(hazard)
        self.epsilon = float(epsilon)
        self.alpha = float(alpha)
        self.beta = float(beta)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.beta(self.alpha, self.beta))

    def update(self, reward: float) -> None:
        kappa = self.hazard
        cont = math.exp(
            _bernoulli_logpmf(self.alpha / (self.alpha + self.beta), reward)
        )
        reset = math.exp(
            _bernoulli_logpmf(self.alpha0 / (self.alpha0 + self.beta0), reward)
        )
        nu = cont * (1.0 - kappa) / (reset * kappa + cont * (1.0 - kappa))
        if nu > self.epsilon:
            self.alpha = nu * self.alpha + (1.0 - nu) * self.alpha0
            self.beta = nu * self.beta + (1.0 - nu) * self.beta0
        else:
            self.alpha = self.alpha0
            self.beta = self.beta0
        self.alpha += reward
        self.beta += 1.0 - reward

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class BanditResult:
    chosen: np.ndarray
    rewards: np.ndarray
    regret: np.ndarray


def thompson_bandit_loop(
    arm_factory: Callable[[], object], stream: datagen.Stream, seed: int
) -> BanditResult:
    """Play Thompson sampling over pre-realized arm rewards.

    Per step every arm's posterior is sampled once, the highest sample wins
    (ties to the lowest arm index), only the winning arm's reward is observed
    and assimilated, and the per-step regret is the gap between the best and
    the chosen arm's true mean from the stream's ground truth.
    """
    n_arms = stream.y.shape[1]
    if n_arms < 2:
        raise ValueError("need at least two arms")
    if stream.theta is None:
        raise ValueError("stream must carry true arm means for regret")
    arms = [arm_factory() for _ in range(n_arms)]
    rng = datagen.substream(seed, "thompson/policy")
    T = len(stream)
    chosen = np.empty(T, dtype=int)
    rewards = np.empty(T)
    for t in range(T):
        samples = [arm.sample(rng) for arm in arms]
        a = int(np.argmax(samples))
        chosen[t] = a
        rewards[t] = stream.y[t, a]
        arms[a].update(rewards[t])
    return BanditResult(
        chosen=chosen, rewards=rewards, regret=regret_curve(chosen, stream.theta)
    )


# ---------------------------------------------------------------------------
# Method adapters


def _parse_weighting(params: Optional[dict]) -> Optional[WeightingFn]:
    if params is None:
        return None
    if not isinstance(params, dict) or "kind" not in params:
        raise ValueError("weighting must be a mapping with a 'kind' entry")
    kind = params["kind"]
    kwargs = {k: v for k, v in params.items() if k != "kind"}
    return WeightingFn(kind=kind, **kwargs)


class _EkfMethod:
    """Plain (optionally down-weighted) extended Kalman recursion.

    Zero process noise gives the static-parameter baseline; positive noise
    gives the constant-inflation adaptive baseline.
    """

    runlength_indexed = False

    def __init__(self, anchor: GaussianBelief, transition: TransitionModel,
                 weighting: Optional[WeightingFn]):
        self.anchor = anchor
        self.transition = transition
        self.weighting = weighting

    def init(self):
        return self.anchor

    def predict(self, state, model, x) -> np.ndarray:
        return bone_predict(state, model, x)

    def update(self, state, model, x, y):
        if self.weighting is not None:
            return wolf_ekf_step(
                state, self.transition, model, x, y, self.weighting
            )
        new_state, _ = ekf_step(state, self.transition, model, x, y)
        return new_state

    def point_estimate(self, state) -> np.ndarray:
        return state.mean

    def runlengths(self, state):
        return None


class _OuMethod:
    """Constant-rate mean reversion toward the anchor before every update."""

    runlength_indexed = False

    def __init__(self, anchor: GaussianBelief, gamma: float,
                 weighting: Optional[WeightingFn]):
        self.spec = ConditionalPrior(kind="ou", anchor=anchor, gamma=gamma)
        self.anchor = anchor
        self.static = TransitionModel()
        self.weighting = weighting

    def init(self):
        return self.anchor

    def predict(self, state, model, x) -> np.ndarray:
        return bone_predict(state, model, x)

    def update(self, state, model, x, y):
        prior = apply_conditional_prior(self.spec, state, ctx={})
        if self.weighting is not None:
            return wolf_ekf_step(prior, self.static, model, x, y, self.weighting)
        new_state, _ = ekf_step(prior, self.static, model, x, y)
        return new_state

    def point_estimate(self, state) -> np.ndarray:
        return state.mean

    def runlengths(self, state):
        return None


class _CppOuMethod:
    """Mean reversion whose rate is re-fit each step by empirical Bayes."""

    runlength_indexed = False

    def __init__(self, anchor: GaussianBelief, grid_size: int, refinements: int):
        self.anchor = anchor
        self.grid_size = grid_size
        self.refinements = refinements

    def init(self):
        return (
            self.anchor,
            CppState(grid_size=self.grid_size, refinements=self.refinements),
        )

    def predict(self, state, model, x) -> np.ndarray:
        return bone_predict(state[0], model, x)

    def update(self, state, model, x, y):
        belief, cpp = state
        return cpp_ou_step(belief, cpp, model, x, y, self.anchor)

    def point_estimate(self, state) -> np.ndarray:
        return state[0].mean

    def runlengths(self, state):
        return None


class _BankMethod:
    """Runlength bank with either hard or moment-matched prior resets."""

    runlength_indexed = True

    def __init__(self, anchor: GaussianBelief, K: int, hazard: float,
                 weighting: Optional[WeightingFn], moment_matched: bool):
        self.anchor = anchor
        self.K = K
        self.hazard = hazard
        self.weighting = weighting
        self.step_fn = rl_mmpr_step if moment_matched else rl_pr_step

    def init(self):
        return initial_bank(self.anchor, self.K, self.hazard)

    def predict(self, state, model, x) -> np.ndarray:
        return bone_predict(state, model, x)

    def update(self, state, model, x, y):
        return self.step_fn(state, model, x, y, self.anchor, self.weighting)

    def point_estimate(self, state) -> np.ndarray:
        weights = state.weights
        return sum(
            w * h.belief.mean for w, h in zip(weights, state.hyps)
        )

    def runlengths(self, state):
        logs = state.log_joints
        top = np.max(logs)
        log_post = logs - (top + np.log(np.sum(np.exp(logs - top))))
        return [(h.r, float(lp)) for h, lp in zip(state.hyps, log_post)]


class _OuprMethod:
    """Single-hypothesis soft prior reset driven by the predictive ratio."""

    runlength_indexed = True

    def __init__(self, anchor: GaussianBelief, hazard: float, epsilon: float,
                 weighting: Optional[WeightingFn]):
        self.anchor = anchor
        self.hazard = hazard
        self.epsilon = epsilon
        self.weighting = weighting

    def init(self):
        return RunlengthHypothesis(r=0, log_joint=0.0, belief=self.anchor)

    def predict(self, state, model, x) -> np.ndarray:
        return bone_predict(state, model, x)

    def update(self, state, model, x, y):
        return rl1_oupr_step(
            state, model, x, y, self.anchor, self.hazard, self.epsilon,
            self.weighting,
        )

    def point_estimate(self, state) -> np.ndarray:
        return state.belief.mean

    def runlengths(self, state):
        return [(state.r, 0.0)]


FILTER_IDS = ("ekf", "ou", "cpp_ou", "rl_pr", "rl_mmpr", "rl1_oupr")
BANDIT_POLICY_IDS = (
    "beta_static",
    "beta_discount",
    "beta_runlength",
    "beta_blend",
)
EWMA_FILTER_IDS = ("ewma", "wolf_ewma")


@dataclass(frozen=True)
class MethodSpec:
    """One configured competitor: a registry id plus its hyperparameters."""

    name: str
    filter: str
    params: dict = field(default_factory=dict)


def build_method(spec: MethodSpec, anchor: GaussianBelief,
                 transition: Optional[TransitionModel] = None):
    """Instantiate the method adapter for ``spec`` with prior ``anchor``."""
    params = dict(spec.params)
    params.pop("prior_scale", None)
    params.pop("prior_mean", None)
    weighting = _parse_weighting(params.pop("weighting", None))
    fid = spec.filter
    if fid == "ekf":
        q = float(params.pop("q", 0.0))
        trans = transition if transition is not None else TransitionModel(Q=q)
        method = _EkfMethod(anchor, trans, weighting)
    elif fid == "ou":
        method = _OuMethod(anchor, float(params.pop("gamma", 0.99)), weighting)
    elif fid == "cpp_ou":
        if weighting is not None:
            raise ValueError("cpp_ou does not accept a weighting")
        method = _CppOuMethod(
            anchor,
            int(params.pop("grid_size", 20)),
            int(params.pop("refinements", 2)),
        )
    elif fid in ("rl_pr", "rl_mmpr"):
        method = _BankMethod(
            anchor,
            int(params.pop("K", 10)),
            float(params.pop("hazard", 0.01)),
            weighting,
            moment_matched=(fid == "rl_mmpr"),
        )
    elif fid == "rl1_oupr":
        method = _OuprMethod(
            anchor,
            float(params.pop("hazard", 0.01)),
            float(params.pop("epsilon", 0.5)),
            weighting,
        )
    else:
        raise ValueError(f"unknown filter id {fid!r}")
    if params:
        raise ValueError(
            f"unused parameters for {spec.name!r}: {sorted(params)}"
        )
    return method


# ---------------------------------------------------------------------------
# Experiment configuration


EXPERIMENT_FAMILIES = {
    "tracking2d_student": "tracking",
    "tracking2d_mixture": "tracking",
    "piecewise_gaussian": "regression",
    "piecewise_student": "regression",
    "sinusoidal": "regression",
    "periodic_drift": "classification",
    "drift_jumps": "classification",
    "moons": "classification",
    "dependent_segments": "segmented_regression",
    "bandit": "bandit",
    "dji_returns": "ewma",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved benchmark: generator, seeds, and competing methods."""

    experiment: str
    seeds: tuple
    methods: tuple
    T: Optional[int] = None
    warmup: int = 0
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_FAMILIES:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not self.methods:
            raise ValueError("need at least one method")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError("method names must be unique")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        family = EXPERIMENT_FAMILIES[self.experiment]
        valid = BANDIT_POLICY_IDS if family == "bandit" else (
            EWMA_FILTER_IDS if family == "ewma" else FILTER_IDS
        )
        for m in self.methods:
            if m.filter not in valid:
                raise ValueError(
                    f"filter {m.filter!r} is not valid for a {family} experiment"
                )

    @property
    def family(self) -> str:
        return EXPERIMENT_FAMILIES[self.experiment]


@dataclass(frozen=True)
class TrialResult:
    """Per-step metric columns and scalar aggregates for one method x seed."""

    method: str
    seed: int
    table: dict
    summary: dict
    runlengths: Optional[list] = None


def make_stream(config: ExperimentConfig, seed: int) -> datagen.Stream:
    """Draw the configured experiment's data stream for one seed."""
    gen = dict(config.generator)
    exp = config.experiment
    defaults = {
        "tracking2d_student": 1000, "tracking2d_mixture": 1000,
        "piecewise_gaussian": 1000, "piecewise_student": 1000,
        "sinusoidal": 1500, "periodic_drift": 720, "drift_jumps": 1000,
        "moons": 500, "dependent_segments": 1000, "bandit": 2000,
        "dji_returns": 500,
    }
    T = config.T if config.T is not None else defaults.get(exp, 1000)
    if exp == "tracking2d_student":
        return datagen.gen_tracking2d("student", T=T, seed=seed, **gen)
    if exp == "tracking2d_mixture":
        return datagen.gen_tracking2d("mixture", T=T, seed=seed, **gen)
    if exp == "piecewise_gaussian":
        return datagen.gen_piecewise_linreg(
            "gaussian", T=T, seed=seed, **gen
        )
    if exp == "piecewise_student":
        return datagen.gen_piecewise_linreg(
            "student", T=T, seed=seed, **gen
        )
    if exp == "sinusoidal":
        return datagen.gen_sinusoidal_regression(T=T, seed=seed, **gen)
    if exp == "periodic_drift":
        return datagen.gen_periodic_drift_clf(T=T, seed=seed, **gen)
    if exp == "drift_jumps":
        return datagen.gen_drift_jumps_clf(T=T, seed=seed, **gen)
    if exp == "moons":
        return datagen.gen_moons(T=T, seed=seed, **gen)
    if exp == "dependent_segments":
        return datagen.gen_dependent_segments(T=T, seed=seed, **gen)
    if exp == "bandit":
        return datagen.gen_bernoulli_bandit(T=T, seed=seed, **gen)
    if exp == "dji_returns":
        return datagen.gen_dji_like_returns(T=T, seed=seed, **gen)
    raise ValueError(f"unknown experiment {exp!r}")


def _sinusoidal_coeff_model(R: float) -> MeasurementModel:
    """The clean nonlinear target with unknown coefficients (a, b, c, d)."""

    def predictor(theta, x):
        a, b, c, d = theta
        x = float(np.asarray(x).reshape(()) if np.ndim(x) == 0 else np.ravel(x)[0])
        return np.atleast_1d(a * x - b * np.cos(c * np.pi * x) + d * x**3)

    def predictor_jac(theta, x):
        _, b, c, _ = theta
        x = float(np.asarray(x).reshape(()) if np.ndim(x) == 0 else np.ravel(x)[0])
        return np.array(
            [[x, -np.cos(c * np.pi * x), b * np.pi * x * np.sin(c * np.pi * x), x**3]]
        )

    return MeasurementModel(
        family="gaussian", predictor=predictor, predictor_jac=predictor_jac, R=R
    )


def _quadratic_features(x):
    x = np.asarray(x, dtype=float)
    return np.array([1.0, x[0], x[1], x[0] * x[1], x[0] ** 2, x[1] ** 2])


def _measurement_and_dim(config: ExperimentConfig):
    """The per-family measurement model and parameter dimension."""
    exp = config.experiment
    if exp in ("piecewise_gaussian", "piecewise_student"):
        obs_noise = float(config.generator.get("obs_noise", 1.0))
        return (
            feature_gaussian_model(
                lambda x: np.array([1.0, x[0], x[0] ** 2]), R=obs_noise
            ),
            3,
        )
    if exp == "sinusoidal":
        return _sinusoidal_coeff_model(
            float(config.generator.get("obs_noise", 3.0))
        ), 4
    if exp in ("periodic_drift", "drift_jumps"):
        return logistic_model(), 2
    if exp == "moons":
        return logistic_model(_quadratic_features), 6
    raise ValueError(f"no fixed measurement model for {exp!r}")


def _anchor_for(spec: MethodSpec, dim: int) -> GaussianBelief:
    scale = float(spec.params.get("prior_scale", 1.0))
    mean = np.asarray(
        spec.params.get("prior_mean", np.zeros(dim)), dtype=float
    )
    if mean.shape != (dim,):
        raise ValueError("prior_mean has the wrong dimension")
    return GaussianBelief(mean, scale * np.eye(dim))


# ---------------------------------------------------------------------------
# Family loops


def _run_tracking(stream, spec: MethodSpec, seed: int, warmup: int) -> TrialResult:
    transition, measurement = datagen.tracking_state_space()
    anchor = _anchor_for(spec, 4)
    method = build_method(spec, anchor, transition=transition)
    state = method.init()
    T = len(stream)
    est = np.empty((T, 4))
    for t in range(T):
        state = method.update(state, measurement, None, stream.y[t])
        est[t] = method.point_estimate(state)
    err = est - stream.theta
    keep = slice(warmup, T)
    table = {
        "t": stream.t[keep],
        **{f"est_{i}": est[keep, i] for i in range(4)},
        **{f"theta_{i}": stream.theta[keep, i] for i in range(4)},
        "pos_err": np.linalg.norm(err[keep, :2], axis=1),
    }
    if est[keep].shape[0] == 0:
        summary = {}
    else:
        summary = {
            f"J_{i}": state_rmse(est[keep], stream.theta[keep], i)
            for i in range(4)
        }
    return TrialResult(method=spec.name, seed=seed, table=table, summary=summary)


def _run_regression(config, stream, spec, seed: int) -> TrialResult:
    model, dim = _measurement_and_dim(config)
    method = build_method(spec, _anchor_for(spec, dim))
    state = method.init()
    T = len(stream)
    preds = np.empty(T)
    rl_rows = []
    for t in range(T):
        x = stream.x[t]
        preds[t] = method.predict(state, model, x)[0]
        state = method.update(state, model, x, stream.y[t])
        hyps = method.runlengths(state)
        if hyps is not None:
            rl_rows.extend((t, r, lp) for r, lp in hyps)
    keep = slice(config.warmup, T)
    y = stream.y[keep, 0]
    p = preds[keep]
    sq_err = (y - p) ** 2
    table = {
        "t": stream.t[keep],
        "y": y,
        "pred": p,
        "sq_err": sq_err,
        "rolling_rmse_10": np.sqrt(rolling_mean(sq_err, 10)),
    }
    if y.size == 0:
        summary = {}
    else:
        summary = {
            "rmse": float(np.sqrt(np.mean(sq_err))),
            "rmedse": rmedse(y - p),
        }
    return TrialResult(
        method=spec.name, seed=seed, table=table, summary=summary,
        runlengths=rl_rows or None,
    )


def _run_classification(config, stream, spec, seed: int) -> TrialResult:
    model, dim = _measurement_and_dim(config)
    method = build_method(spec, _anchor_for(spec, dim))
    state = method.init()
    T = len(stream)
    prob = np.empty(T)
    rl_rows = []
    for t in range(T):
        x = stream.x[t]
        prob[t] = method.predict(state, model, x)[0]
        state = method.update(state, model, x, stream.y[t])
        hyps = method.runlengths(state)
        if hyps is not None:
            rl_rows.extend((t, r, lp) for r, lp in hyps)
    keep = slice(config.warmup, T)
    y = stream.y[keep, 0]
    p = prob[keep]
    pred_class = (p > 0.5).astype(float)
    hits = prequential_accuracy(pred_class, y)[0] if y.size else np.empty(0)
    table = {
        "t": stream.t[keep],
        "y": y,
        "p_hat": p,
        "pred_class": pred_class,
        "hit": hits,
        "rolling_acc_50": rolling_mean(hits, 50),
    }
    if y.size == 0:
        summary = {}
    else:
        summary = {
            "accuracy": float(np.mean(hits)),
            "misclassification": float(1.0 - np.mean(hits)),
        }
    return TrialResult(
        method=spec.name, seed=seed, table=table, summary=summary,
        runlengths=rl_rows or None,
    )


def _run_segmented_regression(config, stream, spec, seed: int) -> TrialResult:
    obs_noise = float(config.generator.get("noise_std", 0.1)) ** 2
    xs = stream.x[:, 0]

    def anchored(index: int) -> MeasurementModel:
        a = xs[max(index, 0)]
        return feature_gaussian_model(
            lambda x, a=a: np.array([1.0, x - a, (x - a) ** 2]), R=obs_noise
        )

    method = build_method(spec, _anchor_for(spec, 3))
    indexed = getattr(method, "runlength_indexed", False)
    fixed_model = anchored(0)
    state = method.init()
    T = len(stream)
    preds = np.empty(T)
    rl_rows = []
    for t in range(T):
        x = xs[t]
        if indexed:
            # hypotheses carry last step's runlength, so their segment
            # anchor sits r+1 steps back from the current index
            pred_model = lambda r, t=t: anchored(t - 1 - r)
            upd_model = lambda r, t=t: anchored(t - r)
        else:
            pred_model = upd_model = fixed_model
        preds[t] = method.predict(state, pred_model, x)[0]
        state = method.update(state, upd_model, x, stream.y[t])
        hyps = method.runlengths(state)
        if hyps is not None:
            rl_rows.extend((t, r, lp) for r, lp in hyps)
    keep = slice(config.warmup, T)
    y = stream.y[keep, 0]
    p = preds[keep]
    sq_err = (y - p) ** 2
    table = {
        "t": stream.t[keep],
        "y": y,
        "pred": p,
        "sq_err": sq_err,
        "rolling_rmse_10": np.sqrt(rolling_mean(sq_err, 10)),
    }
    if y.size == 0:
        summary = {}
    else:
        summary = {
            "rmse": float(np.sqrt(np.mean(sq_err))),
            "rmedse": rmedse(y - p),
        }
    return TrialResult(
        method=spec.name, seed=seed, table=table, summary=summary,
        runlengths=rl_rows or None,
    )


def _bandit_factory(spec: MethodSpec) -> Callable[[], object]:
    params = dict(spec.params)
    fid = spec.filter
    if fid == "beta_static":
        return lambda: BetaArm(**params)
    if fid == "beta_discount":
        return lambda: DiscountBetaArm(**params)
    if fid == "beta_runlength":
        return lambda: RunlengthBetaArm(**params)
    if fid == "beta_blend":
        return lambda: BlendBetaArm(**params)
    raise ValueError(f"unknown bandit policy {fid!r}")


def _run_bandit(config, stream, spec, seed: int) -> TrialResult:
    result = thompson_bandit_loop(_bandit_factory(spec), stream, seed)
    keep = slice(config.warmup, len(stream))
    table = {
        "t": stream.t[keep],
        "chosen": result.chosen[keep].astype(float),
        "reward": result.rewards[keep],
        "regret": result.regret[keep],
    }
    if table["t"].size == 0:
        summary = {}
    else:
        summary = {
            "final_regret": float(result.regret[-1]),
            "mean_reward": float(np.mean(result.rewards)),
        }
    return TrialResult(method=spec.name, seed=seed, table=table, summary=summary)


def _run_ewma(config, stream, spec, seed: int) -> TrialResult:
    params = dict(spec.params)
    ys = stream.y[:, 0]
    T = len(stream)
    means = np.empty(T)
    deltas = np.empty(T)
    if spec.filter == "ewma":
        beta = float(params.pop("beta", 0.095))
        m = float(params.pop("m0", 0.0))
        if params:
            raise ValueError(f"unused parameters: {sorted(params)}")
        for t in range(T):
            new = (1.0 - beta) * m + beta * ys[t]
            deltas[t] = abs(new - m)
            means[t] = new
            m = new
    else:
        state = EwmaState(
            m=float(params.pop("m0", 0.0)),
            s2=float(params.pop("s0", 1.0)),
            q=float(params.pop("q", 0.01)),
            r=float(params.pop("r", 1.0)),
            c=float(params.pop("c", 0.05)),
        )
        if params:
            raise ValueError(f"unused parameters: {sorted(params)}")
        for t in range(T):
            new_state = ewma_step(state, ys[t])
            deltas[t] = abs(new_state.m - state.m)
            means[t] = new_state.m
            state = new_state
    keep = slice(config.warmup, T)
    table = {
        "t": stream.t[keep],
        "y": ys[keep],
        "m": means[keep],
        "abs_dm": deltas[keep],
    }
    summary = (
        {"max_abs_dm": float(np.max(deltas[keep]))} if deltas[keep].size else {}
    )
    return TrialResult(method=spec.name, seed=seed, table=table, summary=summary)


def run_trial(config: ExperimentConfig, spec: MethodSpec, seed: int) -> TrialResult:
    """Run one method through one seed's stream."""
    stream = make_stream(config, seed)
    family = config.family
    if family == "tracking":
        return _run_tracking(stream, spec, seed, config.warmup)
    if family == "regression":
        return _run_regression(config, stream, spec, seed)
    if family == "classification":
        return _run_classification(config, stream, spec, seed)
    if family == "segmented_regression":
        return _run_segmented_regression(config, stream, spec, seed)
    if family == "bandit":
        return _run_bandit(config, stream, spec, seed)
    if family == "ewma":
        return _run_ewma(config, stream, spec, seed)
    raise ValueError(f"unknown family {family!r}")


def run_experiment(config: ExperimentConfig) -> list:
    """Run every configured method over every seed, sequentially."""
    return [
        run_trial(config, spec, seed)
        for spec in config.methods
        for seed in config.seeds
    ]
