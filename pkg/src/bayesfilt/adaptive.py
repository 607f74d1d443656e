"""Non-stationarity layer: conditional priors, runlength hypothesis banks,
and the composed predict/update steps built on them.

Every method here factors the same way: pick a conditional prior (a Gaussian
re-belief that may blend toward, inflate, or reset to an anchor), then run one
linearized measurement update from the filters module.  Runlength methods
additionally maintain a bank of hypotheses weighted by hazard-discounted
predictive likelihoods.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .filters import gaussian_update
from .gauss import GaussianBelief, cholesky_with_jitter, symmetrize
from .models import MeasurementModel, linearize
from .robust import WEIGHT_FLOOR, WeightingFn, weight

__all__ = [
    "ConditionalPrior",
    "CppState",
    "HypothesisBank",
    "RunlengthHypothesis",
    "UPSILON_MIN",
    "apply_conditional_prior",
    "bone_predict",
    "cpp_ou_step",
    "initial_bank",
    "moment_match",
    "rl1_oupr_step",
    "rl_mmpr_step",
    "rl_pr_step",
]

UPSILON_MIN = 1e-4

PRIOR_KINDS = ("static", "ou", "aci", "cpp_ou", "prior_reset", "mmpr", "oupr")

# A model may depend on the hypothesis runlength (segment-relative features);
# callables map the post-step runlength to a concrete measurement model.
ModelOrFn = Union[MeasurementModel, Callable[[int], MeasurementModel]]


@dataclass(frozen=True)
class ConditionalPrior:
    """Specification of the re-belief applied before each measurement update.

    kinds:
      static       previous posterior unchanged
      ou           blend toward the anchor at fixed rate gamma
      aci          additive covariance inflation q*I (optional mean shrink)
      cpp_ou       blend at the changepoint probability passed via ctx
      prior_reset  hard reset to the anchor
      mmpr         moment-matched mixture of the bank passed via ctx
      oupr         blend at the continuation weight nu (ctx) when nu > epsilon,
                   hard reset otherwise
    """

    kind: str
    anchor: Optional[GaussianBelief] = None
    gamma: float = 1.0
    q: float = 0.0
    shrink: float = 1.0
    kappa: float = 0.01
    epsilon: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown conditional prior kind: {self.kind!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.q < 0.0:
            raise ValueError("inflation q must be nonnegative")
        if not 0.0 < self.shrink <= 1.0:
            raise ValueError("shrink must lie in (0, 1]")
        if self.kind == "oupr" and not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.kind == "oupr" and not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.kind in ("ou", "cpp_ou", "prior_reset", "oupr") and self.anchor is None:
            raise ValueError(f"{self.kind} prior requires an anchor belief")


def _blend(prev: GaussianBelief, anchor: GaussianBelief, rate: float) -> GaussianBelief:
    mean = rate * prev.mean + (1.0 - rate) * anchor.mean
    cov = rate**2 * prev.cov + (1.0 - rate**2) * anchor.cov
    return GaussianBelief(mean, cov)


def moment_match(
    beliefs: Sequence[GaussianBelief], weights: Sequence[float]
) -> GaussianBelief:
    """Gaussian matching the first two moments of a belief mixture."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape[0] != len(beliefs) or len(beliefs) == 0:
        raise ValueError("need one weight per mixture component")
    weights = weights / weights.sum()
    mean = sum(w * b.mean for w, b in zip(weights, beliefs))
    second = sum(
        w * (b.cov + np.outer(b.mean, b.mean)) for w, b in zip(weights, beliefs)
    )
    cov = symmetrize(second - np.outer(mean, mean))
    chol = cholesky_with_jitter(cov)
    return GaussianBelief(mean, chol @ chol.T)


def apply_conditional_prior(
    prior: ConditionalPrior, prev: GaussianBelief, ctx: Optional[dict] = None
) -> GaussianBelief:
    """Evaluate the conditional prior for one step.

    ctx supplies per-step quantities some variants need: ``upsilon`` for
    cpp_ou, ``nu`` for oupr, ``bank`` for mmpr.
    """
    ctx = ctx or {}
    if prior.kind == "static":
        return prev
    if prior.kind == "ou":
        return _blend(prev, prior.anchor, prior.gamma)
    if prior.kind == "aci":
        mean = prior.shrink * prev.mean
        cov = prev.cov + prior.q * np.eye(prev.dim)
        return GaussianBelief(mean, cov)
    if prior.kind == "cpp_ou":
        return _blend(prev, prior.anchor, float(ctx["upsilon"]))
    if prior.kind == "prior_reset":
        return prior.anchor
    if prior.kind == "mmpr":
        bank = ctx["bank"]
        return moment_match([h.belief for h in bank.hyps], bank.weights)
    # oupr: continuation blend above the threshold, hard reset at or below it
    nu = float(ctx["nu"])
    if nu > prior.epsilon:
        return _blend(prev, prior.anchor, nu)
    return prior.anchor


# ---------------------------------------------------------------------------
# Runlength hypothesis banks


@dataclass(frozen=True)
class RunlengthHypothesis:
    """One runlength hypothesis: steps since the last changepoint, the log
    joint log p(r_t, y_{1:t}), and the posterior belief under it."""

    r: int
    log_joint: float
    belief: GaussianBelief

    def __post_init__(self) -> None:
        if self.r < 0:
            raise ValueError("runlength must be nonnegative")
        if np.isnan(self.log_joint):
            raise ValueError("log_joint must not be NaN")


@dataclass(frozen=True)
class HypothesisBank:
    """At most K retained runlength hypotheses plus the constant hazard."""

    K: int
    hyps: tuple
    hazard: float

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not 0.0 <= self.hazard < 1.0:
            raise ValueError("hazard must lie in [0, 1)")
        if len(self.hyps) == 0:
            raise ValueError("bank must hold at least one hypothesis")
        object.__setattr__(self, "hyps", tuple(self.hyps))

    @property
    def log_joints(self) -> np.ndarray:
        return np.array([h.log_joint for h in self.hyps])

    @property
    def weights(self) -> np.ndarray:
        lj = self.log_joints
        total = logsumexp(lj)
        if not np.isfinite(total):
            raise ValueError("degenerate bank: all hypotheses have zero mass")
        return np.exp(lj - total)


def initial_bank(anchor: GaussianBelief, K: int, hazard: float) -> HypothesisBank:
    """Bank at t=0: a single zero-runlength hypothesis holding the anchor."""
    hyp = RunlengthHypothesis(r=0, log_joint=0.0, belief=anchor)
    return HypothesisBank(K=K, hyps=(hyp,), hazard=hazard)


def _model_for(model: ModelOrFn) -> Callable[[int], MeasurementModel]:
    if isinstance(model, MeasurementModel):
        return lambda r: model
    if callable(model):
        return model
    raise TypeError("model must be a MeasurementModel or runlength -> model map")


def _linearized_step(
    belief: GaussianBelief,
    model: MeasurementModel,
    x,
    y: np.ndarray,
    weighting: Optional[WeightingFn],
) -> tuple:
    """Linearized measurement update returning (posterior, predictive loglik).

    The log-likelihood is always the unweighted Gaussian predictive; a
    weighting function only alters the belief update (fully rejected
    observations leave the belief untouched).
    """
    y_hat, H, R_bar = linearize(model, belief.mean, x)
    innovation = y - y_hat
    updated, loglik = gaussian_update(belief, H, R_bar, innovation)
    if weighting is None:
        return updated, loglik
    w = weight(weighting, y, y_hat, R_bar)
    if w <= WEIGHT_FLOOR:
        return belief, loglik
    downweighted, _ = gaussian_update(belief, H, R_bar / w**2, innovation)
    return downweighted, loglik


def _prune(hyps: list, K: int) -> tuple:
    ranked = sorted(hyps, key=lambda h: (h.log_joint, h.r), reverse=True)
    kept = tuple(ranked[: min(K, len(ranked))])
    if not np.isfinite(kept[0].log_joint):
        raise ValueError("degenerate bank: all hypotheses have zero mass")
    return kept


def _bocd_step(
    bank: HypothesisBank,
    model: ModelOrFn,
    x,
    y,
    reset_prior: GaussianBelief,
    weighting: Optional[WeightingFn],
) -> HypothesisBank:
    """Shared runlength recursion: extend every hypothesis, add the reset
    hypothesis whose joint is its predictive times hazard times the total
    previous mass, then prune to the K best (ties keep the larger runlength).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    model_fn = _model_for(model)
    log_continue = np.log1p(-bank.hazard)
    log_hazard = np.log(bank.hazard) if bank.hazard > 0.0 else -np.inf

    new_hyps = []
    for hyp in bank.hyps:
        r_new = hyp.r + 1
        updated, loglik = _linearized_step(
            hyp.belief, model_fn(r_new), x, y, weighting
        )
        new_hyps.append(
            RunlengthHypothesis(
                r=r_new,
                log_joint=hyp.log_joint + log_continue + loglik,
                belief=updated,
            )
        )
    prev_mass = logsumexp(bank.log_joints)
    updated0, loglik0 = _linearized_step(reset_prior, model_fn(0), x, y, weighting)
    new_hyps.append(
        RunlengthHypothesis(
            r=0, log_joint=loglik0 + log_hazard + prev_mass, belief=updated0
        )
    )
    return HypothesisBank(K=bank.K, hyps=_prune(new_hyps, bank.K), hazard=bank.hazard)


def rl_pr_step(
    bank: HypothesisBank,
    model: ModelOrFn,
    x,
    y,
    anchor: GaussianBelief,
    weighting: Optional[WeightingFn] = None,
) -> HypothesisBank:
    """Runlength recursion with a hard prior reset on changepoints."""
    return _bocd_step(bank, model, x, y, anchor, weighting)


def rl_mmpr_step(
    bank: HypothesisBank,
    model: ModelOrFn,
    x,
    y,
    anchor: Optional[GaussianBelief] = None,
    weighting: Optional[WeightingFn] = None,
) -> HypothesisBank:
    """Runlength recursion whose changepoint hypothesis restarts from the
    moment-matched mixture of the previous bank rather than the fixed anchor.

    With a constant hazard the mixture weights reduce to the previous
    normalized bank weights; ``anchor`` is accepted for interface symmetry but
    unused.
    """
    del anchor
    matched = moment_match([h.belief for h in bank.hyps], bank.weights)
    return _bocd_step(bank, model, x, y, matched, weighting)


def rl1_oupr_step(
    state: RunlengthHypothesis,
    model: ModelOrFn,
    x,
    y,
    anchor: GaussianBelief,
    kappa: float,
    epsilon: float,
    weighting: Optional[WeightingFn] = None,
) -> RunlengthHypothesis:
    """Single-hypothesis step: weigh continuation against reset by the
    marginal predictive likelihood ratio, then either blend toward the anchor
    at that weight (continuation) or hard-reset (changepoint) before updating.
    """
    if not 0.0 <= kappa < 1.0:
        raise ValueError("kappa must lie in [0, 1)")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    model_fn = _model_for(model)
    _, loglik_cont = _linearized_step(
        state.belief, model_fn(state.r + 1), x, y, None
    )
    _, loglik_reset = _linearized_step(anchor, model_fn(0), x, y, None)
    log_num = loglik_cont + np.log1p(-kappa)
    log_reset = (loglik_reset + np.log(kappa)) if kappa > 0.0 else -np.inf
    log_den = logsumexp([log_reset, log_num])
    if not np.isfinite(log_den):
        raise ValueError("both predictive likelihoods vanished")
    nu = float(np.exp(log_num - log_den))

    spec = ConditionalPrior(
        kind="oupr", anchor=anchor, kappa=max(kappa, 1e-12), epsilon=epsilon
    )
    prior = apply_conditional_prior(spec, state.belief, ctx={"nu": nu})
    if nu > epsilon:
        r_new = state.r + 1
    else:
        r_new = 0
    updated, _ = _linearized_step(prior, model_fn(r_new), x, y, weighting)
    return RunlengthHypothesis(r=r_new, log_joint=0.0, belief=updated)


# ---------------------------------------------------------------------------
# Changepoint-probability OU


@dataclass(frozen=True)
class CppState:
    """Current changepoint-probability rate and the search schedule for the
    per-step empirical-Bayes maximization."""

    upsilon: float = 1.0
    grid_size: int = 20
    refinements: int = 2

    def __post_init__(self) -> None:
        if not UPSILON_MIN <= self.upsilon <= 1.0:
            raise ValueError(f"upsilon must lie in [{UPSILON_MIN}, 1]")
        if self.grid_size < 3:
            raise ValueError("grid_size must be at least 3")
        if self.refinements < 0:
            raise ValueError("refinements must be nonnegative")


def _cpp_objective(
    upsilon: float,
    belief: GaussianBelief,
    anchor: GaussianBelief,
    model: MeasurementModel,
    x,
    y: np.ndarray,
) -> float:
    prior = _blend(belief, anchor, upsilon)
    _, loglik = _linearized_step(prior, model, x, y, None)
    return loglik


def cpp_ou_step(
    belief: GaussianBelief,
    cpp: CppState,
    model: MeasurementModel,
    x,
    y,
    anchor: GaussianBelief,
) -> tuple:
    """Maximize the one-step linearized predictive over the blend rate, then
    update under the maximizing prior.

    Grid search with successive refinement around the incumbent; near-ties
    resolve to the largest rate (least forgetting).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lo, hi = UPSILON_MIN, 1.0
    best = None
    for _ in range(cpp.refinements + 1):
        grid = np.linspace(lo, hi, cpp.grid_size)
        vals = np.array(
            [_cpp_objective(u, belief, anchor, model, x, y) for u in grid]
        )
        top = vals.max()
        tied = grid[vals >= top - 1e-9 * (1.0 + abs(top))]
        best = float(tied.max())
        idx = int(np.searchsorted(grid, best))
        lo = grid[max(idx - 1, 0)]
        hi = grid[min(idx + 1, cpp.grid_size - 1)]
    prior = _blend(belief, anchor, best)
    updated, _ = _linearized_step(prior, model, x, y, None)
    return updated, CppState(
        upsilon=best, grid_size=cpp.grid_size, refinements=cpp.refinements
    )


# ---------------------------------------------------------------------------
# Prediction


def bone_predict(state, model: ModelOrFn, x) -> np.ndarray:
    """Weighted plug-in prediction over the current hypotheses.

    Accepts a full bank (weighted sum over hypotheses), a single runlength
    hypothesis, or a bare belief.
    """
    model_fn = _model_for(model)
    if isinstance(state, GaussianBelief):
        return np.atleast_1d(model_fn(0).mean_fn(state.mean, x))
    if isinstance(state, RunlengthHypothesis):
        return np.atleast_1d(model_fn(state.r).mean_fn(state.belief.mean, x))
    if isinstance(state, HypothesisBank):
        weights = state.weights
        preds = [
            model_fn(h.r).mean_fn(h.belief.mean, x) for h in state.hyps
        ]
        return np.atleast_1d(
            sum(w * np.atleast_1d(p) for w, p in zip(weights, preds))
        )
    raise TypeError(f"unsupported state for prediction: {type(state).__name__}")
