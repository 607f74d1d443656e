"""Tests for residual-weighted robust updates, the scalar EWMA variant, and
posterior influence diagnostics."""

import numpy as np
import pytest

from bayesfilt.filters import kf_predict, kf_update
from bayesfilt.gauss import GaussianBelief
from bayesfilt.models import TransitionModel, linearize, logistic_model, sigmoid
from bayesfilt.robust import (
    EwmaState,
    constant,
    ewma_step,
    imq,
    kf_pif_closed_form,
    mahalanobis,
    pif,
    thresholded_mahalanobis,
    weight,
    wolf_ekf_step,
    wolf_update,
)

from reference import random_spd


def test_imq_hand_values():
    fn = imq(2.0)
    assert weight(fn, np.zeros(3), np.zeros(3)) == pytest.approx(1.0)
    # residual norm equal to c gives 1/sqrt(2)
    assert weight(fn, np.array([2.0]), np.array([0.0])) == pytest.approx(
        1.0 / np.sqrt(2.0)
    )
    # weight decreases monotonically with the residual norm
    ws = [weight(fn, np.array([r]), np.array([0.0])) for r in np.linspace(0, 50, 40)]
    assert all(a >= b for a, b in zip(ws, ws[1:]))


def test_imq_ignores_observation_covariance():
    fn = imq(1.0)
    y, y_hat = np.array([1.0, -2.0]), np.array([0.0, 0.0])
    assert weight(fn, y, y_hat) == weight(fn, y, y_hat, R=np.eye(2) * 37.0)


def test_mahalanobis_hand_value():
    # residual 4 with observation variance 4 has squared Mahalanobis 4;
    # with c=2 the weight is (1 + 4/4)^(-1/2)
    fn = mahalanobis(c=2.0)
    w = weight(fn, np.array([4.0]), np.array([0.0]), R=np.array([[4.0]]))
    assert w == pytest.approx(1.0 / np.sqrt(2.0))


def test_thresholded_mahalanobis_boundary_inclusive():
    fn = thresholded_mahalanobis(c=4.0)
    R = np.eye(1)
    assert weight(fn, np.array([2.0]), np.array([0.0]), R) == 1.0
    assert weight(fn, np.array([2.0 + 1e-6]), np.array([0.0]), R) == 0.0


def test_mahalanobis_requires_covariance_and_pd():
    with pytest.raises(ValueError):
        weight(mahalanobis(), np.array([1.0]), np.array([0.0]))
    with pytest.raises(np.linalg.LinAlgError):
        weight(
            thresholded_mahalanobis(),
            np.array([1.0, 0.0]),
            np.zeros(2),
            R=np.array([[1.0, 2.0], [2.0, 1.0]]),
        )


def test_weighting_validation():
    with pytest.raises(ValueError):
        imq(0.0)
    with pytest.raises(ValueError):
        constant(-0.5)
    from bayesfilt.robust import WeightingFn

    with pytest.raises(ValueError):
        WeightingFn("huber", c=1.0)


def test_wolf_update_scalar_hand_example():
    # prior N(0,1), H=R=1, y=2, imq threshold c=1: w^2 = 1/5, so posterior
    # precision is 1.2 and the mean is (w^2 / 1.2) * y = 1/3
    belief = GaussianBelief(np.zeros(1), np.eye(1))
    out = wolf_update(belief, np.eye(1), np.eye(1), np.array([2.0]), imq(1.0))
    assert out.mean[0] == pytest.approx(1.0 / 3.0)
    assert out.cov[0, 0] == pytest.approx(1.0 / 1.2)


def test_wolf_constant_one_matches_kalman():
    rng = np.random.default_rng(7)
    for _ in range(5):
        belief = GaussianBelief(rng.normal(size=3), random_spd(rng, 3))
        H = rng.normal(size=(2, 3))
        R = random_spd(rng, 2)
        y = rng.normal(size=2)
        ref, _ = kf_update(belief, H, R, y)
        out = wolf_update(belief, H, R, y, constant(1.0))
        np.testing.assert_allclose(out.mean, ref.mean, atol=1e-10)
        np.testing.assert_allclose(out.cov, ref.cov, atol=1e-10)


def test_wolf_zero_weight_is_noop():
    belief = GaussianBelief(np.zeros(2), np.eye(2))
    out = wolf_update(belief, np.eye(2), np.eye(2), np.ones(2), constant(0.0))
    assert out is belief


def test_wolf_covariance_never_tighter_than_kalman():
    # any weight at most one updates with a weaker effective observation,
    # so the posterior covariance dominates the plain Kalman one
    rng = np.random.default_rng(11)
    for _ in range(10):
        belief = GaussianBelief(rng.normal(size=3), random_spd(rng, 3))
        H = rng.normal(size=(2, 3))
        R = random_spd(rng, 2)
        y = rng.normal(size=2) * 5.0
        ref, _ = kf_update(belief, H, R, y)
        out = wolf_update(belief, H, R, y, imq(1.0))
        eigmin = np.linalg.eigvalsh(out.cov - ref.cov).min()
        assert eigmin >= -1e-10


def test_wolf_ekf_rejected_observation_returns_prediction():
    belief = GaussianBelief(np.ones(2), np.eye(2))
    trans = TransitionModel(Q=0.1)
    model = logistic_model()
    pred = kf_predict(belief, trans)
    out = wolf_ekf_step(
        belief, trans, model, np.array([30.0, 30.0]), np.array([0.0]),
        thresholded_mahalanobis(c=4.0),
    )
    # an impossible label at a saturated prediction has enormous Mahalanobis
    # residual and is dropped entirely
    np.testing.assert_allclose(out.mean, pred.mean)
    np.testing.assert_allclose(out.cov, pred.cov)


def test_wolf_ekf_downweights_adversarial_classification_outliers():
    # online logistic regression where 5% of observations carry huge
    # covariates and a flipped label; the thresholded update should keep the
    # final decision rule far more accurate than the plain moment-matched EKF
    theta_star = np.array([2.0, -1.5])
    trans = TransitionModel(Q=0.0)
    model = logistic_model()
    fn = thresholded_mahalanobis(c=4.0)
    T = 400
    errs_plain, errs_wolf = [], []
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        plain = GaussianBelief(np.zeros(2), np.eye(2))
        wolf = GaussianBelief(np.zeros(2), np.eye(2))
        for _ in range(T):
            if rng.uniform() < 0.05:
                x = 40.0 * rng.choice([-1.0, 1.0], size=2)
                y_val = float(theta_star @ x < 0)  # adversarially flipped
            else:
                x = rng.normal(size=2)
                y_val = float(rng.uniform() < sigmoid(theta_star @ x))
            y = np.array([y_val])
            pred = kf_predict(plain, trans)
            y_hat, H, R_bar = linearize(model, pred.mean, x)
            plain, _ = kf_update(pred, H, R_bar, y - y_hat + H @ pred.mean)
            wolf = wolf_ekf_step(wolf, trans, model, x, y, fn)
        x_test = rng.normal(size=(500, 2))
        labels = (x_test @ theta_star > 0).astype(float)
        errs_plain.append(np.mean((x_test @ plain.mean > 0) != labels))
        errs_wolf.append(np.mean((x_test @ wolf.mean > 0) != labels))
    assert np.mean(errs_wolf) < np.mean(errs_plain)
    wins = sum(w < p for w, p in zip(errs_wolf, errs_plain))
    assert wins >= 15


def test_imq_influence_is_bounded():
    # w^2 * |residual| peaks at |residual| = c with value c/2 and decays
    c = 2.0
    fn = imq(c)
    rs = np.linspace(0.0, 200.0, 4001)
    vals = np.array(
        [weight(fn, np.array([r]), np.array([0.0])) ** 2 * r for r in rs]
    )
    peak = vals.max()
    assert peak == pytest.approx(c / 2.0, rel=1e-3)
    assert abs(rs[vals.argmax()] - c) < 0.1
    assert vals[-1] < 0.05


def test_ewma_validation():
    with pytest.raises(ValueError):
        EwmaState(m=0.0, s2=0.0, q=0.1, r=1.0, c=0.05)
    with pytest.raises(ValueError):
        EwmaState(m=0.0, s2=1.0, q=0.1, r=-1.0, c=0.05)


def test_ewma_large_threshold_matches_scalar_kalman():
    # with c -> infinity every weight is ~1 and the recursion is a plain
    # steady-state scalar Kalman filter on a random-walk state
    rng = np.random.default_rng(3)
    q, r = 0.3, 1.2
    state = EwmaState(m=0.0, s2=1.0, q=q, r=r, c=1e12)
    belief = GaussianBelief(np.zeros(1), np.eye(1))
    trans = TransitionModel(Q=q**2)
    H, R = np.eye(1), np.array([[r**2]])
    for _ in range(100):
        y = rng.normal()
        state = ewma_step(state, y)
        belief, _ = kf_update(kf_predict(belief, trans), H, R, np.array([y]))
        assert state.m == pytest.approx(belief.mean[0], abs=1e-9)
        # k * r^2 is algebraically the scalar posterior variance
        assert state.s2 == pytest.approx(belief.cov[0, 0], abs=1e-9)


def test_ewma_damps_spikes():
    state = EwmaState(m=0.0, s2=0.01, q=0.01, r=1.0, c=0.05)
    spiked = ewma_step(state, 10.0)
    # plain EWMA with a typical smoothing factor would move by ~beta * y
    assert abs(spiked.m) < 0.01
    tracked = ewma_step(state, 0.02)  # small ordinary innovation
    assert abs(tracked.m) > 1e-5


def test_pif_zero_for_identical_observations():
    belief = GaussianBelief(np.zeros(2), np.eye(2))
    H, R = np.eye(2), np.eye(2)
    y = np.array([0.3, -0.2])
    assert pif("kf", belief, H, R, y, y) <= 1e-12
    assert pif(imq(1.0), belief, H, R, y, y) <= 1e-12


def test_pif_matches_closed_form_for_kalman():
    rng = np.random.default_rng(19)
    for _ in range(10):
        belief = GaussianBelief(rng.normal(size=3), random_spd(rng, 3))
        H = rng.normal(size=(2, 3))
        R = random_spd(rng, 2)
        y = rng.normal(size=2)
        y_c = y + rng.normal(size=2) * 10.0
        val = pif("kf", belief, H, R, y, y_c)
        ref = kf_pif_closed_form(belief, H, R, y, y_c)
        assert val == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_pif_quadratic_growth_vs_bounded():
    # the Kalman influence grows quadratically in the contamination size
    # while the imq-weighted influence stays bounded
    belief = GaussianBelief(np.zeros(2), np.eye(2))
    H, R = np.eye(2), np.eye(2)
    y = np.array([0.1, -0.4])
    deltas = np.logspace(0, 6, 13)
    kf_vals, wolf_vals = [], []
    for d in deltas:
        y_c = y + np.array([d, 0.0])
        kf_vals.append(pif("kf", belief, H, R, y, y_c))
        wolf_vals.append(pif(imq(1.0), belief, H, R, y, y_c))
    assert max(wolf_vals) < 1e3
    slope, intercept = np.polyfit(np.log(deltas), np.log(kf_vals), 1)
    fitted = slope * np.log(deltas) + intercept
    resid = np.log(kf_vals) - fitted
    r2 = 1.0 - resid.var() / np.log(kf_vals).var()
    assert 1.9 < slope < 2.1
    assert r2 > 0.999


def test_pif_accepts_callable_and_rejects_junk():
    belief = GaussianBelief(np.zeros(1), np.eye(1))
    H, R = np.eye(1), np.eye(1)
    custom = lambda b, H_, R_, obs: kf_update(b, H_, R_, obs)[0]  # noqa: E731
    val = pif(custom, belief, H, R, np.array([0.0]), np.array([2.0]))
    ref = pif("kf", belief, H, R, np.array([0.0]), np.array([2.0]))
    assert val == pytest.approx(ref)
    with pytest.raises(TypeError):
        pif(12345, belief, H, R, np.array([0.0]), np.array([1.0]))
