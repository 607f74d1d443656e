"""Tests for subspace, coupled-block, and diagonal-plus-low-rank filters."""

import numpy as np
import pytest

import reference
from bayesfilt.filters import ekf_step, kf_update_precision
from bayesfilt.gauss import GaussianBelief, PrecisionBelief
from bayesfilt.models import (
    MeasurementModel,
    MlpSpec,
    TransitionModel,
    adam_train,
    fixed_matrix_gaussian_model,
    linear_gaussian_model,
    mlp_model,
)
from bayesfilt.scalable import (
    BlockBelief,
    DlrPrecisionBelief,
    SubspaceMap,
    build_subspace,
    lofi_predict,
    lofi_update,
    pulse_step,
    subspace_ekf_step,
)

STATIC = TransitionModel(Q=0.0)


# ---------------------------------------------------------------------------
# Subspace construction


def test_build_subspace_requires_enough_iterates():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="at least"):
        build_subspace(rng.normal(size=(2, 6)), np.zeros(6), d=3)


def test_build_subspace_rejects_rank_deficiency():
    iterates = np.tile(np.array([1.0, 2.0, 3.0]), (5, 1))
    with pytest.raises(ValueError, match="rank-deficient"):
        build_subspace(iterates, np.zeros(3), d=2)
    # a single direction is still fine at d=1
    smap = build_subspace(iterates, np.zeros(3), d=1)
    assert smap.subspace_dim == 1


def test_build_subspace_recovers_known_span():
    rng = np.random.default_rng(1)
    basis, _ = np.linalg.qr(rng.normal(size=(12, 3)))
    iterates = rng.normal(size=(20, 3)) @ basis.T
    smap = build_subspace(iterates, np.zeros(12), d=3)
    resid = iterates - iterates @ smap.A @ smap.A.T
    assert np.max(np.abs(resid)) <= 1e-8


def test_build_subspace_orthonormal_and_deterministic():
    rng = np.random.default_rng(2)
    iterates = rng.normal(size=(4, 7))
    theta_final = rng.normal(size=7)
    smap = build_subspace(iterates, theta_final, d=4)
    np.testing.assert_allclose(smap.A.T @ smap.A, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(smap.theta_star, theta_final)
    again = build_subspace(iterates, theta_final, d=4)
    np.testing.assert_array_equal(smap.A, again.A)
    # sign convention: each column's largest-magnitude entry is positive
    for j in range(4):
        col = smap.A[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_subspace_map_validation():
    with pytest.raises(ValueError, match="orthonormal"):
        SubspaceMap(A=np.ones((3, 2)), theta_star=np.zeros(3))
    with pytest.raises(ValueError, match="offset"):
        SubspaceMap(A=np.eye(3)[:, :2], theta_star=np.zeros(4))


# ---------------------------------------------------------------------------
# Subspace EKF


def test_subspace_identity_embedding_matches_full_ekf():
    rng = np.random.default_rng(3)
    dim = 4
    smap = SubspaceMap(A=np.eye(dim), theta_star=np.zeros(dim))
    belief = GaussianBelief(rng.normal(size=dim), reference.random_spd(rng, dim))
    model = linear_gaussian_model(R=0.3)
    sub = belief
    full = belief
    for _ in range(5):
        x = rng.normal(size=dim)
        y = np.array([rng.normal()])
        sub = subspace_ekf_step(sub, smap, STATIC, model, x, y)
        full, _ = ekf_step(full, STATIC, model, x, y)
        np.testing.assert_allclose(sub.mean, full.mean, atol=1e-8)
        np.testing.assert_allclose(sub.cov, full.cov, atol=1e-8)


def test_subspace_orthogonal_direction_is_noop():
    # observations depend only on the first coordinate; a subspace spanning
    # the second gets zero effective Jacobian
    smap = SubspaceMap(A=np.array([[0.0], [1.0]]), theta_star=np.zeros(2))
    belief = GaussianBelief(np.array([0.7]), np.array([[2.0]]))
    model = fixed_matrix_gaussian_model(np.array([[1.0, 0.0]]), R=0.5)
    out = subspace_ekf_step(belief, smap, STATIC, model, None, np.array([3.0]))
    np.testing.assert_allclose(out.mean, belief.mean)
    np.testing.assert_allclose(out.cov, belief.cov)


def test_subspace_mlp_tracks_full_ekf_accuracy():
    # low-dimensional filtering of an overparameterized network should stay
    # within a factor of two of the full filter on held-out squared error
    spec = MlpSpec(sizes=(1, 6, 6, 1))
    noise = 0.3

    def target(x):
        return 0.4 * x + np.cos(2.0 * x)

    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(7000 + seed)
        model = mlp_model(spec, family="gaussian", R=noise**2)
        x_warm = rng.uniform(-3, 3, size=150)
        y_warm = target(x_warm) + noise * rng.normal(size=150)
        result = adam_train(
            spec,
            model,
            x_warm[:, None],
            y_warm[:, None],
            epochs=40,
            batch_size=16,
            lr=0.05,
            skip=10,
            rng=rng,
        )
        smap = build_subspace(result.iterates, result.theta_final, d=10)
        sub = GaussianBelief(np.zeros(10), np.eye(10))
        full = GaussianBelief(result.theta_final, 0.5 * np.eye(spec.n_params))
        errs_sub, errs_full = [], []
        for _ in range(250):
            x = rng.uniform(-3, 3)
            y_clean = target(x)
            y = np.array([y_clean + noise * rng.normal()])
            pred_sub = model.mean_fn(smap.to_ambient(sub.mean), x)[0]
            pred_full = model.mean_fn(full.mean, x)[0]
            errs_sub.append((pred_sub - y_clean) ** 2)
            errs_full.append((pred_full - y_clean) ** 2)
            sub = subspace_ekf_step(sub, smap, STATIC, model, x, y)
            full, _ = ekf_step(full, STATIC, model, x, y)
        rmedse_sub = np.sqrt(np.median(errs_sub))
        rmedse_full = np.sqrt(np.median(errs_full))
        ratios.append(rmedse_sub / rmedse_full)
    assert np.mean(ratios) <= 2.0


# ---------------------------------------------------------------------------
# PULSE


def _hidden_only_model(M1, R):
    return MeasurementModel(
        family="gaussian",
        predictor=lambda theta, x: M1 @ theta[: M1.shape[1]],
        predictor_jac=lambda theta, x: np.concatenate(
            [M1, np.zeros((M1.shape[0], theta.shape[0] - M1.shape[1]))], axis=1
        ),
        R=R,
    )


def _last_only_model(M2, split, R):
    return MeasurementModel(
        family="gaussian",
        predictor=lambda theta, x: M2 @ theta[split:],
        predictor_jac=lambda theta, x: np.concatenate(
            [np.zeros((M2.shape[0], split)), M2], axis=1
        ),
        R=R,
    )


def _random_block_belief(rng, ambient_hidden, d_hidden, d_last):
    basis, _ = np.linalg.qr(rng.normal(size=(ambient_hidden, d_hidden)))
    smap = SubspaceMap(A=basis, theta_star=rng.normal(size=ambient_hidden))
    hidden = GaussianBelief(
        rng.normal(size=d_hidden), reference.random_spd(rng, d_hidden)
    )
    last = GaussianBelief(rng.normal(size=d_last), reference.random_spd(rng, d_last))
    return BlockBelief(hidden=hidden, last=last, smap=smap)


def test_block_belief_validation():
    rng = np.random.default_rng(4)
    basis, _ = np.linalg.qr(rng.normal(size=(5, 2)))
    smap = SubspaceMap(A=basis, theta_star=np.zeros(5))
    with pytest.raises(ValueError, match="hidden block"):
        BlockBelief(
            hidden=GaussianBelief(np.zeros(3), np.eye(3)),
            last=GaussianBelief(np.zeros(2), np.eye(2)),
            smap=smap,
        )


def test_pulse_insensitive_last_layer_decouples():
    rng = np.random.default_rng(5)
    bb = _random_block_belief(rng, ambient_hidden=4, d_hidden=2, d_last=3)
    M1 = rng.normal(size=(2, 4))
    R = reference.random_spd(rng, 2)
    model = _hidden_only_model(M1, R)
    y = rng.normal(size=2)
    out = pulse_step(bb, model, None, y)
    np.testing.assert_allclose(out.last.mean, bb.last.mean)
    np.testing.assert_allclose(out.last.cov, bb.last.cov, atol=1e-12)
    ref = subspace_ekf_step(bb.hidden, bb.smap, STATIC, model_hidden_ambient(M1, R), None, y)
    np.testing.assert_allclose(out.hidden.mean, ref.mean, atol=1e-8)
    np.testing.assert_allclose(out.hidden.cov, ref.cov, atol=1e-8)


def model_hidden_ambient(M1, R):
    """Same observation map but expressed on the hidden ambient slice only."""
    return fixed_matrix_gaussian_model(M1, R)


def test_pulse_insensitive_hidden_decouples():
    rng = np.random.default_rng(6)
    bb = _random_block_belief(rng, ambient_hidden=4, d_hidden=2, d_last=3)
    M2 = rng.normal(size=(2, 3))
    R = reference.random_spd(rng, 2)
    model = _last_only_model(M2, split=4, R=R)
    y = rng.normal(size=2)
    out = pulse_step(bb, model, None, y)
    np.testing.assert_allclose(out.hidden.mean, bb.hidden.mean)
    np.testing.assert_allclose(out.hidden.cov, bb.hidden.cov, atol=1e-12)
    from bayesfilt.filters import kf_update

    y_hat = M2 @ bb.last.mean
    ref, _ = kf_update(bb.last, M2, R, (y - y_hat) + M2 @ bb.last.mean)
    np.testing.assert_allclose(out.last.mean, ref.mean, atol=1e-8)
    np.testing.assert_allclose(out.last.cov, ref.cov, atol=1e-8)


def test_pulse_satisfies_fixed_point_equations():
    # plugging the returned means back into the implicit per-block equations
    # (under the linearized observation model) must be self-consistent
    rng = np.random.default_rng(7)
    ambient_hidden, d_hidden, d_last, o = 4, 3, 2, 2
    M1 = rng.normal(size=(o, ambient_hidden))
    M2 = rng.normal(size=(o, d_last))
    R = reference.random_spd(rng, o)

    def predictor(theta, x):
        return np.tanh(M1 @ theta[:ambient_hidden]) + M2 @ theta[ambient_hidden:]

    def predictor_jac(theta, x):
        pre = M1 @ theta[:ambient_hidden]
        left = (1.0 - np.tanh(pre) ** 2)[:, None] * M1
        return np.concatenate([left, M2], axis=1)

    model = MeasurementModel(
        family="gaussian", predictor=predictor, predictor_jac=predictor_jac, R=R
    )
    bb = _random_block_belief(rng, ambient_hidden, d_hidden, d_last)
    y = rng.normal(size=o)
    out = pulse_step(bb, model, None, y)

    theta_bar = bb.full_params()
    y_hat = predictor(theta_bar, None)
    jac = predictor_jac(theta_bar, None)
    Z = jac[:, :ambient_hidden] @ bb.smap.A
    W = jac[:, ambient_hidden:]
    dz = out.hidden.mean - bb.hidden.mean
    dw = out.last.mean - bb.last.mean
    linearized = y_hat + Z @ dz + W @ dw
    resid_hidden = dz - bb.hidden.cov @ Z.T @ np.linalg.solve(R, y - linearized)
    resid_last = dw - bb.last.cov @ W.T @ np.linalg.solve(R, y - linearized)
    assert np.max(np.abs(resid_hidden)) <= 1e-8
    assert np.max(np.abs(resid_last)) <= 1e-8


# ---------------------------------------------------------------------------
# LoFi


def test_lofi_predict_zero_noise_is_noop():
    rng = np.random.default_rng(8)
    belief = DlrPrecisionBelief(
        mean=rng.normal(size=5),
        ups=rng.uniform(0.5, 2.0, size=5),
        W=rng.normal(size=(5, 2)),
    )
    assert lofi_predict(belief, 0.0) is belief
    with pytest.raises(ValueError):
        lofi_predict(belief, -0.1)


def test_lofi_predict_zero_lowrank():
    belief = DlrPrecisionBelief(
        mean=np.zeros(4), ups=np.full(4, 2.0), W=np.zeros((4, 2))
    )
    out = lofi_predict(belief, q=0.5)
    np.testing.assert_allclose(out.ups, 1.0 / (0.5 + 0.5))
    np.testing.assert_allclose(out.W, 0.0)


def test_lofi_predict_matches_dense_inverse():
    rng = np.random.default_rng(9)
    belief = DlrPrecisionBelief(
        mean=rng.normal(size=8),
        ups=rng.uniform(0.5, 3.0, size=8),
        W=rng.normal(size=(8, 2)),
    )
    q = 0.37
    out = lofi_predict(belief, q)
    dense_cov = np.linalg.inv(belief.dense_precision())
    want = np.linalg.inv(dense_cov + q * np.eye(8))
    np.testing.assert_allclose(out.dense_precision(), want, atol=1e-8)
    np.testing.assert_allclose(out.mean, belief.mean)


def test_lofi_update_matches_dense_posterior_when_rank_suffices():
    rng = np.random.default_rng(10)
    dim = 6
    belief = DlrPrecisionBelief(
        mean=rng.normal(size=dim),
        ups=rng.uniform(0.5, 2.0, size=dim),
        W=np.zeros((dim, 3)),
    )
    x = rng.normal(size=dim)
    y = np.array([rng.normal()])
    model = linear_gaussian_model(R=0.4)
    out = lofi_update(belief, model, x, y)
    prior = PrecisionBelief(belief.mean, belief.dense_precision())
    ref = kf_update_precision(prior, x[None, :], np.array([[0.4]]), y)
    np.testing.assert_allclose(out.dense_precision(), ref.precision, atol=1e-8)
    np.testing.assert_allclose(out.mean, ref.mean, atol=1e-8)


def test_lofi_update_zero_jacobian_is_noop():
    belief = DlrPrecisionBelief(
        mean=np.zeros(3), ups=np.ones(3), W=np.zeros((3, 1))
    )
    model = fixed_matrix_gaussian_model(np.zeros((1, 3)), R=1.0)
    assert lofi_update(belief, model, None, np.array([5.0])) is belief


def test_lofi_truncation_preserves_precision_trace():
    rng = np.random.default_rng(11)
    dim = 6
    belief = DlrPrecisionBelief(
        mean=rng.normal(size=dim),
        ups=rng.uniform(0.5, 2.0, size=dim),
        W=rng.normal(size=(dim, 2)),
    )
    H = rng.normal(size=(2, dim))
    R = np.eye(2) * 0.3
    model = fixed_matrix_gaussian_model(H, R=R)
    y = rng.normal(size=2)
    pre_trace = np.trace(belief.dense_precision() + H.T @ np.linalg.solve(R, H))
    out = lofi_update(belief, model, None, y)
    assert out.rank == belief.rank
    assert np.trace(out.dense_precision()) == pytest.approx(pre_trace, abs=1e-8)


def test_lofi_full_rank_tracks_precision_filter():
    # with d = D no information is ever dropped, so the DLR recursion must
    # follow the dense precision-form filter over a long run
    rng = np.random.default_rng(12)
    dim = 5
    q = 0.01
    model = linear_gaussian_model(R=0.25)
    lofi = DlrPrecisionBelief(
        mean=np.zeros(dim), ups=np.full(dim, 1.0), W=np.zeros((dim, dim))
    )
    dense_mean = np.zeros(dim)
    dense_prec = np.eye(dim)
    theta = rng.normal(size=dim)
    for _ in range(50):
        x = rng.normal(size=dim)
        y = np.array([theta @ x + 0.5 * rng.normal()])
        lofi = lofi_update(lofi_predict(lofi, q), model, x, y)
        cov = np.linalg.inv(dense_prec) + q * np.eye(dim)
        dense_prec = np.linalg.inv(cov)
        ref = kf_update_precision(
            PrecisionBelief(dense_mean, dense_prec), x[None, :], np.array([[0.25]]), y
        )
        dense_mean, dense_prec = ref.mean, ref.precision
        assert np.max(np.abs(lofi.mean - dense_mean)) <= 1e-6
    np.testing.assert_allclose(lofi.dense_precision(), dense_prec, atol=1e-5)


def test_dlr_validation():
    with pytest.raises(ValueError):
        DlrPrecisionBelief(mean=np.zeros(3), ups=np.array([1.0, -1.0, 1.0]), W=np.zeros((3, 1)))
    with pytest.raises(ValueError):
        DlrPrecisionBelief(mean=np.zeros(3), ups=np.ones(2), W=np.zeros((3, 1)))
    with pytest.raises(ValueError):
        DlrPrecisionBelief(mean=np.zeros(3), ups=np.ones(3), W=np.zeros((2, 1)))
