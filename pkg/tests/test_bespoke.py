import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowbox import diffcore as dc
from flowbox.bespoke import (
    BespokeConfig,
    BespokeParams,
    bespoke_loss,
    bespoke_sample,
    bespoke_step,
    end_state_rmse,
    generate_gt,
    interp_checkpoints,
    time_reparam,
    train_bespoke,
)
from flowbox.odesolve import DerivativeField, SolverConfig, fixed_step, guided_field, integrate, integrate_fixed

A = np.array([[-0.5, 1.0], [-1.0, -0.5]])


def lin(x, t):
    return dc.as_tensor(x) @ A.T


def curved(x, t):
    # t-dependent nonlinear field, differentiable in x and t
    x = dc.as_tensor(x)
    return dc.tanh(x @ A.T) * 2.0 + dc.sin(dc.as_tensor(t) * 3.0) * 1.5 - x * 0.5


@pytest.fixture(scope="module")
def gt_curved():
    x0 = np.random.default_rng(0).normal(size=(64, 2))
    return generate_gt(lambda idx: curved, x0, N=200)


def test_identity_reparam_on_knots():
    r = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(time_reparam(np.zeros(4), r), r)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
@settings(max_examples=40, deadline=None)
def test_reparam_pinned_and_monotone(theta):
    g = np.linspace(0, 1, 100)
    t = time_reparam(np.array(theta), g)
    assert t[0] == 0.0 and t[-1] == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.diff(t) > 0)


def test_parameter_count():
    assert BespokeParams.identity(4).num_parameters == 9


@pytest.mark.parametrize("method", ["euler", "midpoint", "rk4"])
def test_identity_params_reproduce_base_solver_bitwise(method):
    x0 = np.random.default_rng(1).normal(size=(16, 2))
    f = lambda x, t: np.tanh(x @ A.T) + t  # noqa: E731
    xb, nfe, _ = bespoke_sample(BespokeParams.identity(4), f, x0, method)
    xr, tr = integrate_fixed(f, x0, SolverConfig(method, 0.25))
    assert np.abs(xb - xr).max() == 0.0
    assert nfe == tr.nfe


def test_constant_log_scale_cancels_for_linear_field():
    x = np.random.default_rng(2).normal(size=(5, 2))
    base = BespokeParams(4, theta_r=np.array([0.3, -0.2, 0.1, 0.0]))
    shifted = BespokeParams(4, theta_r=base.theta_r.data, theta_s=np.full(5, 0.7))
    with dc.no_grad():
        _, a = bespoke_step(base, 2, lin, x)
        _, b = bespoke_step(shifted, 2, lin, x)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-13, atol=1e-13)


def test_step_nfe_matches_base():
    p = BespokeParams(4, np.array([0.5, 0.0, -0.5, 1.0]), np.array([0.1, 0.2, 0.0, -0.1, 0.3]))
    fld = DerivativeField(lambda x, t: dc.tanh(x))
    bespoke_step(p, 1, fld, np.ones((3, 2)), "rk4")
    assert fld.nfe == 4


def test_four_step_nfe_with_and_without_guidance():
    f = lambda x, t: -x  # noqa: E731
    _, nfe, calls = bespoke_sample(BespokeParams.identity(4), f, np.ones((2, 2)))
    assert (nfe, calls) == (8, 8)
    _, nfe, calls = bespoke_sample(BespokeParams.identity(4), guided_field(f, f, 0.7), np.ones((2, 2)))
    assert (nfe, calls) == (8, 16)


def test_gt_contract(gt_curved):
    assert gt_curved.checkpoints.shape == (64, 201, 2)
    np.testing.assert_array_equal(gt_curved.checkpoints[:, 0], gt_curved.x0)
    direct, _ = integrate(curved_np, gt_curved.x0, SolverConfig("dopri5"), record=False)
    assert np.abs(direct - gt_curved.checkpoints[:, -1]).max() < 1e-4


def curved_np(x, t):
    return curved(x, t).data


def test_interp_hits_checkpoints_and_rejects_out_of_range(gt_curved):
    k = 37
    np.testing.assert_allclose(interp_checkpoints(gt_curved, k / 200).data, gt_curved.checkpoints[:, k], atol=1e-12)
    with pytest.raises(ValueError, match="outside"):
        interp_checkpoints(gt_curved, 1.2)


def test_loss_zero_for_constant_field():
    c = np.array([0.4, -0.3])
    f = lambda x, t: dc.as_tensor(x) * 0.0 + c  # noqa: E731
    x0 = np.random.default_rng(3).normal(size=(8, 2))
    gt = generate_gt(lambda idx: f, x0, N=20)
    assert float(bespoke_loss(BespokeParams.identity(4), gt, f).data) < 1e-12


def test_loss_gradient_matches_finite_differences(gt_curved):
    p = BespokeParams(4, np.array([0.3, -0.4, 0.2, 0.1]), np.array([0.05, -0.1, 0.2, 0.0, -0.05]))
    err = dc.finite_diff_check(lambda: bespoke_loss(p, gt_curved, curved), p.parameters(), eps=1e-3)
    assert err < 1e-4


def test_training_reduces_loss_and_rmse(gt_curved):
    cfg = BespokeConfig(iters=80, batch=64, lr=5e-2)
    ident = BespokeParams.identity(4)
    params, curve = train_bespoke(curved, gt_curved, cfg)
    assert curve[-1] < curve[0]
    x_id, _, _ = bespoke_sample(ident, curved, gt_curved.x0)
    x_tr, _, _ = bespoke_sample(params, curved, gt_curved.x0)
    assert end_state_rmse(x_tr, gt_curved) <= end_state_rmse(x_id, gt_curved)


def test_state_roundtrip():
    p = BespokeParams(3, np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0, 4.0]))
    q = BespokeParams.from_state(p.state_dict())
    assert q.n == 3 and np.array_equal(q.theta_s.data, p.theta_s.data)


def test_invalid_params():
    with pytest.raises(ValueError):
        BespokeParams(2, theta_r=np.zeros(3))
    with pytest.raises(ValueError):
        bespoke_step(BespokeParams.identity(2), 1, lin, np.ones((1, 2)), "dopri5")


def test_fixed_step_accepts_tensors():
    x = dc.Parameter(np.ones((2, 2)), name="x")
    y = fixed_step("midpoint", lin, 0.0, x, 0.1)
    dc.backprop(y.sum(), [x])
    assert np.all(np.isfinite(x.grad))
