import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optlab.errors import DivergedError, UnsupportedPresetError
from optlab.optim import (
    MethodKind,
    OptimizerSpec,
    adam_recurrence_deviation,
    framework_preset,
    init_state,
    preconditioner_diag,
    reference_adam_run,
    self_corrected_accumulator_log10_scale,
    step,
    table1_coefficients,
)


def make_spec(method, alpha=0.1, **kw):
    return OptimizerSpec(method=MethodKind(method), alpha=alpha, **kw)


def run_steps(spec, w0, grad, iters):
    state = init_state(spec, np.asarray(w0, dtype=float))
    out = [state.w.copy()]
    for _ in range(iters):
        state = step(state, spec, grad)
        out.append(state.w.copy())
    return out, state


# ---------------------------------------------------------------------------
# init / coefficients
# ---------------------------------------------------------------------------


def test_init_state_defaults():
    spec = make_spec("adagrad", epsilon=0.0)
    state = init_state(spec, np.zeros(3))
    np.testing.assert_array_equal(state.g_accum, [0.0, 0.0, 0.0])
    assert state.k == 0
    np.testing.assert_array_equal(state.w, state.w_prev)


def test_init_state_accumulator_mean():
    spec = make_spec("adagrad", g_init=0.1)
    state = init_state(spec, np.zeros(3))
    np.testing.assert_array_equal(state.g_accum, [0.1, 0.1, 0.1])


def test_init_state_copies_w0():
    spec = make_spec("sgd")
    w0 = np.array([1.0, 2.0])
    state = init_state(spec, w0)
    np.testing.assert_array_equal(state.w, [1.0, 2.0])
    w0[0] = 9.0
    assert state.w[0] == 1.0


def test_coefficients_reject_k0():
    with pytest.raises(ValueError):
        table1_coefficients(make_spec("sgd"), 0)


def test_adam_coefficients_at_k1():
    c = table1_coefficients(make_spec("adam", alpha=0.3, beta1=0.9), 1)
    assert c.alpha_k == pytest.approx(0.3)
    assert c.beta_k == 0.0


def test_adam_coefficients_general_k():
    a, b1, b2 = 0.25, 0.9, 0.999
    c = table1_coefficients(make_spec("adam", alpha=a, beta1=b1, beta2=b2), 7)
    assert c.alpha_k == pytest.approx(a * (1 - b1) / (1 - b1**7), rel=1e-15)
    assert c.beta_k == pytest.approx(b1 * (1 - b1**6) / (1 - b1**7), rel=1e-15)
    assert c.g_keep == pytest.approx(b2 / (1 - b2**7), rel=1e-15)
    assert c.g_new == pytest.approx((1 - b2) / (1 - b2**7), rel=1e-15)


def test_nag_gamma_equals_beta():
    c = table1_coefficients(make_spec("nag", beta=0.7), 5)
    assert c.gamma_k == c.beta_k == 0.7


def test_adagrad_accumulates_everything():
    c = table1_coefficients(make_spec("adagrad"), 3)
    assert (c.g_keep, c.g_new) == (1.0, 1.0)


def test_sgd_has_no_momentum_terms():
    c = table1_coefficients(make_spec("sgd"), 2)
    assert c.beta_k == 0.0 and c.gamma_k == 0.0


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def test_sgd_step_direct_substitution():
    _, state = run_steps(make_spec("sgd", alpha=0.1), [0.0, 0.0],
                         lambda w: np.array([1.0, -2.0]), 1)
    np.testing.assert_allclose(state.w, [-0.1, 0.2], rtol=0, atol=0)


def test_adaptive_first_step_is_signed(subtests=None):
    g = np.array([3.0, -0.5, 7.0])
    for method, scale in [
        ("adagrad", 1.0),
        ("adam", 1.0),
        ("rmsprop", 1.0 / np.sqrt(1.0 - 0.9)),
    ]:
        spec = make_spec(method, alpha=0.2, epsilon=0.0, g_init=0.0, beta2=0.9)
        _, state = run_steps(spec, np.zeros(3), lambda w: g, 1)
        np.testing.assert_allclose(state.w, -0.2 * scale * np.sign(g), rtol=1e-15)


def test_heavy_ball_two_steps_scalar_recurrence():
    # Independent scalar recurrence for v' = w - a*g(w) + b*(w - w_prev)
    # with g(w) = w, w0 = 1: w1 = 0.9, w2 = 0.9 - 0.09 + 0.9*(-0.1) = 0.72.
    a, b = 0.1, 0.9
    w_prev, w = 1.0, 1.0
    expected = []
    for _ in range(2):
        w, w_prev = w - a * w + b * (w - w_prev), w
        expected.append(w)
    np.testing.assert_allclose(expected, [0.9, 0.72], rtol=1e-15)
    traj, _ = run_steps(make_spec("hb", alpha=a, beta=b), [1.0], lambda w: w.copy(), 2)
    np.testing.assert_allclose([t[0] for t in traj[1:]], expected, rtol=1e-15)


def test_divergence_raises():
    spec = make_spec("sgd", alpha=1.0)
    with pytest.raises(DivergedError):
        run_steps(spec, [1.0], lambda w: np.array([np.inf]), 1)


def test_zero_gradient_coordinate_coasts_without_error():
    # epsilon = 0 and a never-touched coordinate: no division error, no drift.
    spec = make_spec("adagrad", alpha=0.5, epsilon=0.0, g_init=0.0)
    g = np.array([1.0, 0.0])
    traj, state = run_steps(spec, np.zeros(2), lambda w: g, 5)
    assert all(t[1] == 0.0 for t in traj)
    assert state.g_accum[1] == 0.0


# ---------------------------------------------------------------------------
# multi-step agreement with textbook updates
# ---------------------------------------------------------------------------


def quadratic_problem(seed, dim=10):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    b = rng.standard_normal(dim)
    return lambda w: 2.0 * A.T @ (A @ w - b), rng.standard_normal(dim)


def textbook_run(method, spec, w0, grad, iters):
    w = w0.copy()
    w_prev = w.copy()
    G = np.zeros_like(w)
    out = []
    for _ in range(iters):
        if method == "sgd":
            w, w_prev = w - spec.alpha * grad(w), w
        elif method == "hb":
            w, w_prev = w - spec.alpha * grad(w) + spec.beta * (w - w_prev), w
        elif method == "nag":
            g = grad(w + spec.beta * (w - w_prev))
            w, w_prev = w - spec.alpha * g + spec.beta * (w - w_prev), w
        elif method == "adagrad":
            g = grad(w)
            G = G + g * g
            w, w_prev = w - spec.alpha * g / (np.sqrt(G) + spec.epsilon), w
        out.append(w.copy())
    return out


@pytest.mark.parametrize("method", ["sgd", "hb", "nag", "adagrad"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_engine_matches_textbook_updates(method, seed):
    grad, w0 = quadratic_problem(seed)
    spec = make_spec(method, alpha=0.05, beta=0.9, epsilon=1e-8)
    ours, _ = run_steps(spec, w0, grad, 10)
    ref = textbook_run(method, spec, w0, grad, 10)
    for mine, theirs in zip(ours[1:], ref):
        np.testing.assert_allclose(mine, theirs, rtol=1e-12, atol=1e-14)


def test_engine_adam_matches_reference_adam():
    grad, w0 = quadratic_problem(5)
    spec = make_spec("adam", alpha=0.05, beta1=0.9, beta2=0.999, epsilon=1e-8)
    gap = adam_recurrence_deviation(spec, w0, grad, 50)
    print(f"adam unified-vs-reference max relative gap over 50 steps: {gap:.3e}")
    assert gap < 1e-10


def test_reference_adam_shapes():
    grad, w0 = quadratic_problem(6)
    spec = make_spec("adam", alpha=0.05)
    traj = reference_adam_run(spec, w0, grad, 3)
    assert len(traj) == 4 and traj[0].shape == w0.shape


def test_self_corrected_recurrence_overflows_float64():
    # The self-referential corrected accumulator would overflow well before
    # 500 steps at beta2 = 0.999; this pins why the raw sum is stored.
    assert self_corrected_accumulator_log10_scale(0.999, 500) > 308.0


def test_alpha_override_changes_only_this_step():
    grad = lambda w: np.ones_like(w)
    spec = make_spec("sgd", alpha=0.1)
    state = init_state(spec, np.zeros(2))
    state = step(state, spec, grad, alpha_override=0.5)
    np.testing.assert_allclose(state.w, [-0.5, -0.5])
    state = step(state, spec, grad)
    np.testing.assert_allclose(state.w, [-0.6, -0.6])


# ---------------------------------------------------------------------------
# preconditioner
# ---------------------------------------------------------------------------


def test_preconditioner_identity_for_sgd_family():
    for method in ["sgd", "hb", "nag"]:
        spec = make_spec(method)
        state = init_state(spec, np.zeros(4))
        np.testing.assert_array_equal(preconditioner_diag(state, spec), np.ones(4))


def test_preconditioner_after_one_gradient():
    g = np.array([3.0, 4.0])
    for method, kw in [("adagrad", {}), ("adam", {"beta2": 0.99})]:
        spec = make_spec(method, epsilon=0.0, g_init=0.0, **kw)
        _, state = run_steps(spec, np.zeros(2), lambda w: g, 1)
        np.testing.assert_allclose(preconditioner_diag(state, spec), [3.0, 4.0],
                                   rtol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), iters=st.integers(1, 8))
def test_adagrad_accumulator_monotone(seed, iters):
    rng = np.random.default_rng(seed)
    grads = rng.standard_normal((iters, 5))
    spec = make_spec("adagrad", alpha=0.1, epsilon=1e-8)
    state = init_state(spec, np.zeros(5))
    prev = state.g_accum.copy()
    for k in range(iters):
        state = step(state, spec, lambda w, k=k: grads[k])
        assert np.all(state.g_accum >= prev)
        prev = state.g_accum.copy()


def test_trajectories_are_bitwise_deterministic():
    grad, w0 = quadratic_problem(9)
    spec = make_spec("adam", alpha=0.03)
    a, _ = run_steps(spec, w0, grad, 20)
    b, _ = run_steps(spec, w0, grad, 20)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


# ---------------------------------------------------------------------------
# validation / presets
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        make_spec("sgd", alpha=0.0)
    with pytest.raises(ValueError):
        make_spec("sgd", alpha=1.0, beta=1.0)
    with pytest.raises(ValueError):
        make_spec("adam", alpha=1.0, beta2=-0.1)
    with pytest.raises(ValueError):
        make_spec("adam", alpha=1.0, epsilon=-1e-9)


def test_framework_presets():
    spec = framework_preset("torch", MethodKind.RMSPROP)
    assert spec.beta2 == 0.99 and spec.epsilon == 1e-8
    spec = framework_preset("tensorflow", MethodKind.ADAGRAD)
    assert spec.g_init == 0.1 and spec.epsilon == 0.0
    spec = framework_preset("dynet", MethodKind.HB)
    assert spec.beta == 0.9
    spec = framework_preset("tensorflow", MethodKind.RMSPROP)
    assert spec.beta2 == 0.9 and spec.g_init == 1.0
    spec = framework_preset("dynet", MethodKind.ADAGRAD)
    assert spec.epsilon == 1e-20


def test_rmsprop_unavailable_in_dynet():
    with pytest.raises(UnsupportedPresetError):
        framework_preset("dynet", MethodKind.RMSPROP)


def test_unknown_framework_rejected():
    with pytest.raises(ValueError):
        framework_preset("jax", MethodKind.ADAM)


def test_method_parse():
    assert MethodKind.parse(" Adam ") is MethodKind.ADAM
    with pytest.raises(ValueError):
        MethodKind.parse("adamw")
