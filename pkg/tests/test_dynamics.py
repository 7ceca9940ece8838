import numpy as np
import pytest

from mmdquant import (
    EmpiricalTarget,
    FlowState,
    KernelSpec,
    NonFiniteState,
    build_moment_cache,
    euler_step,
    kernel_eval,
    kernel_grad2,
    simulate,
    v0,
    wfr_rhs,
)
from mmdquant.dynamics import read_trace_csv, read_state_csv, write_state_csv, write_trace_csv
from mmdquant.embedding import grad_v0
from mmdquant.presets import preset
from mmdquant.targets import sample

from conftest import ALL_SPECS, make_rng, random_target


def oracle_rhs(state, target, spec, alpha):
    """Double-loop transcription of the coupled particle system."""
    y, w = state.positions, state.weights
    m, d = y.shape
    d_pos = np.zeros((m, d))
    d_w = np.zeros(m)
    for i in range(m):
        interaction = np.zeros(d)
        reaction = 0.0
        for k in range(m):
            interaction += w[k] * kernel_grad2(spec, y[k], y[i])
            reaction += w[k] * kernel_eval(spec, y[k], y[i])
        d_pos[i] = -alpha * (interaction - grad_v0(target, spec, y[i]))
        d_w[i] = -w[i] * (reaction - v0(target, spec, y[i]))
    return d_pos, d_w


def test_rhs_stationary_single_atom():
    spec = KernelSpec("se", 1.0)
    target = EmpiricalTarget(np.array([[0.5, -0.5]]))
    state = FlowState(np.array([[0.5, -0.5]]), np.array([1.0]))
    d_pos, d_w = wfr_rhs(state, target, spec, alpha=25.0)
    assert np.allclose(d_pos, 0.0, atol=1e-14)
    assert np.allclose(d_w, 0.0, atol=1e-14)


def test_rhs_reaction_hand_example():
    # single atom at the only sample with weight 0.5: dw = -0.5 (0.5 - 1) = 0.25
    spec = KernelSpec("se", 1.0)
    target = EmpiricalTarget(np.array([[0.0]]))
    state = FlowState(np.array([[0.0]]), np.array([0.5]))
    _, d_w = wfr_rhs(state, target, spec, alpha=1.0)
    assert d_w[0] == pytest.approx(0.25, rel=1e-14)


def test_rhs_matches_double_loop_oracle():
    rng = make_rng(70)
    for spec in ALL_SPECS:
        target = random_target(rng, n=20, d=2)
        state = FlowState(rng.normal(size=(4, 2)), rng.uniform(0.1, 0.4, size=4))
        d_pos, d_w = wfr_rhs(state, target, spec, alpha=3.0)
        o_pos, o_w = oracle_rhs(state, target, spec, alpha=3.0)
        assert np.all(np.abs(d_pos - o_pos) <= 1e-13 * (1 + np.abs(o_pos)))
        assert np.all(np.abs(d_w - o_w) <= 1e-13 * (1 + np.abs(o_w)))


def test_rhs_transport_scales_exactly_with_alpha():
    rng = make_rng(71)
    spec = KernelSpec("se", 1.0)
    target = random_target(rng, n=15, d=2)
    state = FlowState(rng.normal(size=(3, 2)), rng.uniform(0.1, 0.5, size=3))
    d1, w1 = wfr_rhs(state, target, spec, alpha=0.7)
    d2, w2 = wfr_rhs(state, target, spec, alpha=1.4)
    assert np.array_equal(d2, 2.0 * d1)  # doubling alpha is exact in floating point
    assert np.array_equal(w1, w2)  # reaction term independent of alpha


def test_euler_step_identity_and_hand_example():
    spec = KernelSpec("se", 1.0)
    target = EmpiricalTarget(np.array([[0.5, -0.5]]))
    stationary = FlowState(np.array([[0.5, -0.5]]), np.array([1.0]))
    stepped = euler_step(stationary, target, spec, alpha=25.0, eta=0.1)
    assert np.allclose(stepped.positions, stationary.positions, atol=1e-14)
    assert np.allclose(stepped.weights, stationary.weights, atol=1e-14)
    assert stepped.time == pytest.approx(0.1)

    t1 = EmpiricalTarget(np.array([[0.0]]))
    s1 = FlowState(np.array([[0.0]]), np.array([0.5]))
    out = euler_step(s1, t1, spec, alpha=1.0, eta=0.2)
    assert out.weights[0] == pytest.approx(0.5 + 0.2 * 0.25, rel=1e-14)


def test_euler_step_matches_handrolled_reference():
    # independent transcription of the discretized update on 3 particles
    rng = make_rng(72)
    spec = KernelSpec("se", 1.2)
    target = random_target(rng, n=12, d=2)
    y = rng.normal(size=(3, 2))
    w = rng.uniform(0.2, 0.4, size=3)
    alpha, eta = 2.0, 0.05

    y_ref = np.empty_like(y)
    w_ref = np.empty_like(w)
    for i in range(3):
        pos_term = np.zeros(2)
        wt_term = 0.0
        for k in range(3):
            pos_term += w[k] * kernel_grad2(spec, y[k], y[i])
            wt_term += w[k] * kernel_eval(spec, y[k], y[i])
        y_ref[i] = y[i] - eta * alpha * (pos_term - grad_v0(target, spec, y[i]))
        w_ref[i] = w[i] - eta * w[i] * (wt_term - v0(target, spec, y[i]))

    out = euler_step(FlowState(y, w), target, spec, alpha=alpha, eta=eta)
    assert np.all(np.abs(out.positions - y_ref) <= 1e-13 * (1 + np.abs(y_ref)))
    assert np.all(np.abs(out.weights - w_ref) <= 1e-13 * (1 + np.abs(w_ref)))


def test_simulate_stationary_state_constant_records():
    spec = KernelSpec("se", 1.0)
    target = EmpiricalTarget(np.array([[0.5, -0.5]]))
    cache = build_moment_cache(target, spec)
    state = FlowState(np.array([[0.5, -0.5]]), np.array([1.0]))
    trace = simulate(
        state, target, spec, alpha=25.0, solver="rk23", max_time=1.0, cache=cache
    )
    mmds = trace.mmd_series()
    assert np.allclose(mmds, mmds[0], atol=1e-12)
    assert np.all(np.diff(trace.iterations()) > 0)


def test_simulate_requires_horizon_and_step():
    spec = KernelSpec("se", 1.0)
    target = EmpiricalTarget(np.array([[0.0]]))
    state = FlowState(np.array([[0.0]]), np.array([0.5]))
    with pytest.raises(ValueError, match="max_iterations"):
        simulate(state, target, spec, solver="rk23")
    with pytest.raises(ValueError, match="step"):
        simulate(state, target, spec, solver="euler", max_iterations=10)
    with pytest.raises(ValueError, match="solver"):
        simulate(state, target, spec, solver="heun", max_iterations=10)


def test_simulate_descent_on_gmm2():
    spec = KernelSpec("se", 5.0)
    target = sample(preset("gmm2", n_samples=1000, seed=3))
    cache = build_moment_cache(target, spec)
    rng = make_rng(73)
    y0 = target.samples[rng.choice(1000, size=3, replace=False)] + rng.normal(
        0, 0.5, (3, 2)
    )
    state = FlowState(y0, np.full(3, 1.0 / 3.0))
    trace = simulate(
        state,
        target,
        spec,
        alpha=25.0,
        solver="rk23",
        max_time=40.0,
        max_iterations=4000,
        cache=cache,
    )
    mmds = trace.mmd_series()
    assert np.all(np.diff(mmds) <= 1e-8)
    assert sum(trace.extras["descent_violation"]) == 0
    # weights stay in the open unit interval up to discretization slack
    mins = np.array([r.min_weight for r in trace.records])
    maxs = np.array([r.max_weight for r in trace.records])
    assert mins.min() > -1e-9 and maxs.max() < 1 + 1e-9


def test_euler_and_rk4_agree_on_short_horizon():
    rng = make_rng(74)
    spec = KernelSpec("se", 1.0)
    target = random_target(rng, n=25, d=2)
    cache = build_moment_cache(target, spec)
    y0 = rng.normal(size=(2, 2))
    w0 = np.array([0.4, 0.6])

    fine = simulate(
        FlowState(y0.copy(), w0.copy()),
        target,
        spec,
        alpha=5.0,
        solver="euler",
        step=1e-4,
        max_time=0.1,
        max_iterations=10_000,
        cache=cache,
        record_every=100,
    )
    rk4 = simulate(
        FlowState(y0.copy(), w0.copy()),
        target,
        spec,
        alpha=5.0,
        solver="rk4",
        step=0.01,
        max_time=0.1,
        max_iterations=10_000,
        cache=cache,
        record_every=10,
    )
    assert fine.final_state.time == pytest.approx(0.1, rel=1e-9)
    assert rk4.final_state.time == pytest.approx(0.1, rel=1e-9)
    assert np.allclose(fine.final_state.positions, rk4.final_state.positions, atol=1e-3)
    assert np.allclose(fine.final_state.weights, rk4.final_state.weights, atol=1e-3)


def test_rk4_budget_counts_rhs_evaluations():
    rng = make_rng(75)
    spec = KernelSpec("se", 1.0)
    target = random_target(rng, n=10, d=2)
    cache = build_moment_cache(target, spec)
    state = FlowState(rng.normal(size=(2, 2)), np.array([0.5, 0.5]))
    trace = simulate(
        state, target, spec, solver="rk4", step=0.01, max_iterations=40, cache=cache
    )
    # 40 evaluations at 4 per step -> 10 steps
    assert trace.records[-1].iteration == 40
    assert trace.final_state.time == pytest.approx(0.1, rel=1e-12)


def test_euler_empirical_convergence_order():
    rng = make_rng(76)
    spec = KernelSpec("se", 1.0)
    target = random_target(rng, n=15, d=1)
    cache = build_moment_cache(target, spec)
    y0 = rng.normal(size=(2, 1))
    w0 = np.array([0.3, 0.5])
    horizon = 0.5

    def final_at(step):
        tr = simulate(
            FlowState(y0.copy(), w0.copy()),
            target,
            spec,
            alpha=2.0,
            solver="euler",
            step=step,
            max_time=horizon,
            max_iterations=10**7,
            cache=cache,
            record_every=10**6,
        )
        return np.concatenate(
            [tr.final_state.positions.ravel(), tr.final_state.weights]
        )

    reference = final_at(1e-5)
    err_h = np.linalg.norm(final_at(0.02) - reference)
    err_h2 = np.linalg.norm(final_at(0.01) - reference)
    order = np.log2(err_h / err_h2)
    assert order >= 0.9


def test_nonfinite_state_reported():
    # a huge Euler step on a reactive weight blows up in finite time
    spec = KernelSpec("se", 1.0)
    target = EmpiricalTarget(np.array([[0.0]]))
    state = FlowState(np.array([[50.0]]), np.array([500.0]))
    with pytest.raises(NonFiniteState, match="smaller step"), np.errstate(
        over="ignore", invalid="ignore"
    ):
        simulate(
            state,
            target,
            spec,
            alpha=1.0,
            solver="euler",
            step=50.0,
            max_iterations=500,
        )


def test_adaptive_step_underflow_reported():
    # explosive weights keep the error estimate unacceptable at any step
    from mmdquant import StepUnderflow

    spec = KernelSpec("se", 1.0)
    target = EmpiricalTarget(np.array([[0.0]]))
    state = FlowState(np.array([[0.0]]), np.array([1e150]))
    with pytest.raises(StepUnderflow, match="underflow"), np.errstate(
        over="ignore", invalid="ignore"
    ):
        simulate(state, target, spec, alpha=1.0, solver="rk23", max_time=1.0)


def test_trace_csv_roundtrip(tmp_path):
    rng = make_rng(77)
    spec = KernelSpec("se", 1.0)
    target = random_target(rng, n=10, d=2)
    state = FlowState(rng.normal(size=(2, 2)), np.array([0.5, 0.5]))
    trace = simulate(state, target, spec, solver="euler", step=0.01, max_iterations=5)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path)
    assert [r.iteration for r in back.records] == [r.iteration for r in trace.records]
    assert np.array_equal(back.mmd_series(), trace.mmd_series())
    assert back.extras["descent_violation"] == [float(v) for v in trace.extras["descent_violation"]]

    spath = tmp_path / "state.csv"
    write_state_csv(trace.final_state, spath)
    sback = read_state_csv(spath)
    assert np.array_equal(sback.positions, trace.final_state.positions)
    assert np.array_equal(sback.weights, trace.final_state.weights)
    header = spath.read_text().splitlines()[0]
    assert header == "weight,coord_1,coord_2"
