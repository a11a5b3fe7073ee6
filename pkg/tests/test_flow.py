import numpy as np
import pytest

from krflow.constants import StabilityBudget
from krflow.errors import ConfigurationError, CoverageError, StiffnessError
from krflow.flow import (
    FlowConfig,
    FlowState,
    MetricFlow,
    MetricState,
    PotentialFlow,
    continuation_driver,
    convergence_detector,
    doubling_time_monitor,
    pinching_window_check,
    record,
    run_flow,
    step_metric_direct,
    step_potential,
)


def _setup(n=1, nodes=129, amplitude=0.05):
    cfg = FlowConfig(n=n, nodes=nodes, amplitude=amplitude)
    psi = cfg.initial_profile().psi
    return FlowState(0.0, psi), PotentialFlow(n, psi)


def _advance(state, flow, t, cfl=0.8):
    dt = flow.dt_cfl(state.psi, cfl)
    m = int(np.ceil((t - state.t) / dt))
    for _ in range(m):
        state = step_potential(state, (t - state.t) / m if m else 0.0, flow)
        m -= 1
    return state


@pytest.fixture(scope="module")
def perturbed_run():
    return run_flow(FlowConfig(n=1, nodes=129, amplitude=0.05, t_end=2.0, cadence=0.05, record_analysis=False))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FlowConfig(cfl=1.5)
    with pytest.raises(ConfigurationError):
        FlowConfig(dt_policy="fixed")
    with pytest.raises(ConfigurationError):
        FlowConfig(nodes=8)


def test_fs_is_a_fixed_point():
    state, flow = _setup(amplitude=0.0)
    for dt in (1e-5, 1e-4):
        new = step_potential(state, dt, flow)
        assert np.max(np.abs(new.psi)) < 1e-10


def test_step_decreases_energy():
    state, flow = _setup()
    dt = flow.dt_cfl(state.psi, 0.8)
    before = record(state, 1, flow, False)[0]
    after = record(step_potential(state, dt, flow), 1, flow, False)[0]
    assert after["E1"] <= before["E1"] + 1e-8
    assert after["E0"] <= before["E0"] + 1e-8


def test_rk4_step_doubling_order():
    state, flow = _setup(nodes=65)
    dt0 = 0.5 * flow.dt_cfl(state.psi, 0.8)
    diffs = []
    for dt in (dt0, dt0 / 2, dt0 / 4):
        one = flow.rk4(state.psi, dt)
        two = flow.rk4(flow.rk4(state.psi, dt / 2), dt / 2)
        diffs.append(np.max(np.abs(one - two)))
    orders = np.log2(np.array(diffs[:-1]) / np.array(diffs[1:]))
    assert np.all(orders >= 4.0)


def test_stiffness_error_carries_state(monkeypatch):
    state, flow = _setup(nodes=33)
    monkeypatch.setattr(flow, "admissible", lambda psi: False)
    with pytest.raises(StiffnessError) as info:
        step_potential(state, 1e-3, flow)
    assert info.value.state["t"] == 0.0
    assert len(info.value.state["y"][0]) == 33


def test_metric_stepper_fs_stationary():
    mf = MetricFlow(2, 65)
    ms = MetricState(0.0, np.ones(65), mf.x.copy())
    new = step_metric_direct(ms, 1e-4, mf)
    assert np.max(np.abs(new.a - 1)) < 1e-12 and np.max(np.abs(new.b - mf.x)) < 1e-12


@pytest.mark.parametrize("n", [1, 2])
def test_gauge_consistency(n):
    state, flow = _setup(n=n, nodes=129)
    mf = MetricFlow(n, 129)
    ms = MetricState.from_potential(state, n)
    dt = flow.dt_cfl(state.psi, 0.8)
    steps = int(np.ceil(0.1 / dt))
    for _ in range(steps):
        state = step_potential(state, 0.1 / steps, flow)
        ms = step_metric_direct(ms, 0.1 / steps, mf)
    R_pot = state.profile(n).geometry.curvature["scalar"]
    R_met = mf.geometry(ms)["scalar"]
    assert np.max(np.abs(R_pot - R_met)) < 1e-5


@pytest.mark.parametrize("n", [1, 2])
def test_evolution_equation_residuals(n):
    state, flow = _setup(n=n, nodes=257)
    state = _advance(state, flow, 0.1)
    d = 5e-3
    states = [state]
    for _ in range(4):
        states.append(_advance(states[-1], flow, states[-1].t + d))
    geos = [s.profile(n).geometry for s in states]
    w = np.array([1, -8, 0, 8, -1]) / (12 * d)
    g = geos[2]
    c = g.curvature
    R = c["scalar"]
    R_t = sum(wi * gi.curvature["scalar"] for wi, gi in zip(w, geos))
    rhs = g.laplacian(R) + c["rho_r"] ** 2 + (n - 1) * c["rho_t"] ** 2 - R
    assert np.max(np.abs(R_t - rhs)) / np.max(np.abs(rhs)) < 1e-3
    ddR = g.ddbar(R)
    for part in ("rad", "tra"):
        ric_t = sum(wi * getattr(gi.ric, part) for wi, gi in zip(w, geos))
        target = getattr(ddR, part)
        assert np.max(np.abs(ric_t - target)) / np.max(np.abs(target)) < 1e-3


def test_run_monotone_and_positive(perturbed_run):
    E0, E1 = perturbed_run.column("E0"), perturbed_run.column("E1")
    assert np.all(np.diff(E0) <= 1e-8)
    assert np.all(np.diff(E1) <= 1e-8)
    assert np.all(perturbed_run.column("ric_min") > 0)
    t = perturbed_run.column("t")
    assert np.all(np.diff(t) > 0)
    # strictly decreasing pointwise pinching once the initial transient is over
    r0 = perturbed_run.column("ric0_max")
    assert np.all(np.diff(r0[t >= 0.5]) < 0)


def test_resume_reproduces_unsplit_run(perturbed_run):
    cfg = FlowConfig(n=1, nodes=129, amplitude=0.05, t_end=1.0, cadence=0.05, record_analysis=False)
    first = run_flow(cfg)
    rest = run_flow(FlowConfig(**{**cfg.__dict__, "t_end": 2.0}), state=first.state, psi_ref=cfg.initial_profile().psi)
    joined = first.series + rest.series[1:]
    for a, b in zip(joined, perturbed_run.series):
        for k in a:
            assert a[k] == pytest.approx(b[k], abs=1e-12, nan_ok=True)


def test_doubling_time_monitor(perturbed_run):
    t = perturbed_run.column("t")
    riem = perturbed_run.column("riem_sup")
    v = doubling_time_monitor(t, riem, Lambda=riem[0])
    assert v["ok"] and v["violation_time"] is None
    fs = doubling_time_monitor(t, np.ones_like(t), Lambda=1.0)
    assert fs["ok"]
    blow = 1.0 / (1.0 - 0.9 * t)  # synthetic stress series reaching 10 Lambda
    bad = doubling_time_monitor(t, blow, Lambda=1.0, c_fit=0.1)
    assert not bad["ok"] and bad["violation_time"] == pytest.approx(t[np.argmax(blow > 2)])


def test_pinching_window_check():
    budget = StabilityBudget(1, 0.5, 2.0)
    T = budget.T
    t = np.linspace(0, 6 * T, 61)
    zeros = np.zeros_like(t)
    fs = pinching_window_check(t, zeros, zeros, zeros, zeros, budget)
    assert fs["ok"] and fs["hypothesis_E1"]
    big = np.full_like(t, 1.0)
    bad = pinching_window_check(t, big, zeros, zeros, zeros, budget)
    assert not bad["ok"] and "energy window [0, 6T]" in bad["failed"]
    with pytest.raises(CoverageError):
        pinching_window_check(t[:30], zeros[:30], zeros[:30], zeros[:30], zeros[:30], budget)


def test_convergence_detector(perturbed_run):
    t = perturbed_run.column("t")
    v = convergence_detector(t, perturbed_run.column("ric0_max"), min_samples=20)
    assert v["verdict"] == "positive" and v["r2"] >= 0.99 and v["rate"] > 0
    assert convergence_detector(t, np.zeros_like(t))["verdict"] == "positive"
    noise = np.abs(np.random.default_rng(0).standard_normal(200)) + 0.1
    assert convergence_detector(np.linspace(0, 10, 200), noise)["verdict"] == "inconclusive"


def test_continuation_driver():
    budget = StabilityBudget(1, 0.5, 2.0)
    fs = continuation_driver(FlowConfig(n=1, nodes=65, t_end=0.5, cadence=0.1, record_analysis=False), budget)
    assert fs["ok"] and fs["t_reached"] == pytest.approx(0.5)
    # widen the energy slack so that the initial certificate is not the binding check
    loose = StabilityBudget(1, 0.5, 2.0)
    loose.eps = 1.0
    small = FlowConfig(n=1, nodes=65, amplitude=0.01, t_end=1.5, cadence=0.1, record_analysis=False, eps_n=0.3)
    v = continuation_driver(small, loose)
    assert v["ok"] and v["t_reached"] == pytest.approx(1.5) and v["ric0_tail_monotone"]
    assert v["monitors"][-1]["ric0_max"] < 0.5 * v["monitors"][0]["ric0_max"]
    stress = FlowConfig(n=1, nodes=65, amplitude=0.05, t_end=0.5, cadence=0.1, record_analysis=False, eps_n=0.05)
    v = continuation_driver(stress, loose)
    assert not v["ok"] and v["failure"]["inequality"].startswith("Ricci pinching")
