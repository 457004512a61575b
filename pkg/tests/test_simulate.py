"""Integrator and energy-audit behavior.

Reference facts used below, all checkable by hand:
  * implicit midpoint conserves quadratic invariants, so on a lossless
    quadratic model the energy drift is solver noise;
  * for quadratic H the stage-midpoint power quadrature reproduces the
    discrete energy differences exactly, so the balance residual of a
    midpoint run is rounding-level;
  * RK4 has global error O(h^4), so its audit residual shrinks by about
    16 when the step is halved.
"""

import numpy as np
import pytest

from portham.energyport import IohModel
from portham.expr import parse_expr
from portham.model import (
    ExpressionHamiltonian,
    PhsModel,
    QuadraticHamiltonian,
    Rayleigh,
    SignalSpec,
)
from portham.simulate import (
    BlowupError,
    NewtonError,
    SimulationError,
    Trajectory,
    energy_audit,
    simulate_ioh,
    simulate_phs,
)

J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


def oscillator(d=0.0):
    return PhsModel(state_names=("q", "p"), J=J2, R=np.diag([0.0, d]),
                    G=np.array([[0.0], [1.0]]), H=QuadraticHamiltonian(np.eye(2)))


def driven(d=0.3):
    return oscillator(d), SignalSpec.of_time(["0.5*sin(t)"])


def test_midpoint_conserves_quadratic_energy():
    traj = simulate_phs(oscillator(), SignalSpec.zero(1), [1.0, 0.0],
                        t_end=100.0, h=0.01)
    assert traj.n_steps == 10_000
    assert abs(traj.H[-1] - traj.H[0]) <= 1e-9
    # exact solution is a rotation
    assert np.allclose(traj.x[-1], [np.cos(100.0), -np.sin(100.0)], atol=1e-3)


def test_grid_and_samples():
    model, u = driven()
    traj = simulate_phs(model, u, [1.0, 0.0], t_end=1.0, h=0.1)
    assert traj.t.shape == (11,)
    assert traj.h == pytest.approx(0.1)
    assert np.allclose(traj.t, 0.1 * np.arange(11))
    assert np.allclose(traj.u[:, 0], 0.5 * np.sin(traj.t))
    # y = G^T dH/dx = p along the trajectory
    assert np.allclose(traj.y[:, 0], traj.x[:, 1])
    assert np.allclose(traj.H, 0.5 * (traj.x ** 2).sum(axis=1))
    assert traj.u_mid.shape == (10, 1)


def test_midpoint_audit_is_exact_for_quadratic_models():
    model, u = driven()
    traj = simulate_phs(model, u, [1.0, 0.0], t_end=10.0, h=0.01)
    report = energy_audit(traj, model)
    assert report.quadrature == "stage-midpoint"
    assert not report.u_mid_interpolated
    assert abs(report.balance_residual) <= 1e-8
    assert report.passivity_margin <= 1e-9
    assert report.passed
    assert report.dissipated > 0.0


def test_fast_path_matches_newton_path():
    model, _ = driven()
    spec = SignalSpec.of_time(["0.5*sin(t)"])
    fast = simulate_phs(model, spec, [1.0, 0.0], t_end=10.0, h=0.01)
    slow = simulate_phs(model, lambda t, x: [0.5 * np.sin(t)], [1.0, 0.0],
                        t_end=10.0, h=0.01)
    assert np.allclose(fast.x, slow.x, atol=1e-8)
    assert np.allclose(fast.u_mid, slow.u_mid, atol=1e-8)


def test_rk4_residual_scales_like_h4():
    model, u = driven()
    residuals = []
    for h in (0.01, 0.005):
        traj = simulate_phs(model, u, [1.0, 0.0], t_end=10.0, h=h, method="rk4")
        report = energy_audit(traj, model)
        assert report.quadrature == "simpson"
        residuals.append(abs(report.balance_residual))
    ratio = residuals[0] / residuals[1]
    assert 12.0 <= ratio <= 20.0


def test_rk4_and_midpoint_agree():
    model, u = driven()
    a = simulate_phs(model, u, [1.0, 0.0], t_end=10.0, h=0.01, method="rk4")
    b = simulate_phs(model, u, [1.0, 0.0], t_end=10.0, h=0.01)
    assert np.allclose(a.x[-1], b.x[-1], atol=1e-4)


def test_interpolated_midpoint_inputs_are_flagged():
    model, u = driven()
    traj = simulate_phs(model, u, [1.0, 0.0], t_end=10.0, h=0.01)
    traj.u_mid = None
    report = energy_audit(traj, model)
    assert report.u_mid_interpolated
    # interpolating u at the stage midpoint costs O(h^2) accuracy
    assert abs(report.balance_residual) <= 1e-4


def test_state_feedback_input():
    model = oscillator()
    traj = simulate_phs(model, lambda t, x: [-x[1]], [1.0, 0.0],
                        t_end=10.0, h=0.01)
    assert traj.H[-1] < traj.H[0]
    report = energy_audit(traj, model)
    assert report.passivity_margin <= 1e-9
    assert abs(report.balance_residual) <= 1e-8


def test_nonlinear_midpoint_runs_through_newton():
    pend = PhsModel(state_names=("q", "p"), J=J2, R=np.zeros((2, 2)),
                    G=np.array([[0.0], [1.0]]),
                    H=ExpressionHamiltonian(
                        parse_expr("0.5*p^2 + 1 - cos(q)", ("q", "p"))))
    traj = simulate_phs(pend, SignalSpec.zero(1), [2.0, 0.0], t_end=10.0, h=0.01)
    assert traj.newton_iterations >= 2
    # midpoint is symplectic: energy error stays bounded and small
    assert abs(traj.H - traj.H[0]).max() <= 1e-4
    report = energy_audit(traj, pend)
    assert report.passivity_margin <= 1e-9


def test_rayleigh_dissipation_matches_resistive_matrix():
    base, u = driven(d=0.3)
    ray = PhsModel(state_names=("q", "p"), J=J2, R=np.zeros((2, 2)),
                   G=np.array([[0.0], [1.0]]),
                   H=QuadraticHamiltonian(np.eye(2)),
                   rayleigh=Rayleigh(G_R=np.array([[0.0], [1.0]]),
                                     fn=parse_expr("0.15*f^2", ("f",))))
    ta = simulate_phs(base, u, [1.0, 0.0], t_end=10.0, h=0.01)
    tb = simulate_phs(ray, u, [1.0, 0.0], t_end=10.0, h=0.01)
    assert np.allclose(ta.x, tb.x, atol=1e-8)
    report = energy_audit(tb, ray)
    assert report.passivity_margin <= 1e-9
    assert abs(report.balance_residual) <= 1e-8
    assert report.dissipated == pytest.approx(energy_audit(ta, base).dissipated,
                                              abs=1e-6)


def test_csv_round_trip_and_determinism(tmp_path):
    model, u = driven()
    traj = simulate_phs(model, u, [1.0, 0.0], t_end=1.0, h=0.1)
    path_a = tmp_path / "a.csv"
    path_b = tmp_path / "b.csv"
    traj.to_csv(path_a)
    simulate_phs(model, u, [1.0, 0.0], t_end=1.0, h=0.1).to_csv(path_b)
    assert path_a.read_bytes() == path_b.read_bytes()
    header = path_a.read_text().splitlines()[0]
    assert header == "t,x:q,x:p,u:1,y:1,H"

    back = Trajectory.from_csv(path_a)
    assert back.state_names == ("q", "p")
    assert np.array_equal(back.t, traj.t)
    assert np.array_equal(back.x, traj.x)
    assert np.array_equal(back.u, traj.u)
    assert np.array_equal(back.y, traj.y)
    assert np.array_equal(back.H, traj.H)
    # a loaded run carries no method tag; the audit falls back to Simpson
    report = energy_audit(back, model)
    assert report.quadrature == "simpson"
    assert report.passivity_margin <= 1e-9


def test_blowup_is_reported_with_time():
    hot = PhsModel(state_names=("q",), J=np.zeros((1, 1)), R=np.array([[-1.0]]),
                   G=np.array([[1.0]]),
                   H=ExpressionHamiltonian(parse_expr("exp(q^2)", ("q",))))
    with pytest.raises(BlowupError):
        simulate_phs(hot, SignalSpec.zero(1), [1.0], t_end=10.0, h=0.2,
                     method="rk4")


def test_newton_failure_is_reported():
    stiff = PhsModel(state_names=("q",), J=np.zeros((1, 1)), R=np.array([[-1.0]]),
                     G=np.array([[1.0]]),
                     H=ExpressionHamiltonian(parse_expr("0.5*q^2 + q^4", ("q",))))
    with pytest.raises(NewtonError):
        simulate_phs(stiff, SignalSpec.zero(1), [2.0], t_end=10.0, h=1.0,
                     max_newton=1)


def test_argument_validation():
    model, u = driven()
    with pytest.raises(SimulationError):
        simulate_phs(model, u, [1.0, 0.0], t_end=1.0, h=-0.1)
    with pytest.raises(SimulationError):
        simulate_phs(model, u, [1.0, 0.0], t_end=1.0, h=0.1, method="euler")
    with pytest.raises(SimulationError):
        simulate_phs(model, u, [1.0], t_end=1.0, h=0.1)
    with pytest.raises(SimulationError):
        simulate_phs(model, SignalSpec.zero(2), [1.0, 0.0], t_end=1.0, h=0.1)
    with pytest.raises(SimulationError):
        simulate_phs(model, "not an input", [1.0, 0.0], t_end=1.0, h=0.1)


def test_audit_rejects_mismatched_states():
    model, u = driven()
    traj = simulate_phs(model, u, [1.0, 0.0], t_end=1.0, h=0.1)
    other = PhsModel(state_names=("a", "b"), J=J2, R=np.zeros((2, 2)),
                     G=np.array([[0.0], [1.0]]), H=QuadraticHamiltonian(np.eye(2)))
    with pytest.raises(SimulationError):
        energy_audit(traj, other)


def test_ioh_run_records_differentiated_output():
    ioh = IohModel(state_names=("q", "p"), J=J2, R=np.diag([0.0, 0.3]),
                   H=QuadraticHamiltonian(np.eye(2)), C=["q"])
    u = SignalSpec.of_time(["0.5*sin(t)"])
    traj = simulate_ioh(ioh, u, [1.0, 0.0], t_end=10.0, h=0.01)
    # y is the output map itself, ydot its derivative along the field
    assert np.allclose(traj.y[:, 0], traj.x[:, 0])
    assert traj.ydot.shape == traj.y.shape
    k = 317
    assert traj.ydot[k] == pytest.approx(
        float(ioh.dynamics(traj.x[k], traj.u[k])[0]))
    report = energy_audit(traj, ioh)
    assert report.quadrature == "stage-midpoint"
    assert abs(report.balance_residual) <= 1e-8
    assert report.passivity_margin <= 1e-9
