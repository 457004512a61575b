"""Acceptance gate: one test per shipped guarantee, one printed
pass/fail line each.

Run with `pytest -s tests/test_acceptance.py` to see the lines; every
tolerance asserted here is part of the package contract, not a loose
smoke bound.
"""

import time

import numpy as np
import pytest

from portham.analysis import (
    linear_casimirs,
    shifted_system,
    steady_state,
    verify_casimir,
)
from portham.dirac import compose, from_kirchhoff, from_skew_map, verify_dirac
from portham.energyport import (
    IohModel,
    StaticEnergyFeedback,
    dc_loop_gain_stability,
    differentiated_output,
    general_p_feedback,
    ioh_to_phs,
    phs_to_ioh,
    positive_feedback,
    static_energy_feedback,
)
from portham.expr import parse_expr
from portham.model import (
    PhsModel,
    QuadraticHamiltonian,
    SignalSpec,
    validate_phs,
)
from portham.netbuild import MsdGraph, build_msd
from portham.simulate import energy_audit, simulate_ioh, simulate_phs
from portham.synthesis import (
    IdaMatchingError,
    closedloop_casimir_search,
    damping_injection,
    ida_pbc_linear,
    negative_feedback,
    reduce_to_state_feedback,
)

J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


def oscillator(d=0.0):
    return PhsModel(state_names=("q", "p"), J=J2, R=np.diag([0.0, d]),
                    G=np.array([[0.0], [1.0]]),
                    H=QuadraticHamiltonian(np.eye(2)))


def conclude(number, label, ok, detail=""):
    line = f"criterion {number:02d} {label}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    assert ok, line


def random_skew(rng, n):
    a = rng.standard_normal((n, n))
    return a - a.T


def test_01_dirac_axioms():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    ok = True
    for _ in range(200):
        k = int(rng.integers(1, 9))
        d = from_skew_map(random_skew(rng, k))
        rep = verify_dirac(d.F, d.E)
        ok = ok and rep.passed and rep.power_residual < 1e-10 and rep.rank == k
    for _ in range(50):
        k = int(rng.integers(1, 9))
        cols = int(rng.integers(1, k + 1))
        basis, _ = np.linalg.qr(rng.standard_normal((k, cols)))
        d = from_kirchhoff(basis[:, :cols])
        rep = verify_dirac(d.F, d.E)
        ok = ok and rep.passed and rep.power_residual < 1e-10 and rep.rank == k
    composed = 0
    for _ in range(100):
        wa, ws, wb = (int(rng.integers(1, 4)) for _ in range(3))
        a = from_skew_map(random_skew(rng, wa + ws),
                          ports=[("x", wa), ("s", ws)])
        b = from_skew_map(random_skew(rng, ws + wb),
                          ports=[("s2", ws), ("z", wb)])
        c = compose(a, b, [("s", "s2")])
        rep = verify_dirac(c.F, c.E)
        ok = ok and rep.passed and rep.dim == wa + wb
        composed += 1
    elapsed = time.perf_counter() - t0
    ok = ok and composed == 100 and elapsed < 5.0
    conclude(1, "dirac-axioms", ok, f"{elapsed:.2f}s")


def test_02_energy_balance_and_rk4_order():
    model = oscillator(d=0.3)
    u = SignalSpec.of_time(["0.5*sin(t)"])
    t0 = time.perf_counter()
    traj = simulate_phs(model, u, [1.0, 0.0], t_end=10.0, h=0.01)
    rep = energy_audit(traj, model)
    ok = abs(rep.balance_residual) <= 1e-8 and rep.passivity_margin <= 1e-9
    residuals = []
    for h in (0.01, 0.005):
        t4 = simulate_phs(model, u, [1.0, 0.0], t_end=10.0, h=h,
                          method="rk4")
        residuals.append(abs(energy_audit(t4, model).balance_residual))
    ratio = residuals[0] / residuals[1]
    elapsed = time.perf_counter() - t0
    ok = ok and 12.0 <= ratio <= 20.0 and elapsed < 2.0
    conclude(2, "energy-balance", ok,
             f"residual {rep.balance_residual:.2e}, rk4 ratio {ratio:.1f}")


def test_03_midpoint_preserves_energy():
    rng = np.random.default_rng(33)
    worst = 0.0
    for n in (2, 3, 4, 5, 6):
        a = rng.standard_normal((n, n))
        q = a @ a.T + 0.5 * np.eye(n)
        model = PhsModel(state_names=tuple(f"x{i+1}" for i in range(n)),
                         J=random_skew(rng, n), R=np.zeros((n, n)),
                         G=rng.standard_normal((n, 1)),
                         H=QuadraticHamiltonian(q))
        x0 = rng.uniform(-1.0, 1.0, n)
        traj = simulate_phs(model, SignalSpec.zero(1), x0,
                            t_end=200.0, h=0.02)
        assert traj.t.size == 10_001
        worst = max(worst, float(np.abs(traj.H - traj.H[0]).max()))
    conclude(3, "structure-preservation", worst <= 1e-9,
             f"max |H drift| {worst:.2e} over 1e4 steps")


def test_04_shifted_passivity():
    model = oscillator(d=0.1)
    ss = steady_state(model, [1.0])
    ok = (ss.solver == "linear"
          and float(np.abs(ss.x_bar - np.array([1.0, 0.0])).max()) <= 1e-12)
    shifted = shifted_system(model, ss)
    rng = np.random.default_rng(4)
    floor = 0.0
    for _ in range(200):
        step = rng.standard_normal(2)
        x = ss.x_bar + step * rng.uniform(0.0, 2.0) / np.linalg.norm(step)
        floor = min(floor, shifted.hamiltonian.value(x))
    ok = ok and floor >= -1e-12

    def u(t, x):
        y = model.output(x, [0.0])
        return 1.0 - 0.5 * (y - ss.y_bar)

    traj = simulate_phs(model, u, [1.2, 0.0], t_end=20.0, h=0.01)
    gap = float(np.linalg.norm(traj.x[-1] - ss.x_bar))
    ok = ok and gap < 1e-3
    conclude(4, "shifted-passivity", ok, f"|x(20) - x_bar| = {gap:.2e}")


def test_05_casimir_suite():
    rng = np.random.default_rng(55)
    ok = True
    drift_models = []
    for _ in range(100):
        n = int(rng.integers(2, 7))
        active = int(rng.integers(1, n + 1))
        j = np.zeros((n, n))
        j[:active, :active] = random_skew(rng, active)
        rows = int(rng.integers(0, 3))
        b = rng.standard_normal((rows, n)) if rows else np.zeros((0, n))
        r = b.T @ b
        model = PhsModel(state_names=tuple(f"x{i+1}" for i in range(n)),
                         J=j, R=r, G=rng.standard_normal((n, 1)),
                         H=QuadraticHamiltonian(np.eye(n)))
        basis = linear_casimirs(model)
        for row, res_j, res_r in zip(basis.vectors, basis.residual_J,
                                     basis.residual_R):
            ok = ok and max(np.linalg.norm(j @ row),
                            np.linalg.norm(r @ row)) <= 1e-10
            ok = ok and max(res_j, res_r) <= 1e-10
        expect = n - np.linalg.matrix_rank(np.vstack([j, r]))
        ok = ok and len(basis) == expect
        if len(basis) and len(drift_models) < 10:
            drift_models.append((model, basis))
    worst_drift = 0.0
    for model, basis in drift_models:
        x0 = np.random.default_rng(7).uniform(-1.0, 1.0, model.n)
        traj = simulate_phs(model, SignalSpec.zero(1), x0, t_end=5.0, h=0.01)
        for e in basis.expressions():
            rep = verify_casimir(model, e, trajectory=traj)
            ok = ok and rep.passed
            worst_drift = max(worst_drift, rep.drift)
    ok = ok and worst_drift <= 1e-8
    conclude(5, "casimir-suite", ok, f"max drift {worst_drift:.2e}")


def test_06_control_by_interconnection():
    plant = oscillator(d=0.1)
    controller = PhsModel(state_names=("xi",), J=np.zeros((1, 1)),
                          R=np.zeros((1, 1)), G=np.array([[1.0]]),
                          H=QuadraticHamiltonian(np.array([[1.0]])))
    search = closedloop_casimir_search(plant, controller)
    ok = search.complete and search.casimirs[0].expr.to_source() == "xi-q"

    blocked = closedloop_casimir_search(
        PhsModel(state_names=("q", "p"), J=J2, R=np.diag([0.3, 0.0]),
                 G=np.array([[0.0], [1.0]]),
                 H=QuadraticHamiltonian(np.eye(2))), controller)
    ok = (ok and not blocked.complete and blocked.obstacles
          and blocked.obstacles[0].as_dict()["dissipation_obstacle"])

    lam = np.array([-2.0])
    reduced = reduce_to_state_feedback(plant, controller, search.F, lam)
    closed = negative_feedback(plant, controller)
    x0 = np.array([0.5, -0.3])
    xi0 = search.F @ x0 + lam
    full = simulate_phs(closed.model, SignalSpec.zero(2),
                        np.concatenate([x0, xi0]), t_end=10.0, h=0.01)
    leaf = simulate_phs(reduced.model, SignalSpec.zero(1), x0,
                        t_end=10.0, h=0.01)
    match = float(np.abs(full.x[:, :2] - leaf.x).max())
    ok = ok and match <= 1e-8

    damp = damping_injection(reduced.model, gain=1.0)
    pd = simulate_phs(plant, lambda t, x: reduced.law(x) + damp.law(x),
                      [0.3, 0.2], t_end=30.0, h=0.01)
    # shaped minimum: q (q - 2) spring pair balances at q* = 1
    gap = float(np.linalg.norm(pd.x[-1] - np.array([1.0, 0.0])))
    ok = ok and gap < 1e-3
    conclude(6, "control-by-interconnection", ok,
             f"leaf match {match:.2e}, |x(30) - (q*, 0)| = {gap:.2e}")


def test_07_ida_pbc():
    model = oscillator(d=0.1)
    k_d = 4.0
    j_d = J2
    r_d = np.diag([0.0, 0.1])
    h_s = QuadraticHamiltonian(np.diag([k_d, 1.0]))
    design = ida_pbc_linear(model, j_d, r_d, h_s)
    ok = (np.allclose(design.K, [[1.0 - k_d, 0.0]], atol=1e-12)
          and float(np.abs(design.k0).max()) <= 1e-12
          and design.matching_residual <= 1e-12)
    rng = np.random.default_rng(77)
    worst = 0.0
    target = (j_d - r_d) @ h_s.Q
    for _ in range(100):
        x = rng.uniform(-2.0, 2.0, 2)
        gap = model.dynamics(x, design.law(x)) - target @ x
        worst = max(worst, float(np.abs(gap).max()))
    ok = ok and worst <= 1e-10
    unmatched = PhsModel(state_names=("q", "p"), J=J2, R=np.diag([0.0, 0.1]),
                         G=np.array([[1.0], [0.0]]),
                         H=QuadraticHamiltonian(np.eye(2)))
    with pytest.raises(IdaMatchingError):
        ida_pbc_linear(unmatched, j_d, r_d, h_s)
    conclude(7, "ida-pbc", ok, f"field residual {worst:.2e}")


def _random_ioh(rng, n, m):
    names = tuple(f"x{i+1}" for i in range(n))
    a = rng.standard_normal((n, n))
    b = rng.standard_normal((n, n))
    jac = rng.uniform(-2.0, 2.0, (m, n))
    outs = []
    for row in jac:
        terms = [f"{c:.6f}*{name}" for c, name in zip(row, names)]
        outs.append("+".join(terms) + f"+{rng.uniform(-1, 1):.6f}")
    return IohModel(state_names=names, J=random_skew(rng, n), R=b.T @ b,
                    H=QuadraticHamiltonian(a @ a.T + 0.5 * np.eye(n),
                                           b=rng.standard_normal(n)),
                    C=outs)


def test_08_phs_ioh_round_trip():
    rng = np.random.default_rng(88)
    ok = True
    worst_identity = 0.0
    worst_out = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, n + 1))
        ioh = _random_ioh(rng, n, m)
        ext = ioh_to_phs(ioh)
        for _ in range(10):
            x = rng.uniform(-1.0, 1.0, n)
            u = rng.uniform(-1.0, 1.0, m)
            jct = ioh.output_jacobian(x).T
            j, r = ioh.J(x), ioh.R(x)
            ids = [np.abs(ext.G(x) + ext.P(x) + j @ jct).max(),
                   np.abs(ext.P(x) + r @ jct).max(),
                   np.abs(ext.M(x) + jct.T @ j @ jct).max(),
                   np.abs(ext.S(x) - jct.T @ r @ jct).max()]
            worst_identity = max(worst_identity, float(max(ids)))
            worst_out = max(worst_out, float(np.abs(
                ext.output(x, u) - differentiated_output(ioh, x, u)).max()))
            ok = ok and np.allclose(ext.dynamics(x, u), ioh.dynamics(x, u),
                                    atol=1e-12)
        back = phs_to_ioh(ext, list(ioh.C))
        x = rng.uniform(-1.0, 1.0, n)
        u = rng.uniform(-1.0, 1.0, m)
        ok = ok and np.allclose(back.dynamics(x, u), ioh.dynamics(x, u),
                                atol=1e-12)
        ok = ok and np.allclose(back.outputs(x), ioh.outputs(x), atol=1e-12)
    ok = ok and worst_identity <= 1e-12 and worst_out <= 1e-12

    probe = IohModel(state_names=("q", "p"), J=J2, R=np.diag([0.0, 0.3]),
                     H=QuadraticHamiltonian(np.eye(2)), C=["q"])
    spec = SignalSpec.of_time(["0.5*sin(t)"])
    errs = []
    for h in (0.01, 0.005):
        traj = simulate_ioh(probe, spec, [1.0, 0.0], t_end=10.0, h=h)
        fd = (traj.y[2:] - traj.y[:-2]) / (2.0 * h)
        errs.append(float(np.abs(fd - traj.ydot[1:-1]).max()))
    ratio = errs[0] / errs[1]
    ok = ok and 3.0 <= ratio <= 5.0
    conclude(8, "phs-ioh-round-trip", ok,
             f"identity {worst_identity:.2e}, fd ratio {ratio:.1f}")


def test_09_energy_port_shaping():
    rng = np.random.default_rng(99)
    a = _random_ioh(rng, 2, 1)
    b = IohModel(state_names=("z1", "z2", "z3"),
                 J=random_skew(rng, 3),
                 R=(lambda m_: m_.T @ m_)(rng.standard_normal((3, 3))),
                 H=QuadraticHamiltonian(2.0 * np.eye(3)),
                 C=["0.5*z1+z3"])
    closed, h_cl = positive_feedback(a, b)
    ok = True
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-1.0, 1.0, 5)
        manual = (a.H.value(x[:2]) + b.H.value(x[2:])
                  - float(a.outputs(x[:2]) @ b.outputs(x[2:])))
        worst = max(worst, abs(h_cl.value(x) - manual))
    ok = ok and worst <= 1e-12

    general, _ = general_p_feedback(a, b, parse_expr("0-y*w", ("y", "w")))
    field_gap = 0.0
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0, 5)
        v = rng.uniform(-1.0, 1.0, 2)
        field_gap = max(field_gap, float(np.abs(
            general.dynamics(x, v) - closed.dynamics(x, v)).max()))
        field_gap = max(field_gap, float(np.abs(
            general.outputs(x) - closed.outputs(x)).max()))
    ok = ok and field_gap <= 1e-12

    fb = StaticEnergyFeedback(P=parse_expr("0.5*y^2+0.3*y", ("y",)))
    shaped = static_energy_feedback(a, fb)
    static_gap = 0.0
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0, 2)
        v = rng.uniform(-1.0, 1.0, 1)
        direct = a.dynamics(x, fb.law(a.outputs(x)) + v)
        static_gap = max(static_gap, float(np.abs(
            shaped.dynamics(x, v) - direct).max()))
    ok = ok and static_gap <= 1e-10
    conclude(9, "energy-port-shaping", ok,
             f"H_cl gap {worst:.2e}, P-vs-positive gap {field_gap:.2e}")


def _spring(name, k, r):
    return IohModel(state_names=(name,), J=[[0.0]], R=[[r]],
                    H=QuadraticHamiltonian(np.array([[k]])), C=[name])


def test_10_dc_loop_gain():
    rng = np.random.default_rng(110)
    t0 = time.perf_counter()
    ok = True
    for _ in range(200):
        k1, k2 = rng.uniform(0.3, 3.0, 2)
        rep = dc_loop_gain_stability(_spring("a1", k1, rng.uniform(0.2, 2.0)),
                                     _spring("b1", k2, rng.uniform(0.2, 2.0)))
        eig = np.linalg.eigvalsh(np.array([[k1, -1.0], [-1.0, k2]])).min()
        expect = "stable" if eig > 1e-9 else (
            "unstable" if eig < -1e-9 else "marginal")
        ok = ok and rep.verdict == expect and rep.loop_gain_agrees
        ok = ok and abs(rep.loop_gain - 1.0 / (k1 * k2)) <= 1e-9
    for k1, k2, expect in ((2.0, 2.0, "stable"), (0.5, 0.5, "unstable"),
                           (2.0, 0.5, "marginal")):
        rep = dc_loop_gain_stability(_spring("a1", k1, 1.0),
                                     _spring("b1", k2, 1.0))
        ok = ok and rep.verdict == expect and rep.loop_gain_agrees
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 2.0
    conclude(10, "dc-loop-gain", ok, f"{elapsed:.2f}s")


def test_11_network_build():
    graph = MsdGraph.from_dict({
        "nodes": [{"name": "m1", "mass": 2.0}, {"name": "m2", "mass": 1.0}],
        "springs": [{"from": "m1", "to": "m2", "k": 4.0}],
        "dampers": [{"from": "m1", "to": "m2", "d": 0.5}],
        "actuated": ["m1"]})
    model = build_msd(graph)
    ok = validate_phs(model).passed
    basis = linear_casimirs(model)
    momentum = np.array([0.0, 1.0, 1.0]) / np.sqrt(2.0)
    recovered = basis.vectors.T @ (basis.vectors @ momentum)
    ok = ok and np.allclose(recovered, momentum, atol=1e-12)
    traj = simulate_phs(model, SignalSpec.of_time(["0.4*sin(t)"]),
                        [0.2, 0.0, -0.1], t_end=10.0, h=0.01)
    rep = energy_audit(traj, model)
    ok = ok and rep.passed and abs(rep.balance_residual) <= 1e-8
    conclude(11, "network-build", ok,
             f"audit residual {rep.balance_residual:.2e}")


def _random_source(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.25:
            return f"{rng.uniform(-2.0, 2.0):.4f}"
        return str(rng.choice(["a", "b", "c"]))
    pick = rng.choice(["add", "sub", "mul", "div", "pow",
                       "sin", "cos", "exp", "sqrt", "ln"])
    x = _random_source(rng, depth - 1)
    y = _random_source(rng, depth - 1)
    if pick == "add":
        return f"({x})+({y})"
    if pick == "sub":
        return f"({x})-({y})"
    if pick == "mul":
        return f"({x})*({y})"
    if pick == "div":
        return f"({x})/(2+cos({y}))"
    if pick == "pow":
        return f"({x})^{int(rng.integers(2, 4))}"
    if pick == "sin":
        return f"sin({x})"
    if pick == "cos":
        return f"cos({x})"
    if pick == "exp":
        return f"exp(0.3*sin({x}))"
    if pick == "sqrt":
        return f"sqrt(1+({x})^2)"
    return f"ln(2+sin({x}))"


def test_12_expression_layer():
    rng = np.random.default_rng(12)
    ok = True
    worst_rel = 0.0
    for _ in range(50):
        e = parse_expr(_random_source(rng, int(rng.integers(1, 4))),
                       ("a", "b", "c"))
        again = parse_expr(e.to_source(), ("a", "b", "c"))
        ok = ok and again.to_source() == e.to_source()
        for _ in range(3):
            x = rng.uniform(-1.0, 1.0, 3)
            value, grad = e.eval_grad(x)
            ok = ok and again.eval(x) == e.eval(x)
            for i in range(3):
                h = 1e-6 * (1.0 + abs(x[i]))
                xp, xm = x.copy(), x.copy()
                xp[i] += h
                xm[i] -= h
                fd = (e.eval(xp) - e.eval(xm)) / (2.0 * h)
                worst_rel = max(worst_rel,
                                abs(grad[i] - fd) / (1.0 + abs(grad[i])))
    ok = ok and worst_rel < 1e-6
    conclude(12, "expression-layer", ok, f"worst gradient gap {worst_rel:.2e}")
