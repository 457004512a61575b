"""Fixed-step integration with energy bookkeeping.

Two methods: classical RK4 and the implicit midpoint rule.  Midpoint
steps are solved by Newton iteration (finite-difference Jacobian of the
stage equation); for linear time-invariant models the stage equation is
solved directly with a prefactored linear solve, which is the same
fixed point to rounding.  Implicit midpoint preserves quadratic
invariants, so energy drift on lossless quadratic models measures
solver error, not method error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import lu_factor, lu_solve

from .expr import EvalDomainError
from .model import PhsModel, SignalSpec

NEWTON_TOL = 1e-12
MAX_NEWTON = 50
FD_STEP = 1e-7

PASSIVITY_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


class BlowupError(SimulationError):
    """The vector field left its domain during a run."""

    def __init__(self, time, cause):
        super().__init__(f"simulation left the model domain near t={time:.6g}: {cause}")
        self.time = time


class NewtonError(SimulationError):
    def __init__(self, time, residual):
        super().__init__(
            f"midpoint Newton iteration failed to converge at t={time:.6g} "
            f"(residual {residual:.3e})")
        self.time = time


@dataclass
class Trajectory:
    """Grid samples of a run plus enough metadata to audit it."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    H: np.ndarray
    state_names: tuple
    method: str | None = None
    newton_tol: float | None = None
    newton_iterations: int = 0
    u_mid: np.ndarray | None = None  # inputs at stage midpoints (midpoint runs)
    ydot: np.ndarray | None = None   # differentiated outputs (IOH runs)

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def to_csv(self, path):
        m = self.u.shape[1]
        header = (["t"] + [f"x:{name}" for name in self.state_names]
                  + [f"u:{i + 1}" for i in range(m)]
                  + [f"y:{i + 1}" for i in range(m)] + ["H"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for k in range(self.t.size):
                row = ([repr(float(self.t[k]))]
                       + [repr(float(v)) for v in self.x[k]]
                       + [repr(float(v)) for v in self.u[k]]
                       + [repr(float(v)) for v in self.y[k]]
                       + [repr(float(self.H[k]))])
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        names = tuple(col[2:] for col in header if col.startswith("x:"))
        m = sum(1 for col in header if col.startswith("u:"))
        data = np.array(rows)
        n = len(names)
        return cls(
            t=data[:, 0],
            x=data[:, 1:1 + n],
            u=data[:, 1 + n:1 + n + m],
            y=data[:, 1 + n + m:1 + n + 2 * m],
            H=data[:, -1],
            state_names=names,
        )


def _input_fn(u, m):
    if callable(u) and not isinstance(u, SignalSpec):
        return lambda t, x: np.atleast_1d(np.asarray(u(t, x), dtype=float))
    if isinstance(u, SignalSpec):
        if u.channels != m:
            raise SimulationError(
                f"input has {u.channels} channels, model expects {m}")
        return lambda t, x: u(t)
    raise SimulationError("input must be a SignalSpec or a callable u(t, x)")


def _fd_jacobian(fn, x, fx):
    n = x.size
    jac = np.empty((n, n))
    for i in range(n):
        h = FD_STEP * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        jac[:, i] = (fn(xp) - fx) / h
    return jac


def _integrate(field, x0, h, n_steps, method, u_at, newton_tol, max_newton,
               linear=None):
    """Core fixed-step loop.  `field(t, x)` returns dx/dt with the input
    already applied; `u_at(t, x)` is recorded separately.  `linear`
    optionally carries (A, B, c, u_is_open_loop) for the direct midpoint
    solve."""
    n = x0.size
    xs = np.empty((n_steps + 1, n))
    xs[0] = x0
    u_mid = None
    worst_newton = 0
    if method == "rk4":
        for k in range(n_steps):
            t = k * h
            x = xs[k]
            try:
                k1 = field(t, x)
                k2 = field(t + h / 2, x + (h / 2) * k1)
                k3 = field(t + h / 2, x + (h / 2) * k2)
                k4 = field(t + h, x + h * k3)
            except EvalDomainError as exc:
                raise BlowupError(t, exc) from exc
            xs[k + 1] = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(xs[k + 1])):
                raise BlowupError(t, "state became non-finite")
        return xs, None, 0

    # implicit midpoint
    m_inputs = u_at(0.0, x0).size
    u_mid = np.empty((n_steps, m_inputs))
    lu = None
    if linear is not None:
        A = linear[0]
        lu = lu_factor(np.eye(n) - (h / 2) * A)
    for k in range(n_steps):
        t = k * h
        tm = t + h / 2
        x = xs[k]
        try:
            if lu is not None:
                A, B, cvec = linear
                um = u_at(tm, x)
                rhs = x + (h / 2) * (A @ x) + h * (B @ um + cvec)
                x1 = lu_solve(lu, rhs)
                u_mid[k] = um
                worst_newton = max(worst_newton, 1)
            else:
                x1, iters, um = _midpoint_newton(
                    field, u_at, x, t, h, newton_tol, max_newton)
                u_mid[k] = um
                worst_newton = max(worst_newton, iters)
        except EvalDomainError as exc:
            raise BlowupError(t, exc) from exc
        if not np.all(np.isfinite(x1)):
            raise BlowupError(t, "state became non-finite")
        xs[k + 1] = x1
    return xs, u_mid, worst_newton


def _midpoint_newton(field, u_at, x0, t, h, tol, max_iter):
    tm = t + h / 2

    def stage(x1):
        return field(tm, (x0 + x1) / 2)

    x1 = x0 + h * field(t, x0)  # explicit Euler predictor
    for it in range(1, max_iter + 1):
        fx = stage(x1)
        res = x1 - x0 - h * fx
        jac = np.eye(x0.size) - (h / 2) * _fd_jacobian(stage, x1, fx)
        delta = np.linalg.solve(jac, -res)
        x1 = x1 + delta
        if np.abs(delta).max() <= tol * (1.0 + np.abs(x1).max()):
            xm = (x0 + x1) / 2
            return x1, it, u_at(tm, xm)
    raise NewtonError(t, float(np.abs(res).max()))


def simulate_phs(model: PhsModel, u, x0, t_end: float, h: float,
                 method: str = "midpoint", newton_tol: float = NEWTON_TOL,
                 max_newton: int = MAX_NEWTON) -> Trajectory:
    """Integrate a PHS model under an open-loop signal or a state
    feedback u(t, x), sampling states, inputs, outputs and energy."""
    if h <= 0 or t_end <= 0:
        raise SimulationError("step size and horizon must be positive")
    if method not in ("rk4", "midpoint"):
        raise SimulationError(f"unknown method {method!r}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise SimulationError(f"initial state must have shape ({model.n},)")
    n_steps = int(round(t_end / h))
    if n_steps < 1:
        raise SimulationError("horizon shorter than one step")

    u_at = _input_fn(u, model.m)
    open_loop = isinstance(u, SignalSpec)

    def field(t, x):
        return model.dynamics(x, u_at(t, x))

    linear = None
    if method == "midpoint" and open_loop:
        parts = model.linear_parts()
        if parts is not None:
            linear = parts
    xs, u_mid, iters = _integrate(field, x0, h, n_steps, method, u_at,
                                  newton_tol, max_newton, linear=linear)
    ts = h * np.arange(n_steps + 1)
    us = np.vstack([u_at(t, x) for t, x in zip(ts, xs)])
    ys = np.vstack([model.output(x, uu) for x, uu in zip(xs, us)])
    Hs = np.array([model.H.value(x) for x in xs])
    return Trajectory(t=ts, x=xs, u=us, y=ys, H=Hs,
                      state_names=model.state_names, method=method,
                      newton_tol=newton_tol if method == "midpoint" else None,
                      newton_iterations=iters, u_mid=u_mid)


def simulate_ioh(model, u, x0, t_end: float, h: float,
                 method: str = "midpoint", newton_tol: float = NEWTON_TOL,
                 max_newton: int = MAX_NEWTON) -> Trajectory:
    """Integrate an input-output Hamiltonian model.  The recorded y is
    the model output C(x); the differentiated output dy/dt is kept
    alongside, since that is the passive pairing for these models."""
    from .energyport import differentiated_output

    if h <= 0 or t_end <= 0:
        raise SimulationError("step size and horizon must be positive")
    if method not in ("rk4", "midpoint"):
        raise SimulationError(f"unknown method {method!r}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise SimulationError(f"initial state must have shape ({model.n},)")
    n_steps = int(round(t_end / h))
    if n_steps < 1:
        raise SimulationError("horizon shorter than one step")

    u_at = _input_fn(u, model.m)
    open_loop = isinstance(u, SignalSpec)

    def field(t, x):
        return model.dynamics(x, u_at(t, x))

    linear = model.linear_parts() if (method == "midpoint" and open_loop) else None
    xs, u_mid, iters = _integrate(field, x0, h, n_steps, method, u_at,
                                  newton_tol, max_newton, linear=linear)
    ts = h * np.arange(n_steps + 1)
    us = np.vstack([u_at(t, x) for t, x in zip(ts, xs)])
    ys = np.vstack([model.outputs(x) for x in xs])
    ydots = np.vstack([differentiated_output(model, x, uu)
                       for x, uu in zip(xs, us)])
    Hs = np.array([model.H.value(x) for x in xs])
    return Trajectory(t=ts, x=xs, u=us, y=ys, H=Hs,
                      state_names=model.state_names, method=method,
                      newton_tol=newton_tol if method == "midpoint" else None,
                      newton_iterations=iters, u_mid=u_mid, ydot=ydots)


@dataclass
class AuditReport:
    balance_residual: float
    passivity_margin: float
    supplied: float
    dissipated: float
    quadrature: str
    u_mid_interpolated: bool

    @property
    def passed(self) -> bool:
        return self.passivity_margin <= PASSIVITY_TOL

    def as_dict(self):
        return {"balance_residual": float(self.balance_residual),
                "passivity_margin": float(self.passivity_margin),
                "supplied": float(self.supplied),
                "dissipated": float(self.dissipated),
                "quadrature": self.quadrature,
                "u_mid_interpolated": self.u_mid_interpolated,
                "passed": self.passed}


def energy_audit(traj: Trajectory, model) -> AuditReport:
    """Check the run against the power balance dH/dt = u^T y - D(x, u).

    The balance residual is H(x_N) - H(x_0) minus the integrated supplied
    power plus the integrated dissipation, with the power integrand
    evaluated at stage midpoints for midpoint runs and integrated by
    composite Simpson quadrature otherwise.  The passivity margin is the
    worst pointwise dH/dt - u^T y over the grid, with dH/dt taken from
    the model field (y is the model's natural passive output, which for
    IOH models is the differentiated output)."""
    from .energyport import IohModel, differentiated_output

    is_ioh = isinstance(model, IohModel)
    names = tuple(model.state_names)
    if traj.state_names and tuple(traj.state_names) != names:
        raise SimulationError(
            f"trajectory states {traj.state_names} do not match model {names}")
    if traj.x.shape[1] != len(names):
        raise SimulationError("trajectory and model disagree on state dimension")

    def passive_output(x, u):
        if is_ioh:
            return differentiated_output(model, x, u)
        return model.output(x, u)

    def rate(x, u):
        return float(model.H.grad(x) @ model.dynamics(x, u))

    def power_parts(x, u):
        supplied = float(u @ passive_output(x, u))
        return supplied, model.dissipation_rate(x, u)

    # pointwise margin from the analytic rate
    margin = -np.inf
    for k in range(traj.t.size):
        supplied, _ = power_parts(traj.x[k], traj.u[k])
        margin = max(margin, rate(traj.x[k], traj.u[k]) - supplied)

    supplied_total = 0.0
    dissipated_total = 0.0
    if traj.method == "midpoint":
        quadrature = "stage-midpoint"
        h = traj.h
        interp = traj.u_mid is None
        for k in range(traj.n_steps):
            xm = (traj.x[k] + traj.x[k + 1]) / 2
            um = ((traj.u[k] + traj.u[k + 1]) / 2 if interp else traj.u_mid[k])
            s, d = power_parts(xm, um)
            supplied_total += h * s
            dissipated_total += h * d
    else:
        quadrature = "simpson"
        interp = False
        sup = np.empty(traj.t.size)
        dis = np.empty(traj.t.size)
        for k in range(traj.t.size):
            sup[k], dis[k] = power_parts(traj.x[k], traj.u[k])
        supplied_total = float(simpson(sup, x=traj.t))
        dissipated_total = float(simpson(dis, x=traj.t))
    residual = float(traj.H[-1] - traj.H[0] - supplied_total + dissipated_total)
    return AuditReport(balance_residual=residual, passivity_margin=float(margin),
                       supplied=supplied_total, dissipated=dissipated_total,
                       quadrature=quadrature, u_mid_interpolated=bool(interp))
