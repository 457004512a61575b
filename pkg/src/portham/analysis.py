"""Equilibria, shifted storage functions, and conserved quantities.

Set-point analysis for port-Hamiltonian models: solve the stationarity
equation for a constant input, shift the Hamiltonian so the equilibrium
becomes a critical point, find linear Casimirs of the uncontrolled
dynamics, and assemble energy-Casimir Lyapunov candidates with an
explicit minimum certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import expr as ex
from .model import (
    ExtendedPhsModel,
    Hamiltonian,
    PhsModel,
    default_sample_states,
)

STEADY_TOL = 1e-10
STRUCTURE_TOL = 1e-10
CASIMIR_PASS_TOL = 1e-9
DRIFT_TOL = 1e-8
GRAD_GATE = 1e-6
CURVATURE_GATE = 1e-8
RANK_RTOL = 1e-10


class AnalysisError(ValueError):
    pass


class SteadyStateError(AnalysisError):
    """No state satisfies the stationarity equation to tolerance."""


# --- steady states ----------------------------------------------------------

@dataclass
class SteadyState:
    x_bar: np.ndarray
    u_bar: np.ndarray
    y_bar: np.ndarray
    residual: float
    solver: str

    def as_dict(self):
        return {"x_bar": self.x_bar.tolist(), "u_bar": self.u_bar.tolist(),
                "y_bar": self.y_bar.tolist(), "residual": float(self.residual),
                "solver": self.solver}


def steady_state(model: PhsModel, u_bar, x_guess=None, tol: float = STEADY_TOL,
                 max_iter: int = 50) -> SteadyState:
    """Solve dynamics(x, u_bar) = 0 for a constant input.

    Only models with constant structure matrices are accepted.  A
    quadratic energy gives a closed-form least-squares solve (the
    minimum-norm state when the stationarity equation is singular but
    consistent); any other energy runs a Newton iteration, which needs
    a caller-supplied `x_guess` because multiple steady states may
    exist.  Either way the answer carries a residual certificate and is
    rejected if the residual exceeds tol * (1 + |G u_bar|)."""
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    if u_bar.shape != (model.m,):
        raise AnalysisError(f"u_bar must have shape ({model.m},)")
    fields = [model.J, model.R]
    if hasattr(model, "G"):
        fields.append(model.G)
    if not all(f.is_constant for f in fields):
        raise AnalysisError(
            "steady-state solve needs constant structure matrices")

    parts = model.linear_parts()
    if parts is not None:
        A, B, c = parts
        rhs = -(B @ u_bar + c)
        x_bar, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        solver = "linear"
    else:
        if x_guess is None:
            raise AnalysisError(
                "steady-state solve needs a starting guess x_guess when "
                "no closed-form linear solve applies")
        x_bar = np.asarray(x_guess, dtype=float).copy()
        solver = "newton"
        for _ in range(max_iter):
            f = model.dynamics(x_bar, u_bar)
            if np.abs(f).max() <= 0.1 * tol:
                break
            jac = _state_jacobian(model, x_bar, u_bar, f)
            try:
                step = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(jac, -f, rcond=None)
            x_bar = x_bar + step

    # certificate scale: how hard the constant input drives the field
    drive = model.dynamics(x_bar, u_bar) - model.dynamics(x_bar, 0.0 * u_bar)
    residual = float(np.linalg.norm(model.dynamics(x_bar, u_bar)))
    if residual > tol * (1.0 + np.linalg.norm(drive)):
        raise SteadyStateError(
            f"stationarity equation not satisfied (residual {residual:.3e})")
    y_bar = (model.outputs(x_bar) if hasattr(model, "outputs")
             else model.output(x_bar, u_bar))
    return SteadyState(x_bar=x_bar, u_bar=u_bar, y_bar=y_bar,
                       residual=residual, solver=solver)


def _state_jacobian(model, x, u, fx):
    n = x.size
    jac = np.empty((n, n))
    for i in range(n):
        h = 1e-7 * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        jac[:, i] = (model.dynamics(xp, u) - fx) / h
    return jac


# --- shifted storage ---------------------------------------------------------

class ShiftedHamiltonian(Hamiltonian):
    """H(x) - dH(x_bar)^T (x - x_bar) - H(x_bar): same curvature, with a
    critical point moved to x_bar and value zero there."""

    def __init__(self, base: Hamiltonian, x_bar):
        self.base = base
        self.x_bar = np.asarray(x_bar, dtype=float)
        self.dim = base.dim
        v0, g0 = base.value_grad(self.x_bar)
        self._v0 = v0
        self._g0 = g0

    def value_grad(self, x):
        x = np.asarray(x, dtype=float)
        v, g = self.base.value_grad(x)
        return v - float(self._g0 @ (x - self.x_bar)) - self._v0, g - self._g0

    def hessian(self, x):
        return self.base.hessian(x)


@dataclass
class ShiftedSystem:
    """A model rewritten around a forced equilibrium.

    `model.dynamics(x, w)` equals the original field at input
    u_bar + w, so w is the input deviation."""

    hamiltonian: ShiftedHamiltonian
    model: PhsModel
    steady: SteadyState
    convexity: str
    hessian_min_eig: float


def shifted_system(model: PhsModel, steady, x_guess=None) -> ShiftedSystem:
    """Shift the Hamiltonian around a forced equilibrium and classify
    the curvature there.

    `steady` is either a SteadyState or a constant input vector (then
    the equilibrium is solved for first).  The returned model takes the
    input deviation w = u - u_bar; its field at (x, w) equals the
    original field at (x, u_bar + w), which is checked numerically."""
    if not isinstance(steady, SteadyState):
        steady = steady_state(model, steady, x_guess=x_guess)
    shifted = ShiftedHamiltonian(model.H, steady.x_bar)
    kwargs = dict(state_names=model.state_names, J=model.J, R=model.R,
                  G=model.G, H=shifted, rayleigh=model.rayleigh,
                  metadata=dict(model.metadata))
    if isinstance(model, ExtendedPhsModel):
        new = ExtendedPhsModel(P=model.P, M=model.M, S=model.S, **kwargs)
    else:
        new = PhsModel(**kwargs)
    rng = np.random.default_rng(7)
    for _ in range(3):
        x = steady.x_bar + rng.uniform(-1.0, 1.0, model.n)
        w = rng.uniform(-1.0, 1.0, model.m)
        gap = new.dynamics(x, w) - model.dynamics(x, steady.u_bar + w)
        if np.abs(gap).max() > 1e-9 * (1.0 + np.abs(new.dynamics(x, w)).max()):
            raise AnalysisError(
                "shifted field does not reproduce the original dynamics")
    eigs = np.linalg.eigvalsh(shifted.hessian(steady.x_bar))
    min_eig = float(eigs.min())
    if min_eig > CURVATURE_GATE:
        convexity = "positive-definite"
    elif min_eig >= -CURVATURE_GATE:
        convexity = "positive-semidefinite"
    else:
        convexity = "indefinite"
    return ShiftedSystem(hamiltonian=shifted, model=new, steady=steady,
                         convexity=convexity, hessian_min_eig=min_eig)


# --- Casimirs ---------------------------------------------------------------

@dataclass
class CasimirBasis:
    """Orthonormal covectors c spanning the linear conserved quantities
    c^T x of the uncontrolled dynamics, with certification residuals
    |J c| and |R c| per element."""

    vectors: np.ndarray
    residual_J: np.ndarray
    residual_R: np.ndarray
    state_names: tuple

    def __len__(self):
        return self.vectors.shape[0]

    def __iter__(self):
        return iter(self.vectors)

    def expressions(self):
        return [basis_expression(c, self.state_names) for c in self.vectors]

    def as_dict(self):
        return {"vectors": self.vectors.tolist(),
                "residual_J": self.residual_J.tolist(),
                "residual_R": self.residual_R.tolist(),
                "state_names": list(self.state_names)}


def linear_casimirs(model: PhsModel) -> CasimirBasis:
    """Basis for the linear conserved quantities of the uncontrolled
    dynamics: covectors w with J w = 0 and R w = 0 simultaneously.

    Requires constant structure matrices.  An empty basis (zero rows)
    means none exist."""
    if not (model.J.is_constant and model.R.is_constant):
        raise AnalysisError(
            "linear Casimir search needs constant structure matrices")
    zero = np.zeros(model.n)
    j = model.J(zero)
    r = model.R(zero)
    vectors = _null_basis(np.vstack([j, r]))
    # deterministic sign: first non-negligible entry positive
    for row in vectors:
        nz = np.nonzero(np.abs(row) > 1e-12)[0]
        if nz.size and row[nz[0]] < 0.0:
            row *= -1.0
    res_j = np.array([np.linalg.norm(j @ c) for c in vectors])
    res_r = np.array([np.linalg.norm(r @ c) for c in vectors])
    return CasimirBasis(vectors=vectors, residual_J=res_j, residual_R=res_r,
                        state_names=tuple(model.state_names))


def _null_basis(a):
    """Rows spanning the null space of `a`, with the rank cut at
    singular values below RANK_RTOL times the largest."""
    _, s, vh = np.linalg.svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(a.shape[1])
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    return vh[rank:]


def structure_rank(model: PhsModel) -> int:
    """Rank of the stacked structure matrices [J; R] at the Casimir
    tolerance; n minus this is the number of independent linear Casimirs."""
    zero = np.zeros(model.n)
    stacked = np.vstack([model.J(zero), model.R(zero)])
    s = np.linalg.svd(stacked, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def basis_expression(w, names) -> ex.Expr:
    """The linear form w^T x as an expression over the state names."""
    w = np.asarray(w, dtype=float)
    tree = None
    for wi, name in zip(w, names):
        if wi == 0.0:
            continue
        term = ex.n_mul(ex.n_num(float(wi)), ex.Var(name))
        tree = term if tree is None else ex.n_add(tree, term)
    if tree is None:
        tree = ex.n_num(0.0)
    return ex.expr_from_tree(tree, tuple(names))


@dataclass
class CasimirReport:
    residual_J: float
    residual_R: float
    drift: float | None
    seed: int

    @property
    def passed(self) -> bool:
        return (self.residual_J <= CASIMIR_PASS_TOL
                and self.residual_R <= CASIMIR_PASS_TOL)

    def as_dict(self):
        out = {"residual_J": float(self.residual_J),
               "residual_R": float(self.residual_R),
               "passed": self.passed, "seed": self.seed}
        if self.drift is not None:
            out["drift"] = float(self.drift)
        return out


def _casimir_gradient(candidate, names):
    """Gradient function of a Casimir given as an expression, a linear
    coefficient vector, or a string."""
    if isinstance(candidate, str):
        candidate = ex.parse_expr(candidate, tuple(names))
    if isinstance(candidate, ex.Expr):
        if tuple(candidate.variables) != tuple(names):
            raise AnalysisError("Casimir expression must use the state names")
        return candidate, lambda x: candidate.eval_grad(x)[1]
    w = np.asarray(candidate, dtype=float)
    if w.shape != (len(names),):
        raise AnalysisError(f"coefficient vector must have shape ({len(names)},)")
    return basis_expression(w, names), lambda x: w


def verify_casimir(model: PhsModel, candidate, trajectory=None,
                   sample_points=None, seed: int = 0) -> CasimirReport:
    """Structural check J dC = 0 and R dC = 0 at sampled states, plus a
    balance check along a trajectory when one is supplied.

    For a true Casimir the only way C can move is through the input
    ports, at rate dC^T G u.  The drift field reports the worst gap
    between C(x_k) - C(x_0) and the integral of that rate; with u = 0
    it reduces to plain conservation."""
    expr_c, grad = _casimir_gradient(candidate, model.state_names)
    if sample_points is None:
        sample_points = default_sample_states(model.n, seed=seed)
    rayleigh = getattr(model, "rayleigh", None)
    worst_j = 0.0
    worst_r = 0.0
    for x in np.atleast_2d(sample_points):
        g = grad(x)
        worst_j = max(worst_j, np.abs(model.J(x) @ g).max())
        worst_r = max(worst_r, np.abs(model.R(x) @ g).max())
        if rayleigh is not None:
            # conservation also needs the resistive port out of reach
            worst_r = max(worst_r, np.abs(g @ rayleigh.G_R(x)).max())
    drift = None
    if trajectory is not None:
        drift = _trajectory_drift(model, expr_c, grad, trajectory)
    return CasimirReport(residual_J=worst_j, residual_R=worst_r,
                         drift=drift, seed=seed)


def _trajectory_drift(model, expr_c, grad, traj):
    """max_k |C(x_k) - C(x_0) - integral of dC^T G u|.

    The port rate is evaluated through the dynamics difference
    f(x,u) - f(x,0), which equals G u for every model here and spares
    us an explicit input matrix.  Midpoint runs integrate the rate at
    the stage midpoints (exact for linear C and constant G); other
    methods fall back to a grid quadrature."""

    def rate(x, u):
        return float(grad(x) @ (model.dynamics(x, u) - model.dynamics(x, 0.0 * u)))

    values = np.array([expr_c.eval(x) for x in traj.x])
    if traj.u.size and np.any(traj.u != 0.0):
        if traj.method == "midpoint" and traj.u_mid is not None:
            mids = 0.5 * (traj.x[:-1] + traj.x[1:])
            rates = np.array([rate(xm, um) for xm, um in zip(mids, traj.u_mid)])
            supplied = np.concatenate([[0.0], np.cumsum(traj.h * rates)])
        else:
            rates = np.array([rate(x, u) for x, u in zip(traj.x, traj.u)])
            supplied = cumulative_trapezoid(rates, dx=traj.h, initial=0.0)
    else:
        supplied = 0.0
    return float(np.abs(values - values[0] - supplied).max())


# --- energy-Casimir candidates ----------------------------------------------

class LyapunovCandidate(Hamiltonian):
    """V(x) = phi(H(x), C_1(x), ..., C_k(x)).

    phi's first variable is the energy slot; the construction is only
    meaningful while dphi/dH > 0, so every evaluation enforces it.
    `x_star` records the target point the candidate was built for and
    `minimum_report` the certificate issued there, when one exists."""

    def __init__(self, H: Hamiltonian, phi: ex.Expr, casimirs, names,
                 x_star=None):
        if len(phi.variables) != len(casimirs) + 1:
            raise AnalysisError(
                f"phi takes {len(phi.variables)} arguments but there are "
                f"{len(casimirs)} Casimirs plus the energy")
        self.H = H
        self.phi = phi
        self.names = tuple(names)
        self.casimirs = [_casimir_gradient(c, self.names)[0] for c in casimirs]
        self.dim = H.dim
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.minimum_report = None

    def value_grad(self, x):
        x = np.asarray(x, dtype=float)
        vh, gh = self.H.value_grad(x)
        pairs = [c.eval_grad(x) for c in self.casimirs]
        args = np.concatenate([[vh], [p[0] for p in pairs]])
        pv, pg = self.phi.eval_grad(args)
        if pg[0] <= 0.0:
            raise AnalysisError(
                f"candidate is not energy-increasing at this state "
                f"(dphi/dH = {pg[0]:.3e})")
        grad = pg[0] * gh
        for slope, (_, gc) in zip(pg[1:], pairs):
            grad = grad + slope * gc
        return pv, grad


@dataclass
class MinimumReport:
    x_star: np.ndarray
    value: float
    gradient_norm: float
    hessian_min_eig: float

    @property
    def is_strict_minimum(self) -> bool:
        return (self.gradient_norm <= GRAD_GATE
                and self.hessian_min_eig >= CURVATURE_GATE)

    def as_dict(self):
        return {"x_star": self.x_star.tolist(), "value": float(self.value),
                "gradient_norm": float(self.gradient_norm),
                "hessian_min_eig": float(self.hessian_min_eig),
                "is_strict_minimum": self.is_strict_minimum}


def energy_casimir_candidate(model: PhsModel, basis, phi,
                             x_star) -> tuple[LyapunovCandidate, MinimumReport]:
    """Bundle the model energy with Casimirs through a shaping function
    and certify the target point.

    `basis` is a CasimirBasis or any iterable of Casimir candidates
    (expressions, strings, or coefficient vectors); each is verified
    structurally before use.  `phi` is an expression over z0..zk with
    z0 the energy slot.  The returned report accepts the candidate when
    the gradient at x_star vanishes to 1e-6 and the Hessian there is
    positive definite to 1e-8."""
    casimirs = list(basis.expressions() if isinstance(basis, CasimirBasis)
                    else basis)
    for c in casimirs:
        report = verify_casimir(model, c)
        if not report.passed:
            raise AnalysisError(
                "candidate Casimir fails the structure conditions "
                f"(residual J {report.residual_J:.3e}, R {report.residual_R:.3e})")
    if isinstance(phi, str):
        phi = ex.parse_expr(phi, tuple(f"z{i}" for i in range(len(casimirs) + 1)))
    candidate = LyapunovCandidate(model.H, phi, casimirs, model.state_names,
                                  x_star=x_star)
    report = check_minimum(candidate, x_star)
    candidate.minimum_report = report
    return candidate, report


def check_minimum(candidate: Hamiltonian, x_star) -> MinimumReport:
    """Certify a strict local minimum numerically: central-difference
    gradient with h = 1e-6 below 1e-6, smallest Hessian eigenvalue above
    1e-8."""
    x_star = np.asarray(x_star, dtype=float)
    value = candidate.value(x_star)
    n = x_star.size
    grad = np.empty(n)
    for i in range(n):
        h = 1e-6
        xp = x_star.copy()
        xm = x_star.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (candidate.value(xp) - candidate.value(xm)) / (2 * h)
    hess_min = float(np.linalg.eigvalsh(candidate.hessian(x_star)).min())
    return MinimumReport(x_star=x_star, value=float(value),
                         gradient_norm=float(np.linalg.norm(grad)),
                         hessian_min_eig=hess_min)
