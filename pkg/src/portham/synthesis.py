"""Controller synthesis by interconnection and energy shaping.

A dynamic controller is itself a port-Hamiltonian model; closing a
power-preserving loop around the plant gives a composite PHS whose
energy is the sum of the parts.  Set-point control then proceeds by
finding closed-loop Casimirs (structural invariants tying controller
and plant coordinates), reducing the controller to static state
feedback on an invariant leaf, and adding output damping.  For linear
targets the interconnection-and-damping route solves the matching
equation directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from .model import (
    AffineMapHamiltonian,
    Hamiltonian,
    MatrixField,
    ModelError,
    PhsModel,
    QuadraticHamiltonian,
    SumHamiltonian,
    default_sample_states,
    disjoint_state_names,
    mf_add,
    mf_block,
    mf_matmul,
    mf_neg,
    mf_transpose,
)

STRUCTURE_TOL = 1e-10
MATCH_TOL = 1e-10
RANK_RTOL = 1e-10


class SynthesisError(ValueError):
    pass


class IdaMatchingError(SynthesisError):
    """The desired structure violates the matching equation."""


@dataclass
class FeedbackLaw:
    """A static control law u = law(x), usable directly as a simulation
    input.

    `kind` records the synthesis route; the optional fields carry what
    that route produced: the shaped energy H_s, an equivalent plant
    model running under the law, leaf data (F, lam) from a Casimir
    reduction, a damping gain, or affine coefficients (K, k0) with the
    matching residual."""

    kind: str
    law: Callable
    H_s: Hamiltonian | None = None
    model: PhsModel | None = None
    F: np.ndarray | None = None
    lam: np.ndarray | None = None
    gain: float | None = None
    K: np.ndarray | None = None
    k0: np.ndarray | None = None
    matching_residual: float | None = None

    def __call__(self, t, x):
        return self.law(x)

    def as_dict(self):
        out = {"kind": self.kind}
        for name in ("F", "lam", "K", "k0"):
            value = getattr(self, name)
            if value is not None:
                out[name] = np.asarray(value).tolist()
        if self.gain is not None:
            out["gain"] = float(self.gain)
        if self.matching_residual is not None:
            out["matching_residual"] = float(self.matching_residual)
        return out


# --- interconnection ----------------------------------------------------------

@dataclass
class ClosedLoopPhs:
    """A plant-controller loop as one PHS, keeping the split around for
    Casimir search and reduction.  Controller coordinates sit last in
    the stacked state."""

    model: PhsModel
    plant: PhsModel
    controller: PhsModel

    @property
    def n_plant(self) -> int:
        return self.plant.n

    @property
    def n_controller(self) -> int:
        return self.controller.n


def _lift_pair(plant: PhsModel, controller: PhsModel):
    stacked, rename = disjoint_state_names(plant.state_names,
                                           controller.state_names)
    n1, n2 = plant.n, controller.n

    def zeros(r, c):
        return MatrixField.zeros(r, c, stacked)

    j1 = plant.J.lift(stacked)
    j2 = controller.J.lift(stacked, rename)
    r1 = plant.R.lift(stacked)
    r2 = controller.R.lift(stacked, rename)
    g1 = plant.G.lift(stacked)
    g2 = controller.G.lift(stacked, rename)
    r_cl = mf_block([[r1, zeros(n1, n2)], [zeros(n2, n1), r2]])
    h_cl = SumHamiltonian([(plant.H, np.arange(n1)),
                           (controller.H, np.arange(n1, n1 + n2))], n1 + n2)
    return stacked, zeros, j1, j2, r1, r2, g1, g2, r_cl, h_cl


def negative_feedback(plant: PhsModel, controller: PhsModel) -> ClosedLoopPhs:
    """Standard power-preserving loop u = -y_c + v, u_c = y + v_c:

        J_cl = [[J, -G Gc^T], [Gc G^T, Jc]]

    with block-diagonal dissipation and input matrix, and added energies."""
    if plant.m != controller.m:
        raise SynthesisError(
            f"port counts differ: plant {plant.m}, controller {controller.m}")
    if plant.rayleigh is not None or controller.rayleigh is not None:
        raise SynthesisError("interconnection of Rayleigh models is not supported")
    stacked, zeros, j1, j2, r1, r2, g1, g2, r_cl, h_cl = _lift_pair(
        plant, controller)
    n1, n2 = plant.n, controller.n
    coupling = mf_matmul(g1, mf_transpose(g2))
    j_cl = mf_block([[j1, mf_neg(coupling)],
                     [mf_transpose(coupling), j2]])
    g_cl = mf_block([[g1, zeros(n1, controller.m)],
                     [zeros(n2, plant.m), g2]])
    model = PhsModel(state_names=stacked, J=j_cl, R=r_cl, G=g_cl, H=h_cl,
                     metadata={"interconnection": "negative-feedback",
                               "n_plant": n1, "n_controller": n2})
    return ClosedLoopPhs(model=model, plant=plant, controller=controller)


def interconnect_jint(plant: PhsModel, controller: PhsModel,
                      j_int) -> ClosedLoopPhs:
    """Couple two models through a constant skew matrix on the stacked
    ports: J_cl = blockdiag(J, Jc) + G_st J_int G_st^T with
    G_st = blockdiag(G, Gc).  J_int = [[0, -I], [I, 0]] recovers
    negative feedback."""
    if plant.rayleigh is not None or controller.rayleigh is not None:
        raise SynthesisError("interconnection of Rayleigh models is not supported")
    m_total = plant.m + controller.m
    j_int = np.asarray(j_int, dtype=float)
    if j_int.shape != (m_total, m_total):
        raise SynthesisError(
            f"J_int must have shape ({m_total}, {m_total}), got {j_int.shape}")
    if np.abs(j_int + j_int.T).max() > STRUCTURE_TOL:
        raise SynthesisError("J_int must be skew-symmetric")
    stacked, zeros, j1, j2, r1, r2, g1, g2, r_cl, h_cl = _lift_pair(
        plant, controller)
    n1, n2 = plant.n, controller.n
    g_st = mf_block([[g1, zeros(n1, controller.m)],
                     [zeros(n2, plant.m), g2]])
    j_diag = mf_block([[j1, zeros(n1, n2)], [zeros(n2, n1), j2]])
    j_port = mf_matmul(g_st, mf_matmul(
        MatrixField.constant(j_int, stacked), mf_transpose(g_st)))
    model = PhsModel(state_names=stacked, J=mf_add(j_diag, j_port), R=r_cl,
                     G=g_st, H=h_cl,
                     metadata={"interconnection": "j-int",
                               "n_plant": n1, "n_controller": n2})
    return ClosedLoopPhs(model=model, plant=plant, controller=controller)


# --- closed-loop Casimirs ------------------------------------------------------

@dataclass
class ClosedLoopCasimir:
    """xi_i - fx . x is invariant: its gradient kills both J_cl and R_cl."""

    xi_index: int
    fx: np.ndarray
    expr: ex.Expr
    residual_J: float
    residual_R: float

    def as_dict(self):
        return {"xi_index": self.xi_index, "fx": self.fx.tolist(),
                "expr": self.expr.to_source(),
                "residual_J": float(self.residual_J),
                "residual_R": float(self.residual_R)}


@dataclass
class ObstacleReport:
    """The interconnection admits the invariant but dissipation destroys
    it: the J-condition is solvable while min |R_cl w| stays positive."""

    xi_index: int
    fx: np.ndarray
    residual: float

    def as_dict(self):
        return {"xi_index": self.xi_index, "fx": self.fx.tolist(),
                "residual": float(self.residual),
                "dissipation_obstacle": True}


@dataclass
class CasimirSearchResult:
    casimirs: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    n_controller: int = 0

    @property
    def complete(self) -> bool:
        return len(self.casimirs) == self.n_controller

    @property
    def F(self) -> np.ndarray:
        """The leaf map with row i from the Casimir for coordinate i;
        only defined when the family is complete."""
        if not self.complete:
            raise SynthesisError("no complete Casimir family was found")
        n = self.casimirs[0].fx.size
        out = np.zeros((self.n_controller, n))
        for c in self.casimirs:
            out[c.xi_index] = c.fx
        return out

    def as_dict(self):
        return {"casimirs": [c.as_dict() for c in self.casimirs],
                "obstacles": [o.as_dict() for o in self.obstacles],
                "complete": self.complete}


def closedloop_casimir_search(plant, controller=None,
                              tol: float = STRUCTURE_TOL) -> CasimirSearchResult:
    """Look for Casimirs of the form xi_i - F_i x, one per controller
    coordinate, in the standard feedback loop of the two models (pass a
    ClosedLoopPhs instead to search an existing loop).

    For each i the gradient is w = (-F_i, e_i); J_cl w = 0 fixes F_i up
    to the null space of the plant columns, and the remaining freedom is
    spent minimising |R_cl w|.  A solvable J-condition whose best
    R-residual stays positive is reported as a dissipation obstacle."""
    if isinstance(plant, ClosedLoopPhs):
        if controller is not None:
            raise SynthesisError(
                "pass either a closed loop or a plant-controller pair")
        closed = plant
    else:
        closed = negative_feedback(plant, controller)
    model = closed.model
    if not (model.J.is_constant and model.R.is_constant):
        raise SynthesisError("Casimir search needs constant structure matrices")
    n, nc = closed.n_plant, closed.n_controller
    zero = np.zeros(model.n)
    j_cl = model.J(zero)
    r_cl = model.R(zero)
    jx, jxi = j_cl[:, :n], j_cl[:, n:]
    rx, rxi = r_cl[:, :n], r_cl[:, n:]
    result = CasimirSearchResult(n_controller=nc)
    scale = max(np.abs(j_cl).max(), np.abs(r_cl).max(), 1.0)
    for i in range(nc):
        e_i = np.zeros(nc)
        e_i[i] = 1.0
        b = jxi @ e_i
        f0, *_ = np.linalg.lstsq(jx, b, rcond=None)
        if np.linalg.norm(jx @ f0 - b) > tol * scale:
            continue  # not even the interconnection admits this invariant
        null = _null_columns(jx)
        # minimise |R_cl w| with w = (-f0 - null a, e_i)
        target = rxi @ e_i - rx @ f0
        if null.shape[1]:
            a, *_ = np.linalg.lstsq(rx @ null, target, rcond=None)
            f_star = f0 + null @ a
        else:
            f_star = f0
        w = np.concatenate([-f_star, e_i])
        res_j = float(np.abs(j_cl @ w).max())
        res_r = float(np.abs(r_cl @ w).max())
        if res_r > tol * scale:
            result.obstacles.append(ObstacleReport(
                xi_index=i, fx=f_star, residual=res_r))
            continue
        expr = _casimir_expression(i, f_star, model.state_names, n)
        result.casimirs.append(ClosedLoopCasimir(
            xi_index=i, fx=f_star, expr=expr,
            residual_J=res_j, residual_R=res_r))
    return result


def _null_columns(a):
    _, s, vh = np.linalg.svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(a.shape[1])
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    return vh[rank:].T


def _casimir_expression(i, fx, names, n):
    tree = ex.Var(names[n + i])
    for coeff, name in zip(fx, names[:n]):
        if coeff == 0.0:
            continue
        tree = ex.n_sub(tree, ex.n_mul(ex.n_num(float(coeff)), ex.Var(name)))
    return ex.expr_from_tree(tree, tuple(names))


# --- reduction to state feedback ----------------------------------------------

def reduce_to_state_feedback(plant: PhsModel, controller: PhsModel, F,
                             lam) -> FeedbackLaw:
    """Swap the dynamic controller for static state feedback on the
    invariant leaf xi = F x + lam.

    (F, lam) must come from a certified Casimir family (one row per
    controller coordinate); the rows are re-checked against the loop
    structure here.  The law is u = -Gc^T dHc/dxi at xi = F x + lam,
    and the returned model keeps the plant structure with the shaped
    energy H_s(x) = H(x) + Hc(F x + lam); its trajectories reproduce
    the closed-loop plant states started at a matching xi(0)."""
    closed = negative_feedback(plant, controller)
    n, nc = plant.n, controller.n
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape != (nc, n):
        raise SynthesisError(f"F must have shape ({nc}, {n})")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.shape != (nc,):
        raise SynthesisError(f"lam must have shape ({nc},)")
    zero = np.zeros(n + nc)
    j_cl = closed.model.J(zero)
    r_cl = closed.model.R(zero)
    scale = max(np.abs(j_cl).max(), np.abs(r_cl).max(), 1.0)
    for i in range(nc):
        w = np.concatenate([-F[i], np.eye(nc)[i]])
        residual = max(np.abs(j_cl @ w).max(), np.abs(r_cl @ w).max())
        if residual > STRUCTURE_TOL * scale:
            raise SynthesisError(
                f"(F, lam) is not certified: row {i} leaves a structure "
                f"residual of {residual:.3e}")

    def alpha(x):
        xi = F @ np.asarray(x, dtype=float) + lam
        return -controller.G(xi).T @ controller.H.grad(xi)

    h_s = SumHamiltonian(
        [(plant.H, np.arange(n)),
         (AffineMapHamiltonian(controller.H, F, lam), np.arange(n))], n)
    reduced = PhsModel(state_names=plant.state_names,
                       J=plant.J, R=plant.R, G=plant.G,
                       H=h_s, metadata={"reduction": "casimir-leaf"})
    return FeedbackLaw(kind="state-feedback", law=alpha, H_s=h_s,
                       model=reduced, F=F, lam=lam)


# --- damping injection ----------------------------------------------------------

def damping_injection(model: PhsModel, V=None, gain: float = 1.0) -> FeedbackLaw:
    """Extra output damping v = -c G^T dV/dx along a storage function V
    (the model energy when V is omitted).

    A Lyapunov candidate carrying a failed minimum certificate is
    rejected: damping along a function without a strict minimum at the
    target proves nothing."""
    if gain < 0:
        raise SynthesisError("damping gain must be nonnegative")
    if V is None:
        V = model.H
    report = getattr(V, "minimum_report", None)
    if report is not None and not report.is_strict_minimum:
        raise SynthesisError(
            "rejected Lyapunov candidate: no certified strict minimum "
            f"(gradient {report.gradient_norm:.3e}, "
            f"smallest Hessian eigenvalue {report.hessian_min_eig:.3e})")

    def law(x):
        x = np.asarray(x, dtype=float)
        return -gain * (model.G(x).T @ V.grad(x))

    return FeedbackLaw(kind="output-damping", law=law, H_s=V,
                       gain=float(gain))


@dataclass
class ConvergenceReport:
    final_error: float
    max_energy_rise: float
    settled: bool

    def as_dict(self):
        return {"final_error": float(self.final_error),
                "max_energy_rise": float(self.max_energy_rise),
                "settled": self.settled}


def convergence_audit(traj, x_target, tol: float = 1e-3) -> ConvergenceReport:
    """Did the run settle at the target, with the recorded energy acting
    as a Lyapunov function (never rising beyond rounding)?"""
    x_target = np.asarray(x_target, dtype=float)
    final_error = float(np.linalg.norm(traj.x[-1] - x_target))
    rises = np.diff(traj.H)
    max_rise = float(rises.max()) if rises.size else 0.0
    return ConvergenceReport(final_error=final_error,
                             max_energy_rise=max_rise,
                             settled=final_error <= tol)


# --- interconnection and damping assignment -------------------------------------

def ida_pbc_linear(model: PhsModel, j_d, r_d,
                   h_s: QuadraticHamiltonian) -> FeedbackLaw:
    """Solve the linear matching problem for a target structure
    (J_d, R_d, H_s).

    Requires a linear time-invariant plant with full-column-rank G.
    With G_perp a basis of the left annihilator of G, the target is
    admissible iff

        G_perp [(J_d - R_d) Q_s - (J - R) Q] = 0    (and the offset analogue)

    in which case u = G^+ [(J_d - R_d) dH_s - (J - R) dH] realises it
    exactly; the feedback is affine, u = K x + k0."""
    parts = model.linear_parts()
    if parts is None:
        raise SynthesisError("the matching solver needs a linear "
                             "time-invariant plant")
    if not isinstance(h_s, QuadraticHamiltonian) or h_s.dim != model.n:
        raise SynthesisError("the desired energy must be quadratic in the state")
    j_d = np.asarray(j_d, dtype=float)
    r_d = np.asarray(r_d, dtype=float)
    n = model.n
    if j_d.shape != (n, n) or r_d.shape != (n, n):
        raise SynthesisError(f"desired structure matrices must be ({n}, {n})")
    if np.abs(j_d + j_d.T).max() > STRUCTURE_TOL:
        raise SynthesisError("J_d must be skew-symmetric")
    if np.abs(r_d - r_d.T).max() > STRUCTURE_TOL:
        raise SynthesisError("R_d must be symmetric")
    if float(np.linalg.eigvalsh((r_d + r_d.T) / 2).min()) < -STRUCTURE_TOL:
        raise SynthesisError("R_d must be positive semidefinite")

    zero = np.zeros(n)
    g = model.G(zero)
    s = np.linalg.svd(g, compute_uv=False)
    if s.size == 0 or s[0] == 0.0 or np.sum(s > RANK_RTOL * s[0]) < g.shape[1]:
        raise SynthesisError("the input matrix G is rank-deficient")
    jr = model.J(zero) - model.R(zero)
    jr_d = j_d - r_d
    q, b = model.H.Q, model.H.b
    q_s, b_s = h_s.Q, h_s.b

    g_perp = _null_columns(g.T).T          # rows annihilate G from the left
    gap_q = jr_d @ q_s - jr @ q
    gap_b = jr_d @ b_s - jr @ b
    residual = 0.0
    if g_perp.size:
        residual = max(float(np.abs(g_perp @ gap_q).max()),
                       float(np.abs(g_perp @ gap_b).max()))
    if residual > MATCH_TOL:
        raise IdaMatchingError(
            f"desired structure is unreachable through G "
            f"(matching residual {residual:.3e})")
    g_pinv = np.linalg.pinv(g)
    K = g_pinv @ gap_q
    k0 = g_pinv @ gap_b
    closed = PhsModel(state_names=model.state_names, J=j_d, R=r_d, G=model.G,
                      H=h_s, metadata={"design": "ida-pbc"})

    def law(x):
        return K @ np.asarray(x, dtype=float) + k0

    return FeedbackLaw(kind="state-feedback", law=law, H_s=h_s, model=closed,
                       K=K, k0=k0, matching_residual=residual)
