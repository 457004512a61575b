"""Input-output Hamiltonian models and energy-port shaping.

An IOH model is

    dx/dt = [J(x) - R(x)] (dH/dx - dC^T/dx u),     y = C(x)

whose passive pairing is u against dy/dt rather than u against y.
Conversions to and from the port-Hamiltonian form with feedthrough are
verified pointwise.  Feedback built from static functions of the output
shapes the closed-loop Hamiltonian; the convention here is

    u_i = -dP/dy_i + v_i

so the interconnection energy enters with a plus sign,
H_cl = H_1 + H_2 + P(y_1, y_2), and the product coupling P = -y_1^T y_2
reproduces positive output feedback with H_cl = H_1 + H_2 - C_1^T C_2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .model import (
    Check,
    ExtendedPhsModel,
    Hamiltonian,
    MatrixField,
    ModelError,
    PhsModel,
    QuadraticHamiltonian,
    SumHamiltonian,
    ValidationReport,
    _coerce_field,
    build_extended,
    default_sample_states,
    disjoint_state_names,
    mf_matmul,
    mf_neg,
    mf_transpose,
)

IDENTITY_TOL = 1e-9


class ConversionError(ModelError):
    """A candidate output map fails the structural identities."""


# --- model type -------------------------------------------------------------

@dataclass
class IohModel:
    """Input-output Hamiltonian model with output map C."""

    state_names: tuple
    J: MatrixField
    R: MatrixField
    H: Hamiltonian
    C: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.state_names = tuple(self.state_names)
        n = len(self.state_names)
        if self.H.dim != n:
            raise ModelError(
                f"Hamiltonian dimension {self.H.dim} does not match {n} states")
        self.J = _coerce_field(self.J, self.state_names, n, n, "J")
        self.R = _coerce_field(self.R, self.state_names, n, n, "R")
        out = []
        for c in self.C:
            if isinstance(c, str):
                out.append(ex.parse_expr(c, self.state_names))
            else:
                if tuple(c.variables) != self.state_names:
                    raise ModelError("output expressions must use the state names")
                out.append(c)
        self.C = out
        if not self.C:
            raise ModelError("an IOH model needs at least one output")

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.C)

    def outputs(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([c.eval(x) for c in self.C])

    def output_jacobian(self, x):
        """dC/dx^T as an (m, n) array of exact gradients."""
        x = np.asarray(x, dtype=float)
        return np.vstack([c.eval_grad(x)[1] for c in self.C])

    def effective_effort(self, x, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.H.grad(x) - self.output_jacobian(x).T @ u

    def dynamics(self, x, u):
        x = np.asarray(x, dtype=float)
        return (self.J(x) - self.R(x)) @ self.effective_effort(x, u)

    def dissipation_rate(self, x, u) -> float:
        e = self.effective_effort(x, u)
        return float(e @ self.R(np.asarray(x, dtype=float)) @ e)

    def affine_outputs(self):
        """(Jc, c0) when every output is affine in the state, else None.
        Detected by exact equality of the output Jacobian at probe states."""
        probes = default_sample_states(self.n, seed=1, count=3)
        jac = self.output_jacobian(probes[0])
        for x in probes[1:]:
            if not np.array_equal(self.output_jacobian(x), jac):
                return None
        c0 = self.outputs(np.zeros(self.n))
        return jac, c0

    def linear_parts(self):
        if not (self.J.is_constant and self.R.is_constant):
            return None
        if not isinstance(self.H, QuadraticHamiltonian):
            return None
        affine = self.affine_outputs()
        if affine is None:
            return None
        jc, _ = affine
        zero = np.zeros(self.n)
        jr = self.J(zero) - self.R(zero)
        return jr @ self.H.Q, -jr @ jc.T, jr @ self.H.b


def validate_ioh(model: IohModel, sample_points=None, seed: int = 0) -> ValidationReport:
    if sample_points is None:
        sample_points = default_sample_states(model.n, seed=seed)
    worst_skew = 0.0
    worst_sym = 0.0
    worst_eig = 0.0
    for x in np.atleast_2d(sample_points):
        j = model.J(x)
        worst_skew = max(worst_skew, np.abs(j + j.T).max())
        r = model.R(x)
        worst_sym = max(worst_sym, np.abs(r - r.T).max())
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh((r + r.T) / 2).min()))
        model.output_jacobian(x)  # raises on domain trouble
    checks = [
        Check("J skew-symmetric", worst_skew <= 1e-10, worst_skew),
        Check("R symmetric", worst_sym <= 1e-10, worst_sym),
        Check("R positive semidefinite", worst_eig >= -1e-10, worst_eig),
    ]
    return ValidationReport(seed=seed, checks=checks)


def differentiated_output(model: IohModel, x, u):
    """dy/dt along the model field; the passive counterpart of u."""
    x = np.asarray(x, dtype=float)
    return model.output_jacobian(x) @ model.dynamics(x, u)


# --- conversions ------------------------------------------------------------

def _jacobian_field(model: IohModel) -> MatrixField:
    """dC^T/dx as an (n, m) matrix field, built by symbolic derivation
    of the output expressions."""
    entries = [[ex.derive(c.root, name) for c in model.C]
               for name in model.state_names]
    return MatrixField.parse(entries, model.state_names)


def ioh_to_phs(model: IohModel) -> ExtendedPhsModel:
    """Rewrite an IOH model as a PHS with feedthrough whose output is
    the differentiated output:

        G' = -J dC^T/dx     P = -R dC^T/dx
        M  = -dC/dx^T J dC^T/dx     S = dC/dx^T R dC^T/dx

    The dynamics input matrix is G' - P and the dissipation block
    [[R, P], [P^T, S]] is an exact rank factorisation, hence PSD."""
    jct = _jacobian_field(model)
    jc = mf_transpose(jct)
    g_prime = mf_neg(mf_matmul(model.J, jct))
    P = mf_neg(mf_matmul(model.R, jct))
    M = mf_neg(mf_matmul(jc, mf_matmul(model.J, jct)))
    S = mf_matmul(jc, mf_matmul(model.R, jct))
    g_dyn = MatrixField(
        [[_sub_entry(g_prime.entries[i][j], P.entries[i][j])
          for j in range(model.m)] for i in range(model.n)],
        model.state_names)
    base = PhsModel(state_names=model.state_names, J=model.J, R=model.R,
                    G=g_dyn, H=model.H, metadata=dict(model.metadata))
    return build_extended(base, P, M, S)


def _sub_entry(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return a - b
    wrap = lambda v: ex.n_num(v) if isinstance(v, float) else v
    return ex.n_sub(wrap(a), wrap(b))


def phs_to_ioh(model: PhsModel, candidate_c) -> IohModel:
    """Recognise a (possibly extended) PHS as an IOH model with output
    map `candidate_c`, by checking the four structural identities at
    sampled states.  The failing identity with the worst residual is
    named on rejection."""
    exprs = [ex.parse_expr(c, model.state_names) if isinstance(c, str) else c
             for c in candidate_c]
    m = len(exprs)
    if m != model.m:
        raise ConversionError(
            f"candidate has {m} outputs, model has {model.m} inputs")
    if isinstance(model, ExtendedPhsModel):
        p_of, m_of, s_of = model.P, model.M, model.S
        g_out = lambda x: model.G(x) + p_of(x)  # G' = G + P
    else:
        zero_nm = MatrixField.zeros(model.n, m, model.state_names)
        zero_mm = MatrixField.zeros(m, m, model.state_names)
        p_of, m_of, s_of = zero_nm, zero_mm, zero_mm
        g_out = model.G

    def jac_t(x):
        return np.vstack([c.eval_grad(x)[1] for c in exprs]).T

    residuals = {"G": 0.0, "P": 0.0, "M": 0.0, "S": 0.0}
    for x in default_sample_states(model.n):
        jct = jac_t(x)
        j, r = model.J(x), model.R(x)
        residuals["G"] = max(residuals["G"], np.abs(g_out(x) + j @ jct).max())
        residuals["P"] = max(residuals["P"], np.abs(p_of(x) + r @ jct).max())
        residuals["M"] = max(residuals["M"], np.abs(m_of(x) + jct.T @ j @ jct).max())
        residuals["S"] = max(residuals["S"], np.abs(s_of(x) - jct.T @ r @ jct).max())
    worst_name = max(residuals, key=residuals.get)
    if residuals[worst_name] > IDENTITY_TOL:
        raise ConversionError(
            f"output candidate fails the {worst_name}-identity "
            f"(residual {residuals[worst_name]:.3e})")
    return IohModel(state_names=model.state_names, J=model.J, R=model.R,
                    H=model.H, C=exprs, metadata=dict(model.metadata))


# --- output-coupled Hamiltonians -------------------------------------------

class ProductCouplingHamiltonian(Hamiltonian):
    """H_1(x_1) + H_2(x_2) - C_1(x_1)^T C_2(x_2) on the stacked state."""

    def __init__(self, H1, H2, C1, C2, idx1, idx2, dim):
        self.H1, self.H2 = H1, H2
        self.C1, self.C2 = C1, C2
        self.idx1 = np.asarray(idx1, dtype=int)
        self.idx2 = np.asarray(idx2, dtype=int)
        self.dim = dim

    def value_grad(self, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[self.idx1], x[self.idx2]
        v1, g1 = self.H1.value_grad(x1)
        v2, g2 = self.H2.value_grad(x2)
        pairs1 = [c.eval_grad(x1) for c in self.C1]
        pairs2 = [c.eval_grad(x2) for c in self.C2]
        c1 = np.array([p[0] for p in pairs1])
        c2 = np.array([p[0] for p in pairs2])
        jc1 = np.vstack([p[1] for p in pairs1])
        jc2 = np.vstack([p[1] for p in pairs2])
        grad = np.zeros(self.dim)
        grad[self.idx1] = g1 - jc1.T @ c2
        grad[self.idx2] = g2 - jc2.T @ c1
        return v1 + v2 - float(c1 @ c2), grad


class ShapedHamiltonian(Hamiltonian):
    """base(x) + P(C_1(x), ..., C_k(x)); P's variables map positionally
    onto the output expressions."""

    def __init__(self, base: Hamiltonian, C, P: ex.Expr):
        if len(P.variables) != len(C):
            raise ModelError(
                f"shaping function has {len(P.variables)} variables "
                f"for {len(C)} outputs")
        self.base = base
        self.C = list(C)
        self.P = P
        self.dim = base.dim

    def value_grad(self, x):
        x = np.asarray(x, dtype=float)
        vb, gb = self.base.value_grad(x)
        pairs = [c.eval_grad(x) for c in self.C]
        cvals = np.array([p[0] for p in pairs])
        jc = np.vstack([p[1] for p in pairs])
        pv, pg = self.P.eval_grad(cvals)
        return vb + pv, gb + jc.T @ pg


# --- feedback constructions -------------------------------------------------

def _stack(ioh1: IohModel, ioh2: IohModel):
    """Disjoint state names, lifted structure matrices and output lists."""
    stacked, rename = disjoint_state_names(ioh1.state_names, ioh2.state_names)
    n1, n2 = ioh1.n, ioh2.n
    idx1 = np.arange(n1)
    idx2 = np.arange(n1, n1 + n2)

    def lift_block(f1, f2):
        a = f1.lift(stacked)
        b = f2.lift(stacked, rename)
        top = [a.entries[i] + [0.0] * n2 for i in range(n1)]
        bottom = [[0.0] * n1 + b.entries[i] for i in range(n2)]
        return MatrixField(top + bottom, stacked)

    J = lift_block(ioh1.J, ioh2.J)
    R = lift_block(ioh1.R, ioh2.R)
    c_stacked = ([ex.expr_from_tree(c.root, stacked) for c in ioh1.C]
                 + [ex.expr_from_tree(ex.relabel(c.root, rename), stacked)
                    for c in ioh2.C])
    return stacked, idx1, idx2, J, R, c_stacked, rename


def positive_feedback(ioh1: IohModel, ioh2: IohModel):
    """Positive output feedback u_1 = y_2 + v_1, u_2 = y_1 + v_2.

    The loop is again IOH on the stacked state with
    H_cl = H_1 + H_2 - C_1^T C_2 and block-diagonal structure matrices."""
    if ioh1.m != ioh2.m:
        raise ModelError("output feedback needs matching port counts")
    stacked, idx1, idx2, J, R, c_stacked, rename = _stack(ioh1, ioh2)
    names2 = tuple(stacked[i] for i in idx2)
    c2 = [ex.expr_from_tree(ex.relabel(c.root, rename), names2) for c in ioh2.C]
    H_cl = ProductCouplingHamiltonian(ioh1.H, ioh2.H, ioh1.C, c2,
                                      idx1, idx2, len(stacked))
    closed = IohModel(state_names=stacked, J=J, R=R, H=H_cl, C=c_stacked,
                      metadata={"feedback": "positive"})
    return closed, H_cl


@dataclass
class StaticEnergyFeedback:
    """Static port termination u = -dP/dy + v for a shaping function P
    of the outputs (variables map positionally onto the outputs)."""

    P: ex.Expr

    def grad_y(self, y):
        return self.P.eval_grad(np.atleast_1d(np.asarray(y, dtype=float)))[1]

    def law(self, y):
        return -self.grad_y(y)


def static_energy_feedback(ioh: IohModel, fb: StaticEnergyFeedback) -> IohModel:
    """Close u = -dP/dy(C(x)) + v around one model: same J, R and C,
    shaped energy H_cl = H + P(C(x))."""
    if len(fb.P.variables) != ioh.m:
        raise ModelError(
            f"shaping function has {len(fb.P.variables)} variables, "
            f"model has {ioh.m} outputs")
    H_cl = ShapedHamiltonian(ioh.H, ioh.C, fb.P)
    return IohModel(state_names=ioh.state_names, J=ioh.J, R=ioh.R,
                    H=H_cl, C=list(ioh.C), metadata={"feedback": "static"})


def general_p_feedback(ioh1: IohModel, ioh2: IohModel, P: ex.Expr):
    """Couple two models through u_i = -dP/dy_i + v_i, giving
    H_int = H_1 + H_2 + P on the stacked state.  P's variables map
    positionally onto (y_1, then y_2).  With P = -y_1^T y_2 this is
    exactly positive output feedback."""
    if len(P.variables) != ioh1.m + ioh2.m:
        raise ModelError(
            f"coupling function has {len(P.variables)} variables for "
            f"{ioh1.m}+{ioh2.m} outputs")
    stacked, idx1, idx2, J, R, c_stacked, _ = _stack(ioh1, ioh2)
    base = SumHamiltonian([(ioh1.H, idx1), (ioh2.H, idx2)], len(stacked))
    H_int = ShapedHamiltonian(base, c_stacked, P)
    closed = IohModel(state_names=stacked, J=J, R=R, H=H_int, C=c_stacked,
                      metadata={"feedback": "general-p"})
    return closed, H_int


# --- dc loop gain -----------------------------------------------------------

@dataclass
class StabilityReport:
    dc_gain_1: np.ndarray
    dc_gain_2: np.ndarray
    loop_gain: float
    hessian_min_eig: float
    verdict: str
    loop_gain_agrees: bool

    def as_dict(self):
        return {"dc_gain_1": np.asarray(self.dc_gain_1).tolist(),
                "dc_gain_2": np.asarray(self.dc_gain_2).tolist(),
                "loop_gain": float(self.loop_gain),
                "hessian_min_eig": float(self.hessian_min_eig),
                "verdict": self.verdict,
                "loop_gain_agrees": bool(self.loop_gain_agrees)}


MARGINAL_BAND = 1e-9


def _linear_data(model: IohModel, which: str):
    if not isinstance(model.H, QuadraticHamiltonian):
        raise ModelError(f"system {which}: dc gain needs a quadratic Hamiltonian")
    affine = model.affine_outputs()
    if affine is None:
        raise ModelError(f"system {which}: dc gain needs affine outputs")
    q = model.H.Q
    if np.linalg.eigvalsh(q).min() <= 1e-12:
        raise ModelError(
            f"system {which}: component Hessian must be positive definite")
    return q, affine[0]


def dc_loop_gain_stability(ioh1: IohModel, ioh2: IohModel) -> StabilityReport:
    """Positive-feedback stability check for stable linear components.

    The dc gain of each component is Jc Q^{-1} Jc^T (steady output per
    unit constant input, from the stationarity equations); the loop is
    stable exactly when the closed-loop Hessian

        [[Q_1, -Jc_1^T Jc_2], [-Jc_2^T Jc_1, Q_2]]

    is positive definite, which is cross-checked against spectral radius
    of the dc gain product being below one."""
    q1, jc1 = _linear_data(ioh1, "1")
    q2, jc2 = _linear_data(ioh2, "2")
    if jc1.shape[0] != jc2.shape[0]:
        raise ModelError("output feedback needs matching port counts")
    g1 = jc1 @ np.linalg.solve(q1, jc1.T)
    g2 = jc2 @ np.linalg.solve(q2, jc2.T)
    loop_gain = float(np.abs(np.linalg.eigvals(g1 @ g2)).max())
    hess = np.block([[q1, -jc1.T @ jc2], [-jc2.T @ jc1, q2]])
    min_eig = float(np.linalg.eigvalsh(hess).min())
    if abs(min_eig) <= MARGINAL_BAND or abs(loop_gain - 1.0) <= MARGINAL_BAND:
        verdict = "marginal"
    elif min_eig > 0:
        verdict = "stable"
    else:
        verdict = "unstable"
    agrees = (verdict == "marginal") or ((min_eig > 0) == (loop_gain < 1.0))
    return StabilityReport(dc_gain_1=g1, dc_gain_2=g2, loop_gain=loop_gain,
                           hessian_min_eig=min_eig, verdict=verdict,
                           loop_gain_agrees=agrees)
