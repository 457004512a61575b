"""Core model types: Hamiltonian storage, state-dependent matrices, and
port-Hamiltonian models with structural validation.

A model is

    dx/dt = [J(x) - R(x)] dH/dx + G(x) u,      y = G(x)^T dH/dx

with J pointwise skew and R pointwise symmetric positive semidefinite.
Structural checks are sample-based: properties are tested at the origin
and at a batch of uniformly drawn states with a recorded seed, and the
worst violation is reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex

SKEW_TOL = 1e-10
PSD_TOL = 1e-10
SYM_TOL = 1e-10


class ModelError(ValueError):
    """Malformed model: dimensions, parse failures, bad parameters."""


class ValidationFailure(ModelError):
    """A structural check failed; carries the full report."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        super().__init__(f"structural validation failed: {failed}")


def default_sample_states(n: int, seed: int = 0, count: int = 32):
    """Origin plus `count` states drawn uniformly from [-1, 1]^n."""
    rng = np.random.default_rng(seed)
    return np.vstack([np.zeros((1, n)), rng.uniform(-1.0, 1.0, (count, n))])


# --- Hamiltonians -----------------------------------------------------------

class Hamiltonian:
    """Interface: value(x), grad(x), value_grad(x), hessian(x).

    `dim` is the number of state variables.  The gradient convention is
    a column: grad(x) has shape (dim,).
    """

    dim = 0

    def value(self, x) -> float:
        return self.value_grad(x)[0]

    def grad(self, x):
        return self.value_grad(x)[1]

    def value_grad(self, x):
        raise NotImplementedError

    def hessian(self, x):
        # central differences of the exact gradient
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.dim, self.dim))
        for i in range(self.dim):
            h = 1e-6 * (1.0 + abs(x[i]))
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            out[:, i] = (self.grad(xp) - self.grad(xm)) / (2.0 * h)
        return (out + out.T) / 2.0


class QuadraticHamiltonian(Hamiltonian):
    """H(x) = x^T Q x / 2 + b^T x + c with symmetric Q."""

    def __init__(self, Q, b=None, c: float = 0.0):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ModelError(f"Q must be square, got shape {Q.shape}")
        if np.abs(Q - Q.T).max() > 1e-12:
            raise ModelError("Q must be symmetric to 1e-12")
        self.Q = (Q + Q.T) / 2.0
        self.dim = Q.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)
        if self.b.shape != (self.dim,):
            raise ModelError(f"b must have shape ({self.dim},)")
        self.c = float(c)

    def value_grad(self, x):
        x = np.asarray(x, dtype=float)
        g = self.Q @ x + self.b
        return 0.5 * float(x @ self.Q @ x) + float(self.b @ x) + self.c, g

    def hessian(self, x):
        return self.Q.copy()


class ExpressionHamiltonian(Hamiltonian):
    """H given as an expression over the state names."""

    def __init__(self, expression: ex.Expr):
        self.expr = expression
        self.dim = len(expression.variables)

    def value_grad(self, x):
        return self.expr.eval_grad(np.asarray(x, dtype=float))


class SumHamiltonian(Hamiltonian):
    """Sum of Hamiltonians acting on disjoint slices of a stacked state."""

    def __init__(self, parts, dim: int):
        # parts: list of (Hamiltonian, index array into the stacked state)
        self.parts = [(h, np.asarray(idx, dtype=int)) for h, idx in parts]
        self.dim = dim

    def value_grad(self, x):
        x = np.asarray(x, dtype=float)
        total = 0.0
        grad = np.zeros(self.dim)
        for h, idx in self.parts:
            v, g = h.value_grad(x[idx])
            total += v
            grad[idx] += g
        return total, grad

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.dim, self.dim))
        for h, idx in self.parts:
            out[np.ix_(idx, idx)] += h.hessian(x[idx])
        return out


class AffineMapHamiltonian(Hamiltonian):
    """H_base(A x + b): the base Hamiltonian read through an affine map."""

    def __init__(self, base: Hamiltonian, A, b):
        self.base = base
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.A.shape[0] != base.dim or self.b.shape != (base.dim,):
            raise ModelError(
                f"affine map shape {self.A.shape} with offset {self.b.shape} "
                f"does not match base dim {base.dim}")
        self.dim = self.A.shape[1]

    def value_grad(self, x):
        z = self.A @ np.asarray(x, dtype=float) + self.b
        v, g = self.base.value_grad(z)
        return v, self.A.T @ g

    def hessian(self, x):
        z = self.A @ np.asarray(x, dtype=float) + self.b
        return self.A.T @ self.base.hessian(z) @ self.A


def hamiltonian_value_grad(H: Hamiltonian, x):
    """Value and column gradient of a Hamiltonian at a state."""
    x = np.asarray(x, dtype=float)
    if x.shape != (H.dim,):
        raise ModelError(f"state must have shape ({H.dim},), got {x.shape}")
    return H.value_grad(x)


# --- state-dependent matrices -------------------------------------------

class MatrixField:
    """Matrix whose entries are constants or expressions in the state.

    Constant fields (no expression entries) evaluate to a cached array.
    """

    def __init__(self, entries, names):
        self.names = tuple(names)
        self.entries = [list(row) for row in entries]
        self.shape = (len(self.entries), len(self.entries[0]) if self.entries else 0)
        for row in self.entries:
            if len(row) != self.shape[1]:
                raise ModelError("ragged matrix entries")
        self._const = None
        if all(isinstance(v, (int, float)) for row in self.entries for v in row):
            self._const = np.array(
                [[float(v) for v in row] for row in self.entries], dtype=float)

    @classmethod
    def constant(cls, array, names=()):
        array = np.atleast_2d(np.asarray(array, dtype=float))
        return cls(array.tolist(), names)

    @classmethod
    def parse(cls, rows, names):
        names = tuple(names)
        entries = []
        for row in rows:
            out = []
            for item in row:
                if isinstance(item, str):
                    out.append(ex.parse_expr(item, names).root)
                elif isinstance(item, (int, float)):
                    out.append(float(item))
                else:
                    out.append(item)  # already a tree
            entries.append(out)
        return cls(entries, names)

    @classmethod
    def zeros(cls, rows, cols, names=()):
        return cls.constant(np.zeros((rows, cols)), names)

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    def __call__(self, x):
        if self._const is not None:
            return self._const
        env = dict(zip(self.names, np.asarray(x, dtype=float)))
        out = np.empty(self.shape)
        for i, row in enumerate(self.entries):
            for j, entry in enumerate(row):
                if isinstance(entry, float):
                    out[i, j] = entry
                else:
                    out[i, j] = ex._check_finite(ex._eval(entry, env))
        return out

    def entry_schema(self):
        """Entries as JSON-ready values: floats stay floats, expressions
        become their printed source."""
        return [[v if isinstance(v, float) else ex.to_source(v)
                 for v in row] for row in self.entries]

    def lift(self, names, rename=None):
        """The same matrix over a wider (or renamed) state tuple."""
        rename = rename or {}
        entries = [[v if isinstance(v, float) else ex.relabel(v, rename)
                    for v in row] for row in self.entries]
        return MatrixField(entries, names)


def _as_tree(v):
    return ex.n_num(v) if isinstance(v, float) else v


def _entry_add(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return a + b
    if isinstance(a, float) and a == 0.0:
        return b
    if isinstance(b, float) and b == 0.0:
        return a
    return ex.n_add(_as_tree(a), _as_tree(b))


def _entry_mul(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return a * b
    if (isinstance(a, float) and a == 0.0) or (isinstance(b, float) and b == 0.0):
        return 0.0
    node = ex.n_mul(_as_tree(a), _as_tree(b))
    c = ex._const_value(node)
    return c if c is not None else node


def _entry_neg(a):
    if isinstance(a, float):
        return -a
    return ex.n_neg(a)


def mf_matmul(a: MatrixField, b: MatrixField) -> MatrixField:
    if a.names != b.names:
        raise ModelError("matrix fields over different state tuples")
    if a.shape[1] != b.shape[0]:
        raise ModelError(f"shape mismatch {a.shape} x {b.shape}")
    if a.is_constant and b.is_constant:
        return MatrixField.constant(a._const @ b._const, a.names)
    rows, inner = a.shape
    cols = b.shape[1]
    entries = []
    for i in range(rows):
        row = []
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc = _entry_add(acc, _entry_mul(a.entries[i][k], b.entries[k][j]))
            row.append(acc)
        entries.append(row)
    return MatrixField(entries, a.names)


def mf_add(a: MatrixField, b: MatrixField) -> MatrixField:
    if a.names != b.names or a.shape != b.shape:
        raise ModelError("matrix fields not conformable")
    if a.is_constant and b.is_constant:
        return MatrixField.constant(a._const + b._const, a.names)
    entries = [[_entry_add(a.entries[i][j], b.entries[i][j])
                for j in range(a.shape[1])] for i in range(a.shape[0])]
    return MatrixField(entries, a.names)


def mf_neg(a: MatrixField) -> MatrixField:
    if a.is_constant:
        return MatrixField.constant(-a._const, a.names)
    return MatrixField([[_entry_neg(v) for v in row] for row in a.entries], a.names)


def mf_transpose(a: MatrixField) -> MatrixField:
    entries = [[a.entries[i][j] for i in range(a.shape[0])]
               for j in range(a.shape[1])]
    return MatrixField(entries, a.names)


def mf_block(blocks) -> MatrixField:
    """Assemble a block matrix from a 2-D list of MatrixFields that all
    share one state tuple."""
    names = blocks[0][0].names
    entries = []
    for brow in blocks:
        height = brow[0].shape[0]
        for b in brow:
            if b.names != names or b.shape[0] != height:
                raise ModelError("inconsistent blocks")
        for i in range(height):
            row = []
            for b in brow:
                row.extend(b.entries[i])
            entries.append(row)
    return MatrixField(entries, names)


# --- Rayleigh dissipation ---------------------------------------------------

@dataclass
class Rayleigh:
    """Dissipation through a function of resistive flows f_R = G_R^T dH/dx.

    `fn` is an expression over the flow names; the resistive effort is
    its gradient evaluated at f_R.
    """

    G_R: MatrixField
    fn: ex.Expr

    def __post_init__(self):
        if not isinstance(self.G_R, MatrixField):
            g = np.asarray(self.G_R, dtype=float)
            if g.ndim == 1:
                g = g.reshape(-1, 1)
            self.G_R = MatrixField.constant(g)

    @property
    def n_flows(self) -> int:
        return len(self.fn.variables)

    def effort(self, flows):
        _, grad = self.fn.eval_grad(np.asarray(flows, dtype=float))
        return grad


# --- models -----------------------------------------------------------------

def disjoint_state_names(names1, names2):
    """Stack two name tuples, suffixing clashes in the second.

    Returns (stacked, rename) where `rename` maps original second-system
    names to their stacked spellings."""
    used = set(names1)
    rename = {}
    out2 = []
    for name in names2:
        new = name
        suffix = 2
        while new in used:
            new = f"{name}_{suffix}"
            suffix += 1
        used.add(new)
        out2.append(new)
        if new != name:
            rename[name] = new
    return tuple(list(names1) + out2), rename


def _has_expression_entries(value):
    return (isinstance(value, (list, tuple))
            and any(isinstance(v, str) for row in value for v in row))


def _coerce_field(value, names, rows, cols, what):
    if isinstance(value, MatrixField):
        field_ = value
    elif _has_expression_entries(value):
        field_ = MatrixField.parse(value, names)
    else:
        field_ = MatrixField.constant(value, names)
    if field_.shape != (rows, cols):
        raise ModelError(f"{what} must have shape ({rows}, {cols}), got {field_.shape}")
    if field_.names != tuple(names):
        field_ = MatrixField(field_.entries, names)
    return field_


@dataclass
class PhsModel:
    """Input-state-output port-Hamiltonian model."""

    state_names: tuple
    J: MatrixField
    R: MatrixField
    G: MatrixField
    H: Hamiltonian
    rayleigh: Rayleigh | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.state_names = tuple(self.state_names)
        n = len(self.state_names)
        if self.H.dim != n:
            raise ModelError(
                f"Hamiltonian dimension {self.H.dim} does not match {n} states")
        self.J = _coerce_field(self.J, self.state_names, n, n, "J")
        self.R = _coerce_field(self.R, self.state_names, n, n, "R")
        if not isinstance(self.G, MatrixField):
            if _has_expression_entries(self.G):
                self.G = MatrixField.parse(self.G, self.state_names)
            else:
                g = np.asarray(self.G, dtype=float)
                if g.ndim == 1:
                    g = g.reshape(-1, 1)
                self.G = MatrixField.constant(g, self.state_names)
        if self.G.shape[0] != n:
            raise ModelError(f"G must have {n} rows, got {self.G.shape[0]}")
        if self.G.names != self.state_names:
            self.G = MatrixField(self.G.entries, self.state_names)
        if self.rayleigh is not None:
            if self.rayleigh.G_R.shape[0] != n:
                raise ModelError("Rayleigh port matrix must have one row per state")
            if self.rayleigh.G_R.shape[1] != self.rayleigh.n_flows:
                raise ModelError("Rayleigh flow count does not match G_R columns")

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return self.G.shape[1]

    def grad_H(self, x):
        return self.H.grad(x)

    def output(self, x, u):
        return self.G(x).T @ self.H.grad(x)

    def dynamics(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        g = self.H.grad(x)
        if self.rayleigh is not None:
            gr = self.rayleigh.G_R(x)
            flows = gr.T @ g
            return self.J(x) @ g - gr @ self.rayleigh.effort(flows) + self.G(x) @ u
        return (self.J(x) - self.R(x)) @ g + self.G(x) @ u

    def dissipation_rate(self, x, u) -> float:
        """Instantaneous dissipated power, from the structure matrices."""
        g = self.H.grad(x)
        if self.rayleigh is not None:
            flows = self.rayleigh.G_R(x).T @ g
            return float(flows @ self.rayleigh.effort(flows))
        return float(g @ self.R(x) @ g)

    def linear_parts(self):
        """(A, B, c) with dx/dt = A x + B u + c when the model is linear
        time-invariant, else None."""
        if self.rayleigh is not None:
            return None
        if not (self.J.is_constant and self.R.is_constant and self.G.is_constant):
            return None
        if not isinstance(self.H, QuadraticHamiltonian):
            return None
        zero = np.zeros(self.n)
        jr = self.J(zero) - self.R(zero)
        return jr @ self.H.Q, self.G(zero), jr @ self.H.b


def phs_vector_field(model: PhsModel, x, u):
    """State derivative and output of a PHS model at (x, u)."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (model.n,):
        raise ModelError(f"state must have shape ({model.n},), got {x.shape}")
    if u.shape != (model.m,):
        raise ModelError(f"input must have shape ({model.m},), got {u.shape}")
    return model.dynamics(x, u), model.output(x, u)


# --- validation -------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "passed": bool(self.passed),
                "worst": float(self.worst), "detail": self.detail}


@dataclass
class ValidationReport:
    seed: int
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self):
        return {"seed": self.seed, "passed": self.passed,
                "checks": [c.as_dict() for c in self.checks]}


def validate_phs(model: PhsModel, sample_points=None, seed: int = 0) -> ValidationReport:
    """Sample-based structural checks: J skew, R symmetric PSD, and for
    Rayleigh models monotonicity of the dissipation law."""
    if sample_points is None:
        sample_points = default_sample_states(model.n, seed=seed)
    else:
        sample_points = np.atleast_2d(np.asarray(sample_points, dtype=float))
    checks = []

    worst_skew = 0.0
    worst_sym = 0.0
    worst_eig = 0.0
    worst_mono = 0.0
    for x in sample_points:
        j = model.J(x)
        worst_skew = max(worst_skew, np.abs(j + j.T).max())
        r = model.R(x)
        worst_sym = max(worst_sym, np.abs(r - r.T).max())
        eigs = np.linalg.eigvalsh((r + r.T) / 2.0)
        worst_eig = min(worst_eig, float(eigs.min()))
        if model.rayleigh is not None:
            flows = model.rayleigh.G_R(x).T @ model.H.grad(x)
            worst_mono = min(worst_mono, float(flows @ model.rayleigh.effort(flows)))
    checks.append(Check("J skew-symmetric", worst_skew <= SKEW_TOL, worst_skew))
    checks.append(Check("R symmetric", worst_sym <= SYM_TOL, worst_sym))
    checks.append(Check("R positive semidefinite", worst_eig >= -PSD_TOL, worst_eig,
                        "smallest eigenvalue over samples"))
    if model.rayleigh is not None:
        checks.append(Check("Rayleigh dissipation monotone", worst_mono >= -PSD_TOL,
                            worst_mono, "smallest f^T (dR/df) over samples"))
    return ValidationReport(seed=seed, checks=checks)


# --- alternate-output extension -------------------------------------------

@dataclass
class ExtendedPhsModel(PhsModel):
    """PHS with feedthrough: y = (G + 2P)^T dH/dx + (M + S) u.

    G stays the input matrix of the dynamics.  Acceptability requires M
    skew, S symmetric, and the block [[R, P], [P^T, S]] pointwise PSD.
    """

    P: MatrixField = None
    M: MatrixField = None
    S: MatrixField = None

    def __post_init__(self):
        super().__post_init__()
        if self.rayleigh is not None:
            raise ModelError("feedthrough extension of a Rayleigh model "
                             "is not supported; express the loss as an R matrix")
        n, m = self.n, self.m
        self.P = _coerce_field(self.P, self.state_names, n, m, "P")
        self.M = _coerce_field(self.M, self.state_names, m, m, "M")
        self.S = _coerce_field(self.S, self.state_names, m, m, "S")

    def output(self, x, u):
        g = self.H.grad(x)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return (self.G(x) + 2.0 * self.P(x)).T @ g + (self.M(x) + self.S(x)) @ u

    def dissipation_rate(self, x, u) -> float:
        g = self.H.grad(x)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        w = np.concatenate([g, u])
        r, p, s = self.R(x), self.P(x), self.S(x)
        blk = np.block([[r, p], [p.T, s]])
        return float(w @ blk @ w)

    def linear_parts(self):
        return None if not isinstance(self.H, QuadraticHamiltonian) else super().linear_parts()


def build_extended(model: PhsModel, P, M, S, sample_points=None,
                   seed: int = 0) -> ExtendedPhsModel:
    """Attach feedthrough terms to a model, verifying M skew, S symmetric,
    and PSD-ness of the dissipation block [[R, P], [P^T, S]] at samples."""
    extended = ExtendedPhsModel(
        state_names=model.state_names, J=model.J, R=model.R, G=model.G,
        H=model.H, rayleigh=model.rayleigh, metadata=dict(model.metadata),
        P=P, M=M, S=S)
    if sample_points is None:
        sample_points = default_sample_states(model.n, seed=seed)
    worst_skew = 0.0
    worst_sym = 0.0
    worst_eig = 0.0
    for x in np.atleast_2d(sample_points):
        m_ = extended.M(x)
        worst_skew = max(worst_skew, np.abs(m_ + m_.T).max())
        s_ = extended.S(x)
        worst_sym = max(worst_sym, np.abs(s_ - s_.T).max())
        blk = np.block([[extended.R(x), extended.P(x)],
                        [extended.P(x).T, extended.S(x)]])
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh((blk + blk.T) / 2).min()))
    checks = [
        Check("M skew-symmetric", worst_skew <= SKEW_TOL, worst_skew),
        Check("S symmetric", worst_sym <= SYM_TOL, worst_sym),
        Check("dissipation block PSD", worst_eig >= -PSD_TOL, worst_eig,
              "smallest eigenvalue of [[R, P], [P^T, S]] over samples"),
    ]
    report = ValidationReport(seed=seed, checks=checks)
    if not report.passed:
        raise ValidationFailure(report)
    return extended


# --- input signals ----------------------------------------------------------

class SignalSpec:
    """Open-loop input: zero, a constant vector, or one time expression
    per channel."""

    def __init__(self, kind: str, channels: int, data=None):
        if kind not in ("zero", "constant", "expr"):
            raise ModelError(f"unknown signal kind {kind!r}")
        self.kind = kind
        self.channels = int(channels)
        self.data = data

    @classmethod
    def zero(cls, channels: int):
        return cls("zero", channels)

    @classmethod
    def constant(cls, values):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls("constant", values.size, values)

    @classmethod
    def of_time(cls, sources):
        exprs = [ex.parse_expr(s, ("t",)) if isinstance(s, str) else s
                 for s in sources]
        return cls("expr", len(exprs), exprs)

    def __call__(self, t: float):
        if self.kind == "zero":
            return np.zeros(self.channels)
        if self.kind == "constant":
            return self.data.copy()
        return np.array([e.eval([t]) for e in self.data])
