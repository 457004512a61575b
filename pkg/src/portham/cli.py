"""Command-line front end.

Loads model files, runs verification, simulation, analysis, and
synthesis pipelines, and emits CSV trajectories plus JSON reports.
Every report shares the envelope {tool, version, seed, checks: [...]}
and the process exits 0 when all checks pass, 1 when a check fails,
and 2 on usage or file-format problems.

Model files are JSON documents:

    {"kind": "phs" | "iohs" | "msd-graph",
     "state": ["q", "p"],
     "J": [[0, 1], [-1, 0]],          entries: numbers or expressions
     "R": [[0, 0], [0, 0.1]],
     "G": [[0], [1]],
     "hamiltonian": {"quadratic": {"Q": ..., "b": ..., "c": ...}}
                    or {"expr": "0.5*p^2 + 1 - cos(q)"},
     "C": ["q"],                      iohs only: output expressions
     "P": ..., "M": ..., "S": ...,    optional alternate-output data
     "rayleigh": {"GR": [[0], [1]], "expr": "0.15*f1^2"}}

msd-graph documents instead carry {nodes, springs, dampers, actuated}
as described in the network builder.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    SteadyStateError,
    linear_casimirs,
    shifted_system,
    steady_state,
)
from .energyport import (
    IohModel,
    StaticEnergyFeedback,
    dc_loop_gain_stability,
    general_p_feedback,
    ioh_to_phs,
    phs_to_ioh,
    positive_feedback,
    static_energy_feedback,
    validate_ioh,
)
from .expr import ExprError, parse_expr
from .model import (
    ExpressionHamiltonian,
    ExtendedPhsModel,
    ModelError,
    PhsModel,
    QuadraticHamiltonian,
    Rayleigh,
    SignalSpec,
    ValidationFailure,
    build_extended,
    validate_phs,
)
from .netbuild import GraphError, MsdGraph, build_msd
from .simulate import SimulationError, Trajectory, energy_audit, simulate_ioh, simulate_phs
from .synthesis import (
    IdaMatchingError,
    SynthesisError,
    closedloop_casimir_search,
    damping_injection,
    ida_pbc_linear,
    interconnect_jint,
    negative_feedback,
    reduce_to_state_feedback,
)

TOOL = "portham"


class CliError(Exception):
    """Bad usage or unreadable/ill-formed input: exit code 2."""


class ValidationAbort(Exception):
    """A model file failed its eager structural checks: exit code 1."""

    def __init__(self, path, report):
        super().__init__(f"{path}: validation failed")
        self.path = path
        self.report = report


# --- report plumbing ---------------------------------------------------------

def envelope(seed, checks):
    return {"tool": TOOL, "version": __version__, "seed": int(seed),
            "checks": checks}


def emit(doc):
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _exit_code(checks):
    return 0 if all(c.get("passed", True) for c in checks) else 1


def _report_checks(report, prefix=""):
    out = []
    for c in report.checks:
        d = c.as_dict()
        if prefix:
            d["name"] = f"{prefix}{d['name']}"
        out.append(d)
    return out


# --- model files --------------------------------------------------------------

def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as err:
        raise CliError(f"{path}: {err.strerror or err}") from None
    except json.JSONDecodeError as err:
        raise CliError(f"{path}: invalid JSON ({err})") from None


def _field(doc, key, path):
    if key not in doc:
        raise CliError(f"{path}: missing field '{key}'")
    return doc[key]


def _state_names(doc, path):
    state = _field(doc, "state", path)
    if (not isinstance(state, list) or not state
            or not all(isinstance(s, str) for s in state)):
        raise CliError(f"{path}.state: expected a non-empty list of names")
    return tuple(state)


def _hamiltonian(doc, names, path):
    h_doc = _field(doc, "hamiltonian", path)
    if not isinstance(h_doc, dict):
        raise CliError(f"{path}.hamiltonian: expected an object")
    if "quadratic" in h_doc:
        q_doc = h_doc["quadratic"]
        try:
            return QuadraticHamiltonian(q_doc["Q"], b=q_doc.get("b"),
                                        c=q_doc.get("c", 0.0))
        except (KeyError, TypeError, ValueError, ModelError) as err:
            raise CliError(f"{path}.hamiltonian.quadratic: {err}") from None
    if "expr" in h_doc:
        try:
            return ExpressionHamiltonian(parse_expr(h_doc["expr"], names))
        except ExprError as err:
            raise CliError(f"{path}.hamiltonian.expr: {err}") from None
    raise CliError(
        f"{path}.hamiltonian: expected {{quadratic: ...}} or {{expr: ...}}")


def _rayleigh(doc, path):
    r_doc = doc.get("rayleigh")
    if r_doc is None:
        return None
    try:
        g_r = np.asarray(r_doc["GR"], dtype=float)
        k = g_r.shape[1] if g_r.ndim == 2 else 1
        fn = parse_expr(r_doc["expr"], tuple(f"f{i + 1}" for i in range(k)))
        return Rayleigh(G_R=g_r, fn=fn)
    except (KeyError, TypeError, ValueError, ExprError) as err:
        raise CliError(f"{path}.rayleigh: {err}") from None


def load_model(path, seed=0):
    """Parse and eagerly validate a model file.

    Returns (model, validation report); msd-graph files come back as
    the assembled PhsModel.  Schema problems raise CliError, a failed
    structural check raises ValidationAbort carrying the report."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise CliError(f"{path}: model document must be a JSON object")
    kind = doc.get("kind")
    try:
        if kind == "msd-graph":
            model = build_msd(MsdGraph.from_dict(doc))
        elif kind == "phs":
            names = _state_names(doc, path)
            model = PhsModel(state_names=names,
                             J=_field(doc, "J", path),
                             R=_field(doc, "R", path),
                             G=_field(doc, "G", path),
                             H=_hamiltonian(doc, names, path),
                             rayleigh=_rayleigh(doc, path))
            if any(key in doc for key in ("P", "M", "S")):
                model = build_extended(model,
                                       P=_field(doc, "P", path),
                                       M=_field(doc, "M", path),
                                       S=_field(doc, "S", path), seed=seed)
        elif kind == "iohs":
            names = _state_names(doc, path)
            c_list = _field(doc, "C", path)
            if not isinstance(c_list, list):
                raise CliError(f"{path}.C: expected a list of expressions")
            model = IohModel(state_names=names,
                             J=_field(doc, "J", path),
                             R=_field(doc, "R", path),
                             H=_hamiltonian(doc, names, path), C=c_list)
        else:
            raise CliError(
                f"{path}.kind: expected 'phs', 'iohs', or 'msd-graph', "
                f"got {kind!r}")
    except ValidationFailure as err:
        raise ValidationAbort(path, err.report) from None
    except (ModelError, ExprError, GraphError) as err:
        raise CliError(f"{path}: {err}") from None
    report = (validate_ioh(model, seed=seed) if isinstance(model, IohModel)
              else validate_phs(model, seed=seed))
    if not report.passed:
        raise ValidationAbort(path, report)
    return model, report


def model_to_doc(model):
    """A loadable JSON document for a model with serializable energy."""
    h = model.H
    if isinstance(h, QuadraticHamiltonian):
        h_doc = {"quadratic": {"Q": h.Q.tolist(), "b": h.b.tolist(),
                               "c": float(h.c)}}
    elif isinstance(h, ExpressionHamiltonian):
        h_doc = {"expr": h.expr.to_source()}
    else:
        raise CliError("this model's energy has no file form "
                       "(only quadratic or expression Hamiltonians do)")
    if isinstance(model, IohModel):
        return {"kind": "iohs", "state": list(model.state_names),
                "J": model.J.entry_schema(), "R": model.R.entry_schema(),
                "hamiltonian": h_doc,
                "C": [c.to_source() for c in model.C]}
    doc = {"kind": "phs", "state": list(model.state_names),
           "J": model.J.entry_schema(), "R": model.R.entry_schema(),
           "G": model.G.entry_schema(), "hamiltonian": h_doc}
    if isinstance(model, ExtendedPhsModel):
        doc["P"] = model.P.entry_schema()
        doc["M"] = model.M.entry_schema()
        doc["S"] = model.S.entry_schema()
    if model.rayleigh is not None:
        doc["rayleigh"] = {"GR": model.rayleigh.G_R.entry_schema(),
                           "expr": model.rayleigh.fn.to_source()}
    return doc


def _write_json(path, doc):
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- small argv parsers --------------------------------------------------------

def _parse_vector(text, what):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise CliError(f"{what}: expected comma-separated numbers, "
                       f"got {text!r}") from None


def _parse_matrix(text, what):
    try:
        value = json.loads(text)
        return np.asarray(value, dtype=float)
    except (json.JSONDecodeError, TypeError, ValueError):
        raise CliError(f"{what}: expected a JSON matrix, got {text!r}") from None


def _input_spec(text, m):
    if text is None:
        return SignalSpec.zero(m)
    sources = [s.strip() for s in text.split(";")]
    if len(sources) != m:
        raise CliError(f"--input: model has {m} channel(s), got {len(sources)}")
    try:
        return SignalSpec.of_time(sources)
    except ExprError as err:
        raise CliError(f"--input: {err}") from None


def _require_phs(model, path):
    if isinstance(model, IohModel):
        raise CliError(f"{path}: this command needs a PHS model file")
    return model


def _require_ioh(model, path):
    if not isinstance(model, IohModel):
        raise CliError(f"{path}: this command needs an iohs model file")
    return model


# --- subcommands ---------------------------------------------------------------

def cmd_validate(args):
    try:
        _, report = load_model(args.model, seed=args.seed)
    except ValidationAbort as abort:
        emit(envelope(args.seed, _report_checks(abort.report)))
        return 1
    emit(envelope(args.seed, _report_checks(report)))
    return 0


def cmd_simulate(args):
    model, _ = load_model(args.model, seed=args.seed)
    x0 = _parse_vector(args.x0, "--x0")
    spec = _input_spec(args.input, model.m)
    runner = simulate_ioh if isinstance(model, IohModel) else simulate_phs
    try:
        traj = runner(model, spec, x0, t_end=args.t_end, h=args.dt,
                      method=args.method)
    except SimulationError as err:
        emit(envelope(args.seed, [{"name": "simulate", "passed": False,
                                   "error": str(err)}]))
        return 1
    check = {"name": "simulate", "passed": True, "method": traj.method,
             "steps": int(traj.t.size - 1), "final_H": float(traj.H[-1]),
             "final_x": traj.x[-1].tolist()}
    if args.out:
        traj.to_csv(args.out)
        check["csv"] = args.out
    if args.plot:
        from .plots import save_trajectory_figure
        check["figure"] = save_trajectory_figure(traj, args.plot)
    emit(envelope(args.seed, [check]))
    return 0


def cmd_audit(args):
    try:
        traj = Trajectory.from_csv(args.trajectory)
    except (OSError, ValueError) as err:
        raise CliError(f"{args.trajectory}: {err}") from None
    model, _ = load_model(args.model, seed=args.seed)
    try:
        report = energy_audit(traj, model)
    except SimulationError as err:
        raise CliError(str(err)) from None
    check = {"name": "energy-balance", **report.as_dict()}
    checks = [check]
    if args.plot:
        from .plots import save_audit_figure
        check["figure"] = save_audit_figure(traj, args.plot)
    emit(envelope(args.seed, checks))
    return _exit_code(checks)


def cmd_steady(args):
    model, _ = load_model(args.model, seed=args.seed)
    u_bar = _parse_vector(args.u, "--u")
    x_guess = None if args.x_guess is None else _parse_vector(args.x_guess,
                                                              "--x-guess")
    checks = []
    try:
        ss = steady_state(model, u_bar, x_guess=x_guess)
        checks.append({"name": "steady-state", "passed": True,
                       **ss.as_dict()})
        if args.shift:
            sh = shifted_system(model, ss)
            checks.append({"name": "shifted-curvature", "passed": True,
                           "convexity": sh.convexity,
                           "hessian_min_eig": float(sh.hessian_min_eig)})
    except (SteadyStateError, AnalysisError) as err:
        checks.append({"name": "steady-state", "passed": False,
                       "error": str(err)})
    emit(envelope(args.seed, checks))
    return _exit_code(checks)


def cmd_casimir(args):
    model, _ = load_model(args.model, seed=args.seed)
    try:
        basis = linear_casimirs(model)
    except AnalysisError as err:
        emit(envelope(args.seed, [{"name": "casimir-basis", "passed": False,
                                   "error": str(err)}]))
        return 1
    check = {"name": "casimir-basis", "passed": True,
             "dimension": len(basis), **basis.as_dict()}
    emit(envelope(args.seed, [check]))
    return 0


def cmd_compose(args):
    plant = _require_phs(load_model(args.plant, seed=args.seed)[0], args.plant)
    controller = _require_phs(load_model(args.controller, seed=args.seed)[0],
                              args.controller)
    try:
        if args.kind == "negative":
            closed = negative_feedback(plant, controller)
        else:
            if args.j_int is None:
                raise CliError("--j-int is required for kind 'jint'")
            closed = interconnect_jint(plant, controller,
                                       _parse_matrix(args.j_int, "--j-int"))
    except SynthesisError as err:
        emit(envelope(args.seed, [{"name": "compose", "passed": False,
                                   "error": str(err)}]))
        return 1
    report = validate_phs(closed.model, seed=args.seed)
    checks = [{"name": "compose", "passed": report.passed,
               "interconnection": args.kind,
               "state": list(closed.model.state_names)}]
    checks += _report_checks(report, prefix="closed-loop ")
    if args.out:
        _write_json(args.out, _closed_loop_doc(closed))
        checks[0]["model"] = args.out
    emit(envelope(args.seed, checks))
    return _exit_code(checks)


def _closed_loop_doc(closed):
    plant_h, ctrl_h = closed.plant.H, closed.controller.H
    if not (isinstance(plant_h, QuadraticHamiltonian)
            and isinstance(ctrl_h, QuadraticHamiltonian)):
        raise CliError("closed loop has no file form unless both energies "
                       "are quadratic")
    n1, n2 = closed.plant.n, closed.controller.n
    q = np.zeros((n1 + n2, n1 + n2))
    q[:n1, :n1] = plant_h.Q
    q[n1:, n1:] = ctrl_h.Q
    b = np.concatenate([plant_h.b, ctrl_h.b])
    model = closed.model
    return {"kind": "phs", "state": list(model.state_names),
            "J": model.J.entry_schema(), "R": model.R.entry_schema(),
            "G": model.G.entry_schema(),
            "hamiltonian": {"quadratic": {"Q": q.tolist(), "b": b.tolist(),
                                          "c": float(plant_h.c + ctrl_h.c)}}}


def cmd_synth_ci(args):
    plant = _require_phs(load_model(args.plant, seed=args.seed)[0], args.plant)
    controller = _require_phs(load_model(args.controller, seed=args.seed)[0],
                              args.controller)
    try:
        search = closedloop_casimir_search(plant, controller)
    except SynthesisError as err:
        emit(envelope(args.seed, [{"name": "casimir-search", "passed": False,
                                   "error": str(err)}]))
        return 1
    checks = [{"name": "casimir-search", "passed": search.complete,
               **search.as_dict()}]
    if search.complete:
        lam = _parse_vector(args.lam, "--lam")
        try:
            reduced = reduce_to_state_feedback(plant, controller, search.F,
                                               lam)
            injected = damping_injection(reduced.model,
                                         gain=args.damping_gain)
        except SynthesisError as err:
            checks.append({"name": "feedback", "passed": False,
                           "error": str(err)})
            emit(envelope(args.seed, checks))
            return 1
        checks.append({"name": "state-feedback", "passed": True,
                       **reduced.as_dict()})
        checks.append({"name": "damping", "passed": True,
                       **injected.as_dict()})
        if args.out:
            _write_json(args.out, {"feedback": reduced.as_dict(),
                                   "damping": injected.as_dict()})
            checks[0]["artifact"] = args.out
    emit(envelope(args.seed, checks))
    return _exit_code(checks)


def cmd_synth_ida(args):
    model = _require_phs(load_model(args.model, seed=args.seed)[0], args.model)
    j_d = _parse_matrix(args.j_d, "--j-d")
    r_d = _parse_matrix(args.r_d, "--r-d")
    q_s = _parse_matrix(args.q_s, "--q-s")
    b_s = None if args.b_s is None else _parse_vector(args.b_s, "--b-s")
    try:
        h_s = QuadraticHamiltonian(q_s, b=b_s)
        design = ida_pbc_linear(model, j_d, r_d, h_s)
    except (ModelError, SynthesisError) as err:
        failed = {"name": "ida-matching", "passed": False, "error": str(err)}
        if isinstance(err, IdaMatchingError):
            emit(envelope(args.seed, [failed]))
            return 1
        raise CliError(str(err)) from None
    checks = [{"name": "ida-matching", "passed": True, **design.as_dict()}]
    if args.out:
        _write_json(args.out, model_to_doc(design.model))
        checks[0]["model"] = args.out
    emit(envelope(args.seed, checks))
    return _exit_code(checks)


def cmd_ioh_convert(args):
    model, _ = load_model(args.model, seed=args.seed)
    if isinstance(model, IohModel):
        ext = ioh_to_phs(model)
        checks = [{"name": "ioh-to-phs", "passed": True,
                   "state": list(ext.state_names),
                   "G": ext.G.entry_schema(), "P": ext.P.entry_schema(),
                   "M": ext.M.entry_schema(), "S": ext.S.entry_schema()}]
        out_doc = model_to_doc(ext)
    else:
        if args.c is None:
            raise CliError("--c is required to turn a PHS file into an "
                           "input-output form")
        candidates = [s.strip() for s in args.c.split(";")]
        try:
            ioh = phs_to_ioh(model, candidates)
        except (ModelError, ExprError) as err:
            emit(envelope(args.seed, [{"name": "phs-to-ioh", "passed": False,
                                       "error": str(err)}]))
            return 1
        checks = [{"name": "phs-to-ioh", "passed": True,
                   "C": [c.to_source() for c in ioh.C]}]
        out_doc = model_to_doc(ioh)
    if args.out:
        _write_json(args.out, out_doc)
        checks[0]["model"] = args.out
    emit(envelope(args.seed, checks))
    return 0


def _coupling_names(m1, m2=0):
    first = tuple(f"y{i + 1}" for i in range(m1))
    if not m2:
        return first
    return first + tuple(f"w{i + 1}" for i in range(m2))


def cmd_ioh_feedback(args):
    sys1 = _require_ioh(load_model(args.sys1, seed=args.seed)[0], args.sys1)
    try:
        if args.kind == "static":
            if args.p is None:
                raise CliError("--p is required for static feedback")
            p_expr = parse_expr(args.p, _coupling_names(sys1.m))
            fb = StaticEnergyFeedback(P=p_expr)
            closed = static_energy_feedback(sys1, fb)

            def open_drift(x):
                return sys1.dynamics(x, fb.law(sys1.outputs(x)))
        else:
            if args.sys2 is None:
                raise CliError(f"kind '{args.kind}' needs two model files")
            sys2 = _require_ioh(load_model(args.sys2, seed=args.seed)[0],
                                args.sys2)
            n1 = sys1.n
            if args.kind == "positive":
                closed, _ = positive_feedback(sys1, sys2)

                def loop_inputs(x):
                    return sys2.outputs(x[n1:]), sys1.outputs(x[:n1])
            else:
                if args.p is None:
                    raise CliError("--p is required for general-p feedback")
                p_expr = parse_expr(args.p,
                                    _coupling_names(sys1.m, sys2.m))
                closed, _ = general_p_feedback(sys1, sys2, p_expr)

                def loop_inputs(x):
                    y = np.concatenate([sys1.outputs(x[:n1]),
                                        sys2.outputs(x[n1:])])
                    g = p_expr.eval_grad(y)[1]
                    return -g[:sys1.m], -g[sys1.m:]

            def open_drift(x):
                u1, u2 = loop_inputs(x)
                return np.concatenate([sys1.dynamics(x[:n1], u1),
                                       sys2.dynamics(x[n1:], u2)])
    except (ModelError, ExprError) as err:
        raise CliError(str(err)) from None
    report = validate_ioh(closed, seed=args.seed)
    checks = _report_checks(report, prefix="closed-loop ")
    # the closed loop at v = 0 must reproduce the terminated open systems
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(5):
        x = rng.uniform(-1.0, 1.0, closed.n)
        gap = closed.dynamics(x, np.zeros(closed.m)) - open_drift(x)
        worst = max(worst, float(np.abs(gap).max()))
    checks.insert(0, {"name": "ioh-feedback", "kind": args.kind,
                      "passed": report.passed and worst <= 1e-9,
                      "state": list(closed.state_names),
                      "loop_residual": worst})
    emit(envelope(args.seed, checks))
    return _exit_code(checks)


def cmd_dcgain(args):
    sys1 = _require_ioh(load_model(args.sys1, seed=args.seed)[0], args.sys1)
    sys2 = _require_ioh(load_model(args.sys2, seed=args.seed)[0], args.sys2)
    try:
        report = dc_loop_gain_stability(sys1, sys2)
    except (ModelError, AnalysisError) as err:
        emit(envelope(args.seed, [{"name": "dc-loop-gain", "passed": False,
                                   "error": str(err)}]))
        return 1
    check = {"name": "dc-loop-gain", "passed": bool(report.loop_gain_agrees),
             **report.as_dict()}
    emit(envelope(args.seed, [check]))
    return _exit_code([check])


def cmd_net_msd(args):
    doc = _read_json(args.graph)
    try:
        model = build_msd(MsdGraph.from_dict(doc))
    except GraphError as err:
        raise CliError(f"{args.graph}: {err}") from None
    report = validate_phs(model, seed=args.seed)
    checks = [{"name": "net-msd", "passed": report.passed,
               "state": list(model.state_names),
               "inputs": model.m}]
    checks += _report_checks(report)
    if args.out:
        _write_json(args.out, model_to_doc(model))
        checks[0]["model"] = args.out
    emit(envelope(args.seed, checks))
    return _exit_code(checks)


# --- parser ---------------------------------------------------------------------

def _add_seed(p):
    p.add_argument("--seed", type=int, default=0,
                   help="seed for sampled structural checks (default 0)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog=TOOL,
        description="Port-Hamiltonian modeling, simulation, and synthesis")
    parser.add_argument("--version", action="version",
                        version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="structural checks for a model file")
    p.add_argument("model")
    _add_seed(p)
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("simulate", help="integrate a model and write CSV")
    p.add_argument("model")
    p.add_argument("--x0", required=True, help="initial state, e.g. 1,0")
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--method", choices=("midpoint", "rk4"),
                   default="midpoint")
    p.add_argument("--input", default=None,
                   help="per-channel input expressions in t, "
                        "separated by ';' (default: zero)")
    p.add_argument("--out", default=None, help="trajectory CSV path")
    p.add_argument("--plot", default=None, help="trajectory figure path")
    _add_seed(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("audit", help="energy balance check for a saved run")
    p.add_argument("trajectory", help="trajectory CSV")
    p.add_argument("model")
    p.add_argument("--plot", default=None, help="audit figure path")
    _add_seed(p)
    p.set_defaults(handler=cmd_audit)

    p = sub.add_parser("steady", help="solve for a forced equilibrium")
    p.add_argument("model")
    p.add_argument("--u", required=True, help="constant input, e.g. 1.0")
    p.add_argument("--x-guess", default=None,
                   help="starting guess for non-quadratic energies")
    p.add_argument("--shift", action="store_true",
                   help="also report the shifted-energy curvature")
    _add_seed(p)
    p.set_defaults(handler=cmd_steady)

    p = sub.add_parser("casimir", help="linear conserved quantities")
    p.add_argument("model")
    _add_seed(p)
    p.set_defaults(handler=cmd_casimir)

    p = sub.add_parser("compose", help="close a plant-controller loop")
    p.add_argument("plant")
    p.add_argument("controller")
    p.add_argument("--kind", choices=("negative", "jint"), default="negative")
    p.add_argument("--j-int", default=None,
                   help="JSON port coupling matrix for kind 'jint'")
    p.add_argument("--out", default=None, help="closed-loop model file")
    _add_seed(p)
    p.set_defaults(handler=cmd_compose)

    p = sub.add_parser("synth-ci",
                       help="Casimir search, reduction, and damping")
    p.add_argument("plant")
    p.add_argument("controller")
    p.add_argument("--lam", default="0.0",
                   help="leaf offset, comma-separated (default 0)")
    p.add_argument("--damping-gain", type=float, default=1.0)
    p.add_argument("--out", default=None, help="feedback JSON path")
    _add_seed(p)
    p.set_defaults(handler=cmd_synth_ci)

    p = sub.add_parser("synth-ida", help="linear matching design")
    p.add_argument("model")
    p.add_argument("--j-d", required=True, help="desired J, JSON matrix")
    p.add_argument("--r-d", required=True, help="desired R, JSON matrix")
    p.add_argument("--q-s", required=True,
                   help="desired energy Hessian, JSON matrix")
    p.add_argument("--b-s", default=None,
                   help="desired energy linear term, comma-separated")
    p.add_argument("--out", default=None, help="target model file")
    _add_seed(p)
    p.set_defaults(handler=cmd_synth_ida)

    p = sub.add_parser("ioh-convert",
                       help="switch between output-map and port forms")
    p.add_argument("model")
    p.add_argument("--c", default=None,
                   help="candidate output expressions separated by ';' "
                        "(required for phs input)")
    p.add_argument("--out", default=None, help="converted model file")
    _add_seed(p)
    p.set_defaults(handler=cmd_ioh_convert)

    p = sub.add_parser("ioh-feedback", help="energy-shaping feedback loops")
    p.add_argument("sys1")
    p.add_argument("sys2", nargs="?", default=None)
    p.add_argument("--kind", choices=("positive", "static", "general-p"),
                   required=True)
    p.add_argument("--p", default=None,
                   help="coupling function over y1.. (and w1.. for "
                        "general-p)")
    _add_seed(p)
    p.set_defaults(handler=cmd_ioh_feedback)

    p = sub.add_parser("dcgain", help="dc loop gain stability test")
    p.add_argument("sys1")
    p.add_argument("sys2")
    _add_seed(p)
    p.set_defaults(handler=cmd_dcgain)

    p = sub.add_parser("net-msd", help="assemble a mass-spring-damper net")
    p.add_argument("graph")
    p.add_argument("--out", default=None, help="assembled model file")
    _add_seed(p)
    p.set_defaults(handler=cmd_net_msd)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)
    try:
        return args.handler(args)
    except ValidationAbort as abort:
        emit(envelope(args.seed, _report_checks(abort.report)))
        return 1
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
