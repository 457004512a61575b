"""portham: port-Hamiltonian modelling, simulation audits, and control
by interconnection at desk scale."""

__version__ = "0.1.0"

from .expr import Expr, ExprError, parse_expr
from .model import (
    ExpressionHamiltonian,
    ExtendedPhsModel,
    Hamiltonian,
    MatrixField,
    ModelError,
    PhsModel,
    QuadraticHamiltonian,
    Rayleigh,
    SignalSpec,
    SumHamiltonian,
    ValidationFailure,
    ValidationReport,
    build_extended,
    validate_phs,
)
from .simulate import (
    AuditReport,
    SimulationError,
    Trajectory,
    energy_audit,
    simulate_ioh,
    simulate_phs,
)
from .analysis import (
    AnalysisError,
    CasimirBasis,
    CasimirReport,
    LyapunovCandidate,
    MinimumReport,
    ShiftedSystem,
    SteadyState,
    SteadyStateError,
    check_minimum,
    energy_casimir_candidate,
    linear_casimirs,
    shifted_system,
    steady_state,
    verify_casimir,
)
from .synthesis import (
    CasimirSearchResult,
    ClosedLoopPhs,
    ConvergenceReport,
    FeedbackLaw,
    IdaMatchingError,
    SynthesisError,
    closedloop_casimir_search,
    convergence_audit,
    damping_injection,
    ida_pbc_linear,
    interconnect_jint,
    negative_feedback,
    reduce_to_state_feedback,
)
from .energyport import (
    ConversionError,
    IohModel,
    StabilityReport,
    StaticEnergyFeedback,
    dc_loop_gain_stability,
    differentiated_output,
    general_p_feedback,
    ioh_to_phs,
    phs_to_ioh,
    positive_feedback,
    static_energy_feedback,
    validate_ioh,
)
from .netbuild import GraphError, MsdGraph, build_msd, incidence

__all__ = [name for name in dir() if not name.startswith("_")]
