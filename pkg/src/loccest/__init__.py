"""Adaptive local-measurement estimation of a pure qubit state.

Exact average fidelities of adaptive projective-measurement strategies,
numerical maximization over strategy trees, seeded Monte Carlo
simulation, and extraction of the large-N fidelity-deficit coefficients.
"""

from .asymptotics import (
    CmComparison,
    CoefficientSeries,
    SeriesEntry,
    build_series,
    compare_cm_bound,
    richardson_extrapolate,
)
from .errors import (
    ExtrapolationError,
    LoccestError,
    ResourceLimitError,
    ValidationError,
)
from .estimator import (
    BranchVector,
    CENTRAL_LIMIT_GUESS,
    FidelityReport,
    GuessKind,
    GuessRule,
    OPTIMAL_GUESS,
    branch_probability_density,
    branch_vector,
    central_limit_guess,
    fidelity_exact_aggregated,
    fidelity_exact_tree,
    fidelity_exact_two_stage,
    fixed_guess,
    n2_closed_form,
    optimal_guess,
)
from .geometry import (
    Geometry,
    QuadratureRule,
    angles_to_vector,
    make_quadrature,
    moment_oracle,
    validate_bloch_vector,
    vector_to_angles,
)
from .montecarlo import McConfig, McResult, sample_state, simulate_fidelity
from .optimizer import (
    Gauge,
    OptimizationConfig,
    OptimizationResult,
    n4_ansatz_fidelity,
    n4_ansatz_tree,
    optimal_fidelity_table,
    optimize_n4_ansatz,
    optimize_one_step_adaptive,
    optimize_tree,
)
from .strategies import (
    FixedStrategy,
    OutcomeCounts,
    StrategyTree,
    TwoStageStrategy,
    enumerate_count_classes,
    history_from_bitstring,
    history_from_int,
    history_to_bitstring,
    history_to_int,
    make_fixed_axes,
    make_two_stage,
    random_tree,
    transverse_frame,
    tree_from_fixed,
)

__version__ = "0.1.0"
