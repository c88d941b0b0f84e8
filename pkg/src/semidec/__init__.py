"""Semi-decentralized federated learning with sampled-to-sampled and sampled-to-all server rounds."""

from .bounds import (
    Axis,
    BoundInputs,
    BoundResult,
    RecursionParams,
    Regime,
    communication_cost,
    per_round_rhs,
    recursion_bound,
    recursion_bruteforce,
    regime_sweep,
    rounds_to_epsilon,
    theorem_rounds,
)
from .engine import RunTrace, SimConfig, TraceRecord, message_cost, run, server_round_schedule
from .errors import (
    DegenerateBlock,
    DimensionMismatch,
    DivergentAtK1,
    InvalidComponentSize,
    InvalidConfig,
    InvalidK,
    InvalidParams,
    NonFiniteState,
    NotConverged,
    SemidecError,
    StepsizeTooLarge,
    Unreachable,
)
from .objectives import (
    HeterogeneityConfig,
    HeterogeneityEstimate,
    LogisticObjective,
    QuadraticObjective,
    make_logistic,
    make_quadratic,
    measure_heterogeneity,
    optimality_gap,
    stochastic_gradient,
)
from .operators import (
    ErrorSnapshot,
    Primitive,
    SampleSet,
    ServerOperator,
    apply_server_step,
    disagreement_decomposed,
    expected_ratio_check,
    s2a_matrix,
    s2s_matrix,
    sample_devices,
)
from .topology import (
    ComponentProjector,
    MixingMatrix,
    MixingParam,
    Topology,
    TopologyKind,
    build_topology,
    component_projector,
    metropolis_weights,
    resample_topology,
    spectral_mixing_parameter,
)

__version__ = "0.1.0"
