"""Variable metric forward-backward-forward splitting for monotone inclusions.

Submodules: :mod:`.metric` (diagonal metrics and schedules),
:mod:`.operators` (resolvent catalog, linear maps, operator norms),
:mod:`.fbf` (the splitting iteration and its certificates),
:mod:`.primal_dual` (structured primal-dual problems) and :mod:`.cli`.
"""

from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DimensionError,
    DivergenceError,
    NumericalError,
    ScheduleViolationError,
    VmfbfError,
)
from .fbf import (
    ErrorSchedule,
    FbfConfig,
    FbfProblem,
    fbf_solve,
    fbf_step,
    fejer_certificate,
    gamma_bounds,
    geometric_errors,
    harmonic_errors,
    summability_certificate,
    vi_solve,
)
from .metric import (
    DiagonalMetric,
    MetricSchedule,
    constant_schedule,
    geometric_schedule,
    loewner_geq,
    metric_inner,
    metric_norm,
    schedule_validate,
    table_schedule,
)
from .operators import (
    BoxNormalCone,
    CustomSeparable,
    L1Subdifferential,
    LinearMap,
    LipschitzMonotoneMap,
    QuadraticGradient,
    SupportAbs,
    ZeroOperator,
    inverse_resolvent_scaled,
    linear_monotone_map,
    monotonicity_probe,
    operator_norm,
    resolvent_scaled,
    zero_map,
)
from .primal_dual import (
    DualBlock,
    PdConfig,
    PdState,
    StructuredProblem,
    assemble_product,
    beta_compute,
    equivalence_check,
    kkt_residual,
    pd_solve,
    pd_step,
)

__version__ = "0.1.0"
