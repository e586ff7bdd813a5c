"""Ray tracing of generalized broken bicharacteristics on manifolds with
corners, with numeric verification of the supporting geometric facts and
the positive-commutator escape-function constructions."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    BCotangentPoint,
    Chart,
    CompressedPoint,
    CotangentPoint,
    MetricCoeffs,
    compress,
    compressed_ball_contains,
    compressed_distance,
    eval_metric,
    make_chart,
    to_b_coords,
)
from .hamiltonian import (  # noqa: F401
    IntegratorConfig,
    PhaseVelocity,
    Terminal,
    eval_Hp,
    eval_Hp_eta_boundary,
    eval_eta,
    eval_p,
    flow_interior,
)
from .boundary import (  # noqa: F401
    Classification,
    GlancingKind,
    Kind,
    LiftSet,
    classify,
    glancing_type,
    glide,
    lift_set,
    reflect,
)
from .tracer import (  # noqa: F401
    BranchTree,
    Event,
    EventKind,
    Ray,
    TraceConfig,
    reverse,
    sample_ray,
    trace,
)
