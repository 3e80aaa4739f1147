"""Solver and verification harness for the L2-norm-preserving nonlocal heat flow

    du/dt = lap u - omega u + mu[u] |u|^{2 sigma} u,
    mu[u] = (||grad u||^2 + omega ||u||^2) / ||u||_{2 sigma + 2}^{2 sigma + 2}.
"""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    DomainKind,
    DomainSpec,
    Field,
    Grid,
    Resolvent,
    apply_semi_implicit_resolvent,
    build_grid,
    laplacian,
)
from .errors import (  # noqa: E402
    CheckpointError,
    ConfigurationError,
    DegenerateFieldError,
    OracleFailure,
    SphereFlowError,
    StabilityError,
    StepSizeFailure,
)
from .flow import (  # noqa: E402
    FlowKind,
    FlowState,
    SchemeKind,
    SchemeSpec,
    Termination,
    TerminationKind,
    TrajectoryRecord,
    default_dt,
    run_flow,
    step_flow,
    step_flow_eps,
    step_rival_flow,
)
from .functionals import (  # noqa: E402
    FlowParams,
    gn_ratio,
    h1_seminorm_sq,
    holder_lower_bound_slack,
    lp_norm,
    lyapunov_F,
    mass,
    mu,
    mu_eps,
)
from .stationary import (  # noqa: E402
    Provenance,
    StationaryState,
    detect_omega_limit,
    minimize_F_on_sphere,
    relative_l2_distance,
    shoot_ground_state,
    stationary_residual,
)
