"""allflow: every steady-state equilibrium of a wind-integrated power
system, found by numerical polynomial homotopy continuation and classified
by small-signal eigenvalue analysis."""

from .netmodel import (
    Bus,
    Dfig,
    Line,
    Network,
    SyncGenerator,
    Turbine,
    WindPlant,
    line_admittance,
    load_case,
    serialize,
    validate,
)
from .polysys import PolynomialSystem, SystemBuilder, eliminate_linear_variables
from .steady_poly import (
    VariableMap,
    build_equilibrium_system,
    residual,
    slack_injection,
    system_jacobian,
    total_degree,
)
from .homotopy import (
    SolutionSet,
    TrackerConfig,
    classify_solutions,
    make_start_system,
    solve_all,
    track_path,
)
from .param_sweep import (
    GenericSolveCache,
    ParameterPoint,
    SweepGrid,
    solve_generic,
    sweep,
    track_to_parameter,
)
from .dynamics import (
    EquilibriumRecord,
    FeasibilityLimits,
    aero_torque,
    classify_stability,
    cp_coefficient,
    dfig_power,
    dfig_torque,
    eigenvalues,
    feasibility_filter,
    linearize,
    shaft_coupling,
)

__version__ = "0.1.0"
