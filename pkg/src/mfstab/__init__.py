"""Mean-field particle dynamics and Lyapunov stability checks on Wasserstein space."""

__version__ = "0.1.0"

from .measures import (
    EmpiricalMeasure,
    MeasureError,
    PerturbationField,
    dirac,
    empirical_from_points,
    moment_root,
    perturb,
    push_forward,
)
from .transport import (
    SupergradientField,
    TransportPlan,
    barycentric_projection,
    gaussian_w2,
    optimal_plan_bruteforce,
    wasserstein,
)
from .dynamics import (
    BlowUpError,
    TrajectoryEnsemble,
    VectorFieldSpec,
    check_growth_bounds,
    equilibrium_residual,
    evaluate_field,
    integrate_ensemble,
)
from .lyapunov import (
    DescentReport,
    LyapunovSpec,
    ProbeReport,
    check_monotone,
    default_tolerance,
    descent_integral,
    lyap_value,
    stability_probe,
    supergradient,
)
from .linear_stability import QuadraticFormReport, mean_dynamics_matrix, quadratic_form, tangent_basis
from .systems import GradientFlowSystem, PendulumSystem, gibbs_cloud, gradient_flow_field, pendulum_field
