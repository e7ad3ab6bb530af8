"""Comoving coordinate charts and diffusion kinematics on Minkowski space.

The package builds global comoving charts from gradient four-velocity
fields, verifies the block structure and intrinsic flatness of the induced
metric, simulates the associated stationary diffusion, and checks the
derived dynamical identities (current classification, energy functionals,
wave-equation residuals, non-relativistic limit) numerically.
"""

__version__ = "0.1.0"

from .constants import ETA, PhysicalConstants, natural_units
from .errors import (
    ComovkitError,
    ConfigInvalid,
    DensityZero,
    Explosion,
    ImaginaryAction,
    InsufficientSamples,
    LeftDomain,
    NoBracket,
    NodeInDomain,
    NotSpacelike,
    OutOfDomain,
    QuadratureDivergence,
    RootFailure,
    StepFailure,
    ZeroJ0,
    ZeroSlope,
)
from .fields import (
    Box,
    FieldBundle,
    HypothesisReport,
    check_theorem_hypotheses,
    make_packet,
    make_plane_wave,
)
from .chart import (
    ComovingChart,
    Worldline,
    boost_to_rest_frame,
    chart_diagnostics,
    forward_map,
    integrate_curve,
    inverse_map,
)
from .geometry import (
    MetricPatch,
    flatness_report,
    geometry_diagnostics,
    pullback_metric,
    ricci_scalar,
    riemann,
)
from .diffusion import (
    BinSpec,
    DiffusionConfig,
    DriftEstimate,
    PathEnsemble,
    backward_drift_estimate,
    combine_drift_estimates,
    drift_from_fields,
    forward_drift_estimate,
    simulate,
    specular_reverse,
    variance_report,
)
from .estimators import (
    EnergyReport,
    VelocityEstimate,
    continuity_residual,
    energy_report,
    estimate_density,
    expectation_u2,
    osmotic_identity_report,
    slice_density,
    stochastic_action,
    velocities_from_drifts,
)
from .dynamics import (
    BoostMatrix,
    CurrentSample,
    boost_equivalence_check,
    comoving_current,
    comoving_kg_residual,
    covariant_residuals,
    current_divergence,
    four_current,
    kg_residual,
    nonrel_limit_study,
    nonrel_packet_family,
    reconstruct_kinematics,
    wave_operator,
)

__all__ = [
    "__version__",
    "ETA",
    "PhysicalConstants",
    "natural_units",
    "ComovkitError",
    "ConfigInvalid",
    "DensityZero",
    "Explosion",
    "ImaginaryAction",
    "InsufficientSamples",
    "LeftDomain",
    "NoBracket",
    "NodeInDomain",
    "NotSpacelike",
    "OutOfDomain",
    "QuadratureDivergence",
    "RootFailure",
    "StepFailure",
    "ZeroJ0",
    "ZeroSlope",
    "Box",
    "FieldBundle",
    "HypothesisReport",
    "check_theorem_hypotheses",
    "make_packet",
    "make_plane_wave",
    "ComovingChart",
    "Worldline",
    "boost_to_rest_frame",
    "chart_diagnostics",
    "forward_map",
    "integrate_curve",
    "inverse_map",
    "MetricPatch",
    "flatness_report",
    "geometry_diagnostics",
    "pullback_metric",
    "ricci_scalar",
    "riemann",
    "BinSpec",
    "DiffusionConfig",
    "DriftEstimate",
    "PathEnsemble",
    "backward_drift_estimate",
    "combine_drift_estimates",
    "drift_from_fields",
    "forward_drift_estimate",
    "simulate",
    "specular_reverse",
    "variance_report",
    "EnergyReport",
    "VelocityEstimate",
    "continuity_residual",
    "energy_report",
    "estimate_density",
    "expectation_u2",
    "osmotic_identity_report",
    "slice_density",
    "stochastic_action",
    "velocities_from_drifts",
    "BoostMatrix",
    "CurrentSample",
    "boost_equivalence_check",
    "comoving_current",
    "comoving_kg_residual",
    "covariant_residuals",
    "current_divergence",
    "four_current",
    "kg_residual",
    "nonrel_limit_study",
    "nonrel_packet_family",
    "reconstruct_kinematics",
    "wave_operator",
]
