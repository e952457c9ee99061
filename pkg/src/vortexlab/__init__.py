"""vortexlab: a 2D vorticity laboratory.

Pseudo-spectral solver for the viscous vorticity equation with Biot-Savart
drift, the equivalent interacting-particle (stochastic) representation, and a
verification layer that turns the governing theory's guarantees -- decay
laws, conserved quantities, weak-form compliance, uniqueness diagnostics,
flow and Markov structure -- into executable checks.
"""

from .fields import (Grid2D, ScalarField, TensorField, VelocityField,
                     FieldError, make_grid, make_field, from_function,
                     from_spectral, to_spectral, heat_semigroup, resolvent,
                     gradient, laplacian, lp_norm, inner_product,
                     spectral_l2_norm, hminus1_surrogate, mean_free_part,
                     boundary_support_fraction)
from .biot_savart import (biot_savart_field, blob_kernel, gradient_velocity,
                          gradient_ratios, interpolate_velocity, k_epsilon,
                          kernel_eval, streamfunction, velocity_at_points)
from .solver import (BlowupError, CflError, SolverConfig, Trajectory,
                     grid_drift_provider, mollify_atoms, solve,
                     solve_from_measure, solve_linearized, step_mild)
from .particles import (ParticleEnsemble, ParticleTrajectory, SdeConfig,
                        StabilityError, em_step, marginal_density,
                        pathwise_uniqueness_probe, sample_initial, simulate,
                        velocity_representation)
from . import lamb_oseen, runio, verification

__version__ = "0.1.0"

__all__ = [
    "Grid2D", "ScalarField", "VelocityField", "TensorField", "FieldError",
    "make_grid", "make_field", "from_function", "from_spectral", "to_spectral",
    "heat_semigroup", "resolvent", "gradient", "laplacian", "lp_norm",
    "inner_product", "spectral_l2_norm", "hminus1_surrogate", "mean_free_part",
    "boundary_support_fraction",
    "biot_savart_field", "blob_kernel", "gradient_velocity", "gradient_ratios",
    "interpolate_velocity", "k_epsilon", "kernel_eval", "streamfunction",
    "velocity_at_points",
    "SolverConfig", "Trajectory", "CflError", "BlowupError",
    "solve", "solve_from_measure", "solve_linearized", "step_mild",
    "mollify_atoms", "grid_drift_provider",
    "ParticleEnsemble", "ParticleTrajectory", "SdeConfig", "StabilityError",
    "em_step", "marginal_density", "pathwise_uniqueness_probe",
    "sample_initial", "simulate", "velocity_representation",
    "lamb_oseen", "runio", "verification",
]
