"""SPMeT simulation, PEM-based global sensitivities and D-optimal current profiles."""

from .defaults import UNCERTAIN_PARAMETERS, kokam_parameters
from .doe import DesignSpec, d_criterion, design_objective, optimize_design, stack_matrix
from .identification import (EstimationResult, McStudy, efficiency, estimate_parameters,
                             monte_carlo_study, summary_report)
from .model import CellState, DomainError, Spmet, state_derivative, terminal_voltage
from .params import CellParameters, ParameterError
from .sensitivity import (ParameterDistribution, PemSampleSet, SensitivityStack,
                          SpmetOutputModel, global_sensitivity_stack, local_sensitivities,
                          pem_mean, pem_samples, pem_variance, pem_weights, sobol_first_order)
from .simulator import (CurrentProfile, MeasurementSeries, OperatingLimits, add_noise,
                        check_limits, simulate, simulate_batch)

__all__ = [
    "CellParameters", "CellState", "CurrentProfile", "DesignSpec", "DomainError",
    "EstimationResult", "McStudy", "MeasurementSeries", "OperatingLimits",
    "ParameterDistribution", "ParameterError", "PemSampleSet", "SensitivityStack", "Spmet",
    "SpmetOutputModel", "UNCERTAIN_PARAMETERS", "add_noise", "check_limits", "d_criterion",
    "design_objective", "efficiency", "estimate_parameters", "global_sensitivity_stack",
    "kokam_parameters", "local_sensitivities", "monte_carlo_study", "optimize_design",
    "pem_mean", "pem_samples", "pem_variance", "pem_weights", "simulate", "simulate_batch",
    "sobol_first_order", "stack_matrix", "state_derivative", "summary_report",
    "terminal_voltage",
]
