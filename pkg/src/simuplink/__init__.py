"""Uplink sum-rate simulation and phase optimisation for stacked intelligent metasurface receivers."""

from .channel import ChannelEnsemble, CorrelationModel, NoiseBudget, build_channel, build_correlation
from .combiner import CombinerMatrix, PhaseProfile, compose_sim, dpa_mrc, dpa_zf, matched_filter_phases
from .geometry import Geometry, PhysicalConstants, PropagationStack, build_geometry, build_propagation_stack
from .metrics import RateReport, sinr, sum_rate
from .optim import OptimizerConfig, OptimizerTrace, analytic_gradient, gradient_ascent, quasi_newton

__all__ = [
    "ChannelEnsemble", "CorrelationModel", "NoiseBudget", "build_channel", "build_correlation",
    "CombinerMatrix", "PhaseProfile", "compose_sim", "dpa_mrc", "dpa_zf", "matched_filter_phases",
    "Geometry", "PhysicalConstants", "PropagationStack", "build_geometry", "build_propagation_stack",
    "RateReport", "sinr", "sum_rate",
    "OptimizerConfig", "OptimizerTrace", "analytic_gradient", "gradient_ascent", "quasi_newton",
]
