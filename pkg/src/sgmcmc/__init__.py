"""Build stochastic-gradient MCMC samplers from an energy, a diffusion and a curl."""

from .chain import Trace, run_chain, run_chains
from .engine import (MatrixField, NoiseCompensation, SamplerSpec, StepSchedule, ValidationReport, drift,
                     gamma_correction, step_full_data, step_minibatch, validate_spec)
from .errors import (ConfigurationError, DimensionError, DomainError, NumericError, ParseError, ReconstructionError,
                     SGMCMCError, StepError, StructuralError)
from .presets import (MetricSpec, PresetConfig, RawUpdater, make_gsgrhmc, make_hmc, make_naive_sghmc,
                      make_naive_sgrhmc, make_preset, make_sghmc, make_sgld, make_sgnht, make_sgrld)
from .state import EnergyModel, Layout, StateVector, energy, grad_energy, make_synthetic_target

__all__ = [
    "ConfigurationError", "DimensionError", "DomainError", "EnergyModel", "Layout", "MatrixField", "MetricSpec",
    "NoiseCompensation", "NumericError", "ParseError", "PresetConfig", "RawUpdater", "ReconstructionError",
    "SGMCMCError", "SamplerSpec", "StateVector", "StepError", "StepSchedule", "StructuralError", "Trace",
    "ValidationReport", "drift", "energy", "gamma_correction", "grad_energy", "make_gsgrhmc", "make_hmc",
    "make_naive_sghmc", "make_naive_sgrhmc", "make_preset", "make_sghmc", "make_sgld", "make_sgnht", "make_sgrld",
    "make_synthetic_target", "run_chain", "run_chains", "step_full_data", "step_minibatch", "validate_spec",
]
