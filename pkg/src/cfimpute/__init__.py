"""Counterfactual multiple imputation of time-varying compliance effects."""
__version__ = "0.1.0"

from .errors import CfImputeError
from .estimators import EstimatorConfig, parse_profiles
from .imputer import Strategy, fit_sequence, impute_profiles, run_replicates
from .kernels import BACKEND
from .missingness import Scenario, analyze_with_scenarios, apply_scenario
from .models import ModelSpec
from .panel import ExposureProfile, PanelDataset, Schema, load_panel, write_panel
from .pencomp import fit_pspp, pencomp_ate
from .pooling import PooledEstimate, pool
from .simlab import GeneratorSpec, generate, run_study, true_ace, true_ace_curve, zip_check

__all__ = [
    "BACKEND", "CfImputeError", "EstimatorConfig", "ExposureProfile", "GeneratorSpec", "ModelSpec",
    "PanelDataset", "PooledEstimate", "Scenario", "Schema", "Strategy", "analyze_with_scenarios",
    "apply_scenario", "fit_pspp", "fit_sequence", "generate", "impute_profiles", "load_panel", "parse_profiles",
    "pencomp_ate", "pool", "run_replicates", "run_study", "true_ace", "true_ace_curve", "write_panel", "zip_check",
]
