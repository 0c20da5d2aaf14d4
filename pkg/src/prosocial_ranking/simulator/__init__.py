"""Synthetic closed-loop experiment producing panel, survey and event data."""
from .attrition import AttritionResult, simulate_attrition
from .config import ConfigError, NoiseConfig, SimConfig, SurveyConfig
from .metrics import intervention_metrics, moving_average
from .outcomes import make_panel
from .population import SyntheticUser, make_population
from .run import RunResult, run, write_outputs
from .surveys import make_roster, make_surveys

__all__ = [
    "AttritionResult",
    "ConfigError",
    "NoiseConfig",
    "RunResult",
    "SimConfig",
    "SurveyConfig",
    "SyntheticUser",
    "intervention_metrics",
    "make_panel",
    "make_population",
    "make_roster",
    "make_surveys",
    "moving_average",
    "run",
    "simulate_attrition",
    "write_outputs",
]
