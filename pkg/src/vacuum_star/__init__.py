"""Spherically symmetric relativistic gas expanding into vacuum, in rescaled Lagrangian variables."""

from .config import RunConfig, load_config, parse_config
from .driver import run
from .errors import ConfigError, SimulationError, VacuumStarError
from .grid import RadialGrid, make_weight
from .scaling import SimParams, Tolerances, limit_rate, solve_lambda

__all__ = [
    "ConfigError",
    "RadialGrid",
    "RunConfig",
    "SimParams",
    "SimulationError",
    "Tolerances",
    "VacuumStarError",
    "limit_rate",
    "load_config",
    "make_weight",
    "parse_config",
    "run",
    "solve_lambda",
]

__version__ = "0.1.0"
