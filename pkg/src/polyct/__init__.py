"""Polyenergetic multi-material CT reconstruction under mixed Poisson-Gaussian noise."""

from .core import (
    AttenuationTable,
    ConvergenceError,
    EnergyGrid,
    FanBeamGeometry,
    MaterialImage,
    NumericalError,
    ParseError,
    ReconConfig,
    builtin_spectrum,
    bundled_phantom,
    bundled_table,
    default_energy_grid,
    load_attenuation_csv,
    load_config,
    load_phantom_spec,
    preset_config,
)
from .experiments import run_case
from .metrics import evaluate
from .physics import ForwardModel, simulate_measurement
from .solvers import reinitialize, run_solver

__version__ = "0.1.0"
