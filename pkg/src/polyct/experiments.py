"""Scaled reproductions of the bundled phantom experiments.

Each run simulates the bundled phantom under one noise preset, reconstructs
it with one solver and scores the result after a final reinitialisation.
The iteration schedules here are shortened versions of the preset ones, sized
to run on a single core in well under half an hour at 64 x 64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import FanBeamGeometry, MaterialImage, ReconConfig, bundled_phantom, bundled_table, preset_config
from .metrics import Metrics, evaluate
from .physics import simulate_measurement
from .solvers import reinitialize, run_solver

__all__ = ["CaseResult", "SCHEDULES", "case_config", "run_case"]

# (preset, solver) -> dotted overrides applied on top of the preset
SCHEDULES: dict[tuple[str, str], dict] = {
    ("a", "em"): {"em.outer_iters": 1000, "em.reinit_period": 100, "em.inner_iters": 20},
    ("a", "pd"): {"pd.outer_iters": 50, "pd.reinit_period": 15},
    ("a", "admm"): {"admm.iters": 1500, "admm.reinit_period": 150},
    ("b", "em"): {"em.outer_iters": 1000, "em.reinit_period": 100, "em.inner_iters": 20},
    ("c", "em"): {"em.outer_iters": 1000, "em.reinit_period": 100, "em.inner_iters": 20},
}


@dataclass
class CaseResult:
    preset: str
    solver: str
    metrics: Metrics
    trace: object
    seconds: float
    recon: MaterialImage
    truth: MaterialImage


def case_config(preset: str, solver: str, **overrides) -> ReconConfig:
    cfg = preset_config(preset, solver=solver)
    for key, val in {**SCHEDULES.get((preset, solver), {}), **overrides}.items():
        cfg.set(key.replace("__", "."), val)
    return cfg.validate()


def run_case(preset: str, solver: str, size: int = 64, n_materials: int = 5,
             phantom: str = "phantom", seed: int = 1, cfg: ReconConfig | None = None,
             callback=None, **overrides) -> CaseResult:
    """Simulate, reconstruct and score one case."""
    table = bundled_table(n_materials)
    geom = FanBeamGeometry.default(size)
    truth = bundled_phantom(phantom, size, n_materials)
    if cfg is None:
        cfg = case_config(preset, solver, **overrides)
    ms = simulate_measurement(truth, table, geom, cfg.sigma, cfg.i_bar, seed=seed)
    t0 = time.perf_counter()
    with np.errstate(over="ignore", under="ignore"):
        w, trace = run_solver(ms.f, table, geom, cfg, callback=callback)
    seconds = time.perf_counter() - t0
    final = reinitialize(w, table)
    metrics = evaluate(final, truth, table.material_names)
    return CaseResult(preset, solver, metrics, trace, seconds, w, truth)
