"""Reconstruction solvers."""

from .common import SolverTrace, reinitialize
from .em import run_em

__all__ = ["SolverTrace", "reinitialize", "run_em", "run_solver"]


def run_solver(f, table, geom, cfg, **kwargs):
    """Dispatch on ``cfg.solver``."""
    if cfg.solver == "em":
        return run_em(f, table, geom, cfg, **kwargs)
    if cfg.solver == "pd":
        from .pd import run_pd
        return run_pd(f, table, geom, cfg, **kwargs)
    if cfg.solver == "admm":
        from .admm import run_admm
        return run_admm(f, table, geom, cfg, **kwargs)
    raise ValueError(f"unknown solver {cfg.solver!r}")
