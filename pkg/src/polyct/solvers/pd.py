"""Alternating minimisation with a primal-dual w-update.

For fixed photon field y the w-subproblem is written as
``F11(D w) + F12(grad w) + F2(w)`` and solved by Chambolle-Pock iterations.
The dual of the beam term needs the prox of an exponential sum per ray,
the dual of the TV term is a pointwise ball projection, and the primal step
is a simplex projection.

Scaling: the TV term is taken on the unit-spacing grid, so the beam dual is
divided by ``alpha * pixel_size`` and the gradient dual lives in the unit
ball.
"""

from __future__ import annotations

import numpy as np

from ..core import MaterialImage, NumericalError, ReconConfig
from ..kernels import (
    divergence_op,
    gradient_op,
    project_unit_ball,
    project_weighted_simplex,
    prox_exp_sum,
)
from ..physics import ForwardModel
from .common import SolverTrace, coerce_f, reinitialize, relative_change, uniform_start

__all__ = [
    "pd_step_sizes",
    "pd_curvature_steps",
    "pd_dual_phi_step",
    "pd_dual_psi_step",
    "pd_primal_step",
    "run_pd",
]


def pd_step_sizes(fm: ForwardModel, rho1=None, rho2=None, tau=None):
    """Fill missing step sizes from the operator row sums."""
    b = fm.proj.bounds()
    if rho1 is None:
        rho1 = 1.0 / b["row_sum_max_D"]
    if rho2 is None:
        rho2 = 0.5
    if tau is None:
        tau = 1.0 / (b["row_sum_max_Dt"] + 2.0)
    return float(rho1), float(rho2), float(tau)


def beam_curvature(fm: ForwardModel, I, alpha) -> float:
    """Largest per-ray curvature of the beam term ``(1/alpha) sum_e dE I_e g g^T``."""
    H = np.einsum("re,ie,je->rij", I * fm.dE, fm.g, fm.g) / alpha
    return float(np.linalg.eigvalsh(H)[:, -1].max()) if H.size else 0.0


def pd_curvature_steps(fm: ForwardModel, I, alpha, scale=0.05):
    """Steps matched to the beam curvature L at intensities ``I``.

    Both dual steps are ``scale * L`` and ``tau`` satisfies
    ``tau * rho * (|D|^2 + 8) = 0.95``, 8 bounding ``|grad|^2``.
    """
    L = beam_curvature(fm, I, alpha)
    rho = scale * L if L > 0 else 1.0
    tau = 0.95 / (rho * (fm.proj.norm() ** 2 + 8.0))
    return rho, rho, tau


def pd_dual_phi_step(phi, wbar, y, fm: ForwardModel, rho1, alpha, delta=1000.0, warm=True):
    """One prox step for the beam dual, all rays at once.

    ``phi`` is (n_rays, N_mat), ``wbar`` (n_pixels, N_mat) and ``y``
    (n_rays, N_E). ``alpha`` is the effective TV weight of the unit grid.
    """
    phit = phi + rho1 * fm.project(wbar)
    with np.errstate(divide="ignore"):
        base = np.log(rho1 / alpha) + np.log(fm.dE) + fm.log_source
        log_target = np.log(rho1 * fm.dE * y / alpha)
    log_s = base - (phit @ fm.g) / rho1
    c = fm.material_moment(y) / alpha
    B = fm.g.T / rho1
    return prox_exp_sum(c, B, log_s, delta, log_target=log_target,
                        init=phi if warm else None)


def pd_dual_psi_step(psi, wbar, rho2, boundary="neumann"):
    return project_unit_ball(psi + rho2 * gradient_op(wbar, boundary))


def pd_primal_step(w, phi_bt, psi, tau, beta=0.0, alpha=1.0, boundary="neumann"):
    """Simplex-projected gradient step; ``phi_bt`` is ``D^T phi`` as an image stack."""
    n = w.shape[-1]
    step = w - tau * (phi_bt - divergence_op(psi, boundary))
    if beta:
        step = step + tau * (beta / alpha) * (w - 1.0 / n)
    return project_weighted_simplex(step)


def run_pd(f, table, geom, cfg: ReconConfig, w0=None, callback=None):
    """Outer y-steps with inner primal-dual w-iterations; (MaterialImage, SolverTrace)."""
    cfg.validate()
    fm = ForwardModel(table, geom, cfg.i_bar)
    f = coerce_f(fm, f)
    s = cfg.pd
    n_mat = fm.n_materials
    h = fm.pixel_size
    shape = (geom.height, geom.width, n_mat)
    if s.step_rule == "fixed":
        rho1, rho2, tau = pd_step_sizes(fm, s.rho1, s.rho2, s.tau)
    a_eff = cfg.alpha * h
    b_eff = cfg.beta * h * h
    sigma = cfg.sigma

    w = (uniform_start(geom, n_mat) if w0 is None else np.array(getattr(w0, "data", w0))).copy()
    wbar = w.copy()
    phi = np.zeros((fm.n_rays, n_mat))
    psi = np.zeros(shape + (2,))
    warm = False
    trace = SolverTrace("pd")
    converged = False
    for k in range(1, s.outer_iters + 1):
        I = fm.intensity_flat(w)
        y, _ = fm.photon_field(I, f, sigma)
        if s.step_rule == "curvature":
            rho1, rho2, tau = pd_curvature_steps(fm, I, a_eff, s.step_scale)
        w_start = w.copy()
        for _ in range(s.inner_iters):
            phi = pd_dual_phi_step(phi, wbar.reshape(-1, n_mat), y, fm, rho1, a_eff,
                                   s.delta, warm)
            warm = True
            psi = pd_dual_psi_step(psi, wbar, rho2)
            w_new = pd_primal_step(w, fm.to_image(fm.backproject(phi)), psi, tau, b_eff, a_eff)
            wbar = w_new + s.theta * (w_new - w)
            w = w_new
        if s.reinit_period and k % s.reinit_period == 0 and k < s.outer_iters:
            w = reinitialize(w, table)
            wbar = w.copy()
        F = fm.objective(y, w, f, sigma, cfg.alpha, cfg.beta)
        if not np.isfinite(F.total):
            err = NumericalError(f"non-finite objective at outer iteration {k}")
            err.trace = trace
            raise err
        dual = float(np.sqrt((psi**2).sum(-1)).max())
        trace.append(iter=k, total=F.total, gauss=F.gauss_term, kl=F.kl_term, tv=F.tv_term,
                     multiwell=F.multiwell_term, dual_feas_max=dual)
        if callback is not None:
            callback(k, w)
        if relative_change(w, w_start) < cfg.tol:
            converged = True
            break
    trace.status = "converged" if converged else "max_iter"
    return MaterialImage(project_weighted_simplex(w), h, feasible=True), trace
