"""Damped alternating minimisation with an EM-type w-update.

Each outer iteration computes the optimal photon field for the current
image, forms the multiplicative EM image, and then solves a weighted ROF
problem on the simplex whose weights come from the linearised data term.
A backtracking safeguard halves the damping whenever the sufficient
decrease condition fails, so the objective trace is monotone between
reinitialisations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..core import MaterialImage, NumericalError, ReconConfig
from ..kernels import _project_simplex_inv, divergence_op, gradient_op, project_unit_ball, project_weighted_simplex
from ..physics import ForwardModel
from .common import SolverTrace, coerce_f, reinitialize, relative_change, uniform_start

__all__ = [
    "DescentDiagnostics",
    "em_y_step",
    "em_multiplicative_step",
    "weighted_rof_solve",
    "estimate_damping",
    "descent_diagnostics",
    "run_em",
]


@dataclass(frozen=True)
class DescentDiagnostics:
    A_eps: float
    C: float
    omega_bound: float


def _flat(w):
    data = w.data if isinstance(w, MaterialImage) else np.asarray(w, dtype=float)
    return data.reshape(-1, data.shape[-1])


def _weight_denominator(fm: ForwardModel, y) -> np.ndarray:
    """``D^T (sum_e dE y g_i)`` per pixel and material."""
    return fm.backproject(fm.material_moment(y))


# --------------------------------------------------------------------------
# individual steps (public layouts)
# --------------------------------------------------------------------------


def em_y_step(w, f, table, geom, sigma, i_bar=1.0):
    """Optimal photon field for fixed w: (y (N_E, V, D), Y (V, D))."""
    fm = ForwardModel(table, geom, i_bar)
    y, Y = fm.photon_field(fm.intensity_flat(w), coerce_f(fm, f), sigma)
    return fm.to_energy_sinogram(y), fm.to_sinogram(Y)


def _em_image(fm, wflat, I, den, eps):
    num = fm.backproject(fm.material_moment(I))
    covered = den > 0
    bad = ~covered & (num > 0)
    if bad.any():
        pix = np.argwhere(bad)[0]
        raise NumericalError(f"zero EM denominator at pixel {int(pix[0])}, material {int(pix[1])}")
    ratio = np.divide(num, den, out=np.ones_like(den), where=covered)
    return (wflat + eps) * ratio - eps


def em_multiplicative_step(w, y, table, geom, eps, i_bar=1.0) -> np.ndarray:
    """``(w + eps) D^T(sum dE I g) / D^T(sum dE y g) - eps`` per pixel, (H, W, N)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    fm = ForwardModel(table, geom, i_bar)
    wflat = _flat(w)
    yflat = fm.from_energy_sinogram(y)
    den = _weight_denominator(fm, yflat)
    out = _em_image(fm, wflat, fm.intensity_flat(wflat), den, eps)
    return fm.to_image(out)


def weighted_rof_solve(v, r, iters=1000, tau=0.02, sigma_d=6.25, theta=0.1,
                       w0=None, p0=None, return_dual=False, boundary="neumann"):
    """Primal-dual solve of ``min 1/2 sum r (w - v)^2 + sum_i TV(w_i)`` on the simplex.

    ``v`` and ``r`` are (H, W, N); TV uses unit-spacing differences. The
    dual variable can be warm-started with ``p0`` and returned with
    ``return_dual=True``.
    """
    v = np.asarray(v, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValueError("ROF weights must be nonnegative and finite")
    w = project_weighted_simplex(v) if w0 is None else np.array(w0, dtype=float)
    p = np.zeros(v.shape + (2,)) if p0 is None else np.array(p0, dtype=float)
    wbar = w.copy()
    denom = 1.0 + tau * r
    trv = tau * r * v
    inv = np.broadcast_to(1.0 / denom, v.shape)
    for _ in range(iters):
        p += sigma_d * gradient_op(wbar, boundary)
        p = project_unit_ball(p)
        centre = (w + tau * divergence_op(p, boundary) + trv) / denom
        w_new = _project_simplex_inv(centre, inv)
        wbar = w_new + theta * (w_new - w)
        w = w_new
    return (w, p) if return_dual else w


def _damping_from_den(fm, den, eps, eta, iters=500, seed=0):
    s = np.sqrt(den)
    inv_s = np.divide(1.0, s, out=np.zeros_like(s), where=s > 0)
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(den.shape) * (s > 0)
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        return 0.99
    psi /= nrm
    lam_old = 0.0
    converged = False
    for it in range(iters):
        q = 0.5 * inv_s * fm.backproject(fm.project(inv_s * psi) @ fm.G)
        lam = float(np.sum(psi * q))
        nq = np.linalg.norm(q)
        if nq == 0:
            return 0.99
        psi = q / nq
        if it >= 50 and abs(lam - lam_old) <= 1e-6 * abs(lam):
            converged = True
            break
        lam_old = lam
    omega = (1.0 - eta) / ((1.0 + eps) * lam)
    if not converged:
        warnings.warn("damping power iteration stagnated; using a conservative omega")
        omega *= 0.5
    return float(min(omega, 0.99))


def estimate_damping(y_floor, table, geom, eps, eta, i_bar=1.0, iters=500, seed=0) -> float:
    """Damping from the largest eigenvalue of the scaled quadratic bound.

    With ``s = sqrt(D^T(sum dE y g))`` the operator ``1/2 S^-1 D^T G D S^-1``
    bounds the ratio C / A up to the factor ``1 + eps``; its top eigenvalue
    comes from power iteration.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    fm = ForwardModel(table, geom, i_bar)
    yflat = fm.from_energy_sinogram(y_floor) if np.ndim(y_floor) == 3 else np.asarray(y_floor)
    return _damping_from_den(fm, _weight_denominator(fm, yflat), eps, eta, iters, seed)


def _descent_terms(fm, w_prev, w_next, den, eps, proj_prev=None, proj_next=None):
    dw = w_next - w_prev
    A = float(np.sum(den * dw**2 / (w_prev + eps)))
    if proj_prev is None or proj_next is None:
        dp = fm.project(dw)
    else:
        dp = proj_next - proj_prev
    C = 0.5 * float(np.sum((dp @ fm.G) * dp))
    return A, max(C, 0.0)


def descent_diagnostics(w_prev, w_next, y, table, geom, eps, eta=0.1, i_bar=1.0):
    fm = ForwardModel(table, geom, i_bar)
    yflat = fm.from_energy_sinogram(y) if np.ndim(y) == 3 else np.asarray(y)
    den = _weight_denominator(fm, yflat)
    A, C = _descent_terms(fm, _flat(w_prev), _flat(w_next), den, eps)
    bound = np.inf if C == 0 else (A / C) * (1.0 - eta)
    return DescentDiagnostics(A, C, bound)


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def run_em(f, table, geom, cfg: ReconConfig, w0=None, callback=None):
    """Run the damped EM scheme; returns (MaterialImage, SolverTrace).

    The trace row for iteration k holds ``F(y^k, w^k)``, where ``y^k`` is the
    photon field of ``w^(k-1)``. ``trace.aux`` keeps ``F(y^k, w^(k-1))`` and
    the accepted damping for the descent check.
    """
    cfg.validate()
    fm = ForwardModel(table, geom, cfg.i_bar)
    f = coerce_f(fm, f)
    s = cfg.em
    n_mat = fm.n_materials
    h = fm.pixel_size
    shape = (geom.height, geom.width, n_mat)
    w = _flat(uniform_start(geom, n_mat) if w0 is None else w0).copy()
    eps, eta, alpha, beta, sigma = s.epsilon, s.eta, cfg.alpha, cfg.beta, cfg.sigma

    trace = SolverTrace("em")
    trace.aux = []
    proj = fm.project(w)
    I = fm.intensity_from_proj(proj)
    y, _ = fm.photon_field(I, f, sigma)
    dual = np.zeros(shape + (2,))
    omega_base = None if s.omega == "auto" else float(s.omega)
    omega_prev = omega_base
    F_prev = fm.objective(y, w, f, sigma, alpha, beta, I=I)

    for k in range(1, s.outer_iters + 1):
        den = _weight_denominator(fm, y)
        if omega_base is None:
            omega_base = _damping_from_den(fm, den, eps, eta, seed=cfg.seed)
            omega_prev = omega_base
        w_em = _em_image(fm, w, I, den, eps)
        covered = den > 0
        mw = np.zeros_like(w)
        if beta > 0:
            np.divide(beta * (w + eps) * (w - 1.0 / n_mat) * h * h, den, out=mw, where=covered)
        wv = w.reshape(shape)
        omega = min(omega_base, 2.0 * omega_prev)
        accepted = False
        for _ in range(31):
            r = np.divide(den, h * omega * alpha * (w + eps), out=np.zeros_like(den), where=covered)
            v = np.where(covered, (1 - omega) * w + omega * (w_em + mw), w)
            w_try, dual_try = weighted_rof_solve(
                v.reshape(shape), r.reshape(shape), s.inner_iters, s.rof_tau, s.rof_sigma,
                s.rof_theta, w0=wv, p0=dual, return_dual=True)
            w_try = w_try.reshape(w.shape)
            proj_try = fm.project(w_try)
            I_try = fm.intensity_from_proj(proj_try)
            F_try = fm.objective(y, w_try, f, sigma, alpha, beta, I=I_try)
            A, C = _descent_terms(fm, w, w_try, den, eps, proj, proj_try)
            lhs = F_try.total + eta / omega * A
            if not s.safeguard or lhs <= F_prev.total + 1e-12 * abs(F_prev.total):
                accepted = True
                break
            omega *= 0.5
        if not accepted:
            # null step keeps the previous image
            w_try, proj_try, I_try, F_try, A, C = w, proj, I, F_prev, 0.0, 0.0
            dual_try = dual
        if not np.isfinite(F_try.total):
            err = NumericalError(f"non-finite objective at iteration {k}")
            err.trace = trace
            raise err
        change = relative_change(w_try, w) if accepted else np.inf
        trace.append(iter=k, total=F_try.total, gauss=F_try.gauss_term, kl=F_try.kl_term,
                     tv=F_try.tv_term, multiwell=F_try.multiwell_term, A_eps=A, C=C, omega=omega)
        trace.aux.append({"F_before": F_prev.total, "accepted": accepted})
        omega_prev = omega
        w, proj, I, dual = w_try, proj_try, I_try, dual_try
        if s.reinit_period and k % s.reinit_period == 0 and k < s.outer_iters:
            w = reinitialize(w, table)
            proj = fm.project(w)
            I = fm.intensity_from_proj(proj)
        y, _ = fm.photon_field(I, f, sigma)
        F_prev = fm.objective(y, w, f, sigma, alpha, beta, I=I)
        if callback is not None:
            callback(k, w.reshape(shape))
        if change < cfg.tol:
            break
    trace.status = "converged" if len(trace) < s.outer_iters else "max_iter"
    out = project_weighted_simplex(w.reshape(shape))
    return MaterialImage(out, h, feasible=True), trace
