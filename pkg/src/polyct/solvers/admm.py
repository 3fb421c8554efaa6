"""ADMM on the splitting ``X = grad w``, ``w~ = w``, ``z = D w``.

Subproblems, in the order they are solved each iteration:

* w: a linear system ``(mu2 + mu3 D^T D - mu1 Lap) w = rhs`` by GMRES with
  an FFT-diagonal preconditioner (periodic boundaries),
* X: vector soft thresholding,
* z: per-ray damped Newton on the reduced data term,
* w~: simplex projection of the linearised multiwell step,
* multipliers and adaptive penalties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from ..core import ConvergenceError, MaterialImage, NumericalError, ReconConfig
from ..kernels import divergence_op, gradient_op, lambert_w0_exp, project_weighted_simplex, shrink
from ..physics import ForwardModel
from .common import SolverTrace, coerce_f, reinitialize, relative_change, uniform_start

__all__ = [
    "AdmmState",
    "laplacian_symbol",
    "calibrate_preconditioner",
    "admm_w_solve",
    "admm_x_update",
    "admm_z_newton",
    "z_residual",
    "z_jacobian",
    "admm_wtilde_update",
    "admm_multiplier_and_penalty_update",
    "run_admm",
]

BOUNDARY = "periodic"


@dataclass
class AdmmState:
    w: np.ndarray            # (H, W, N)
    wt: np.ndarray           # (H, W, N), feasible copy
    X: np.ndarray            # (H, W, N, 2)
    z: np.ndarray            # (n_rays, N)
    y: np.ndarray            # (n_rays, N_E)
    Lam: np.ndarray          # (H, W, N, 2)
    lam1: np.ndarray         # (H, W, N)
    lam2: np.ndarray         # (n_rays, N)
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    info: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, fm: ForwardModel, w, f, sigma, mu=(1.0, 1.0, 1.0)):
        w = np.array(w, dtype=float)
        z = fm.project(w.reshape(-1, w.shape[-1]))
        I = fm.intensity_from_proj(z)
        y, _ = fm.photon_field(I, f, sigma)
        X = gradient_op(w, BOUNDARY)
        return cls(w, w.copy(), X, z, y, np.zeros_like(X), np.zeros_like(w),
                   np.zeros_like(z), *mu)


# --------------------------------------------------------------------------
# w-step
# --------------------------------------------------------------------------


def laplacian_symbol(height, width):
    """Eigenvalues of ``-Lap`` with periodic boundaries on the FFT grid."""
    kx = 4.0 * np.sin(np.pi * np.arange(height) / height) ** 2
    ky = 4.0 * np.sin(np.pi * np.arange(width) / width) ** 2
    return kx[:, None] + ky[None, :]


def _inv_sqrt_symbol(kappa):
    out = np.zeros_like(kappa)
    np.divide(1.0, np.sqrt(kappa), out=out, where=kappa > 0)
    return out


def calibrate_preconditioner(fm: ForwardModel, seed=0) -> float:
    """``c = <u, D^T D u> / <u, (-Lap)^(-1/2) u>`` for one seeded random image."""
    g = fm.geom
    u = np.random.default_rng(seed).standard_normal((g.height, g.width))
    dtd = fm.backproject(fm.project(u.reshape(-1))).reshape(u.shape)
    k = _inv_sqrt_symbol(laplacian_symbol(g.height, g.width))
    half = np.real(np.fft.ifft2(np.fft.fft2(u) * k))
    return float(np.sum(u * dtd) / np.sum(u * half))


def _apply_system(fm, v, mu1, mu2, mu3):
    """(mu2 + mu3 D^T D - mu1 Lap) v for an (H, W, N) stack."""
    n = v.shape[-1]
    out = mu2 * v
    if mu3:
        out = out + mu3 * fm.to_image(fm.backproject(fm.project(v.reshape(-1, n))))
    if mu1:
        out = out - mu1 * divergence_op(gradient_op(v, BOUNDARY), BOUNDARY)
    return out


def admm_w_solve(state: AdmmState, fm: ForwardModel, c_pre: float | None = None,
                 restart=20, rtol=1e-8, maxiter=200, precondition=True, rhs=None):
    """Solve the w-subproblem; returns (w, info) with GMRES iteration count and residual."""
    mu1, mu2, mu3 = state.mu1, state.mu2, state.mu3
    shape = state.w.shape
    H, W, n = shape
    if rhs is None:
        rhs = (state.lam1 + mu2 * state.wt
               + fm.to_image(fm.backproject(state.lam2 + mu3 * state.z))
               - divergence_op(state.Lam + mu1 * state.X, BOUNDARY))
    size = rhs.size

    def matvec(x):
        return _apply_system(fm, x.reshape(shape), mu1, mu2, mu3).ravel()

    A = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
    M = None
    if precondition:
        if c_pre is None:
            c_pre = calibrate_preconditioner(fm)
        kappa = laplacian_symbol(H, W)
        symbol = mu2 + mu3 * c_pre * _inv_sqrt_symbol(kappa) + mu1 * kappa

        def psolve(x):
            xr = x.reshape(shape)
            return np.real(np.fft.ifft2(np.fft.fft2(xr, axes=(0, 1)) / symbol[..., None],
                                        axes=(0, 1))).ravel()

        M = spla.LinearOperator((size, size), matvec=psolve, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return np.zeros(shape), {"iterations": 0, "residual": 0.0}
    x, code = spla.gmres(A, rhs.ravel(), x0=state.w.ravel(), rtol=rtol, restart=restart,
                         maxiter=maxiter, M=M, callback=cb, callback_type="pr_norm")
    res = float(np.linalg.norm(matvec(x) - rhs.ravel()) / bnorm)
    if code != 0 and res > 10 * rtol:
        raise ConvergenceError("GMRES did not converge in the w-step", res)
    return x.reshape(shape), {"iterations": count[0], "residual": res}


# --------------------------------------------------------------------------
# X-step
# --------------------------------------------------------------------------


def admm_x_update(state: AdmmState, alpha: float) -> np.ndarray:
    """``shrink(grad w - Lam / mu1, alpha / mu1)``; ``alpha`` is the unit-grid weight."""
    v = gradient_op(state.w, BOUNDARY) - state.Lam / state.mu1
    return shrink(v, alpha / state.mu1)


# --------------------------------------------------------------------------
# z-step
# --------------------------------------------------------------------------


def _z_quantities(fm, z, f, sigma):
    Ih = fm.intensity_from_proj(z)            # (R, E)
    Fh = fm.total(Ih)                         # (R,)
    q = fm.material_moment(Ih)                # (R, N)
    s2 = sigma * sigma
    with np.errstate(divide="ignore"):
        u = f / s2 + np.log(Fh) - np.log(s2)
    W = np.where(Fh > 0, lambert_w0_exp(np.where(Fh > 0, u, 0.0)), 0.0)
    Y = s2 * W
    rho = np.divide(Y, Fh, out=np.zeros_like(Y), where=Fh > 0)
    return Ih, Fh, q, W, Y, rho


def z_residual(z, dw, lam2, mu3, fm, f, sigma):
    """``h(z) = lam2 + mu3 (z - D w) + sum_e dE (y(z) - I(z)) g`` per ray."""
    _, _, q, _, _, rho = _z_quantities(fm, z, f, sigma)
    return lam2 + mu3 * (z - dw) + (rho - 1.0)[:, None] * q


def z_jacobian(z, mu3, fm, f, sigma, convexify=False):
    """Per-ray Jacobian of :func:`z_residual`, (n_rays, N, N)."""
    Ih, Fh, q, W, Y, rho = _z_quantities(fm, z, f, sigma)
    return _jac_from(fm, Ih, Fh, q, W, rho, mu3, sigma, convexify)


def _jac_from(fm, Ih, Fh, q, W, rho, mu3, sigma, convexify):
    n = q.shape[1]
    M = np.einsum("ie,re,je->rij", fm.g, Ih * fm.dE, fm.g)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(Fh > 0, W * W * sigma * sigma / ((1.0 + W) * Fh * Fh), 0.0)
    fac = rho - 1.0
    if convexify:
        fac = np.minimum(fac, 0.0)
    return (mu3 * np.eye(n) + coef[:, None, None] * q[:, :, None] * q[:, None, :]
            - fac[:, None, None] * M)


def _z_potential(fm, z, dw, lam2, mu3, f, sigma):
    _, Fh, _, _, Y, rho = _z_quantities(fm, z, f, sigma)
    with np.errstate(divide="ignore"):
        lr = np.where(rho > 0, np.log(np.where(rho > 0, rho, 1.0)), 0.0)
    d = z - dw
    return (0.5 * sigma * sigma * lr * lr + Y * lr - Y + Fh
            + np.sum(lam2 * d, axis=1) + 0.5 * mu3 * np.sum(d * d, axis=1))


def admm_z_newton(state: AdmmState, fm: ForwardModel, f, sigma, w=None, tol=1e-8,
                  max_iter=50, strict=True):
    """Damped Newton for ``h(z) = 0`` on every ray, warm-started at ``state.z``.

    The tolerance is relative to the size of the terms in ``h``. The
    Jacobian eigenvalues are replaced by ``max(|lambda|, mu3)`` so every step
    descends the potential; a rejected full step is retried capped at length
    10 and then halved. With ``strict`` an unconverged ray raises
    :class:`ConvergenceError` carrying the worst residual; otherwise the
    last iterate is returned and ``info["converged"]`` is False.
    """
    w = state.w if w is None else w
    n = w.shape[-1]
    dw = fm.project(w.reshape(-1, n))
    z = state.z.copy()
    lam2, mu3 = state.lam2, state.mu3
    scale = None
    for it in range(max_iter + 1):
        Ih, Fh, q, W, Y, rho = _z_quantities(fm, z, f, sigma)
        h = lam2 + mu3 * (z - dw) + (rho - 1.0)[:, None] * q
        if scale is None:
            scale = tol * np.maximum(1.0, np.linalg.norm(lam2, axis=1)
                                     + mu3 * np.linalg.norm(dw, axis=1)
                                     + np.linalg.norm(q, axis=1))
        hn = np.linalg.norm(h, axis=1)
        active = hn > scale
        if not active.any():
            return z, {"iterations": it, "converged": True,
                       "residual": float((hn / scale * tol).max(initial=0.0))}
        if it == max_iter:
            break
        idx = np.flatnonzero(active)
        J = _jac_from(fm, Ih[idx], Fh[idx], q[idx], W[idx], rho[idx], mu3, sigma, False)
        # modified Newton: negative curvature is reflected, tiny curvature floored at mu3
        bad = ~np.all(np.isfinite(J), axis=(1, 2))
        if bad.any():
            J[bad] = mu3 * np.eye(n)
        lam_j, vec_j = np.linalg.eigh(J)
        lam_j = np.maximum(np.abs(lam_j), mu3)
        coef_h = np.einsum("rji,rj->ri", vec_j, h[idx]) / lam_j
        dz = -np.einsum("rij,rj->ri", vec_j, coef_h)
        # full Newton step first; on failure the capped step min(1, 10/|dz|), then halving
        zi = z[idx]
        p0 = _z_potential(fm, zi, dw[idx], lam2[idx], mu3, f[idx], sigma)
        slope = np.sum(h[idx] * dz, axis=1)
        cap = np.minimum(1.0, 10.0 / np.maximum(np.linalg.norm(dz, axis=1), 1e-300))
        t = np.ones(idx.size)
        todo = np.ones(idx.size, dtype=bool)
        for trial in range(32):
            sub = np.flatnonzero(todo)
            if sub.size == 0:
                break
            cand = zi[sub] + t[sub, None] * dz[sub]
            pc = _z_potential(fm, cand, dw[idx[sub]], lam2[idx[sub]], mu3, f[idx[sub]], sigma)
            ok = pc <= p0[sub] + 1e-4 * t[sub] * slope[sub] + 1e-14 * np.abs(p0[sub])
            todo[sub[ok]] = False
            rej = sub[~ok]
            t[rej] = cap[rej] if trial == 0 else 0.5 * t[rej]
        z[idx] = zi + t[:, None] * dz
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite z after Newton iterations")
    residual = float((hn / scale * tol).max(initial=0.0))
    if strict:
        raise ConvergenceError("z Newton iteration did not converge", residual)
    return z, {"iterations": max_iter, "converged": False, "residual": residual}


# --------------------------------------------------------------------------
# w~-step, multipliers, penalties
# --------------------------------------------------------------------------


def admm_wtilde_update(state: AdmmState, beta: float, w=None) -> np.ndarray:
    w = state.w if w is None else w
    n = w.shape[-1]
    centre = (state.mu2 * w - state.lam1 + beta * (state.wt - 1.0 / n)) / state.mu2
    return project_weighted_simplex(centre)


def _adapt(mu, t1, t2, third=False):
    if third:
        return mu * 10.0 if mu < t1 else mu / 10.0
    if mu < t1:
        return mu * 10.0
    if mu < t2:
        return mu * 2.0
    return mu / 1000.0


def admm_multiplier_and_penalty_update(state: AdmmState, fm: ForwardModel,
                                       objective_now, objective_prev, thresholds, dw=None,
                                       rescale_on_decrease=True):
    """Dual ascent on the three constraints, then penalty adaptation.

    Penalties change only when the objective increased: ``mu1``, ``mu2``
    grow x10 below T1, x2 in [T1, T2) and shrink /1000 from T2 on; ``mu3``
    grows x10 below T1 and shrinks /10 from T1 on. With ``rescale_on_decrease``
    a penalty that shrinks scales its multiplier by the same factor.
    """
    n = state.w.shape[-1]
    if dw is None:
        dw = fm.project(state.w.reshape(-1, n))
    state.Lam = state.Lam + state.mu1 * (state.X - gradient_op(state.w, BOUNDARY))
    state.lam1 = state.lam1 + state.mu2 * (state.wt - state.w)
    state.lam2 = state.lam2 + state.mu3 * (state.z - dw)
    if objective_prev is not None and objective_now > objective_prev:
        t1, t2 = thresholds
        new = (_adapt(state.mu1, t1, t2), _adapt(state.mu2, t1, t2),
               _adapt(state.mu3, t1, t2, third=True))
        if rescale_on_decrease:
            # a decreased penalty takes its multiplier along, so lam / mu is unchanged
            if new[0] < state.mu1:
                state.Lam = state.Lam * (new[0] / state.mu1)
            if new[1] < state.mu2:
                state.lam1 = state.lam1 * (new[1] / state.mu2)
            if new[2] < state.mu3:
                state.lam2 = state.lam2 * (new[2] / state.mu3)
        state.mu1, state.mu2, state.mu3 = new
    return state


def _rel(a, b):
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1.0)
    return float(np.linalg.norm(a - b) / den)


def constraint_residuals(state: AdmmState, fm: ForwardModel, dw=None):
    n = state.w.shape[-1]
    if dw is None:
        dw = fm.project(state.w.reshape(-1, n))
    return (_rel(state.X, gradient_op(state.w, BOUNDARY)),
            _rel(state.wt, state.w),
            _rel(state.z, dw))


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def run_admm(f, table, geom, cfg: ReconConfig, w0=None, callback=None, return_state=False):
    """ADMM reconstruction; returns (MaterialImage of w~, SolverTrace)."""
    cfg.validate()
    fm = ForwardModel(table, geom, cfg.i_bar)
    f = coerce_f(fm, f)
    s = cfg.admm
    n_mat = fm.n_materials
    h = fm.pixel_size
    a_eff = cfg.alpha * h
    b_eff = cfg.beta * h * h
    sigma = cfg.sigma
    w = uniform_start(geom, n_mat) if w0 is None else np.array(getattr(w0, "data", w0), dtype=float)
    st = AdmmState.initial(fm, w, f, sigma, (s.mu1, s.mu2, s.mu3))
    c_pre = calibrate_preconditioner(fm, cfg.seed)
    trace = SolverTrace("admm")
    F_prev = None
    converged = False
    for k in range(1, s.iters + 1):
        wt_old = st.wt
        st.w, winfo = admm_w_solve(st, fm, c_pre, s.gmres_restart, s.gmres_tol, s.gmres_maxiter)
        st.X = admm_x_update(st, a_eff)
        st.z, zinfo = admm_z_newton(st, fm, f, sigma, strict=False)
        Ih = fm.intensity_from_proj(st.z)
        st.y, _ = fm.photon_field(Ih, f, sigma)
        st.wt = admm_wtilde_update(st, b_eff)
        dw = fm.project(st.w.reshape(-1, n_mat))
        F = fm.objective(st.y, st.wt, f, sigma, cfg.alpha, cfg.beta, boundary=BOUNDARY)
        if not np.isfinite(F.total):
            err = NumericalError(f"non-finite objective at iteration {k}")
            err.trace = trace
            raise err
        res = constraint_residuals(st, fm, dw)
        mus = (st.mu1, st.mu2, st.mu3)
        admm_multiplier_and_penalty_update(st, fm, F.total, F_prev, (s.t1, s.t2), dw,
                                           s.rescale_multipliers)
        F_prev = F.total
        st.info = {"gmres": winfo, "newton": zinfo, "residuals": res}
        trace.append(iter=k, total=F.total, gauss=F.gauss_term, kl=F.kl_term, tv=F.tv_term,
                     multiwell=F.multiwell_term, res_X=res[0], res_wtilde=res[1], res_z=res[2],
                     mu1=mus[0], mu2=mus[1], mu3=mus[2])
        if s.reinit_period and k % s.reinit_period == 0 and k < s.iters:
            # restart the primal splitting at the snapped image
            st.wt = reinitialize(st.wt, table)
            if s.reset_multipliers_on_reinit:
                st.Lam = np.zeros_like(st.Lam)
                st.lam1 = np.zeros_like(st.lam1)
                st.lam2 = np.zeros_like(st.lam2)
            st.w = st.wt.copy()
            st.X = gradient_op(st.w, BOUNDARY)
            st.z = fm.project(st.w.reshape(-1, n_mat))
            st.y, _ = fm.photon_field(fm.intensity_from_proj(st.z), f, sigma)
            F_prev = None
        if callback is not None:
            callback(k, st.wt)
        if relative_change(st.wt, wt_old) < cfg.tol and max(res) < 1e-3:
            converged = True
            break
    trace.status = "converged" if converged else "max_iter"
    img = MaterialImage(project_weighted_simplex(st.wt), h, feasible=True)
    if return_state:
        return img, trace, st
    return img, trace
