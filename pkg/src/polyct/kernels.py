"""Pointwise and image kernels shared by the solvers.

All functions are vectorised: scalars in, scalars out, or arrays with the
reduction axis last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConvergenceError

__all__ = [
    "lambert_w0_exp",
    "w0_scaled",
    "project_weighted_simplex",
    "project_simplex",
    "prox_exp_sum",
    "kl_divergence",
    "gradient_op",
    "divergence_op",
    "tv_isotropic",
    "ObjectiveValue",
    "optimal_photon_field",
    "shrink",
    "project_unit_ball",
]


# --------------------------------------------------------------------------
# Lambert W
# --------------------------------------------------------------------------


def lambert_w0_exp(u):
    """Solve ``log z + z = u`` for z > 0, i.e. ``z = W0(exp(u))``.

    Newton on the log form: the update ``z <- z (1 - log z + u) / (1 + z)``
    is monotone after the first step because the residual is concave in z,
    so no bracketing is needed. exp(u) is only ever formed for u < 1.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    shape = u.shape
    u = u.ravel()
    z = np.empty_like(u)
    small = u < 1.0
    z[small] = np.exp(u[small])
    big = ~small
    ub = u[big]
    z[big] = ub - np.log(ub) * (1.0 - 1.0 / (2.0 * ub))
    # deep negative tail: z = e^u to full precision, Newton would only lose digits
    active = u > -40.0
    for _ in range(60):
        if not active.any():
            break
        za = z[active]
        zn = za * (1.0 - np.log(za) + u[active]) / (1.0 + za)
        zn = np.where(zn > 0, zn, 0.5 * za)
        done = np.abs(zn - za) <= 4e-16 * zn
        z[active] = zn
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(z[0]) if scalar else z.reshape(shape)


def w0_scaled(a, b):
    """``W0(a exp(b)) / a`` for a > 0 without forming ``exp(b)``."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("w0_scaled needs a > 0")
    out = lambert_w0_exp(np.log(a) + b) / a
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# simplex projections
# --------------------------------------------------------------------------


def project_weighted_simplex(v, r=None):
    """argmin over the simplex of ``1/2 sum r_i (w_i - v_i)^2``, along the last axis.

    The minimiser has the form ``w_i = max(0, v_i - t / r_i)``. Active-set
    iteration: the pivot ``t = (sum v - 1) / sum 1/r`` over the current set is
    a lower bound for the true pivot, so every index it drives to zero is
    outside the support. Dropping them and repeating ends after at most
    ``m`` passes, with no sort.
    """
    v = np.asarray(v, dtype=float)
    if r is None:
        ir = np.ones_like(v)
    else:
        r = np.broadcast_to(np.asarray(r, dtype=float), v.shape)
        if np.any(~(r > 0)) or not np.all(np.isfinite(r)):
            raise ValueError("weights must be strictly positive and finite")
        ir = 1.0 / r
    return _project_simplex_inv(v, ir)


def _project_simplex_inv(v, ir):
    """Weighted simplex projection with inverse weights ``ir``, unchecked."""
    m = v.shape[-1]
    ones = np.ones(m)
    active = np.ones(v.shape, dtype=bool)
    for _ in range(m):
        t = (((v * active) @ ones - 1.0) / ((ir * active) @ ones))[..., None]
        keep = active & (v - t * ir > 0)
        if np.array_equal(keep, active):
            break
        # guard against an empty set from rounding: keep the best entry
        empty = ~keep.any(axis=-1, keepdims=True)
        if empty.any():
            best = np.argmax(np.where(active, v / ir, -np.inf), axis=-1)[..., None]
            keep |= empty & (np.arange(m) == best)
        active = keep
    w = np.where(active, np.maximum(0.0, v - t * ir), 0.0)
    return w / (w @ ones)[..., None]


def project_simplex(v):
    return project_weighted_simplex(v)


# --------------------------------------------------------------------------
# exponential-sum prox
# --------------------------------------------------------------------------


def prox_exp_sum(c, B, log_s, delta=1000.0, log_target=None, init=None,
                 tol=1e-10, max_iter=100, return_info=False):
    """Minimise ``1/2 |xi - c|^2 + sum_e exp((B xi)_e + log_s_e)`` over xi.

    Batched: ``c`` is (..., m), ``log_s`` is (..., N_E), ``B`` is (N_E, m) and
    shared by the batch. Damped Newton with Armijo backtracking; ``s`` never
    leaves the exponent, so very negative or large ``log_s`` is safe.

    ``log_target`` (..., N_E) seeds the start ``xi = B^+ (target - max(log_s, -delta))``
    as the solution of ``s * exp(B xi) = exp(target)``; ``init`` overrides it
    (warm start). Without either the start is ``c``.
    """
    c = np.asarray(c, dtype=float)
    B = np.asarray(B, dtype=float)
    log_s = np.asarray(log_s, dtype=float)
    batch_shape = c.shape[:-1]
    m = c.shape[-1]
    c2 = c.reshape(-1, m)
    ls = np.broadcast_to(log_s, batch_shape + (B.shape[0],)).reshape(-1, B.shape[0])

    if init is not None:
        xi = np.array(np.broadcast_to(init, c.shape), dtype=float).reshape(-1, m)
    elif log_target is not None:
        tgt = np.broadcast_to(np.asarray(log_target, dtype=float), ls.shape)
        rhs = np.maximum(tgt, -delta) - np.maximum(ls, -delta)
        xi = rhs @ np.linalg.pinv(B).T
    else:
        xi = c2.copy()
    xi = np.where(np.isfinite(xi), xi, c2)

    scale = tol * np.maximum(1.0, np.linalg.norm(c2, axis=1))
    ex = _exp_terms(xi, ls, B)
    grad = xi - c2 + ex @ B
    active = np.linalg.norm(grad, axis=1) > scale
    eye = np.eye(m)
    it = 0
    # converged rows are frozen; each round works on the unconverged subset
    while active.any():
        if it >= max_iter:
            norms = np.linalg.norm(grad, axis=1) * active
            err = ConvergenceError("exponential-sum prox did not converge", float(norms.max()))
            err.index = int(np.argmax(norms))
            raise err
        it += 1
        idx = np.flatnonzero(active)
        g = grad[idx]
        e = ex[idx]
        H = eye + np.einsum("em,re,en->rmn", B, e, B)
        step = -np.linalg.solve(H, g[..., None])[..., 0]
        x0 = xi[idx]
        r0 = x0 - c2[idx]
        slope = np.sum(g * step, axis=1)
        t = np.ones(idx.size)
        todo = np.ones(idx.size, dtype=bool)
        for _ in range(30):
            if not todo.any():
                break
            sub = np.flatnonzero(todo)
            d = t[sub, None] * step[sub]
            # objective change evaluated without cancellation
            bd = np.minimum(d @ B.T, 700.0)
            dval = (np.sum(d * (0.5 * d + r0[sub]), axis=1)
                    + np.sum(e[sub] * np.expm1(bd), axis=1))
            ok = dval <= 1e-4 * t[sub] * slope[sub]
            todo[sub[ok]] = False
            t[sub[~ok]] *= 0.5
        # a step whose decrease is below rounding is taken in full
        t[todo] = 1.0
        xn = x0 + t[:, None] * step
        xi[idx] = xn
        en = _exp_terms(xn, ls[idx], B)
        ex[idx] = en
        grad[idx] = xn - c2[idx] + en @ B
        active[idx] = np.linalg.norm(grad[idx], axis=1) > scale[idx]
    out = xi.reshape(c.shape)
    if return_info:
        return out, {"iterations": it, "residual": float(np.linalg.norm(grad, axis=1).max(initial=0.0))}
    return out


def _exp_terms(x, ls, B):
    return np.exp(np.minimum(x @ B.T + ls, 700.0))


# --------------------------------------------------------------------------
# divergences and TV
# --------------------------------------------------------------------------


def kl_divergence(z, zbar):
    """``z log(z/zbar) - z + zbar`` with ``0 log 0 = 0``; +inf when zbar = 0 < z."""
    z = np.asarray(z, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    if np.any(z < 0) or np.any(zbar < 0):
        raise ValueError("kl_divergence needs nonnegative arguments")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(z > 0, z * (np.log(z) - np.log(zbar)) - z + zbar, zbar)
    out = np.where((z > 0) & (zbar == 0), np.inf, out)
    # rounding can push tiny values below zero
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def gradient_op(u, boundary="neumann", spacing=1.0):
    """Forward differences on the first two axes; components on a new last axis."""
    u = np.asarray(u, dtype=float)
    g = np.zeros(u.shape + (2,))
    if boundary == "neumann":
        g[:-1, :, ..., 0] = u[1:] - u[:-1]
        g[:, :-1, ..., 1] = u[:, 1:] - u[:, :-1]
    elif boundary == "periodic":
        g[..., 0] = np.roll(u, -1, axis=0) - u
        g[..., 1] = np.roll(u, -1, axis=1) - u
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    if spacing != 1.0:
        g /= spacing
    return g


def divergence_op(p, boundary="neumann", spacing=1.0):
    """Negative adjoint of :func:`gradient_op` with the same boundary and spacing."""
    p = np.asarray(p, dtype=float)
    px, py = p[..., 0], p[..., 1]
    if boundary == "neumann":
        d = np.zeros(px.shape)
        d[:-1] += px[:-1]
        d[1:] -= px[:-1]
        d[:, :-1] += py[:, :-1]
        d[:, 1:] -= py[:, :-1]
    elif boundary == "periodic":
        d = px - np.roll(px, 1, axis=0) + py - np.roll(py, 1, axis=1)
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    if spacing != 1.0:
        d /= spacing
    return d


def tv_isotropic(u, pixel_size=1.0, boundary="neumann"):
    """Isotropic TV, ``sum |grad u| * pixel_area`` with physical differences.

    For a stack (H, W, N) the channel TVs are summed.
    """
    g = gradient_op(u, boundary)
    return float(np.sqrt((g**2).sum(axis=-1)).sum() * pixel_size)


def shrink(v, t):
    """Vector soft threshold along the last axis."""
    v = np.asarray(v, dtype=float)
    n = np.sqrt((v**2).sum(axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(n > t, 1.0 - t / n, 0.0)
    return fac * v


def project_unit_ball(p):
    n = np.hypot(p[..., 0], p[..., 1]) if p.shape[-1] == 2 else np.sqrt((p**2).sum(axis=-1))
    return p / np.maximum(1.0, n)[..., None]


# --------------------------------------------------------------------------
# objective and the optimal photon field
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    gauss_term: float
    kl_term: float
    tv_term: float
    multiwell_term: float
    feasible: bool = True

    def as_dict(self):
        return {
            "total": self.total,
            "gauss": self.gauss_term,
            "kl": self.kl_term,
            "tv": self.tv_term,
            "multiwell": self.multiwell_term,
        }


def optimal_photon_field(intensity, total, f, sigma):
    """Pointwise minimiser y of the data terms for fixed w, and its energy sum Y.

    ``intensity`` has the energy axis first (N_E, ...), ``total`` and ``f``
    the remaining shape. Y solves ``Y = F exp((f - Y) / sigma^2)`` and comes
    from the log-form Lambert W; y is the rescaled intensity ``I * Y / F``.
    """
    intensity = np.asarray(intensity, dtype=float)
    total = np.asarray(total, dtype=float)
    f = np.asarray(f, dtype=float)
    s2 = float(sigma) ** 2
    pos = total > 0
    u = np.where(pos, f / s2 + np.log(np.where(pos, total, 1.0)) - np.log(s2), 0.0)
    Y = np.where(pos, s2 * lambert_w0_exp(u), 0.0)
    ratio = np.where(pos, Y / np.where(pos, total, 1.0), 0.0)
    return intensity * ratio, Y
