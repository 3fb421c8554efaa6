"""Independent reference implementations used by the tests."""

import itertools

import numpy as np


def simplex_qp_bruteforce(v, r):
    """argmin over the simplex of 1/2 sum r (w - v)^2 by active-set enumeration.

    For every support S the equality-constrained minimiser is
    ``w_i = v_i - t / r_i`` on S with ``t`` fixing the sum; the best
    feasible candidate wins.
    """
    v = np.asarray(v, dtype=float)
    r = np.asarray(r, dtype=float)
    m = v.size
    best, best_val = None, np.inf
    for k in range(1, m + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            t = (v[S].sum() - 1.0) / (1.0 / r[S]).sum()
            w = np.zeros(m)
            w[S] = v[S] - t / r[S]
            if np.any(w < -1e-13):
                continue
            val = 0.5 * np.sum(r * (w - v) ** 2)
            if val < best_val - 1e-15:
                best, best_val = np.maximum(w, 0.0), val
    return best


def bisect(fun, lo, hi, iters=200):
    """Root of an increasing function on [lo, hi]."""
    flo = fun(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
