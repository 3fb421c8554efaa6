import numpy as np
import pytest
from conftest import random_feasible

from polyct.core import ConvergenceError, FanBeamGeometry, bundled_table, preset_config
from polyct.kernels import gradient_op, shrink
from polyct.physics import ForwardModel, simulate_measurement
from polyct.solvers.admm import (
    AdmmState,
    _apply_system,
    admm_multiplier_and_penalty_update,
    admm_w_solve,
    admm_wtilde_update,
    admm_x_update,
    admm_z_newton,
    calibrate_preconditioner,
    constraint_residuals,
    laplacian_symbol,
    run_admm,
    z_jacobian,
    z_residual,
)

GEOM = FanBeamGeometry.default(16, n_views=24, n_det=31)
TABLE = bundled_table(3)


def _state(seed=0, i_bar=100.0, sigma=1.0, mu=(2.0, 3.0, 5.0)):
    fm = ForwardModel(TABLE, GEOM, i_bar)
    rng = np.random.default_rng(seed)
    w = random_feasible(rng, (16, 16), 3)
    f = fm.total(fm.intensity_flat(w)) * (1 + 0.05 * rng.normal(size=fm.n_rays))
    st = AdmmState.initial(fm, w, f, sigma, mu)
    return fm, f, st, rng


def test_laplacian_symbol_matches_operator():
    from polyct.kernels import divergence_op
    rng = np.random.default_rng(0)
    u = rng.normal(size=(12, 10, 1))
    lap = -divergence_op(gradient_op(u, "periodic"), "periodic")[..., 0]
    via_fft = np.real(np.fft.ifft2(np.fft.fft2(u[..., 0]) * laplacian_symbol(12, 10)))
    np.testing.assert_allclose(lap, via_fft, atol=1e-12)


def test_preconditioner_constant_positive():
    fm = ForwardModel(TABLE, GEOM, 1.0)
    assert calibrate_preconditioner(fm) > 0


def test_w_solve_manufactured_solution():
    fm, f, st, rng = _state(1)
    w_star = rng.normal(size=st.w.shape)
    rhs = _apply_system(fm, w_star, st.mu1, st.mu2, st.mu3)
    st.w = np.zeros_like(st.w)
    w, info = admm_w_solve(st, fm, rhs=rhs)
    assert np.abs(w - w_star).max() <= 1e-7
    assert info["residual"] <= 1e-8


def test_preconditioner_reduces_iterations():
    # Laplacian-dominated system: the FFT symbol is nearly exact there
    fm, f, st, rng = _state(2, mu=(100.0, 1e-2, 1e-2))
    rhs = _apply_system(fm, rng.normal(size=st.w.shape), st.mu1, st.mu2, st.mu3)
    st.w = np.zeros_like(st.w)
    _, with_p = admm_w_solve(st, fm, rhs=rhs, maxiter=500)
    _, without = admm_w_solve(st, fm, rhs=rhs, precondition=False, maxiter=500)
    assert with_p["iterations"] < without["iterations"]


def test_x_update_is_shrinkage():
    fm, f, st, rng = _state(3)
    st.Lam = rng.normal(size=st.Lam.shape)
    out = admm_x_update(st, 0.7)
    ref = shrink(gradient_op(st.w, "periodic") - st.Lam / st.mu1, 0.7 / st.mu1)
    np.testing.assert_allclose(out, ref)


def test_wtilde_update_is_feasible():
    fm, f, st, rng = _state(4)
    st.w = rng.normal(size=st.w.shape)
    st.lam1 = rng.normal(size=st.w.shape)
    wt = admm_wtilde_update(st, 0.3)
    assert np.allclose(wt.sum(-1), 1) and wt.min() >= 0


@pytest.mark.parametrize("sigma", [1e-2, 1.0, 30.0])
def test_z_jacobian_matches_finite_differences(sigma):
    fm, f, st, rng = _state(5, sigma=sigma)
    dw = fm.project(st.w.reshape(-1, 3))
    z = dw + 0.05 * rng.normal(size=dw.shape)
    lam2 = rng.normal(size=dw.shape)
    J = z_jacobian(z, st.mu3, fm, f, sigma)
    worst = 0.0
    for _ in range(5):
        d = rng.normal(size=z.shape)
        eps = 1e-6
        fd = (z_residual(z + eps * d, dw, lam2, st.mu3, fm, f, sigma)
              - z_residual(z - eps * d, dw, lam2, st.mu3, fm, f, sigma)) / (2 * eps)
        an = np.einsum("rij,rj->ri", J, d)
        worst = max(worst, np.linalg.norm(fd - an) / np.linalg.norm(an))
    assert worst <= 1e-5


def test_z_newton_solves_the_residual():
    fm, f, st, rng = _state(6)
    st.lam2 = rng.normal(size=st.z.shape)
    z, info = admm_z_newton(st, fm, f, 1.0)
    assert info["converged"]
    dw = fm.project(st.w.reshape(-1, 3))
    h = z_residual(z, dw, st.lam2, st.mu3, fm, f, 1.0)
    q = fm.material_moment(fm.intensity_from_proj(z))
    scale = np.maximum(1.0, np.linalg.norm(st.lam2, axis=1) + st.mu3 * np.linalg.norm(dw, axis=1)
                       + np.linalg.norm(q, axis=1))
    assert np.all(np.linalg.norm(h, axis=1) <= 1e-7 * scale)


def test_z_newton_strict_raises_after_the_cap():
    fm, f, st, rng = _state(7)
    st.z = st.z + 3.0
    with pytest.raises(ConvergenceError):
        admm_z_newton(st, fm, f, 1.0, max_iter=1)
    z, info = admm_z_newton(st, fm, f, 1.0, max_iter=1, strict=False)
    assert not info["converged"] and np.all(np.isfinite(z))


def test_multiplier_update_and_penalty_rule():
    fm, f, st, rng = _state(8, mu=(1.0, 1.0, 1.0))
    st.X = st.X + 0.1
    lam_before = st.Lam.copy()
    admm_multiplier_and_penalty_update(st, fm, 1.0, 2.0, (1e9, 1e13))
    np.testing.assert_allclose(st.Lam, lam_before + 0.1)
    assert (st.mu1, st.mu2, st.mu3) == (1.0, 1.0, 1.0)      # objective fell
    admm_multiplier_and_penalty_update(st, fm, 3.0, 2.0, (1e9, 1e13))
    assert (st.mu1, st.mu2, st.mu3) == (10.0, 10.0, 10.0)
    st.mu1 = st.mu2 = 1e9
    st.mu3 = 1e9
    admm_multiplier_and_penalty_update(st, fm, 3.0, 2.0, (1e9, 1e13))
    assert (st.mu1, st.mu2, st.mu3) == (2e9, 2e9, 1e8)
    st.mu1 = st.mu2 = 1e13
    admm_multiplier_and_penalty_update(st, fm, 3.0, 2.0, (1e9, 1e13))
    assert (st.mu1, st.mu2) == (1e10, 1e10)


def test_residuals_vanish_at_consistent_state():
    fm, f, st, rng = _state(9)
    assert max(constraint_residuals(st, fm)) == 0.0


def test_run_admm_small_case(small_case):
    table, geom, phantom, _ = small_case
    cfg = preset_config("a", solver="admm")
    cfg.admm.iters = 40
    cfg.admm.reinit_period = 0
    ms = simulate_measurement(phantom, table, geom, cfg.sigma, cfg.i_bar, seed=0)
    w, trace = run_admm(ms.f, table, geom, cfg)
    assert w.feasible and len(trace) <= 40
    assert set(trace.columns) >= {"res_X", "res_wtilde", "res_z", "mu1", "mu2", "mu3"}
    from polyct.solvers.common import reinitialize
    acc = (reinitialize(w, table).labels == phantom.labels).mean()
    assert acc > 0.9


@pytest.mark.parametrize("reset", [True, False])
def test_reinit_snaps_and_optionally_clears_multipliers(small_case, reset, monkeypatch):
    table, geom, phantom, _ = small_case
    cfg = preset_config("a", solver="admm")
    cfg.admm.iters = 10
    cfg.admm.reinit_period = 5
    cfg.admm.reset_multipliers_on_reinit = reset
    ms = simulate_measurement(phantom, table, geom, cfg.sigma, cfg.i_bar, seed=0)
    seen = {}

    def grab(k, wt):
        if k == 5:
            seen["wt"] = wt.copy()

    import polyct.solvers.admm as admm_mod
    orig = admm_mod.admm_w_solve
    calls = []

    def spy(st, *a, **k):
        calls.append((np.abs(st.lam1).max(), np.abs(st.lam2).max()))
        return orig(st, *a, **k)

    monkeypatch.setattr(admm_mod, "admm_w_solve", spy)
    run_admm(ms.f, table, geom, cfg, callback=grab)
    assert np.all(np.isin(seen["wt"], (0.0, 1.0)))
    # the w-solve of iteration 6 sees the multipliers left by the reinit
    assert (calls[5] == (0.0, 0.0)) == reset
