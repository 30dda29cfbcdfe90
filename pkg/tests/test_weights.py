import numpy as np
import pytest
import sympy as sym

from spde_lab.grids import build_grid, build_time_grid
from spde_lab.weights import (WeightSpec, WeightError, build_psi, eval_weight,
                              X_SYMS)


def test_parabolic_interior_direct_substitution():
    # psi == ln 2, mu = 1, T = 2, lam = 1 at t = 1: alpha = (2 - 4)/1 = -2
    spec = WeightSpec(variant="parabolic_interior", dim=1,
                      params={"lam": 1.0, "mu": 1.0, "T": 2.0,
                              "psi_max": float(np.log(2))},
                      psi=sym.log(2))
    ev = eval_weight(spec, 1.0, np.array([[0.5]]))
    assert ev.ell[0] == pytest.approx(-2.0)
    assert ev.theta[0] == pytest.approx(np.exp(-2.0))


def test_parabolic_interior_singular_endpoints():
    spec = WeightSpec(variant="parabolic_interior", dim=1,
                      params={"lam": 1.0, "mu": 1.0, "T": 1.0, "psi_max": 1.0},
                      psi=X_SYMS[0] ** 2)
    with pytest.raises(WeightError, match="singular at endpoint"):
        eval_weight(spec, 0.0, np.array([[0.5]]))


def test_parabolic_interior_negative_alpha_and_decay():
    grid = build_grid(1.0, 21)
    tg = build_time_grid(1.0, 50)
    psi = build_psi(grid, -1.0)
    lam = 2.0
    spec = WeightSpec(variant="parabolic_interior", dim=1,
                      params={"lam": lam, "mu": 1.0, "T": 1.0,
                              "psi_max": float(psi.on_nodes(grid).max())},
                      psi=psi)
    report = spec.validate(grid, tg)
    assert report["checks"]["alpha_max"] < 0
    lam_star = report["checks"]["lambda_star"]
    spec2 = WeightSpec(variant="parabolic_interior", dim=1,
                       params={"lam": lam_star * 1.01, "mu": 1.0, "T": 1.0,
                               "psi_max": float(psi.on_nodes(grid).max())},
                       psi=psi)
    edge = eval_weight(spec2, tg.dt, grid.nodes)
    assert edge.theta.max() < 1e-8


def test_time_power_weight():
    spec = WeightSpec(variant="time_power", dim=1, params={"lam": 2.0})
    ev = eval_weight(spec, 1.0, np.array([[0.3]]))
    assert ev.ell[0] == pytest.approx(4.0)
    assert ev.theta[0] == pytest.approx(np.exp(4.0))
    assert ev.ell_t[0] == pytest.approx(2.0 * 2.0)  # lam (t+1)^(lam-1)


def test_time_exponential_psi_t_check():
    tg = build_time_grid(1.0, 10)
    good = WeightSpec(variant="time_exponential", dim=1,
                      params={"lam": 1.0, "s": 1.0})
    assert good.validate(time_grid=tg)["ok"]
    bad = WeightSpec(variant="time_exponential", dim=1,
                     params={"lam": 1.0, "s": 1.0}, psi=0.5 * sym.Symbol("t"))
    assert not bad.validate(time_grid=tg)["ok"]


def test_hyperbolic_quadratic_time_symmetry():
    grid = build_grid(1.0, 11)
    psi = build_psi(grid, -1.0)
    T = 2.0
    spec = WeightSpec(variant="hyperbolic_quadratic", dim=1,
                      params={"lam": 1.5, "c1": 0.8, "T": T}, psi=psi)
    for t in (0.2, 0.7, 1.0):
        a = eval_weight(spec, t, grid.nodes)
        b = eval_weight(spec, T - t, grid.nodes)
        assert np.allclose(a.ell, b.ell)
    mid = eval_weight(spec, T / 2, grid.nodes)
    assert np.allclose(mid.ell, 1.5 * psi.on_nodes(grid))


def test_hyperbolic_aniso_admissibility():
    grid = build_grid((1.0, 1.0), (7, 7))
    ok = WeightSpec(variant="hyperbolic_aniso", dim=2,
                    params={"lam": 1.0, "beta": 0.5, "m": 4.0,
                            "x0_prime": -1.0})
    assert ok.validate(grid)["ok"]
    bad = WeightSpec(variant="hyperbolic_aniso", dim=2,
                     params={"lam": 1.0, "beta": 0.5, "m": 1.0,
                             "x0_prime": -1.0})
    assert not bad.validate(grid)["ok"]


def test_local_paraboloid_derivatives():
    T = 1.0
    spec = WeightSpec(variant="local_paraboloid", dim=2,
                      params={"slope": 0.3, "tau": 0.1, "T": T,
                              "s": 2.0, "lam": 1.5})
    t, x = 0.4, np.array([[0.2, 0.6]])
    ev = eval_weight(spec, t, x)
    phi = 0.3 * 0.2 + 0.6 ** 2 / 2 + (t - T / 2) ** 2 / 2 + 0.05
    assert ev.ell[0] == pytest.approx(2.0 * phi ** -1.5)
    assert ev.theta[0] == pytest.approx(np.exp(ev.ell[0]))
    # hessian symmetry
    assert np.allclose(ev.hess[0, 1], ev.hess[1, 0])


def test_theta_equals_exp_ell_everywhere():
    grid = build_grid(1.0, 9)
    psi = build_psi(grid, 2.0)
    spec = WeightSpec(variant="hyperbolic_quadratic", dim=1,
                      params={"lam": 0.7, "c1": 0.4, "T": 1.0}, psi=psi)
    ev = eval_weight(spec, np.linspace(0.1, 0.9, 5)[:, None],
                     grid.nodes[None, :, :])
    assert np.allclose(ev.theta, np.exp(ev.ell))


def test_build_psi_1d():
    grid = build_grid(1.0, 11)
    psi = build_psi(grid, -1.0)
    vals = psi.on_nodes(grid)
    assert vals[0] == pytest.approx(1.0)
    assert vals[-1] == pytest.approx(4.0)
    g = psi.grad_on_nodes(grid)
    assert np.all(g[0] >= 2.0)
    assert psi.min_grad_norm == pytest.approx(2.0)
    assert not psi.vanishes_on_boundary


def test_build_psi_2d_corner_distance():
    grid = build_grid((1.0, 1.0), (5, 5))
    psi = build_psi(grid, (-1.0, -1.0))
    assert psi.min_grad_norm == pytest.approx(2 * np.sqrt(2))


def test_build_psi_rejects_interior_point():
    grid = build_grid(1.0, 11)
    with pytest.raises(WeightError, match="critical point inside"):
        build_psi(grid, 0.5)
