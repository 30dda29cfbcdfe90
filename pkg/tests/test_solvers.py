import numpy as np
import pytest

from spde_lab.brownian import sample_brownian
from spde_lab.grids import build_grid, build_time_grid
from spde_lab.norms import discrete_norm
from spde_lab.solvers import (HyperbolicCoefficients, ParabolicCoefficients,
                              SolverError, check_energy_estimate, cfl_limit,
                              ellipticity_constant, neumann_trace,
                              solve_hyperbolic, solve_parabolic, strong_error)


def heat_setup(n, n_steps, M=1, T=0.1, seed=0, **kw):
    grid = build_grid(1.0, n)
    tg = build_time_grid(T, n_steps)
    ens = sample_brownian(tg, M, seed)
    coeffs = ParabolicCoefficients(grid=grid, bjk=1.0,
                                   y0=np.sin(np.pi * grid.nodes[:, 0]), **kw)
    return grid, tg, ens, coeffs


def test_zero_data_zero_solution():
    grid = build_grid(1.0, 9)
    ens = sample_brownian(build_time_grid(1.0, 20), 3, seed=1)
    coeffs = ParabolicCoefficients(grid=grid, bjk=1.0, b3=0.7)
    traj = solve_parabolic(coeffs, ens, grid)
    assert np.all(traj.values == 0.0)


def test_ellipticity_validation():
    grid = build_grid((1.0, 1.0), (5, 5))
    b = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues -1 and 3
    assert ellipticity_constant(grid, b) == pytest.approx(-1.0)
    with pytest.raises(SolverError, match="ellipticity"):
        ParabolicCoefficients(grid=grid, bjk=b)


def test_heat_mode_against_separation_of_variables():
    # y = exp(-pi^2 t) sin(pi x); L2 error at t = 0.1 shrinks under joint
    # refinement
    errs = []
    for n, n_steps in [(17, 100), (33, 400), (65, 1600)]:
        grid, tg, ens, coeffs = heat_setup(n, n_steps)
        traj = solve_parabolic(coeffs, ens, grid, store="final")
        exact = np.exp(-np.pi ** 2 * tg.horizon) * np.sin(np.pi * grid.nodes[:, 0])
        errs.append(discrete_norm(traj.terminal()[0] - exact, "l2", grid))
    assert errs[1] < errs[0] and errs[2] < errs[1]
    assert errs[2] < 1e-3


def test_parabolic_dirichlet_exact_and_linearity():
    rng = np.random.default_rng(3)
    grid = build_grid(1.0, 17)
    tg = build_time_grid(0.2, 50)
    ens = sample_brownian(tg, 4, seed=2)
    x = grid.nodes[:, 0]
    u = np.sin(np.pi * x) * rng.standard_normal()
    v = np.sin(2 * np.pi * x) * rng.standard_normal()

    def run(y0):
        c = ParabolicCoefficients(grid=grid, bjk=1.0, b1=lambda x: [0.3],
                                  b2=-0.5, b3=0.4, y0=y0)
        return solve_parabolic(c, ens, grid)

    ta, tb, tab = run(u), run(v), run(2 * u + 3 * v)
    assert np.all(tab.values[:, :, grid.boundary] == 0.0)
    assert np.allclose(tab.values, 2 * ta.values + 3 * tb.values,
                       rtol=1e-12, atol=1e-13)


def test_zero_noise_paths_coincide():
    grid, tg, ens, coeffs = heat_setup(17, 50, M=6, seed=5, b3=None)
    traj = solve_parabolic(coeffs, ens, grid)
    for p in range(1, 6):
        assert np.array_equal(traj.values[p], traj.values[0])


def test_causality_future_increments_do_not_matter():
    # two ensembles agreeing on the first half of the increments produce
    # bit-identical trajectories on that half
    grid = build_grid(1.0, 17)
    tg = build_time_grid(0.2, 40)
    x = grid.nodes[:, 0]

    class Doctored:
        def __init__(self, base, flip_from):
            self.base = base
            self.flip_from = flip_from
            self.time_grid = base.time_grid
            self.n_paths = base.n_paths
            self.seed = base.seed

        def blocks(self, block_size=4096):
            for sl, dw in self.base.blocks(block_size):
                dw = dw.copy()
                dw[:, self.flip_from:] *= -1.0
                yield sl, dw

    ens = sample_brownian(tg, 3, seed=8)
    half = 20
    coeffs = ParabolicCoefficients(grid=grid, bjk=1.0, b3=0.5,
                                   y0=np.sin(np.pi * x))
    a = solve_parabolic(coeffs, ens, grid)
    b = solve_parabolic(coeffs, Doctored(ens, half), grid)
    assert np.array_equal(a.values[:, :half + 1], b.values[:, :half + 1])
    assert not np.array_equal(a.values[:, -1], b.values[:, -1])


def test_gbm_mode_strong_order():
    # multiplicative-noise mode: comparison against the exact solution of
    # the spatially semidiscrete system (same Laplacian eigenvalue), so the
    # measured slope isolates the time discretization
    grid = build_grid(1.0, 41)
    x = grid.nodes[:, 0]
    h = grid.spacing[0]
    mu_h = 2.0 / h ** 2 * (1 - np.cos(np.pi * h))
    sigma = 0.5
    T = 0.25
    M = 2000
    errs, dts = [], []
    for n_steps in (16, 32, 64):
        tg = build_time_grid(T, n_steps)
        ens = sample_brownian(tg, M, seed=12)
        coeffs = ParabolicCoefficients(grid=grid, bjk=1.0, b3=sigma,
                                       y0=np.sin(np.pi * x))
        traj = solve_parabolic(coeffs, ens, grid, store="final")
        wT = ens.values()[:, -1]
        factor = np.exp((-mu_h - sigma ** 2 / 2) * T + sigma * wT)
        exact = factor[:, None] * np.sin(np.pi * x)[None, :]
        errs.append(strong_error(traj, exact))
        dts.append(tg.dt)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope >= 0.45
    # halving dt cuts the error by at least sqrt(2) within 20 percent
    assert errs[0] / errs[1] >= np.sqrt(2) * 0.8


def test_continuum_gbm_formula_close_at_fine_resolution():
    grid = build_grid(1.0, 101)
    x = grid.nodes[:, 0]
    sigma = 0.3
    tg = build_time_grid(0.1, 400)
    ens = sample_brownian(tg, 50, seed=3)
    coeffs = ParabolicCoefficients(grid=grid, bjk=1.0, b3=sigma,
                                   y0=np.sin(np.pi * x))
    traj = solve_parabolic(coeffs, ens, grid, store="final")
    wT = ens.values()[:, -1]
    exact = np.exp((-np.pi ** 2 - sigma ** 2 / 2) * tg.horizon
                   + sigma * wT)[:, None] * np.sin(np.pi * x)[None, :]
    rel = strong_error(traj, exact) / discrete_norm(exact, "l2", grid,
                                                    expectation=True)
    assert rel < 0.02


def wave_setup(n, n_steps, T=1.0, M=1, seed=0, **kw):
    grid = build_grid(1.0, n)
    tg = build_time_grid(T, n_steps)
    ens = sample_brownian(tg, M, seed)
    x = grid.nodes[:, 0]
    coeffs = HyperbolicCoefficients(grid=grid, bjk=1.0,
                                    z0=np.sin(np.pi * x), **kw)
    return grid, tg, ens, coeffs


def test_standing_wave_second_order():
    errs, scales = [], []
    for n, n_steps in [(17, 32), (33, 64), (65, 128)]:
        grid, tg, ens, coeffs = wave_setup(n, n_steps)
        traj = solve_hyperbolic(coeffs, ens, grid)
        x = grid.nodes[:, 0]
        err = 0.0
        for pos, k in enumerate(traj.time_indices):
            exact = np.cos(np.pi * tg.times[k]) * np.sin(np.pi * x)
            err = max(err, discrete_norm(traj.values[0, pos] - exact,
                                         "l2", grid))
        errs.append(err)
        scales.append(1.0 / (n - 1))
    slope = np.polyfit(np.log(scales), np.log(errs), 1)[0]
    assert slope >= 1.8


def test_hyperbolic_cfl_guard():
    grid = build_grid(1.0, 33)
    tg = build_time_grid(1.0, 10)  # dt = 0.1 > h = 1/32
    ens = sample_brownian(tg, 1, seed=0)
    coeffs = HyperbolicCoefficients(grid=grid, bjk=1.0)
    assert cfl_limit(grid, 1.0) == pytest.approx(1 / 32)
    with pytest.raises(SolverError, match="unstable step size"):
        solve_hyperbolic(coeffs, ens, grid)


def test_hyperbolic_zero_data():
    grid = build_grid(1.0, 17)
    ens = sample_brownian(build_time_grid(1.0, 64), 2, seed=1)
    coeffs = HyperbolicCoefficients(grid=grid, bjk=1.0, b4=0.5)
    traj = solve_hyperbolic(coeffs, ens, grid)
    assert np.all(traj.values == 0.0)
    assert np.all(traj.velocity == 0.0)


def test_hyperbolic_velocity_is_backward_quotient():
    grid, tg, ens, coeffs = wave_setup(17, 64, M=2, seed=4, b4=0.3)
    traj = solve_hyperbolic(coeffs, ens, grid)
    dq = np.diff(traj.values, axis=1) / tg.dt
    assert np.allclose(traj.velocity[:, 1:], dq, rtol=1e-12, atol=1e-12)


def test_hyperbolic_self_convergence_with_noise():
    # error against a 4x finer reference halves as dt halves (strong order
    # >= 1/2); the reference shares each path's Brownian increments by
    # construction of the per-path bit streams only when the time grid
    # matches, so the fine solve is restricted through its own terminal W
    grid = build_grid(1.0, 33)
    x = grid.nodes[:, 0]
    T = 0.5
    sigma = 0.4
    M = 400

    def solve_at(n_steps, ens=None):
        tg = build_time_grid(T, n_steps)
        if ens is None:
            ens = sample_brownian(tg, M, seed=21)
        coeffs = HyperbolicCoefficients(grid=grid, bjk=1.0, b4=sigma,
                                        z0=np.sin(np.pi * x))
        return solve_hyperbolic(coeffs, ens, grid, store="final"), ens

    class Coarsened:
        """View of a fine ensemble with increments summed in groups."""

        def __init__(self, fine, factor):
            self.fine = fine
            self.factor = factor
            self.time_grid = build_time_grid(T, fine.time_grid.n_steps // factor)
            self.n_paths = fine.n_paths
            self.seed = fine.seed

        def blocks(self, block_size=4096):
            for sl, dw in self.fine.blocks(block_size):
                m, n = dw.shape
                yield sl, dw.reshape(m, n // self.factor, self.factor).sum(axis=2)

    fine, fine_ens = solve_at(512)
    errs = []
    for n_steps in (32, 64):
        coarse, _ = solve_at(n_steps, ens=Coarsened(fine_ens, 512 // n_steps))
        errs.append(strong_error(coarse, fine.terminal()))
    assert errs[0] / errs[1] >= np.sqrt(2) * 0.8


def test_neumann_trace_values():
    grid = build_grid(1.0, 41)
    x = grid.nodes[:, 0]
    u = np.sin(np.pi * x)
    tr = neumann_trace(u, grid, subset=grid.boundary)
    # outward normal derivative is -pi at both ends
    assert np.allclose(tr, [-np.pi, -np.pi], atol=1e-2)
    assert np.allclose(neumann_trace(np.zeros_like(u), grid, grid.boundary), 0)
    assert np.allclose(neumann_trace(np.ones_like(u), grid, grid.boundary), 0)


def test_neumann_trace_2d_face():
    grid = build_grid((1.0, 1.0), (21, 21), gamma0="x1=L")
    x1, x2 = grid.nodes[:, 0], grid.nodes[:, 1]
    u = np.sin(np.pi * x1) * np.sin(np.pi * x2)
    tr = neumann_trace(u, grid)
    exact = -np.pi * np.sin(np.pi * grid.nodes[grid.gamma0, 1])
    # one-sided stencil truncation is ~ pi^3 h^2 / 3 ~ 0.026 at h = 0.05
    assert np.allclose(tr, exact, atol=3e-2)


def test_energy_conserved_deterministic_wave():
    grid, tg, ens, coeffs = wave_setup(33, 128, T=1.0)
    traj = solve_hyperbolic(coeffs, ens, grid)
    report = check_energy_estimate(traj, coeffs, s=0.0, t=1.0, constant=1.0)
    assert report["ratio"] <= 1 + 10 * tg.dt


def test_energy_vacuous_pass():
    grid = build_grid(1.0, 9)
    ens = sample_brownian(build_time_grid(1.0, 32), 1, seed=0)
    coeffs = HyperbolicCoefficients(grid=grid, bjk=1.0)
    traj = solve_hyperbolic(coeffs, ens, grid)
    report = check_energy_estimate(traj, coeffs, s=0.0, t=0.5)
    assert report["vacuous"] and report["passed"]


def test_energy_estimate_random_draws():
    rng = np.random.default_rng(7)
    grid = build_grid(1.0, 17)
    tg = build_time_grid(1.0, 64)
    x = grid.nodes[:, 0]
    for trial in range(50):
        ens = sample_brownian(tg, 8, seed=100 + trial)
        coeffs = HyperbolicCoefficients(
            grid=grid, bjk=1.0,
            b1=rng.uniform(-1, 1), b2=lambda x: [rng.uniform(-1, 1)],
            b3=rng.uniform(-1, 1), b4=rng.uniform(-1, 1),
            z0=np.sin(np.pi * x) * rng.uniform(-1, 1),
            z1=np.sin(2 * np.pi * x) * rng.uniform(-1, 1))
        traj = solve_hyperbolic(coeffs, ens, grid)
        t = rng.uniform(0.25, 1.0)
        report = check_energy_estimate(traj, coeffs, s=0.0,
                                       t=round(t * 64) / 64, constant=10.0)
        assert report["ratio"] <= 1.0, f"draw {trial} violated the bound"
