"""Numeric verification of the two fundamental pointwise weighted identities
(parabolic and hyperbolic) on manufactured processes.

Both sides of an identity are assembled symbolically as combinations of

* dt-terms          (left-point Riemann sums),
* dZ-terms          (left-point Ito sums against the realized increments),
* (dZ)^2-terms      (replaced by the squared volatility times dt),
* total differentials (exact telescoping between the endpoints),

where Z is the scalar Ito process driving the manufactured solution.  For a
deterministic (polynomial) process everything collapses to a single
dt-coefficient, and the residual of the identity is evaluated pointwise
with analytic derivatives only, so it probes the algebra and nothing else.
For a stochastic process the two sides are integrated over space-time,
averaged over a path ensemble, and compared in expectation with a Monte
Carlo error bar.
"""

from dataclasses import dataclass, field

import numpy as np
import sympy as sym

from .brownian import sample_brownian
from .grids import build_grid, build_time_grid
from .weights import T_SYM, X_SYMS

__all__ = ["IdentityCase", "PolynomialProcess", "SeparatedItoProcess",
           "parabolic_identity_residual", "hyperbolic_identity_residual",
           "Z_SYM", "U_SYM"]

Z_SYM = sym.Symbol("Z")
U_SYM = sym.Symbol("U")


class IdentityError(ValueError):
    pass


@dataclass
class Diff:
    """First-order stochastic differential a dt + b dZ + c (dZ)^2."""

    dt: sym.Expr = sym.S.Zero
    dZ: sym.Expr = sym.S.Zero
    dZ2: sym.Expr = sym.S.Zero

    def __add__(self, other):
        return Diff(self.dt + other.dt, self.dZ + other.dZ,
                    self.dZ2 + other.dZ2)

    def scale(self, c):
        return Diff(c * self.dt, c * self.dZ, c * self.dZ2)

    def diff_x(self, xj):
        return Diff(sym.diff(self.dt, xj), sym.diff(self.dZ, xj),
                    sym.diff(self.dZ2, xj))


def _mul_first_order(a, b):
    """Product of two differentials kept to first order in dt."""
    return Diff(dt=sym.S.Zero, dZ=sym.S.Zero, dZ2=a.dZ * b.dZ)


@dataclass
class PolynomialProcess:
    """Deterministic u(t, x) with closed-form derivatives."""

    expr: sym.Expr
    stochastic = False

    def u(self):
        return sym.sympify(self.expr)

    def du(self):
        return Diff(dt=sym.diff(self.u(), T_SYM))

    def u_t(self):
        return sym.diff(self.u(), T_SYM)

    def du_t(self):
        return Diff(dt=sym.diff(self.u(), T_SYM, 2))


@dataclass
class SeparatedItoProcess:
    """u = p(x) Z_t (order 1) or u = p(x) U_t with dU = Z dt (order 2).

    Z is the scalar Ito process dZ = drift(Z) dt + vol(Z) dW; order 2 gives
    a process whose time derivative u_t = p(x) Z is itself an Ito process,
    as the hyperbolic identity requires.
    """

    spatial: sym.Expr
    drift: sym.Expr
    vol: sym.Expr
    z0: float = 1.0
    u0: float = 0.0       # initial value of U for order-2 processes
    order: int = 1
    stochastic = True

    def u(self):
        zeta = Z_SYM if self.order == 1 else U_SYM
        return sym.sympify(self.spatial) * zeta

    def du(self):
        p = sym.sympify(self.spatial)
        if self.order == 1:
            return Diff(dZ=p)
        return Diff(dt=p * Z_SYM)

    def u_t(self):
        if self.order == 1:
            raise IdentityError("order-1 process has no pathwise u_t")
        return sym.sympify(self.spatial) * Z_SYM

    def du_t(self):
        if self.order == 1:
            raise IdentityError("order-1 process has no pathwise u_t")
        return Diff(dZ=sym.sympify(self.spatial))

    def simulate(self, time_grid, n_paths, seed):
        """Sample (Z, U, m) on the time grid; exact for geometric drift/vol.

        ``m[:, k]`` is the conditional mean of the increment Z_{k+1} - Z_k
        given Z_k (exact for geometric processes, drift(Z_k) dt otherwise);
        the realizer uses it to split increments into a compensated
        martingale part and an absolutely continuous part.
        """
        ens = sample_brownian(time_grid, n_paths, seed)
        dw = ens.increments()
        dt = time_grid.dt
        mu_expr = sym.simplify(sym.sympify(self.drift) / Z_SYM)
        sig_expr = sym.simplify(sym.sympify(self.vol) / Z_SYM)
        n = time_grid.n_steps
        Z = np.empty((n_paths, n + 1))
        Z[:, 0] = self.z0
        if not (mu_expr.free_symbols or sig_expr.free_symbols):
            mu, sig = float(mu_expr), float(sig_expr)
            inc = (mu - sig ** 2 / 2) * dt + sig * dw
            Z[:, 1:] = self.z0 * np.exp(np.cumsum(inc, axis=1))
            m = Z[:, :-1] * np.expm1(mu * dt)
        else:
            fdrift = sym.lambdify(Z_SYM, self.drift, "numpy")
            fvol = sym.lambdify(Z_SYM, self.vol, "numpy")
            m = np.empty((n_paths, n))
            for k in range(n):
                m[:, k] = fdrift(Z[:, k]) * dt
                Z[:, k + 1] = Z[:, k] + m[:, k] + fvol(Z[:, k]) * dw[:, k]
        U = None
        if self.order == 2:
            U = np.empty_like(Z)
            U[:, 0] = self.u0
            np.cumsum((Z[:, :-1] + Z[:, 1:]) * dt / 2, axis=1, out=U[:, 1:])
            U[:, 1:] += self.u0
        return Z, U, m


@dataclass
class IdentityCase:
    """A manufactured test instance for one of the weighted identities."""

    dim: int
    process: object
    bjk: object = 1
    ell: sym.Expr = sym.S.Zero
    Psi: sym.Expr = None          # None selects the variant default
    phi: sym.Expr = 1             # hyperbolic multiplier
    horizon: float = 1.0
    _built: dict = field(default_factory=dict, repr=False)


def _bjk_matrix(dim, bjk):
    if np.isscalar(bjk) or isinstance(bjk, sym.Expr):
        return sym.Matrix([[sym.sympify(bjk) if j == k else 0
                            for k in range(dim)] for j in range(dim)])
    m = sym.Matrix(bjk)
    if m.shape != (dim, dim):
        raise IdentityError("b^{jk} must be (dim, dim)")
    if sym.simplify(m - m.T) != sym.zeros(dim, dim):
        raise IdentityError("symmetry required: b^{jk} must equal b^{kj}")
    return m


def _div_form(xs, b, u):
    """sum_jk (b^{jk} u_{x_j})_{x_k}."""
    acc = sym.S.Zero
    for j, xj in enumerate(xs):
        for k, xk in enumerate(xs):
            acc += sym.diff(b[j, k] * sym.diff(u, xj), xk)
    return acc


def build_parabolic_sides(case):
    """Symbolic LHS/RHS of the parabolic identity as (diff, telescope) parts."""
    dim = case.dim
    xs = X_SYMS[:dim]
    b = _bjk_matrix(dim, case.bjk)
    ell = sym.sympify(case.ell)
    gl = [sym.diff(ell, xj) for xj in xs]
    theta = sym.exp(ell)

    if case.Psi is None:
        Psi = 2 * sum(b[j, k] * sym.diff(ell, xs[j], xs[k])
                      for j in range(dim) for k in range(dim))
    else:
        Psi = sym.sympify(case.Psi)

    u = case.process.u()
    du = case.process.du()
    w = theta * u
    gw = [sym.diff(w, xj) for xj in xs]

    A = -sum(b[j, k] * gl[j] * gl[k]
             - sym.diff(b[j, k], xs[k]) * gl[j]
             - b[j, k] * sym.diff(ell, xs[j], xs[k])
             for j in range(dim) for k in range(dim)) - Psi - sym.diff(ell, T_SYM)
    B = (2 * (A * Psi - sum(sym.diff(A * b[j, k] * gl[j], xs[k])
                            for j in range(dim) for k in range(dim)))
         - sym.diff(A, T_SYM)
         - sum(sym.diff(b[j, k] * sym.diff(Psi, xs[k]), xs[j])
               for j in range(dim) for k in range(dim)))

    def c_jk(j, k):
        acc = sym.S.Zero
        for jp in range(dim):
            for kp in range(dim):
                acc += 2 * b[j, kp] * sym.diff(b[jp, k] * gl[jp], xs[kp])
                acc -= sym.diff(b[j, k] * b[jp, kp] * gl[jp], xs[kp])
        return acc - sym.diff(b[j, k], T_SYM) / 2 + Psi * b[j, k]

    I_val = -_div_form(xs, b, w) + A * w
    bracket = Diff(dt=du.dt - _div_form(xs, b, u), dZ=du.dZ, dZ2=du.dZ2)

    # dw = theta (ell_t u dt + du)
    dw = Diff(dt=theta * (sym.diff(ell, T_SYM) * u + du.dt),
              dZ=theta * du.dZ, dZ2=theta * du.dZ2)

    lhs = bracket.scale(2 * theta * I_val)
    for k in range(dim):
        inner = sum(b[j, k] * gw[j] for j in range(dim))
        lhs = lhs + dw.scale(2 * inner).diff_x(xs[k])
    for k in range(dim):
        inner = sym.S.Zero
        for j in range(dim):
            for jp in range(dim):
                for kp in range(dim):
                    inner += 2 * b[j, k] * b[jp, kp] * gl[jp] * gw[j] * gw[kp]
                    inner -= b[j, k] * b[jp, kp] * gl[j] * gw[jp] * gw[kp]
            inner += Psi * b[j, k] * gw[j] * w
            inner -= b[j, k] * (A * gl[j] + sym.diff(Psi, xs[j]) / 2) * w ** 2
        lhs = lhs + Diff(dt=2 * sym.diff(inner, xs[k]))
    lhs_tele = sym.S.Zero

    rhs = Diff(dt=2 * sum(c_jk(j, k) * gw[j] * gw[k]
                          for j in range(dim) for k in range(dim))
               + B * w ** 2 + 2 * I_val ** 2)
    rhs = rhs + _mul_first_order(du, du).scale(-theta ** 2 * A)
    for j in range(dim):
        for k in range(dim):
            dj = du.diff_x(xs[j]) + du.scale(gl[j])
            dk = du.diff_x(xs[k]) + du.scale(gl[k])
            rhs = rhs + _mul_first_order(dj, dk).scale(-theta ** 2 * b[j, k])
    rhs_tele = (sum(b[j, k] * gw[j] * gw[k]
                    for j in range(dim) for k in range(dim)) + A * w ** 2)

    return (lhs, lhs_tele), (rhs, rhs_tele)


def build_hyperbolic_sides(case):
    """Symbolic LHS/RHS of the hyperbolic identity as (diff, telescope) parts."""
    dim = case.dim
    xs = X_SYMS[:dim]
    b = _bjk_matrix(dim, case.bjk)
    ell = sym.sympify(case.ell)
    phi = sym.sympify(case.phi)
    gl = [sym.diff(ell, xj) for xj in xs]
    ell_t = sym.diff(ell, T_SYM)
    theta = sym.exp(ell)

    if case.Psi is None:
        Psi = sym.diff(ell, T_SYM, 2) + sum(
            sym.diff(b[j, k] * gl[j], xs[k])
            for j in range(dim) for k in range(dim))
    else:
        Psi = sym.sympify(case.Psi)

    u = case.process.u()
    u_t = case.process.u_t()
    du_t = case.process.du_t()
    w = theta * u
    w_t = theta * (ell_t * u + u_t)
    gw = [sym.diff(w, xj) for xj in xs]

    A = (phi * (ell_t ** 2 - sym.diff(ell, T_SYM, 2))
         - sum(b[j, k] * gl[j] * gl[k]
               - sym.diff(b[j, k], xs[k]) * gl[j]
               - b[j, k] * sym.diff(ell, xs[j], xs[k])
               for j in range(dim) for k in range(dim)) - Psi)
    B = (A * Psi + sym.diff(phi * A * ell_t, T_SYM)
         - sum(sym.diff(A * b[j, k] * gl[j], xs[k])
               for j in range(dim) for k in range(dim))
         + (sym.diff(phi * Psi, T_SYM, 2)
            - sum(sym.diff(b[j, k] * sym.diff(Psi, xs[j]), xs[k])
                  for j in range(dim) for k in range(dim))) / 2)

    def c_jk(j, k):
        acc = sym.diff(phi * b[j, k] * ell_t, T_SYM)
        for jp in range(dim):
            for kp in range(dim):
                acc += 2 * b[j, kp] * sym.diff(b[jp, k] * gl[jp], xs[kp])
                acc -= sym.diff(b[j, k] * b[jp, kp] * gl[jp], xs[kp])
        return acc + Psi * b[j, k]

    I_val = (-2 * phi * ell_t * w_t
             + 2 * sum(b[j, k] * gl[j] * gw[k]
                       for j in range(dim) for k in range(dim)) + Psi * w)

    bracket = Diff(dt=phi * du_t.dt - _div_form(xs, b, u),
                   dZ=phi * du_t.dZ, dZ2=phi * du_t.dZ2)
    lhs = bracket.scale(theta * I_val)
    for k in range(dim):
        inner = sym.S.Zero
        for j in range(dim):
            for jp in range(dim):
                for kp in range(dim):
                    inner += 2 * b[j, k] * b[jp, kp] * gl[jp] * gw[j] * gw[kp]
                    inner -= b[j, k] * b[jp, kp] * gl[j] * gw[jp] * gw[kp]
            inner -= 2 * phi * b[j, k] * ell_t * gw[j] * w_t
            inner += phi * b[j, k] * gl[j] * w_t ** 2
            inner += Psi * b[j, k] * gw[j] * w
            inner -= (A * gl[j] + sym.diff(Psi, xs[j]) / 2) * b[j, k] * w ** 2
        lhs = lhs + Diff(dt=sym.diff(inner, xs[k]))
    lhs_tele = (phi * sum(b[j, k] * ell_t * gw[j] * gw[k]
                          for j in range(dim) for k in range(dim))
                - 2 * phi * sum(b[j, k] * gl[j] * gw[k]
                                for j in range(dim) for k in range(dim)) * w_t
                + phi ** 2 * ell_t * w_t ** 2
                - phi * Psi * w_t * w
                + (phi * A * ell_t + sym.diff(phi * Psi, T_SYM) / 2) * w ** 2)

    rhs_dt = ((sym.diff(phi ** 2 * ell_t, T_SYM)
               + sum(sym.diff(phi * b[j, k] * gl[j], xs[k])
                     for j in range(dim) for k in range(dim))
               - phi * Psi) * w_t ** 2
              - 2 * sum((sym.diff(phi * b[j, k] * gl[k], T_SYM)
                         + b[j, k] * sym.diff(phi * ell_t, xs[k]))
                        * gw[j] * w_t
                        for j in range(dim) for k in range(dim))
              + sum(c_jk(j, k) * gw[j] * gw[k]
                    for j in range(dim) for k in range(dim))
              + B * w ** 2 + I_val ** 2)
    rhs = Diff(dt=rhs_dt)
    rhs = rhs + _mul_first_order(du_t, du_t).scale(phi ** 2 * theta ** 2 * ell_t)
    rhs_tele = sym.S.Zero

    return (lhs, lhs_tele), (rhs, rhs_tele)


def _deterministic_residual(case, sides, n_t=9, n_x=9):
    (lhs, lhs_tele), (rhs, rhs_tele) = sides
    for d in (lhs, rhs):
        if d.dZ != 0 or d.dZ2 != 0:
            raise IdentityError("deterministic case has stochastic parts")
    resid = (lhs.dt + sym.diff(lhs_tele, T_SYM)
             - rhs.dt - sym.diff(rhs_tele, T_SYM))
    xs = X_SYMS[:case.dim]
    fn = sym.lambdify((T_SYM,) + xs, resid, "numpy")
    ts = np.linspace(0.1 * case.horizon, 0.9 * case.horizon, n_t)
    axes = [np.linspace(0.0, 1.0, n_x) for _ in range(case.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = [m.ravel()[None, :] for m in mesh]
    vals = fn(ts[:, None], *coords)
    vals = np.broadcast_to(np.asarray(vals, dtype=float),
                           (n_t, coords[0].size))
    return {"kind": "deterministic",
            "max_abs_residual": float(np.max(np.abs(vals)))}


class _SideRealizer:
    """Evaluates one side of an identity over paths of (Z, U).

    Quadrature: absolutely continuous parts (dt-terms, the (dZ)^2 density
    vol(Z)^2, and the conditional-mean part of dZ) use the trapezoidal rule,
    whose bias for Ito integrands is O(dt^2); the compensated martingale
    part of dZ uses the adapted left-point sum, whose bias is exactly zero.
    Total differentials telescope exactly.  The gap between the two sides
    is then dominated by the Monte Carlo error, not the time step.
    """

    def __init__(self, dim, diff, tele, drift, vol, times, nodes, mass):
        vol2 = sym.expand(sym.sympify(vol) ** 2)
        # the absolutely continuous part of every dZ-term joins the dt bucket
        self.parts = {
            "dt": sym.expand(diff.dt + diff.dZ2 * vol2
                             + diff.dZ * sym.sympify(drift)),
            "mart": sym.expand(diff.dZ),
            "tele": sym.expand(tele),
        }
        self.contracted = {}
        xs = X_SYMS[:dim]
        for name, expr in self.parts.items():
            poly = sym.Poly(expr, Z_SYM, U_SYM)
            entries = []
            for monom, coeff in zip(poly.monoms(), poly.coeffs()):
                fn = sym.lambdify((T_SYM,) + xs, coeff, "numpy")
                grid_vals = fn(times[:, None],
                               *[nodes[None, :, j] for j in range(dim)])
                grid_vals = np.broadcast_to(
                    np.asarray(grid_vals, dtype=float),
                    (len(times), len(nodes)))
                entries.append((monom, grid_vals @ mass))
            self.contracted[name] = entries

    @staticmethod
    def _mono(monom, Z, U, cache=None):
        if cache is not None and monom in cache:
            return cache[monom]
        a, b = monom
        out = 1.0
        if a:
            out = Z ** a if a > 1 else Z
        if b:
            ub = U ** b if b > 1 else U
            out = out * ub if a else ub
        if not (a or b):
            out = np.ones_like(Z)
        if cache is not None:
            cache[monom] = out
        return out

    def _combined(self, part, Z, U, cache):
        """sum_m cbar_m(t_k) * monomial_m(Z_k, U_k) as an (M, n+1) array."""
        total = None
        for monom, cbar in self.contracted[part]:
            term = self._mono(monom, Z, U, cache) * cbar[None, :]
            total = term if total is None else total + term
        if total is None:
            return np.zeros_like(Z)
        return total

    def evaluate(self, Z, U, m, dt, cache=None):
        n = Z.shape[1] - 1
        Uarr = U if U is not None else np.zeros_like(Z)
        if cache is None:
            cache = {}
        total = dt * np.trapz(self._combined("dt", Z, Uarr, cache), axis=1)
        mart = np.diff(Z, axis=1) - m
        total += np.sum(self._combined("mart", Z, Uarr, cache)[:, :-1] * mart,
                        axis=1)
        tele = self._combined("tele", Z, Uarr, cache)
        total += tele[:, n] - tele[:, 0]
        return total


def _stochastic_gap(case, sides, n_paths, seed, n_steps, n_x):
    (lhs, lhs_tele), (rhs, rhs_tele) = sides
    tg = build_time_grid(case.horizon, n_steps)
    if case.dim != 1:
        raise IdentityError("stochastic identity checks run on 1D cases")
    grid = build_grid(1.0, n_x)
    times = tg.times
    nodes = grid.nodes
    mass = grid.mass
    proc = case.process
    real_l = _SideRealizer(case.dim, lhs, lhs_tele, proc.drift, proc.vol,
                           times, nodes, mass)
    real_r = _SideRealizer(case.dim, rhs, rhs_tele, proc.drift, proc.vol,
                           times, nodes, mass)
    Z, U, m = proc.simulate(tg, n_paths, seed)
    cache = {}
    lv = real_l.evaluate(Z, U, m, tg.dt, cache)
    rv = real_r.evaluate(Z, U, m, tg.dt, cache)
    d = lv - rv
    gap = abs(float(np.mean(d)))
    se = float(np.std(d, ddof=1) / np.sqrt(n_paths))
    return {"kind": "stochastic", "gap": gap, "mc_standard_error": se,
            "lhs_mean": float(np.mean(lv)), "rhs_mean": float(np.mean(rv)),
            "n_paths": n_paths}


def parabolic_identity_residual(case, n_paths=10_000, seed=0, n_steps=256,
                                n_x=9):
    """Residual statistics of the parabolic weighted identity.

    Deterministic processes give the max pointwise |LHS - RHS| with analytic
    derivatives; Ito processes give |E LHS - E RHS| over the space-time
    cylinder together with the Monte Carlo standard error of the difference.
    """
    sides = build_parabolic_sides(case)
    if case.process.stochastic:
        return _stochastic_gap(case, sides, n_paths, seed, n_steps, n_x)
    return _deterministic_residual(case, sides)


def hyperbolic_identity_residual(case, n_paths=10_000, seed=0, n_steps=256,
                                 n_x=9):
    """Residual statistics of the hyperbolic weighted identity."""
    if case.process.stochastic and case.process.order != 2:
        raise IdentityError("hyperbolic identity needs an order-2 process")
    sides = build_hyperbolic_sides(case)
    if case.process.stochastic:
        return _stochastic_gap(case, sides, n_paths, seed, n_steps, n_x)
    return _deterministic_residual(case, sides)


def identity_gap_rms(residual_fn, case, n_paths, seeds, n_steps, n_x=9):
    """Root-mean-square expectation gap over independent replicate seeds.

    A single gap measurement of an unbiased Monte Carlo difference is a
    draw of size ~ SE; the RMS over replicates estimates
    sqrt(bias^2 + SE^2) and is what actually follows the 1/sqrt(M) law.
    """
    gaps, ses = [], []
    for seed in seeds:
        r = residual_fn(case, n_paths=n_paths, seed=seed, n_steps=n_steps,
                        n_x=n_x)
        gaps.append(r["gap"])
        ses.append(r["mc_standard_error"])
    return {"rms_gap": float(np.sqrt(np.mean(np.square(gaps)))),
            "mean_se": float(np.mean(ses)), "gaps": gaps,
            "n_paths": n_paths, "n_replicates": len(seeds)}


def standard_stochastic_parabolic_case():
    """u = sin(pi x) Z with Z driftless geometric (sigma = 1/2), ell = t."""
    proc = SeparatedItoProcess(spatial=sym.sin(sym.pi * X_SYMS[0]),
                               drift=sym.S.Zero, vol=Z_SYM / 2, z0=1.0,
                               order=1)
    return IdentityCase(dim=1, process=proc, bjk=1, ell=T_SYM, Psi=0,
                        horizon=1.0)


def standard_stochastic_hyperbolic_case():
    """u = sin(pi x) U with dU = Z dt, dZ = -Z dt + 0.3 Z dW."""
    proc = SeparatedItoProcess(spatial=sym.sin(sym.pi * X_SYMS[0]),
                               drift=-Z_SYM, vol=sym.Rational(3, 10) * Z_SYM,
                               z0=1.0, u0=0.0, order=2)
    return IdentityCase(dim=1, process=proc, bjk=1,
                        ell=X_SYMS[0] + T_SYM ** 2, Psi=None, phi=1,
                        horizon=0.5)
