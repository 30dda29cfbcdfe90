"""Carleman weight families with analytic derivatives.

Every variant defines ell(t, x) in closed form; theta = exp(ell).  The
derivatives are produced symbolically once per spec and evaluated
pointwise, so weight values carry no discretization error.

Variants
--------
parabolic_interior   ell = lam * (e^{mu psi(x)} - e^{2 mu max|psi|}) / (t(T-t))
time_exponential     ell = s * e^{lam psi(t)}   (psi increasing in t)
time_power           ell = (t+1)^lam
hyperbolic_quadratic ell = lam * (psi(x) - c1 (t - T/2)^2)
hyperbolic_aniso     ell = lam * (|x'-x0'|^2 - beta x1^2 + (t+m)^2)
local_paraboloid     ell = s * phi^(-lam),
                     phi = slope x1 + (sum_{j>=2} x_j^2)/2 + (t-T/2)^2/2 + tau/2
"""

from dataclasses import dataclass, field

import numpy as np
import sympy as sym

__all__ = ["WeightSpec", "WeightEval", "PsiField", "build_psi", "eval_weight",
           "T_SYM", "X_SYMS"]

T_SYM = sym.Symbol("t")
X_SYMS = sym.symbols("x1 x2")


class WeightError(ValueError):
    pass


@dataclass
class PsiField:
    """A weight-generating spatial function with analytic derivatives."""

    expr: sym.Expr
    dim: int
    min_grad_norm: float = None
    positive_gradient: bool = None
    vanishes_on_boundary: bool = False

    def grad_exprs(self):
        return [sym.diff(self.expr, X_SYMS[j]) for j in range(self.dim)]

    def on_nodes(self, grid):
        f = sym.lambdify(X_SYMS[:self.dim], self.expr, "numpy")
        vals = f(*[grid.nodes[:, j] for j in range(self.dim)])
        return np.broadcast_to(np.asarray(vals, dtype=float),
                               (grid.n_nodes,)).copy()

    def grad_on_nodes(self, grid):
        out = np.empty((self.dim, grid.n_nodes))
        for j, gexpr in enumerate(self.grad_exprs()):
            f = sym.lambdify(X_SYMS[:self.dim], gexpr, "numpy")
            vals = f(*[grid.nodes[:, k] for k in range(self.dim)])
            out[j] = np.broadcast_to(np.asarray(vals, dtype=float),
                                     (grid.n_nodes,))
        return out


def build_psi(grid, x0):
    """Canonical weight generator psi(x) = |x - x0|^2 for an exterior point.

    The returned field has a nonvanishing gradient on the closed domain
    (min |grad psi| = 2 dist(x0, closure)), but it does not vanish on the
    boundary; consumers that need psi|_Gamma = 0 must check the flag.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if len(x0) != grid.dim:
        raise WeightError("x0 dimension does not match the grid")
    inside = all(0.0 <= x0[j] <= grid.lengths[j] for j in range(grid.dim))
    if inside:
        raise WeightError("critical point inside domain: x0 must be exterior")
    expr = sum((X_SYMS[j] - x0[j]) ** 2 for j in range(grid.dim))
    # distance from x0 to the closed box, component-wise clamping
    clamped = np.clip(x0, 0.0, np.asarray(grid.lengths))
    dist = float(np.linalg.norm(x0 - clamped))
    return PsiField(expr=expr, dim=grid.dim, min_grad_norm=2 * dist,
                    positive_gradient=dist > 0, vanishes_on_boundary=False)


def _as_psi_expr(psi):
    if isinstance(psi, PsiField):
        return psi.expr
    return sym.sympify(psi)


@dataclass
class WeightEval:
    """Pointwise weight values; arrays broadcast over the evaluation points."""

    ell: np.ndarray
    theta: np.ndarray
    ell_t: np.ndarray
    ell_tt: np.ndarray
    grad: np.ndarray     # (dim, ...)
    hess: np.ndarray     # (dim, dim, ...)
    phi: np.ndarray = None


@dataclass
class WeightSpec:
    """A weight family member; ``params`` are the variant's constants."""

    variant: str
    dim: int
    params: dict = field(default_factory=dict)
    psi: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    def ell_expr(self):
        p = self.params
        t = T_SYM
        if self.variant == "parabolic_interior":
            psi = _as_psi_expr(self.psi)
            alpha = (sym.exp(p["mu"] * psi)
                     - sym.exp(2 * p["mu"] * p["psi_max"])) / (t * (p["T"] - t))
            return p["lam"] * alpha
        if self.variant == "time_exponential":
            psi_t = _as_psi_expr(self.psi) if self.psi is not None else t
            return p["s"] * sym.exp(p["lam"] * psi_t)
        if self.variant == "time_power":
            return (t + 1) ** p["lam"]
        if self.variant == "hyperbolic_quadratic":
            psi = _as_psi_expr(self.psi)
            return p["lam"] * (psi - p["c1"] * (t - p["T"] / 2) ** 2)
        if self.variant == "hyperbolic_aniso":
            phi = self.phi_expr()
            return p["lam"] * phi
        if self.variant == "local_paraboloid":
            phi = self.phi_expr()
            return p["s"] * phi ** (-p["lam"])
        raise WeightError(f"unknown weight variant {self.variant!r}")

    def phi_expr(self):
        p = self.params
        t = T_SYM
        if self.variant == "parabolic_interior":
            psi = _as_psi_expr(self.psi)
            return sym.exp(p["mu"] * psi) / (t * (p["T"] - t))
        if self.variant == "time_exponential":
            psi_t = _as_psi_expr(self.psi) if self.psi is not None else t
            return sym.exp(p["lam"] * psi_t)
        if self.variant == "hyperbolic_aniso":
            prime = 0
            if self.dim == 2:
                prime = (X_SYMS[1] - p["x0_prime"]) ** 2
            return prime - p["beta"] * X_SYMS[0] ** 2 + (t + p["m"]) ** 2
        if self.variant == "local_paraboloid":
            quad = sum(X_SYMS[j] ** 2 for j in range(1, self.dim))
            return (p["slope"] * X_SYMS[0] + quad / 2
                    + (t - p["T"] / 2) ** 2 / 2 + p["tau"] / 2)
        raise WeightError(f"variant {self.variant!r} has no phi")

    def _fns(self):
        if "fns" in self._cache:
            return self._cache["fns"]
        ell = self.ell_expr()
        xs = X_SYMS[:self.dim]
        args = (T_SYM,) + xs
        exprs = {
            "ell": ell,
            "ell_t": sym.diff(ell, T_SYM),
            "ell_tt": sym.diff(ell, T_SYM, 2),
        }
        for j, xj in enumerate(xs):
            exprs[f"g{j}"] = sym.diff(ell, xj)
            for k, xk in enumerate(xs):
                if k >= j:
                    exprs[f"h{j}{k}"] = sym.diff(ell, xj, xk)
        try:
            exprs["phi"] = self.phi_expr()
        except WeightError:
            pass
        fns = {k: sym.lambdify(args, v, "numpy") for k, v in exprs.items()}
        self._cache["fns"] = fns
        return fns

    def eval(self, t, x):
        """Evaluate at time(s) t and point(s) x (shape (dim,) or (N, dim))."""
        t = np.asarray(t, dtype=float)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim:
            raise WeightError("point dimension mismatch")
        if self.variant == "parabolic_interior":
            T = self.params["T"]
            if np.any(t <= 0) or np.any(t >= T):
                raise WeightError("weight singular at endpoint: need t in (0, T)")
        fns = self._fns()
        coords = [x[..., j] for j in range(self.dim)]
        shape = np.broadcast_shapes(t.shape, coords[0].shape)

        def ev(name):
            return np.broadcast_to(
                np.asarray(fns[name](t, *coords), dtype=float), shape).copy()

        ell = ev("ell")
        grad = np.stack([ev(f"g{j}") for j in range(self.dim)])
        hess = np.empty((self.dim, self.dim) + shape)
        for j in range(self.dim):
            for k in range(self.dim):
                hess[j, k] = ev(f"h{min(j, k)}{max(j, k)}")
        phi = ev("phi") if "phi" in fns else None
        return WeightEval(ell=ell, theta=np.exp(ell), ell_t=ev("ell_t"),
                          ell_tt=ev("ell_tt"), grad=grad, hess=hess, phi=phi)

    def validate(self, grid=None, time_grid=None):
        """Variant-specific admissibility checks; returns a report dict."""
        p = self.params
        report = {"variant": self.variant, "ok": True, "checks": {}}

        def fail(name, msg):
            report["ok"] = False
            report["checks"][name] = msg

        if self.variant == "parabolic_interior" and grid is not None \
                and time_grid is not None:
            ts = time_grid.times[1:-1]
            ev = self.eval(ts[:, None], grid.nodes[None, :, :])
            alpha = ev.ell / p["lam"]
            report["checks"]["alpha_max"] = float(alpha.max())
            if alpha.max() >= 0:
                fail("alpha_negative", "alpha must be negative on (0,T) x G")
            edge = self.eval(np.array([time_grid.dt,
                                       p["T"] - time_grid.dt])[:, None],
                             grid.nodes[None, :, :])
            theta_edge = float(edge.theta.max())
            report["checks"]["theta_at_edges"] = theta_edge
            # smallest lam making theta < 1e-8 one step in from the endpoints
            alpha_edge = float((edge.ell / p["lam"]).max())
            report["checks"]["lambda_star"] = float(np.log(1e-8) / alpha_edge)
            if theta_edge >= 1e-8 and p["lam"] >= report["checks"]["lambda_star"]:
                fail("endpoint_decay", "theta fails to vanish at the endpoints")
        if self.variant == "time_exponential" and time_grid is not None:
            psi_t = sym.diff(_as_psi_expr(self.psi) if self.psi is not None
                             else T_SYM, T_SYM)
            f = sym.lambdify(T_SYM, psi_t, "numpy")
            vals = np.broadcast_to(np.asarray(f(time_grid.times), dtype=float),
                                   time_grid.times.shape)
            report["checks"]["min_psi_t"] = float(vals.min())
            if vals.min() < 1.0:
                fail("psi_t", "need psi_t >= 1 on the time range")
        if self.variant == "hyperbolic_aniso" and grid is not None:
            beta, m = p["beta"], p["m"]
            if not 0 < beta < 0.8:
                fail("beta", "need beta in (0, 4/5)")
            reach = 0.0
            if self.dim == 2:
                reach = float(np.max(np.abs(grid.nodes[:, 1] - p["x0_prime"])))
            bound = reach + beta * grid.lengths[0]
            report["checks"]["m_lower_bound"] = bound
            if m <= bound:
                fail("m", "need m > max|x' - x0'| + beta l")
        return report


def eval_weight(spec, t, x):
    """Pointwise weight evaluation; see :meth:`WeightSpec.eval`."""
    return spec.eval(t, x)
