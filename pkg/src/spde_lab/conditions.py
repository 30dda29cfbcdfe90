"""Admissibility and geometry checks behind the hyperbolic estimates.

``check_pseudoconvexity`` evaluates the curvature condition on the weight
generator psi relative to the principal part b^{jk}; for dimension <= 2
the quadratic form is diagonalized exactly at every node, so the returned
constant is not a sampling bound.  ``calibrate_hyperbolic`` searches an
affine rescaling of psi together with (c0, c1, T) so that every inequality
of the requested condition set holds with positive slack, and returns the
full certificate.
"""

from dataclasses import dataclass, field

import numpy as np
import sympy as sym

from .weights import PsiField, X_SYMS

__all__ = ["check_pseudoconvexity", "observation_boundary",
           "calibrate_hyperbolic", "PseudoconvexityResult", "Certificate"]


class ConditionError(ValueError):
    pass


def _as_bjk_matrix(dim, bjk):
    """Normalize the principal part to a sympy (dim, dim) matrix."""
    if bjk is None:
        bjk = 1
    if np.isscalar(bjk) or isinstance(bjk, sym.Expr):
        return sym.Matrix([[sym.sympify(bjk) if j == k else 0
                            for k in range(dim)] for j in range(dim)])
    m = sym.Matrix(bjk)
    if m.shape != (dim, dim):
        raise ConditionError("b^{jk} must be a (dim, dim) matrix")
    if sym.simplify(m - m.T) != sym.zeros(dim, dim):
        raise ConditionError("symmetry required: b^{jk} != b^{kj}")
    return m


def _eval_on_nodes(grid, expr):
    xs = X_SYMS[:grid.dim]
    f = sym.lambdify(xs, expr, "numpy")
    vals = f(*[grid.nodes[:, j] for j in range(grid.dim)])
    return np.broadcast_to(np.asarray(vals, dtype=float),
                           (grid.n_nodes,)).copy()


def _matrix_on_nodes(grid, mat):
    d = grid.dim
    out = np.empty((d, d, grid.n_nodes))
    for j in range(d):
        for k in range(d):
            out[j, k] = _eval_on_nodes(grid, mat[j, k])
    return out


@dataclass
class PseudoconvexityResult:
    ok: bool
    mu0: float = None
    min_grad_norm: float = None
    reason: str = None
    worst_node: int = None
    worst_direction: np.ndarray = None

    def __bool__(self):
        return self.ok


def check_pseudoconvexity(grid, bjk, psi, n_random_probes=32, seed=0):
    """Largest mu0 >= 0 with M(x) >= mu0 b(x) as quadratic forms at all nodes.

    M is the curvature form built from b^{jk} and psi,
    M_{jk} = sum_{j'k'} [2 b^{jk'} (b^{j'k} psi_{x_j'})_{x_k'}
                         - b^{jk}_{x_k'} b^{j'k'} psi_{x_j'}].
    Fails (with the violating site) if the form is indefinite relative to b
    or if psi has a critical point on the closed domain.
    """
    d = grid.dim
    psi_expr = psi.expr if isinstance(psi, PsiField) else sym.sympify(psi)
    b = _as_bjk_matrix(d, bjk)
    xs = X_SYMS[:d]
    grad_psi = [sym.diff(psi_expr, xj) for xj in xs]

    M = sym.zeros(d, d)
    for j in range(d):
        for k in range(d):
            acc = 0
            for jp in range(d):
                for kp in range(d):
                    acc += 2 * b[j, kp] * sym.diff(b[jp, k] * grad_psi[jp],
                                                   xs[kp])
                    acc -= sym.diff(b[j, k], xs[kp]) * b[jp, kp] * grad_psi[jp]
            M[j, k] = sym.expand(acc)

    Mv = _matrix_on_nodes(grid, M)
    Mv = (Mv + np.swapaxes(Mv, 0, 1)) / 2  # only the symmetric part acts
    Bv = _matrix_on_nodes(grid, b)

    gnorm = np.zeros(grid.n_nodes)
    for gexpr in grad_psi:
        gnorm += _eval_on_nodes(grid, gexpr) ** 2
    gnorm = np.sqrt(gnorm)
    if gnorm.min() <= 0:
        return PseudoconvexityResult(
            ok=False, min_grad_norm=float(gnorm.min()),
            reason="psi has a critical point on the closed domain",
            worst_node=int(np.argmin(gnorm)))

    if d == 1:
        lam = Mv[0, 0] / Bv[0, 0]
        eigvec = np.ones((grid.n_nodes, 1))
    else:
        # generalized eigenvalues of (M, B) per node, closed form for 2x2
        a = Bv[0, 0] * Bv[1, 1] - Bv[0, 1] * Bv[1, 0]
        bq = -(Mv[0, 0] * Bv[1, 1] + Mv[1, 1] * Bv[0, 0]
               - Mv[0, 1] * Bv[1, 0] - Mv[1, 0] * Bv[0, 1])
        c = Mv[0, 0] * Mv[1, 1] - Mv[0, 1] * Mv[1, 0]
        disc = np.sqrt(np.maximum(bq * bq - 4 * a * c, 0.0))
        lam = (-bq - disc) / (2 * a)
        # eigenvector of (M - lam B) for reporting
        r1 = Mv[0, 0] - lam * Bv[0, 0]
        r2 = Mv[0, 1] - lam * Bv[0, 1]
        eigvec = np.stack([-r2, r1], axis=1)
        norm = np.linalg.norm(eigvec, axis=1, keepdims=True)
        eigvec = np.where(norm > 0, eigvec / np.maximum(norm, 1e-300),
                          np.array([1.0, 0.0]))

    worst = int(np.argmin(lam))
    mu0 = float(lam[worst])

    # cross-check on a probe set of directions (axes, diagonals, random)
    rng = np.random.default_rng(seed)
    probes = [np.eye(d)[j] for j in range(d)]
    if d == 2:
        probes += [np.array([1.0, 1.0]) / np.sqrt(2),
                   np.array([1.0, -1.0]) / np.sqrt(2)]
    probes += list(rng.standard_normal((n_random_probes, d)))
    for xi in probes:
        quad_m = np.einsum("i,ijn,j->n", xi, Mv, xi)
        quad_b = np.einsum("i,ijn,j->n", xi, Bv, xi)
        if np.any(quad_m < mu0 * quad_b - 1e-9 * np.abs(quad_b)):
            bad = int(np.argmin(quad_m - mu0 * quad_b))
            return PseudoconvexityResult(
                ok=False, mu0=mu0, min_grad_norm=float(gnorm.min()),
                reason="probe direction violates the certified constant",
                worst_node=bad, worst_direction=xi)

    if mu0 < 0:
        return PseudoconvexityResult(
            ok=False, mu0=mu0, min_grad_norm=float(gnorm.min()),
            reason="curvature form is indefinite relative to b",
            worst_node=worst, worst_direction=eigvec[worst])
    return PseudoconvexityResult(ok=True, mu0=mu0,
                                 min_grad_norm=float(gnorm.min()))


def observation_boundary(grid, bjk, psi):
    """Boundary nodes where sum_jk b^{jk} psi_{x_j} nu^k > 0."""
    d = grid.dim
    psi_expr = psi.expr if isinstance(psi, PsiField) else sym.sympify(psi)
    b = _as_bjk_matrix(d, bjk)
    Bv = _matrix_on_nodes(grid, b)[:, :, grid.boundary]
    gp = np.stack([_eval_on_nodes(grid, sym.diff(psi_expr, X_SYMS[j]))
                   for j in range(d)])[:, grid.boundary]
    flux = np.einsum("jn,jkn,nk->n", gp, Bv, grid.normals)
    return grid.boundary[flux > 0]


@dataclass
class Certificate:
    """Feasibility certificate: parameters plus every inequality's slack."""

    mode: str
    feasible: bool
    params: dict = field(default_factory=dict)
    inequalities: list = field(default_factory=list)
    tightest: str = None

    def add(self, name, lhs, rhs):
        # inequality lhs > rhs; slack = lhs - rhs
        self.inequalities.append(
            {"name": name, "lhs": float(lhs), "rhs": float(rhs),
             "slack": float(lhs - rhs)})

    def all_positive(self):
        return all(e["slack"] > 0 for e in self.inequalities)

    def min_slack(self):
        e = min(self.inequalities, key=lambda e: e["slack"])
        return e["name"], e["slack"]

    def as_dict(self):
        return {"mode": self.mode, "feasible": self.feasible,
                "params": self.params, "inequalities": self.inequalities,
                "tightest": self.tightest}


def _gradient_form(grid, bjk, psi):
    """Nodal values of sum_jk b^{jk} psi_{x_j} psi_{x_k}."""
    d = grid.dim
    psi_expr = psi.expr if isinstance(psi, PsiField) else sym.sympify(psi)
    b = _as_bjk_matrix(d, bjk)
    Bv = _matrix_on_nodes(grid, b)
    gp = np.stack([_eval_on_nodes(grid, sym.diff(psi_expr, X_SYMS[j]))
                   for j in range(d)])
    return np.einsum("jn,jkn,kn->n", gp, Bv, gp)


def _observability_certificate(a, shift, psi_vals, form, mu0_base, T):
    psi_t = a * psi_vals + shift
    form_t = a * a * form
    R1sq = float(psi_t.max())
    R0sq = float(psi_t.min())
    R1 = np.sqrt(R1sq)
    mu0 = a * mu0_base
    cert = Certificate(mode="observability", feasible=False)
    cert.add("quarter_gradient_form_ge_R1sq", form_t.min() / 4, R1sq)
    cert.add("R1sq_ge_R0sq", R1sq, R0sq)
    cert.add("T_gt_2R1", T, 2 * R1)
    lo, hi = (2 * R1 / T) ** 2, 2 * R1 / T
    c1 = np.sqrt(lo * hi) if hi > lo else hi  # log midpoint of the window
    cert.add("c1_gt_lower", c1, lo)
    cert.add("c1_lt_upper", hi, c1)
    c0 = (mu0 - 4 * c1) / 2
    cert.add("c0_positive", c0, 0.0)
    cert.add("mu0_minus_4c1_minus_c0", mu0 - 4 * c1 - c0, 0.0)
    cert.params = {"a": float(a), "shift": float(shift), "T": float(T),
                   "c0": float(c0), "c1": float(c1), "R0": float(np.sqrt(R0sq)),
                   "R1": float(R1), "mu0": float(mu0)}
    cert.feasible = cert.all_positive()
    return cert


def _source_certificate(a, shift, psi_vals, form, mu0_base, T):
    form_t = a * a * form
    mu0 = a * mu0_base
    cert = Certificate(mode="source", feasible=False)
    # pick 4 c1^2 T^2 just above the largest gradient form value
    q = 1.2 * float(form_t.max())
    c1 = np.sqrt(q) / (2 * T)
    c0_cap_a = (mu0 - 4 * c1) / 2
    bound = mu0 * float(form_t.min()) / q  # need 8 c1 + c0 below this
    c0_cap_b = (bound - 8 * c1) / 2
    c0 = min(c0_cap_a, c0_cap_b)
    cert.add("c0_positive", c0, 0.0)
    cert.add("c1_positive", c1, 0.0)
    cert.add("mu0_minus_4c1_minus_c0", mu0 - 4 * c1 - c0, 0.0)
    denom = 8 * c1 + max(c0, 0.0)
    cert.add("upper_two_sided", mu0 * float(form_t.min()) / denom,
             4 * c1 ** 2 * T ** 2)
    cert.add("lower_two_sided", 4 * c1 ** 2 * T ** 2, float(form_t.max()))
    cert.params = {"a": float(a), "shift": float(shift), "T": float(T),
                   "c0": float(c0), "c1": float(c1), "mu0": float(mu0)}
    cert.feasible = cert.all_positive()
    return cert


def calibrate_hyperbolic(grid, bjk, psi, mode="observability", T=None,
                         a_sweep=None, shifts=(0.0,),
                         T_factors=(1.05, 1.1, 1.25, 1.5, 2.0)):
    """Search an affine rescaling of psi and constants (c0, c1, T).

    mode="observability" certifies the time-horizon condition set
    (gradient-form lower bound, T > 2 R1, the c1 window, and
    mu0 - 4 c1 - c0 > 0); mode="source" certifies the two-sided
    gradient-form condition instead of the horizon window.  Returns the
    first certificate whose slacks are all positive, or the infeasible
    certificate with the tightest violated inequality.
    """
    pc = check_pseudoconvexity(grid, bjk, psi)
    if not pc:
        raise ConditionError(f"pseudoconvexity failed: {pc.reason}")
    if pc.mu0 <= 0:
        raise ConditionError("calibration needs mu0 > 0")
    psi_vals = (psi.on_nodes(grid) if isinstance(psi, PsiField)
                else _eval_on_nodes(grid, psi))
    if psi_vals.min() < 0:
        raise ConditionError("psi must be positive on the domain")
    form = _gradient_form(grid, bjk, psi)
    if a_sweep is None:
        a_sweep = np.logspace(0, 2, 25)

    best = None
    for a in a_sweep:
        for shift in shifts:
            if mode == "observability":
                if T is None:
                    R1 = np.sqrt(a * psi_vals.max() + shift)
                    T_list = [f * 2 * R1 for f in T_factors]
                else:
                    T_list = [T]
                for T_try in T_list:
                    cert = _observability_certificate(
                        a, shift, psi_vals, form, pc.mu0, T_try)
                    if cert.feasible:
                        return cert
                    if best is None or cert.min_slack()[1] > best.min_slack()[1]:
                        best = cert
            elif mode == "source":
                T_list = [T] if T is not None else \
                    [f * 2 * np.sqrt(a * psi_vals.max() + shift)
                     for f in T_factors]
                for T_try in T_list:
                    cert = _source_certificate(a, shift, psi_vals, form,
                                               pc.mu0, T_try)
                    if cert.feasible:
                        return cert
                    if best is None or cert.min_slack()[1] > best.min_slack()[1]:
                        best = cert
            else:
                raise ConditionError(f"unknown calibration mode {mode!r}")
    best.tightest = best.min_slack()[0]
    return best
