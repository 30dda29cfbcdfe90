"""Finite-difference building blocks shared by solvers, norms and adjoints.

All matrices act on fields flattened in the grid's C-order.  The
divergence-form operator has nonzero rows only at interior nodes; boundary
values enter through the columns, so Dirichlet data (or unknown boundary
values in the Cauchy problems) is handled by whoever owns the field.
"""

import numpy as np
import scipy.sparse as sp

__all__ = ["divergence_form_matrix", "gradient", "second_differences_ghost",
           "gradient_matrices", "lower_order_matrix"]


def _axis_fields(grid, u):
    """View a (..., n_nodes) array as (..., *grid.shape)."""
    return np.asarray(u).reshape(u.shape[:-1] + grid.shape)


def gradient(grid, u):
    """Per-axis derivatives of a nodal field, shape (dim, ..., n_nodes).

    Central differences at interior nodes, second-order one-sided at the
    boundary (numpy's ``edge_order=2`` stencil).
    """
    v = _axis_fields(grid, u)
    out = []
    for ax, h in enumerate(grid.spacing):
        g = np.gradient(v, h, axis=v.ndim - grid.dim + ax, edge_order=2)
        out.append(g.reshape(u.shape))
    return np.stack(out, axis=0)


def second_differences_ghost(grid, u):
    """Second differences d^2 u / dx_j dx_k with zero ghost values.

    Intended for fields that vanish on the boundary (the terminal-problem
    regularization space); ghost nodes outside the closed domain are taken
    as zero.  Returns shape (dim, dim, ..., n_nodes).
    """
    v = _axis_fields(grid, u)
    lead = v.ndim - grid.dim
    pad = [(0, 0)] * lead + [(1, 1)] * grid.dim
    vp = np.pad(v, pad)
    dim = grid.dim
    h = grid.spacing
    out = np.empty((dim, dim) + u.shape)

    def core(a):
        sl = [slice(None)] * lead + [slice(1, -1)] * dim
        return a[tuple(sl)]

    for j in range(dim):
        for k in range(dim):
            axj = lead + j
            axk = lead + k
            if j == k:
                d = (np.roll(vp, -1, axis=axj) - 2 * vp
                     + np.roll(vp, 1, axis=axj)) / h[j] ** 2
            else:
                d = (np.roll(np.roll(vp, -1, axis=axj), -1, axis=axk)
                     - np.roll(np.roll(vp, -1, axis=axj), 1, axis=axk)
                     - np.roll(np.roll(vp, 1, axis=axj), -1, axis=axk)
                     + np.roll(np.roll(vp, 1, axis=axj), 1, axis=axk)) \
                    / (4 * h[j] * h[k])
            out[j, k] = core(d).reshape(u.shape)
    return out


def gradient_matrices(grid):
    """Sparse matrices of the ``gradient`` stencil, one per axis."""
    n = grid.n_nodes
    mats = []
    eye = np.eye(n)
    # Small grids only ever need this for Riesz-map assembly; build by
    # applying the stencil to unit vectors when n is modest, otherwise
    # assemble bands directly.
    if n <= 4096:
        for ax in range(grid.dim):
            cols = gradient(grid, eye)[ax]
            mats.append(sp.csr_matrix(cols.T))
        return mats
    raise NotImplementedError("gradient_matrices is for small grids")


def divergence_form_matrix(grid, bjk):
    """Assemble sum_jk (b^{jk} u_{x_j})_{x_k} with rows at interior nodes.

    Diagonal blocks use the flux form D^-_j (b^{jj} D^+_j u), which is
    symmetric; off-diagonal blocks use centered differences.  ``bjk`` is a
    (dim, dim, n_nodes) array of coefficient values, symmetric in (j, k).
    """
    dim = grid.dim
    shape = grid.shape
    h = grid.spacing
    n = grid.n_nodes
    bjk = np.asarray(bjk, dtype=float)
    if bjk.shape != (dim, dim, n):
        raise ValueError("bjk must have shape (dim, dim, n_nodes)")
    if not np.allclose(bjk, np.swapaxes(bjk, 0, 1)):
        raise ValueError("symmetry required: b^{jk} != b^{kj}")

    idx = np.arange(n).reshape(shape)
    rows, cols, vals = [], [], []

    def interior_slices():
        return tuple(slice(1, -1) for _ in range(dim))

    rows_int = idx[interior_slices()].ravel()

    def shift(offset):
        """Flat indices of interior nodes shifted by an axis-offset tuple."""
        sl = tuple(slice(1 + o, (None if (-1 + o) == 0 else -1 + o))
                   for o in offset)
        return idx[sl].ravel()

    for j in range(dim):
        b = bjk[j, j].reshape(shape)
        e = [0] * dim
        e[j] = 1
        b_here = b[interior_slices()].ravel()
        b_left = b[tuple(slice(1 - o, (None if (-1 - o) == 0 else -1 - o))
                         for o in e)].ravel()
        plus = shift(tuple(e))
        minus = shift(tuple(-x for x in e))
        hj2 = h[j] ** 2
        rows += [rows_int, rows_int, rows_int]
        cols += [plus, minus, rows_int]
        vals += [b_here / hj2, b_left / hj2, -(b_here + b_left) / hj2]

    for j in range(dim):
        for k in range(dim):
            if j == k:
                continue
            b = bjk[j, k].reshape(shape)
            ej = [0] * dim
            ej[j] = 1
            ek = [0] * dim
            ek[k] = 1
            scale = 1.0 / (4 * h[j] * h[k])
            for sk in (+1, -1):
                off_k = tuple(sk * x for x in ek)
                b_nb = b[tuple(slice(1 + o, (None if (-1 + o) == 0 else -1 + o))
                               for o in off_k)].ravel()
                for sj in (+1, -1):
                    off = tuple(sk * a + sj * c for a, c in zip(ek, ej))
                    rows.append(rows_int)
                    cols.append(shift(off))
                    vals.append(sk * sj * scale * b_nb)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def lower_order_matrix(grid, b1=None, b2=None):
    """Matrix of u -> b1 . grad(u) + b2 u with rows at interior nodes.

    The gradient there is the plain centered difference (interior nodes
    always have both neighbours).  ``b1`` is (dim, n_nodes) or None,
    ``b2`` is (n_nodes,) or None.
    """
    n = grid.n_nodes
    shape = grid.shape
    idx = np.arange(n).reshape(shape)
    rows_int = idx[tuple(slice(1, -1) for _ in range(grid.dim))].ravel()
    rows, cols, vals = [], [], []
    if b1 is not None:
        b1 = np.asarray(b1, dtype=float).reshape(grid.dim, n)
        for j in range(grid.dim):
            e = [0] * grid.dim
            e[j] = 1
            sl_p = tuple(slice(1 + o, (None if (-1 + o) == 0 else -1 + o))
                         for o in e)
            sl_m = tuple(slice(1 - o, (None if (-1 - o) == 0 else -1 - o))
                         for o in e)
            coef = b1[j][rows_int] / (2 * grid.spacing[j])
            rows += [rows_int, rows_int]
            cols += [idx[sl_p].ravel(), idx[sl_m].ravel()]
            vals += [coef, -coef]
    if b2 is not None:
        b2 = np.asarray(b2, dtype=float).reshape(n)
        rows.append(rows_int)
        cols.append(rows_int)
        vals.append(b2[rows_int])
    if not rows:
        return sp.csr_matrix((n, n))
    return sp.csr_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))
