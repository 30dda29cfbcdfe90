"""Discrete norms: trapezoidal mass in space, difference quotients in time.

Space-only kinds act on the last axis (n_nodes); space-time kinds on the
last two axes (n_times, n_nodes).  Any leading axes are preserved, except
under ``expectation=True`` where the leading axis is the path axis and the
squared norms are averaged over it before the square root.
"""

import numpy as np

from .operators import gradient, second_differences_ghost

__all__ = ["discrete_norm", "l2_inner", "SPACE_KINDS", "SPACETIME_KINDS"]

SPACE_KINDS = ("l2", "h1", "h2")
SPACETIME_KINDS = ("l2_time_space", "h1_time_l2")


class NormError(ValueError):
    pass


def l2_inner(grid, u, v):
    """Mass-weighted inner product over the node axis."""
    return np.sum(grid.mass * u * v, axis=-1)


def _sq_l2(grid, u):
    return np.sum(grid.mass * u * u, axis=-1)


def _sq_h1(grid, u):
    g = gradient(grid, u)
    return _sq_l2(grid, u) + sum(_sq_l2(grid, g[j]) for j in range(grid.dim))


def _sq_h2(grid, u):
    d2 = second_differences_ghost(grid, u)
    s = _sq_h1(grid, u)
    for j in range(grid.dim):
        for k in range(grid.dim):
            s = s + _sq_l2(grid, d2[j, k])
    return s


_SQ_SPACE = {"l2": _sq_l2, "h1": _sq_h1, "h2": _sq_h2}


def _sq_l2_time_space(grid, time_grid, u):
    # trapezoid in time, so constants integrate exactly
    w = np.full(time_grid.n_steps + 1, time_grid.dt)
    w[0] = w[-1] = time_grid.dt / 2
    return np.sum(w * _sq_l2(grid, u), axis=-1)


def _sq_h1_time_l2(grid, time_grid, u):
    # sum_{k>=1} dt (|v^k|^2 + |(v^k - v^{k-1})/dt|^2), the misfit form
    dt = time_grid.dt
    vk = u[..., 1:, :]
    dq = (u[..., 1:, :] - u[..., :-1, :]) / dt
    return np.sum(dt * (_sq_l2(grid, vk) + _sq_l2(grid, dq)), axis=-1)


_SQ_SPACETIME = {"l2_time_space": _sq_l2_time_space,
                 "h1_time_l2": _sq_h1_time_l2}


def discrete_norm(field, kind, grid, time_grid=None, expectation=False):
    """Evaluate a discrete norm of ``field``.

    ``kind`` is one of ``l2 | h1 | h2`` (field shape (..., n_nodes)) or
    ``l2_time_space | h1_time_l2`` (field shape (..., n_times, n_nodes)).
    With ``expectation=True`` the first axis indexes paths and the result
    is sqrt(mean over paths of the squared norm).
    """
    field = np.asarray(field, dtype=float)
    if kind in _SQ_SPACE:
        if field.shape[-1] != grid.n_nodes:
            raise NormError("shape error: last axis must be n_nodes")
        sq = _SQ_SPACE[kind](grid, field)
    elif kind in _SQ_SPACETIME:
        if time_grid is None:
            raise NormError("time grid required for space-time norms")
        if field.shape[-1] != grid.n_nodes or \
                field.shape[-2] != time_grid.n_steps + 1:
            raise NormError("shape error: need (..., n_times, n_nodes)")
        sq = _SQ_SPACETIME[kind](grid, time_grid, field)
    else:
        raise NormError(f"unknown norm kind {kind!r}")
    if expectation:
        if np.ndim(sq) < 1:
            raise NormError("expectation norm needs a leading path axis")
        sq = np.mean(sq, axis=0)
    return np.sqrt(sq)
