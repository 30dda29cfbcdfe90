"""Uniform tensor grids on intervals and rectangles, with boundary bookkeeping.

Nodes include the boundary.  Every boundary node carries a unit outward
normal; at the four corners of a rectangle the normal is the normalized sum
of the two face normals.  Optional marked sets: an observation boundary
(subset of boundary nodes) and an observation subdomain (subset of interior
nodes).
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Grid", "TimeGrid", "build_grid", "build_time_grid"]


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_k = k*dt, k = 0..n_steps, with t_{n_steps} = T."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise GridError("horizon must be positive")
        if self.n_steps < 1:
            raise GridError("need at least one time step")

    @property
    def dt(self):
        return self.horizon / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


def build_time_grid(horizon, n_steps):
    return TimeGrid(float(horizon), int(n_steps))


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh over (0, L1) or (0, L1) x (0, L2), boundary included.

    ``nodes`` has shape (n_nodes, dim).  Flattening is C-order over the
    per-axis index tuple produced by ``meshgrid(..., indexing="ij")``.
    """

    dim: int
    lengths: tuple
    shape: tuple            # nodes per axis
    nodes: np.ndarray       # (n_nodes, dim)
    interior: np.ndarray    # sorted interior node indices
    boundary: np.ndarray    # sorted boundary node indices
    normals: np.ndarray     # (n_boundary, dim) unit outward normals
    gamma0: np.ndarray = field(default=None)  # observation boundary node set
    g0: np.ndarray = field(default=None)      # observation subdomain node set

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def spacing(self):
        return tuple(L / (n - 1) for L, n in zip(self.lengths, self.shape))

    @property
    def mass(self):
        """Trapezoidal quadrature weight per node (product over axes)."""
        w = np.ones(self.shape)
        for ax, (n, h) in enumerate(zip(self.shape, self.spacing)):
            w1 = np.full(n, h)
            w1[0] = w1[-1] = h / 2
            sh = [1] * self.dim
            sh[ax] = n
            w = w * w1.reshape(sh)
        return w.ravel()

    def multi_index(self, i):
        return np.unravel_index(i, self.shape)

    def flat_index(self, idx):
        return np.ravel_multi_index(idx, self.shape)

    def normal_at(self, i):
        """Outward normal of boundary node ``i`` (flat index)."""
        pos = np.searchsorted(self.boundary, i)
        if pos >= len(self.boundary) or self.boundary[pos] != i:
            raise GridError(f"node {i} is not a boundary node")
        return self.normals[pos]

    def boundary_face(self, axis, side):
        """Flat indices of the boundary face {x_axis = 0 or L}; side in {0, 1}."""
        idx = np.indices(self.shape).reshape(self.dim, -1)
        take = idx[axis] == (0 if side == 0 else self.shape[axis] - 1)
        return np.flatnonzero(take)


def _resolve_selector(grid_nodes, shape, lengths, sel, candidates):
    """Resolve a mark selector to node indices within ``candidates``.

    Accepted forms: a callable predicate on coordinates, an explicit index
    array, or a string face selector like "x1=0", "x1=L", "x=1" (1D alias).
    """
    if callable(sel):
        mask = np.array([bool(sel(*grid_nodes[i])) for i in candidates])
        return candidates[mask]
    if isinstance(sel, str):
        s = sel.replace(" ", "")
        name, _, val = s.partition("=")
        axis = {"x": 0, "x1": 0, "x2": 1}.get(name)
        if axis is None or not val:
            raise GridError(f"bad selector {sel!r}")
        if val == "L":
            target = lengths[axis]
        else:
            target = float(val)
        h = lengths[axis] / (shape[axis] - 1)
        mask = np.abs(grid_nodes[candidates, axis] - target) < h / 2
        return candidates[mask]
    sel = np.asarray(sel, dtype=int)
    if not np.all(np.isin(sel, candidates)):
        raise GridError("selector indices outside the candidate node set")
    return np.sort(sel)


def build_grid(lengths, resolutions, gamma0=None, g0=None):
    """Build a 1D or 2D uniform grid with classified nodes.

    Parameters
    ----------
    lengths : float or sequence of floats
        Axis lengths L1 (and L2).
    resolutions : int or sequence of ints
        Nodes per axis, at least 3.
    gamma0, g0 : optional
        Selectors for the observation boundary / observation subdomain
        (see ``_resolve_selector``).
    """
    if np.isscalar(lengths):
        lengths = (lengths,)
    if np.isscalar(resolutions):
        resolutions = (resolutions,)
    lengths = tuple(float(L) for L in lengths)
    shape = tuple(int(n) for n in resolutions)
    dim = len(lengths)
    if dim not in (1, 2) or len(shape) != dim:
        raise GridError("only 1D and 2D tensor grids are supported")
    if any(L <= 0 for L in lengths):
        raise GridError("axis lengths must be positive")
    if any(n < 3 for n in shape):
        raise GridError("degenerate grid: need at least 3 nodes per axis")

    axes = [np.linspace(0.0, L, n) for L, n in zip(lengths, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)

    idx = np.indices(shape).reshape(dim, -1)
    on_face = np.zeros((dim, 2, nodes.shape[0]), dtype=bool)
    for ax in range(dim):
        on_face[ax, 0] = idx[ax] == 0
        on_face[ax, 1] = idx[ax] == shape[ax] - 1
    is_boundary = on_face.any(axis=(0, 1))
    boundary = np.flatnonzero(is_boundary)
    interior = np.flatnonzero(~is_boundary)

    normals = np.zeros((len(boundary), dim))
    for ax in range(dim):
        normals[on_face[ax, 0, boundary], ax] -= 1.0
        normals[on_face[ax, 1, boundary], ax] += 1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    g0_set = None
    gamma0_set = None
    if gamma0 is not None:
        gamma0_set = _resolve_selector(nodes, shape, lengths, gamma0, boundary)
        if len(gamma0_set) == 0:
            raise GridError("empty observation boundary")
    if g0 is not None:
        g0_set = _resolve_selector(nodes, shape, lengths, g0, interior)
        if len(g0_set) == 0:
            raise GridError("empty observation subdomain")

    return Grid(dim=dim, lengths=lengths, shape=shape, nodes=nodes,
                interior=interior, boundary=boundary, normals=normals,
                gamma0=gamma0_set, g0=g0_set)
