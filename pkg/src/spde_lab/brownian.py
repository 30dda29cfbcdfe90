"""Ensembles of discrete Brownian paths and left-point Ito quadrature.

Each path is generated by its own counter-based bit stream keyed on
(master seed, path index), so a path's increments never depend on how many
other paths exist or in which order they are drawn.  Paths are regenerated
on demand rather than stored, which keeps large ensembles cheap and makes
common-random-number reuse a non-event.
"""

from dataclasses import dataclass

import numpy as np

from .grids import TimeGrid

__all__ = ["BrownianEnsemble", "sample_brownian", "ito_integral",
           "quadratic_variation"]


class EnsembleError(ValueError):
    pass


_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class BrownianEnsemble:
    """``n_paths`` independent Brownian paths on a shared time grid."""

    time_grid: TimeGrid
    n_paths: int
    seed: int

    def _rng(self, path):
        key = np.array([self.seed & _MASK64, path & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def increments(self, paths=None):
        """Increment array dW of shape (len(paths), n_steps); dW_k ~ N(0, dt)."""
        if paths is None:
            paths = range(self.n_paths)
        n = self.time_grid.n_steps
        sd = np.sqrt(self.time_grid.dt)
        out = np.empty((len(paths), n))
        for row, p in enumerate(paths):
            if not 0 <= p < self.n_paths:
                raise EnsembleError(f"path index {p} out of range")
            out[row] = self._rng(p).standard_normal(n) * sd
        return out

    def values(self, paths=None):
        """Cumulative values W(t_k), shape (len(paths), n_steps + 1); W(0) = 0."""
        dw = self.increments(paths)
        out = np.zeros((dw.shape[0], dw.shape[1] + 1))
        np.cumsum(dw, axis=1, out=out[:, 1:])
        return out

    def blocks(self, block_size=4096):
        """Yield (path_slice, increments) over the ensemble in fixed order."""
        for start in range(0, self.n_paths, block_size):
            stop = min(start + block_size, self.n_paths)
            yield slice(start, stop), self.increments(range(start, stop))


def sample_brownian(time_grid, n_paths, seed):
    """Draw an ensemble of ``n_paths`` Brownian paths on ``time_grid``."""
    if n_paths < 1:
        raise EnsembleError("empty ensemble")
    return BrownianEnsemble(time_grid=time_grid, n_paths=int(n_paths),
                            seed=int(seed))


def ito_integral(integrand, ensemble, paths=None):
    """Left-point Ito sum sum_k f(t_k) dW_k, one scalar per path.

    ``integrand`` rows are per-path samples on the ensemble's time grid,
    either at all n_steps + 1 nodes (the terminal sample is unused) or at
    the n_steps left endpoints.  The left-point rule is what makes the sum
    adapted: the value multiplying dW_k uses information up to t_k only.
    """
    f = np.asarray(integrand, dtype=float)
    dw = ensemble.increments(paths)
    n = ensemble.time_grid.n_steps
    if f.ndim == 1:
        f = f[None, :]
    if f.shape[1] == n + 1:
        f = f[:, :-1]
    elif f.shape[1] != n:
        raise EnsembleError("grid mismatch between integrand and ensemble")
    if f.shape[0] not in (1, dw.shape[0]):
        raise EnsembleError("integrand path count does not match ensemble")
    return np.sum(f * dw, axis=1)


def quadratic_variation(path_values):
    """sum_k (increment_k)^2 along a sampled path (or per row of an array)."""
    v = np.asarray(path_values, dtype=float)
    d = np.diff(v, axis=-1)
    return np.sum(d * d, axis=-1)
