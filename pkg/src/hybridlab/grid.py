"""Uniform 2-D grids, nested subdomain masks, stencils and the smooth cutoff.

Node values are stored as ``(n, n)`` arrays indexed ``[i, j]`` with
``x1 = x0 + (i + 1) h`` and ``x2 = y0 + (j + 1) h``.  The boundary ring of the
padded ``(n + 2, n + 2)`` array is addressed in row-major order; every
boundary-valued array in the package uses that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "Grid",
    "DomainMasks",
    "ScalarField",
    "VectorField",
    "make_grid",
    "make_masks",
    "cutoff_chi",
    "smoothstep5",
    "gradient",
    "divergence",
    "laplacian",
    "inner",
    "GridMismatchError",
]

_GEOM_TOL = 1e-12


class GridMismatchError(ValueError):
    """Fields living on different grids were combined."""


@dataclass(frozen=True)
class Grid:
    """Square-cell lattice on an axis-aligned rectangle.

    Only interior nodes are unknowns; the ``4 (n + 1)`` boundary nodes are
    addressed through :attr:`boundary_index`.
    """

    n: int
    h: float
    x0: float = 0.0
    y0: float = 0.0
    width: float = 1.0
    height: float = 1.0

    @property
    def size(self) -> int:
        return self.n * self.n

    @property
    def n_boundary(self) -> int:
        return 4 * (self.n + 1)

    @cached_property
    def padded_coords(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(self.n + 2)
        x1 = self.x0 + k * self.h
        x2 = self.y0 + k * self.h
        # the far edge is pinned so h*(n+1) rounding never leaks into coordinates
        x1[-1] = self.x0 + self.width
        x2[-1] = self.y0 + self.height
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        return X1, X2

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        X1, X2 = self.padded_coords
        return X1[1:-1, 1:-1], X2[1:-1, 1:-1]

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.ones((self.n + 2, self.n + 2), dtype=bool)
        m[1:-1, 1:-1] = False
        return m

    @cached_property
    def boundary_index(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.boundary_mask)

    @cached_property
    def boundary_coords(self) -> tuple[np.ndarray, np.ndarray]:
        X1, X2 = self.padded_coords
        return X1[self.boundary_mask], X2[self.boundary_mask]

    @cached_property
    def inset_distance(self) -> np.ndarray:
        """Distance of each interior node to the rectangle boundary."""
        X1, X2 = self.coords
        return np.minimum.reduce([
            X1 - self.x0,
            self.x0 + self.width - X1,
            X2 - self.y0,
            self.y0 + self.height - X2,
        ])

    def eval(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        """Evaluate ``fn(x1, x2)`` on the padded node array."""
        X1, X2 = self.padded_coords
        return np.broadcast_to(np.asarray(fn(X1, X2)), X1.shape).astype(complex)

    def eval_boundary(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        B1, B2 = self.boundary_coords
        return np.broadcast_to(np.asarray(fn(B1, B2)), B1.shape).astype(complex)

    def nearest_node(self, x1: float, x2: float) -> tuple[int, int]:
        i = int(round((x1 - self.x0) / self.h)) - 1
        j = int(round((x2 - self.y0) / self.h)) - 1
        return min(max(i, 0), self.n - 1), min(max(j, 0), self.n - 1)

    def boundary_position(self, i: int, j: int) -> int:
        """Ring position of padded node ``(i, j)``; raises if it is interior."""
        if not self.boundary_mask[i, j]:
            raise ValueError(f"padded node ({i}, {j}) is not a boundary node")
        ring = np.cumsum(self.boundary_mask.ravel()) - 1
        return int(ring[i * (self.n + 2) + j])


def make_grid(n: int, rect: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)) -> Grid:
    """Build a grid with ``n`` interior nodes per side on ``rect = (x0, y0, w, h)``."""
    if int(n) != n or n < 4:
        raise ValueError(f"n must be an integer >= 4, got {n}")
    x0, y0, w, hr = map(float, rect)
    if w <= 0 or hr <= 0:
        raise ValueError("rectangle sides must be positive")
    hx, hy = w / (n + 1), hr / (n + 1)
    if abs(hx - hy) > _GEOM_TOL * max(hx, hy):
        raise ValueError(f"non-square cells: {hx} x {hy}")
    return Grid(n=int(n), h=hx, x0=x0, y0=y0, width=w, height=hr)


@dataclass(frozen=True)
class DomainMasks:
    """Nested node sets: ``omega_prime`` inside ``omega_dprime`` inside the interior."""

    grid: Grid
    omega_prime: np.ndarray
    omega_dprime: np.ndarray
    m_prime: float
    m_dprime: float

    @cached_property
    def prime_index(self) -> np.ndarray:
        """Flat (row-major) interior indices of the Omega' nodes."""
        return np.flatnonzero(self.omega_prime.ravel())

    @cached_property
    def dprime_index(self) -> np.ndarray:
        return np.flatnonzero(self.omega_dprime.ravel())

    @cached_property
    def prime_core(self) -> np.ndarray:
        """Omega' nodes whose four neighbours are all in Omega'."""
        m = self.omega_prime
        core = m.copy()
        core[1:, :] &= m[:-1, :]
        core[:-1, :] &= m[1:, :]
        core[:, 1:] &= m[:, :-1]
        core[:, :-1] &= m[:, 1:]
        core[0, :] = core[-1, :] = core[:, 0] = core[:, -1] = False
        return core

    @cached_property
    def prime_shape(self) -> tuple[int, int]:
        rows = np.flatnonzero(self.omega_prime.any(axis=1))
        cols = np.flatnonzero(self.omega_prime.any(axis=0))
        return len(rows), len(cols)


def make_masks(grid: Grid, m_prime: float = 0.25, m_dprime: float = 0.125) -> DomainMasks:
    if not (m_prime > m_dprime > 0):
        raise ValueError(f"need m_prime > m_dprime > 0, got {m_prime}, {m_dprime}")
    d = grid.inset_distance
    op = d >= m_prime - _GEOM_TOL
    odp = d >= m_dprime - _GEOM_TOL
    if not op.any():
        raise ValueError(f"empty Omega' for n={grid.n}, m_prime={m_prime}")
    return DomainMasks(grid, op, odp, float(m_prime), float(m_dprime))


def smoothstep5(s: np.ndarray) -> np.ndarray:
    """Quintic smoothstep ``6s^5 - 15s^4 + 10s^3`` clamped to ``[0, 1]``."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray
    boundary_values: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (n, n):
            v = v.reshape(n, n)
        object.__setattr__(self, "values", v)
        if self.boundary_values is not None:
            b = np.asarray(self.boundary_values, dtype=complex).ravel()
            if b.size != self.grid.n_boundary:
                raise ValueError(f"expected {self.grid.n_boundary} boundary values, got {b.size}")
            object.__setattr__(self, "boundary_values", b)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        full = grid.eval(fn)
        return cls.from_padded(grid, full)

    @classmethod
    def from_padded(cls, grid: Grid, full: np.ndarray) -> "ScalarField":
        full = np.asarray(full)
        return cls(grid, full[1:-1, 1:-1].copy(), full[grid.boundary_mask].copy())

    @classmethod
    def zeros(cls, grid: Grid, with_boundary: bool = True) -> "ScalarField":
        return cls(grid, np.zeros((grid.n, grid.n)),
                   np.zeros(grid.n_boundary) if with_boundary else None)

    def padded(self) -> np.ndarray:
        """Values on the full ``(n+2, n+2)`` lattice; missing boundary copies the nearest interior node."""
        n = self.grid.n
        if self.boundary_values is None:
            return np.pad(self.values, 1, mode="edge")
        out = np.empty((n + 2, n + 2), dtype=complex)
        out[1:-1, 1:-1] = self.values
        out[self.grid.boundary_mask] = self.boundary_values
        return out

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def is_real(self, rtol: float = 1e-12) -> bool:
        scale = max(np.abs(self.values).max(initial=0.0), 1e-300)
        return bool(np.abs(self.values.imag).max(initial=0.0) <= rtol * scale)

    def with_values(self, values: np.ndarray, boundary_values=None) -> "ScalarField":
        return ScalarField(self.grid, values, boundary_values)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class VectorField:
    d1: ScalarField
    d2: ScalarField

    def __post_init__(self):
        if self.d1.grid != self.d2.grid:
            raise GridMismatchError("vector components on different grids")

    @property
    def grid(self) -> Grid:
        return self.d1.grid

    def stack(self) -> np.ndarray:
        """Components as a ``(2, n, n)`` array."""
        return np.stack([self.d1.values, self.d2.values])

    @classmethod
    def from_arrays(cls, grid: Grid, a1: np.ndarray, a2: np.ndarray) -> "VectorField":
        return cls(ScalarField(grid, a1), ScalarField(grid, a2))


def _check(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError("fields live on different grids")
    return g


def cutoff_chi(masks: DomainMasks) -> ScalarField:
    """Cutoff equal to 1 on Omega' plus a one-cell collar and 0 outside Omega''.

    The ramp is the quintic smoothstep of the inset distance between
    ``m_dprime`` and ``m_prime - h``.
    """
    g = masks.grid
    d = g.inset_distance
    lo = masks.m_dprime
    hi = masks.m_prime - g.h
    if hi <= lo:
        hi = masks.m_prime
    chi = smoothstep5((d - lo) / (hi - lo))
    chi[~masks.omega_dprime] = 0.0
    return ScalarField(g, chi, np.zeros(g.n_boundary))


def _diff_axis(p: np.ndarray, h: float, axis: int, one_sided: bool) -> np.ndarray:
    """Centered first difference of a padded array, returned on the interior."""
    if axis == 0:
        d = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h)
    else:
        d = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)
    if one_sided:
        v = p[1:-1, 1:-1]
        if axis == 0:
            d[0, :] = (-3 * v[0, :] + 4 * v[1, :] - v[2, :]) / (2 * h)
            d[-1, :] = (3 * v[-1, :] - 4 * v[-2, :] + v[-3, :]) / (2 * h)
        else:
            d[:, 0] = (-3 * v[:, 0] + 4 * v[:, 1] - v[:, 2]) / (2 * h)
            d[:, -1] = (3 * v[:, -1] - 4 * v[:, -2] + v[:, -3]) / (2 * h)
    return d


def gradient(u: ScalarField) -> VectorField:
    """Centered gradient; one-sided second-order differences when boundary values are absent."""
    g = u.grid
    one_sided = u.boundary_values is None
    p = u.padded()
    return VectorField.from_arrays(g, _diff_axis(p, g.h, 0, one_sided), _diff_axis(p, g.h, 1, one_sided))


def divergence(w: VectorField) -> ScalarField:
    """Centered divergence, the negative adjoint of :func:`gradient` on zero-boundary fields."""
    g = w.grid
    a = _diff_axis(w.d1.padded(), g.h, 0, w.d1.boundary_values is None)
    b = _diff_axis(w.d2.padded(), g.h, 1, w.d2.boundary_values is None)
    return ScalarField(g, a + b)


def laplacian(u: ScalarField) -> ScalarField:
    """Standard 5-point Laplacian using the stored boundary values."""
    g = u.grid
    p = u.padded()
    lap = (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4 * p[1:-1, 1:-1]) / g.h**2
    return ScalarField(g, lap)


def inner(a, b) -> complex:
    """Discrete pairing ``h^2 sum a b`` (bilinear) for scalar or vector fields."""
    if isinstance(a, VectorField):
        _check(a.d1, b.d1)
        return inner(a.d1, b.d1) + inner(a.d2, b.d2)
    g = _check(a, b)
    return complex(g.h**2 * np.sum(a.values * b.values))
