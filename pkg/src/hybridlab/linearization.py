"""Fréchet derivatives of the data functionals, dense assembly and ladder validation.

Every derivative here is the exact derivative of the *discrete* forward map,
so finite-difference ladders see clean second-order remainders.  Maps act on
padded perturbation arrays with a trailing batch axis; ``LinearMap.apply``
wraps that for single fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import elliptic
from .elliptic import (BoundaryCondition, CoefficientSet, EllipticOperator, ROBIN1,
                       conductivity_operator, diffusion_operator, schrodinger_operator)
from .grid import DomainMasks, Grid, ScalarField, gradient
from .io import matrix_dump_binary

DENSE_LIMIT = 1600
DEFAULT_LADDER = (1e-2, 5e-3, 2.5e-3)


class DenseLimitError(ValueError):
    pass


@dataclass(frozen=True)
class LinearMap:
    """A linear map from padded perturbations to interior data.

    ``apply_batch`` receives ``arity`` arrays of shape ``(P, k)`` with
    ``P = (n + 2)^2`` and returns an ``(n^2, k)`` array.
    """

    name: str
    grid: Grid
    arity: int
    apply_batch: Callable[..., np.ndarray] = field(repr=False)
    base_point: dict = field(default_factory=dict, repr=False)

    def apply(self, *pert) -> ScalarField:
        if len(pert) != self.arity:
            raise ValueError(f"{self.name} takes {self.arity} perturbation(s)")
        cols = [_as_padded(self.grid, r).ravel()[:, None] for r in pert]
        out = self.apply_batch(*cols)
        return ScalarField(self.grid, out[:, 0].reshape(self.grid.n, self.grid.n))

    def scaled(self, c: complex) -> "LinearMap":
        return LinearMap(f"{c}*{self.name}", self.grid, self.arity,
                         lambda *R: c * self.apply_batch(*R), self.base_point)


def _as_padded(grid: Grid, r) -> np.ndarray:
    """Accept a ScalarField, an interior ``(n, n)`` array or a padded array (zero-extended)."""
    if isinstance(r, ScalarField):
        if r.grid != grid:
            raise elliptic.GridMismatchError("perturbation grid mismatch")
        if r.boundary_values is None:
            out = np.zeros((grid.n + 2, grid.n + 2), dtype=complex)
            out[1:-1, 1:-1] = r.values
            return out
        return r.padded()
    a = np.asarray(r, dtype=complex)
    if a.shape == (grid.n + 2, grid.n + 2):
        return a
    out = np.zeros((grid.n + 2, grid.n + 2), dtype=complex)
    out[1:-1, 1:-1] = a.reshape(grid.n, grid.n)
    return out


def _interior(grid: Grid) -> np.ndarray:
    return np.flatnonzero(~grid.boundary_mask.ravel())


def _grad_batch(V: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Centered gradient of interior columns with zero boundary values."""
    n, h = grid.n, grid.h
    k = V.shape[1]
    P = np.zeros((n + 2, n + 2, k), dtype=V.dtype)
    P[1:-1, 1:-1] = V.reshape(n, n, k)
    d1 = (P[2:, 1:-1] - P[:-2, 1:-1]) / (2 * h)
    d2 = (P[1:-1, 2:] - P[1:-1, :-2]) / (2 * h)
    return d1.reshape(n * n, k), d2.reshape(n * n, k)


def _on_interior(op: EllipticOperator, X: np.ndarray) -> np.ndarray:
    return X if op.bc.kind == "dirichlet" else X[_interior(op.grid)]


def _grad_flat(u: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    g = gradient(u)
    return g.d1.values.ravel(), g.d2.values.ravel()


def conductivity_tangent(op: EllipticOperator, u: ScalarField, R: np.ndarray) -> np.ndarray:
    """Interior columns ``v`` with ``A v = -(dK[rho] u)``, zero boundary values."""
    idx = _interior(op.grid)
    rhs = -op.flux_derivative(R, u.padded().ravel())[idx]
    return op.solve_raw(rhs)


def aet_dF(coeffs: CoefficientSet, f, p: float | None = None) -> LinearMap:
    """Derivative of :func:`forward.power_density` with respect to ``sigma``."""
    p = coeffs.p if p is None else p
    if p is None or not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    op = conductivity_operator(coeffs)
    u = op.solve(None, np.asarray(f, dtype=complex))
    g = op.grid
    a1, a2 = _grad_flat(u)
    gg = (a1 * a1 + a2 * a2)[:, None]
    pref = ((2.0 / p) * np.exp(2.0 * coeffs.sigma.values.ravel() / p))[:, None]
    idx = _interior(g)

    def batch(R):
        V = conductivity_tangent(op, u, R)
        b1, b2 = _grad_batch(V, g)
        return pref * (R[idx] * gg + p * (a1[:, None] * b1 + a2[:, None] * b2))

    return LinearMap("aet_dF", g, 1, batch, {"coeffs": coeffs, "f": f, "p": p, "u": u})


def aet_cross_dF(coeffs: CoefficientSet, f1, f2, variant: str = "exact") -> LinearMap:
    """Derivative of the cross functional ``e^{2 sigma} grad u1 . grad u2``.

    ``variant="exact"`` is the true derivative of that functional, the one the
    ladder validates.  ``variant="printed"`` keeps the alternative data term
    ``rho e^{2 sigma} (grad u1 . grad u2)^2`` with the same ``v`` terms.
    """
    if variant not in ("exact", "printed"):
        raise ValueError(f"unknown variant {variant!r}")
    op = conductivity_operator(coeffs)
    u1 = op.solve(None, np.asarray(f1, dtype=complex))
    u2 = op.solve(None, np.asarray(f2, dtype=complex))
    g = op.grid
    a1, a2 = _grad_flat(u1)
    c1, c2 = _grad_flat(u2)
    dot = (a1 * c1 + a2 * c2)[:, None]
    e2s = np.exp(2.0 * coeffs.sigma.values.ravel())[:, None]
    idx = _interior(g)
    data_term = 2.0 * dot if variant == "exact" else dot * dot

    def batch(R):
        V1 = conductivity_tangent(op, u1, R)
        V2 = conductivity_tangent(op, u2, R)
        p1, p2 = _grad_batch(V1, g)
        q1, q2 = _grad_batch(V2, g)
        vterm = a1[:, None] * q1 + a2[:, None] * q2 + c1[:, None] * p1 + c2[:, None] * p2
        return e2s * (R[idx] * data_term + vterm)

    return LinearMap(f"aet_cross_dF[{variant}]", g, 1, batch,
                     {"coeffs": coeffs, "f1": f1, "f2": f2, "u1": u1, "u2": u2})


def qpat_dF(coeffs: CoefficientSet, f, route: int = 1) -> LinearMap:
    """Derivative of :func:`forward.qpat_data` in ``(sigma, gamma)`` directions ``(rho, nu)``.

    Route 1 solves once for ``v`` with ``L v = -dK[rho] u - nu e^gamma u`` and
    returns ``e^gamma (nu u + v)``.  Route 2 solves the two source terms
    separately and adds the three pieces.
    """
    if route not in (1, 2):
        raise ValueError("route must be 1 or 2")
    op = diffusion_operator(coeffs)
    u = op.solve(None, np.asarray(f, dtype=complex))
    g = op.grid
    idx = _interior(g)
    uf = u.values.ravel()[:, None]
    eg = np.exp(coeffs.gamma.values.ravel())[:, None]
    up = u.padded().ravel()

    def batch(R, Nu):
        nu = Nu[idx]
        flux = op.flux_derivative(R, up)[idx]
        if route == 1:
            V = op.solve_raw(-flux - eg * uf * nu)
            return eg * (nu * uf + V)
        t_abs = op.solve_raw(eg * uf * nu)
        t_div = op.solve_raw(flux)
        return eg * (nu * uf - t_abs - t_div)

    return LinearMap(f"qpat_dF[route{route}]", g, 2, batch, {"coeffs": coeffs, "f": f, "u": u})


def umot_dF(coeffs: CoefficientSet, S, eta, B_bc: BoundaryCondition | None = None,
            C_bc: BoundaryCondition = ROBIN1) -> LinearMap:
    """Derivative of :func:`forward.umot_data` with respect to ``mu``: ``u1 G0 + u0 G1``."""
    B_bc = B_bc or elliptic.DIRICHLET
    Bd = BoundaryCondition(B_bc.kind, B_bc.robin_gamma, S)
    opB = schrodinger_operator(coeffs, Bd)
    opC = schrodinger_operator(coeffs, C_bc.homogeneous())
    g = opB.grid
    u = opB.solve(None, Bd.boundary_data(g))
    G = elliptic.greens_column(coeffs, C_bc.homogeneous(), eta)
    uB = u.padded().ravel()[opB.unknowns]
    GC = G.padded().ravel()[opC.unknowns]
    wB = (opB.weights * opB.absorption[opB.unknowns] * uB)[:, None]
    wC = (opC.weights * opC.absorption[opC.unknowns] * GC)[:, None]
    u0 = u.values.ravel()[:, None]
    G0 = G.values.ravel()[:, None]

    def batch(R):
        U1 = _on_interior(opB, opB.solve_raw(-wB * R[opB.unknowns]))
        G1 = _on_interior(opC, opC.solve_raw(-wC * R[opC.unknowns]))
        return U1 * G0 + u0 * G1

    return LinearMap("umot_dF", g, 1, batch, {"coeffs": coeffs, "S": S, "eta": eta, "u": u, "G": G})


def reduced_A0x1(rho: ScalarField, p: float) -> ScalarField:
    """``rho - p D1 Δ^{-1} D1 rho`` with centered ``D1`` and the Dirichlet Laplacian."""
    g = rho.grid
    r = _as_padded(g, rho)
    d1 = (r[2:, 1:-1] - r[:-2, 1:-1]) / (2 * g.h)
    w = elliptic.laplacian_inverse_dirichlet(ScalarField(g, d1))
    wp = w.padded()
    dw = (wp[2:, 1:-1] - wp[:-2, 1:-1]) / (2 * g.h)
    return ScalarField(g, r[1:-1, 1:-1] - p * dw)


@dataclass(frozen=True)
class DenseOperator:
    """Dense matrix of a linear map on Omega'-supported perturbations.

    ``row_map`` and ``col_map`` hold flat interior indices; ``col_block``
    tells which perturbation argument each column belongs to.  Rows and
    columns carry the same ``h^2`` quadrature weight, so the matrix is also
    the operator between the discrete L2 spaces.
    """

    matrix: np.ndarray
    row_map: np.ndarray
    col_map: np.ndarray
    col_block: np.ndarray
    scaling: float
    grid: Grid

    @property
    def shape(self):
        return self.matrix.shape

    def dump(self) -> bytes:
        return matrix_dump_binary(self.matrix, self.row_map, self.col_map)


def column_sets(lmap: LinearMap, masks: DomainMasks) -> list[np.ndarray]:
    """Perturbation node sets per argument: Omega', and Omega' core for the QPAT nu-block."""
    sets = [masks.prime_index]
    if lmap.arity == 2:
        sets.append(np.flatnonzero(masks.prime_core.ravel()))
    return sets


def assemble(lmap: LinearMap | Sequence[LinearMap], masks: DomainMasks,
             dense_limit: int = DENSE_LIMIT, chunk: int = 256) -> DenseOperator:
    """One column per perturbation node; a sequence of maps is stacked row-wise in order."""
    maps = [lmap] if isinstance(lmap, LinearMap) else list(lmap)
    arity = {m.arity for m in maps}
    if len(arity) != 1:
        raise ValueError("stacked maps must share arity")
    g = masks.grid
    sets = column_sets(maps[0], masks)
    for s in sets:
        if s.size > dense_limit:
            raise DenseLimitError(f"{s.size} columns exceed the dense limit {dense_limit}")
    interior_pad = _interior(g)
    rows = masks.prime_index
    blocks = []
    for m in maps:
        cols = []
        for b, s in enumerate(sets):
            for start in range(0, s.size, chunk):
                sel = s[start:start + chunk]
                E = np.zeros(((g.n + 2) ** 2, sel.size), dtype=complex)
                E[interior_pad[sel], np.arange(sel.size)] = 1.0
                args = [np.zeros_like(E) for _ in range(m.arity)]
                args[b] = E
                cols.append(m.apply_batch(*args)[rows])
        blocks.append(np.concatenate(cols, axis=1))
    matrix = np.concatenate(blocks, axis=0) if len(blocks) > 1 else blocks[0]
    col_map = np.concatenate(sets)
    col_block = np.concatenate([np.full(s.size, b) for b, s in enumerate(sets)])
    row_map = np.tile(rows, len(maps))
    return DenseOperator(matrix, row_map, col_map, col_block, g.h**2, g)


def dense_to_args(op: DenseOperator, vec: np.ndarray) -> list[np.ndarray]:
    """Zero-extend a column-space vector into padded perturbation fields."""
    g = op.grid
    n = g.n
    out = []
    for b in range(int(op.col_block.max()) + 1):
        sel = op.col_block == b
        full = np.zeros(n * n, dtype=complex)
        full[op.col_map[sel]] = vec[sel]
        out.append(_as_padded(g, full.reshape(n, n)))
    return out


@dataclass(frozen=True)
class ConvergenceReport:
    epsilons: tuple[float, ...]
    residuals: tuple[float, ...]
    ratios: tuple[float, ...]
    data_norm: float
    passed: bool
    band: tuple[float, float] = (3.2, 4.8)
    floor: float = 1e-9

    def lines(self) -> list[str]:
        out = [f"eps={e!r} residual={r!r}" for e, r in zip(self.epsilons, self.residuals)]
        out.append("ratios=" + ",".join(repr(x) for x in self.ratios))
        out.append("verdict=" + ("PASS" if self.passed else "FAIL"))
        return out


def _norm(grid: Grid, a: np.ndarray) -> float:
    return float(grid.h * np.linalg.norm(a))


def validate_frechet(forward: Callable[..., np.ndarray], lin: LinearMap | Callable, direction,
                     eps_ladder: Sequence[float] = DEFAULT_LADDER,
                     band: tuple[float, float] = (3.2, 4.8), floor: float = 1e-9) -> ConvergenceReport:
    """Finite-difference ladder for ``forward(eps * direction)`` against ``lin``.

    ``forward`` takes a perturbation (or tuple of perturbations, matching
    ``direction``) and returns the interior data as an array.  PASS iff every
    ratio lies in ``band`` or the residuals have reached ``floor * ||F||``.
    """
    eps = tuple(float(e) for e in eps_ladder)
    if len(eps) < 3:
        raise ValueError("ladder needs at least 3 rungs")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("ladder must be strictly decreasing")
    dirs = direction if isinstance(direction, tuple) else (direction,)
    scale = lambda e: tuple(e * np.asarray(d) if not isinstance(d, ScalarField)
                            else ScalarField(d.grid, e * d.values,
                                             None if d.boundary_values is None else e * d.boundary_values)
                            for d in dirs)
    zero = scale(0.0)
    F0 = np.asarray(forward(*zero)).ravel()
    if isinstance(lin, LinearMap):
        dF = lin.apply(*dirs).values.ravel()
        grid = lin.grid
    else:
        dF = np.asarray(lin(*dirs)).ravel()
        grid = None
    nrm = (lambda a: _norm(grid, a)) if grid is not None else (lambda a: float(np.linalg.norm(a)))
    res = []
    for e in eps:
        Fe = np.asarray(forward(*scale(e))).ravel()
        res.append(nrm(Fe - F0 - e * dF))
    fnorm = nrm(F0)
    ratios = tuple(a / b if b > 0 else float("inf") for a, b in zip(res, res[1:]))
    lim = floor * fnorm
    ok = all((band[0] <= r <= band[1]) or res[i + 1] <= lim or res[i] <= lim
             for i, r in enumerate(ratios))
    return ConvergenceReport(eps, tuple(res), ratios, fnorm, bool(ok), band, floor)


def shifted(base: ScalarField, pert) -> ScalarField:
    """``base + pert`` on the padded lattice (``pert`` is zero-extended if needed)."""
    return ScalarField.from_padded(base.grid, base.padded() + _as_padded(base.grid, pert))
