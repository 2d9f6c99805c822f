"""Finite-difference solvers for the elliptic boundary-value problems.

All operators are assembled from edge fluxes on the padded lattice:
``K = D^T diag(kappa) D`` with ``kappa = exp((s_p + s_q) / 2) / h^2`` on the
edge ``(p, q)``.  Dirichlet problems keep the interior block; Robin problems
keep every node and give boundary-to-boundary edges half weight, which is the
ghost-node elimination of the centred normal derivative after symmetric row
scaling (mass weights 1, 1/2, 1/4 for interior, edge and corner nodes).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, GridMismatchError, ScalarField

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
MAX_DIRECT_N = 127


class SingularSystemError(RuntimeError):
    """The discrete system could not be solved to the residual tolerance."""


@dataclass(frozen=True)
class CoefficientSet:
    """Log-coefficients of the three modalities.

    Attributes:
        mu: log-absorption for the Schrödinger-type operator ``-Δ + e^mu``.
        sigma: log-conductivity / log-diffusion.
        gamma: log-attenuation.
        p: exponent of the power-density functional.
    """

    mu: ScalarField | None = None
    sigma: ScalarField | None = None
    gamma: ScalarField | None = None
    p: float | None = None

    def __post_init__(self):
        grids = {f.grid for f in (self.mu, self.sigma, self.gamma) if f is not None}
        if len(grids) > 1:
            raise GridMismatchError("coefficients on different grids")
        for name in ("mu", "sigma", "gamma"):
            f = getattr(self, name)
            if f is not None and not np.all(np.isfinite(f.padded())):
                raise ValueError(f"coefficient {name} is not finite")
        if self.p is not None and not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")

    @property
    def grid(self) -> Grid:
        for f in (self.mu, self.sigma, self.gamma):
            if f is not None:
                return f.grid
        raise ValueError("empty coefficient set")

    def admissible(self, masks) -> bool:
        """True when every supplied field vanishes off Omega' (boundary included)."""
        for f in (self.mu, self.sigma, self.gamma):
            if f is None:
                continue
            if np.any(f.values[~masks.omega_prime] != 0):
                return False
            if f.boundary_values is not None and np.any(f.boundary_values != 0):
                return False
        return True


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet, or Robin ``D_nu u + gamma u = data`` with outward normal."""

    kind: Literal["dirichlet", "robin"] = "dirichlet"
    robin_gamma: float | np.ndarray = 1.0
    data: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "robin":
            g = np.asarray(self.robin_gamma, dtype=float)
            if np.any(g < 0) or not np.any(g > 0):
                raise ValueError("Robin gamma must be nonnegative and not identically zero")

    def homogeneous(self) -> "BoundaryCondition":
        return BoundaryCondition(self.kind, self.robin_gamma, None)

    def boundary_data(self, grid: Grid) -> np.ndarray:
        if self.data is None:
            return np.zeros(grid.n_boundary, dtype=complex)
        d = np.asarray(self.data, dtype=complex)
        return np.broadcast_to(d, (grid.n_boundary,)).copy()


DIRICHLET = BoundaryCondition("dirichlet")
ROBIN1 = BoundaryCondition("robin", 1.0)


@dataclass
class LinearSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray


class _Edges:
    """Incidence and averaging matrices of the padded lattice."""

    def __init__(self, grid: Grid):
        m = grid.n + 2
        idx = np.arange(m * m).reshape(m, m)
        p = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
        q = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
        bmask = grid.boundary_mask.ravel()
        self.p, self.q = p, q
        self.both_boundary = bmask[p] & bmask[q]
        ne = p.size
        rows = np.repeat(np.arange(ne), 2)
        cols = np.stack([p, q], axis=1).ravel()
        self.D = sp.csr_matrix((np.tile([1.0, -1.0], ne), (rows, cols)), shape=(ne, m * m))
        self.S = sp.csr_matrix((np.full(2 * ne, 0.5), (rows, cols)), shape=(ne, m * m))


_EDGE_CACHE: dict[Grid, _Edges] = {}


def edges(grid: Grid) -> _Edges:
    e = _EDGE_CACHE.get(grid)
    if e is None:
        e = _EDGE_CACHE[grid] = _Edges(grid)
    return e


def mass_weights(grid: Grid) -> np.ndarray:
    """Padded nodal weights 1 / 0.5 / 0.25 for interior / edge / corner nodes."""
    w1 = np.ones(grid.n + 2)
    w1[[0, -1]] = 0.5
    return np.outer(w1, w1)


def _interior_flat(grid: Grid) -> np.ndarray:
    return np.flatnonzero(~grid.boundary_mask.ravel())


def _boundary_flat(grid: Grid) -> np.ndarray:
    return np.flatnonzero(grid.boundary_mask.ravel())


def _real_if_exact(a: np.ndarray) -> np.ndarray:
    """Drop an identically zero imaginary part so real problems assemble real matrices."""
    if np.iscomplexobj(a) and not np.any(a.imag):
        return a.real.copy()
    return a


class EllipticOperator:
    """``-div(e^s grad .) + a`` with Dirichlet or Robin conditions, factorized once.

    ``log_flux`` is the padded log-coefficient of the flux (zero for the
    plain Laplacian) and ``absorption`` the padded zeroth-order coefficient.
    """

    def __init__(self, grid: Grid, log_flux: np.ndarray | None, absorption: np.ndarray | None,
                 bc: BoundaryCondition = DIRICHLET):
        if grid.n > MAX_DIRECT_N:
            raise ValueError(f"n={grid.n} exceeds the direct-solver limit {MAX_DIRECT_N}")
        self.grid = grid
        self.bc = bc
        m = grid.n + 2
        E = edges(grid)
        s = np.zeros(m * m) if log_flux is None else _real_if_exact(np.asarray(log_flux).ravel())
        kappa = np.exp(E.S @ s) / grid.h**2
        if bc.kind == "robin":
            kappa = np.where(E.both_boundary, 0.5 * kappa, kappa)
        self.kappa = kappa
        self.absorption = np.zeros(m * m) if absorption is None else _real_if_exact(np.asarray(absorption).ravel())
        K = (E.D.T @ sp.diags(kappa) @ E.D).tocsr()
        self.K = K
        if bc.kind == "dirichlet":
            self.unknowns = _interior_flat(grid)
            A = K[self.unknowns][:, self.unknowns] + sp.diags(self.absorption[self.unknowns])
            self._K_ib = K[self.unknowns][:, _boundary_flat(grid)]
            self.weights = np.ones(self.unknowns.size)
        else:
            self.unknowns = np.arange(m * m)
            W = mass_weights(grid).ravel()
            rg = np.zeros(m * m)
            rg[_boundary_flat(grid)] = np.broadcast_to(np.asarray(bc.robin_gamma, dtype=float),
                                                       (grid.n_boundary,))
            A = K + sp.diags(W * self.absorption + rg / grid.h)
            self.weights = W
        self.matrix = A.tocsc()
        self.is_complex = np.iscomplexobj(self.matrix.data)

    @cached_property
    def _lu(self):
        A = self.matrix.astype(complex) if self.is_complex else self.matrix
        return spla.splu(A)

    def rhs(self, source: np.ndarray | None, data: np.ndarray | None) -> np.ndarray:
        """Right-hand side for padded ``source`` and boundary ``data`` (ring order)."""
        g = self.grid
        nb = g.n_boundary
        data = np.zeros(nb, dtype=complex) if data is None else np.asarray(data, dtype=complex)
        if self.bc.kind == "dirichlet":
            f = np.zeros(g.size, dtype=complex) if source is None else \
                np.asarray(source).reshape(g.n + 2, g.n + 2)[1:-1, 1:-1].ravel().astype(complex)
            return f - self._K_ib @ data
        m = g.n + 2
        f = np.zeros(m * m, dtype=complex) if source is None else np.asarray(source, dtype=complex).ravel()
        b = self.weights * f
        b[_boundary_flat(g)] += data / g.h
        return b

    def solve_raw(self, b: np.ndarray) -> np.ndarray:
        """Solve ``A x = b`` for one or several right-hand sides with a residual check."""
        b = np.asarray(b)
        cplx = self.is_complex or np.iscomplexobj(b)
        if cplx and not self.is_complex:
            x = self._lu.solve(np.ascontiguousarray(b.real)) + 1j * self._lu.solve(np.ascontiguousarray(b.imag))
        else:
            x = self._lu.solve(b)
        r = self.matrix @ x - b
        bn = np.linalg.norm(b)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("non-finite solution")
        if bn > 0 and np.linalg.norm(r) > RESIDUAL_TOL * bn:
            rel = np.linalg.norm(r) / bn
            # one step of iterative refinement before giving up
            x = x - (self._lu.solve(r) if self.is_complex or not np.iscomplexobj(r)
                     else self._lu.solve(np.ascontiguousarray(r.real)) + 1j * self._lu.solve(np.ascontiguousarray(r.imag)))
            r = self.matrix @ x - b
            if np.linalg.norm(r) > RESIDUAL_TOL * bn:
                raise SingularSystemError(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL}")
        return x

    def to_field(self, x: np.ndarray, data: np.ndarray | None) -> ScalarField:
        g = self.grid
        if self.bc.kind == "dirichlet":
            bv = np.zeros(g.n_boundary, dtype=complex) if data is None else np.asarray(data, dtype=complex)
            return ScalarField(g, x.reshape(g.n, g.n), bv)
        full = x.reshape(g.n + 2, g.n + 2)
        return ScalarField.from_padded(g, full)

    def solve(self, source: np.ndarray | None = None, data: np.ndarray | None = None) -> ScalarField:
        x = self.solve_raw(self.rhs(source, data))
        return self.to_field(x, data if self.bc.kind == "dirichlet" else None)

    def apply_padded(self, u_padded: np.ndarray) -> np.ndarray:
        """Operator applied to a padded field, returned on the interior (flat)."""
        g = self.grid
        y = self.K @ np.asarray(u_padded).ravel() + self.absorption * np.asarray(u_padded).ravel()
        return y[_interior_flat(g)]

    def flux_derivative(self, rho_padded: np.ndarray, u_padded: np.ndarray) -> np.ndarray:
        """``(dK/ds)[rho] u`` on the padded lattice; ``rho`` may carry a trailing batch axis."""
        E = edges(self.grid)
        du = E.D @ np.asarray(u_padded).ravel()
        r = np.asarray(rho_padded)
        m2 = (self.grid.n + 2) ** 2
        batched = r.ndim == 2 and r.shape[0] == m2
        r = r if batched else r.reshape(m2, 1)
        c = (self.kappa * du)[:, None] * (E.S @ r)
        out = E.D.T @ c
        return out if batched else out[:, 0]


def _padded(f: ScalarField | None, grid: Grid) -> np.ndarray | None:
    if f is None:
        return None
    if f.grid != grid:
        raise GridMismatchError("coefficient grid mismatch")
    return f.padded()


def schrodinger_operator(coeffs: CoefficientSet, bc: BoundaryCondition = DIRICHLET) -> EllipticOperator:
    if coeffs.mu is None:
        raise ValueError("mu is required")
    g = coeffs.grid
    return EllipticOperator(g, None, np.exp(_padded(coeffs.mu, g)), bc)


def conductivity_operator(coeffs: CoefficientSet) -> EllipticOperator:
    if coeffs.sigma is None:
        raise ValueError("sigma is required")
    g = coeffs.grid
    return EllipticOperator(g, _padded(coeffs.sigma, g), None, DIRICHLET)


def diffusion_operator(coeffs: CoefficientSet) -> EllipticOperator:
    if coeffs.sigma is None or coeffs.gamma is None:
        raise ValueError("sigma and gamma are required")
    g = coeffs.grid
    return EllipticOperator(g, _padded(coeffs.sigma, g), np.exp(_padded(coeffs.gamma, g)), DIRICHLET)


def _source(source: ScalarField | None, grid: Grid) -> np.ndarray | None:
    if source is None:
        return None
    if source.grid != grid:
        raise GridMismatchError("source grid mismatch")
    return source.padded()


def solve_schrodinger(coeffs: CoefficientSet, bc: BoundaryCondition,
                      source: ScalarField | None = None) -> ScalarField:
    """Solve ``(-Δ + e^mu) u = f`` with the given boundary condition."""
    op = schrodinger_operator(coeffs, bc)
    return op.solve(_source(source, op.grid), bc.boundary_data(op.grid))


def solve_conductivity(coeffs: CoefficientSet, dirichlet_f: np.ndarray) -> ScalarField:
    """Solve ``-div(e^sigma grad u) = 0`` with ``u = f`` on the boundary."""
    op = conductivity_operator(coeffs)
    return op.solve(None, np.asarray(dirichlet_f, dtype=complex))


def solve_diffusion(coeffs: CoefficientSet, dirichlet_f: np.ndarray) -> ScalarField:
    """Solve ``-div(e^sigma grad u) + e^gamma u = 0`` with ``u = f`` on the boundary."""
    op = diffusion_operator(coeffs)
    return op.solve(None, np.asarray(dirichlet_f, dtype=complex))


def _padded_node(grid: Grid, node) -> tuple[int, int]:
    """Normalize a node spec: ring position (int) or padded ``(i, j)``."""
    if isinstance(node, (int, np.integer)):
        I, J = grid.boundary_index
        return int(I[node]), int(J[node])
    i, j = node
    return int(i), int(j)


def impulse_response(coeffs: CoefficientSet, bc: BoundaryCondition, node) -> ScalarField:
    """Solve with a discrete delta (unit impulse over the node's cell area) at a padded node.

    For Dirichlet problems the node must be interior.  The symmetric scaled
    system makes the responses reciprocal: response of ``a`` read at ``b``
    equals response of ``b`` read at ``a``.
    """
    op = schrodinger_operator(coeffs, bc.homogeneous())
    g = op.grid
    i, j = _padded_node(g, node)
    m = g.n + 2
    flat = i * m + j
    pos = np.flatnonzero(op.unknowns == flat)
    if pos.size == 0:
        raise ValueError(f"node ({i}, {j}) is not an unknown of the {bc.kind} problem")
    b = np.zeros(op.unknowns.size)
    b[pos[0]] = 1.0 / g.h**2
    return op.to_field(op.solve_raw(b), None)


def greens_convention(bc: BoundaryCondition) -> str:
    if bc.kind == "robin":
        return "robin: impulse 1/h^2 at the boundary node eta of the symmetric scaled system"
    return "dirichlet: impulse 1/h^2 at the interior node adjacent to eta (inward neighbour)"


def inward_neighbour(grid: Grid, i: int, j: int) -> tuple[int, int]:
    return min(max(i, 1), grid.n), min(max(j, 1), grid.n)


def greens_column(coeffs: CoefficientSet, bc: BoundaryCondition, eta) -> ScalarField:
    """Return ``xi -> G_mu(eta, xi)`` for a boundary node ``eta``.

    Args:
        coeffs: must carry ``mu``.
        bc: the homogeneous condition of the Green's problem.
        eta: ring position or padded ``(i, j)`` of a boundary node.
    """
    g = coeffs.grid
    i, j = _padded_node(g, eta)
    if not (0 <= i <= g.n + 1 and 0 <= j <= g.n + 1) or not g.boundary_mask[i, j]:
        raise ValueError(f"eta=({i}, {j}) is not a boundary node")
    if bc.kind == "dirichlet":
        node = inward_neighbour(g, i, j)
        log.info("greens_column convention: %s", greens_convention(bc))
    else:
        node = (i, j)
    return impulse_response(coeffs, bc, node)


def laplacian_inverse_dirichlet(source: ScalarField) -> ScalarField:
    """Solve ``Δw = source`` with ``w = 0`` on the boundary."""
    g = source.grid
    op = dirichlet_laplacian(g)
    x = op.solve_raw(-source.values.ravel().astype(complex))
    return ScalarField(g, x.reshape(g.n, g.n), np.zeros(g.n_boundary))


_LAP_CACHE: dict[Grid, EllipticOperator] = {}


def dirichlet_laplacian(grid: Grid) -> EllipticOperator:
    """Factorized ``-Δ`` with homogeneous Dirichlet conditions (cached per grid)."""
    op = _LAP_CACHE.get(grid)
    if op is None:
        op = _LAP_CACHE[grid] = EllipticOperator(grid, None, None, DIRICHLET)
    return op
