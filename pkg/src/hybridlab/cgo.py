"""Complex geometrical optics solutions on the grid.

The remainder ``psi`` solves ``Δψ + 2ρ·∇ψ - qψ = q`` with ``q = e^{-σ/2} Δ e^{σ/2}``
(plus ``e^{γ-σ}`` for the diffusion equation), so a vanishing ``σ`` gives
``ψ = 0`` exactly.  Values are kept in factored form:
growth exponent, phase and remainder, exponentiated only on output.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import SingularSystemError, conductivity_operator, CoefficientSet
from .grid import Grid, ScalarField, VectorField, gradient, laplacian

_TOL = 1e-14
_EXP_MAX = 700.0


@dataclass(frozen=True)
class CgoVector:
    """``rho = (|rho| / sqrt 2)(k + i k_perp)`` with orthonormal real ``k``, ``k_perp``."""

    rho_mag: float
    k: tuple[float, float]
    k_perp: tuple[float, float]

    def __post_init__(self):
        k, kp = np.asarray(self.k, float), np.asarray(self.k_perp, float)
        if abs(k @ k - 1) > _TOL or abs(kp @ kp - 1) > _TOL or abs(k @ kp) > _TOL:
            raise ValueError("k and k_perp must be orthonormal")
        if not self.rho_mag > 0:
            raise ValueError("rho_mag must be positive")

    @property
    def rho(self) -> np.ndarray:
        return self.rho_mag / np.sqrt(2.0) * (np.asarray(self.k, float) + 1j * np.asarray(self.k_perp, float))

    def self_dot(self) -> complex:
        r = self.rho
        return complex(r @ r)


def make_rho(rho_mag: float, k=(0.0, 1.0), k_perp=(1.0, 0.0)) -> CgoVector:
    return CgoVector(float(rho_mag), tuple(map(float, k)), tuple(map(float, k_perp)))


@dataclass(frozen=True)
class CgoSolution:
    """``u = e^{ρ·x - σ/2}(1 + ψ)`` and ``∇u = e^{ρ·x - σ/2}(ρ + φ)`` on the padded lattice."""

    rho: CgoVector
    sigma: ScalarField
    psi: ScalarField
    growth: np.ndarray
    phase: np.ndarray
    residual: float
    gamma: ScalarField | None = None

    @property
    def grid(self) -> Grid:
        return self.psi.grid

    @cached_property
    def envelope(self) -> np.ndarray:
        """Padded ``e^{ρ·x - σ/2}``."""
        return np.exp(self.growth - 0.5 * self.sigma.padded().real) * np.exp(1j * self.phase)

    @cached_property
    def u(self) -> ScalarField:
        return ScalarField.from_padded(self.grid, self.envelope * (1.0 + self.psi.padded()))

    @cached_property
    def phi(self) -> VectorField:
        """``φ = -(∇σ/2)(1 + ψ) + ρψ + ∇ψ`` with centered differences of ``σ`` and ``ψ``."""
        g = self.grid
        ds = gradient(self.sigma)
        dp = gradient(self.psi)
        psi = self.psi.values
        r = self.rho.rho
        c1 = -0.5 * ds.d1.values * (1 + psi) + r[0] * psi + dp.d1.values
        c2 = -0.5 * ds.d2.values * (1 + psi) + r[1] * psi + dp.d2.values
        return VectorField.from_arrays(g, c1, c2)

    @cached_property
    def grad_u(self) -> VectorField:
        env = self.envelope[1:-1, 1:-1]
        r = self.rho.rho
        return VectorField.from_arrays(self.grid, env * (r[0] + self.phi.d1.values),
                                       env * (r[1] + self.phi.d2.values))

    def sup_rho_psi(self) -> float:
        return float(self.rho.rho_mag * np.abs(self.psi.values).max())

    def sup_phi(self) -> float:
        return float(np.sqrt(np.abs(self.phi.d1.values) ** 2 + np.abs(self.phi.d2.values) ** 2).max())

    def conductivity_residual(self) -> float:
        """``max|div(e^σ ∇u)| / (|ρ|^2 max|u|)`` for the discrete divergence-form operator."""
        op = conductivity_operator(CoefficientSet(sigma=self.sigma))
        r = op.apply_padded(self.u.padded())
        return float(np.abs(r).max() / (self.rho.rho_mag**2 * np.abs(self.u.values).max()))

    def schrodinger_residual(self) -> float:
        """Same measure for ``w = e^{σ/2} u`` against ``Δw - qw = 0``."""
        g = self.grid
        w = ScalarField.from_padded(g, np.exp(0.5 * self.sigma.padded()) * self.u.padded())
        q = _potential(self.sigma, self.gamma)
        r = laplacian(w).values - q * w.values
        return float(np.abs(r).max() / (self.rho.rho_mag**2 * np.abs(w.values).max()))


def _potential(sigma: ScalarField, gamma: ScalarField | None) -> np.ndarray:
    g = sigma.grid
    half = ScalarField.from_padded(g, np.exp(0.5 * sigma.padded()))
    q = laplacian(half).values / half.values
    if gamma is not None:
        q = q + np.exp(gamma.values - sigma.values)
    return q


def _diff_matrices(n: int, sign: float) -> tuple[sp.spmatrix, sp.spmatrix]:
    """1-D second-difference and centered-shift matrices; ``sign`` is the wrap factor (0 for Dirichlet)."""
    T = sp.lil_matrix(sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], shape=(n, n)))
    S = sp.lil_matrix(sp.diags([np.ones(n - 1), -np.ones(n - 1)], [1, -1], shape=(n, n)))
    if sign:
        T[0, n - 1] = T[n - 1, 0] = sign
        S[n - 1, 0] = sign
        S[0, n - 1] = -sign
    return T.tocsr(), S.tocsr()


def _remainder_system(q: np.ndarray, r: np.ndarray, h: float, sign: float) -> sp.spmatrix:
    m = q.shape[0]
    I = sp.identity(m, format="csr")
    T, S = _diff_matrices(m, sign)
    lap = (sp.kron(T, I) + sp.kron(I, T)) / h**2
    conv = (r[0] * sp.kron(S, I) + r[1] * sp.kron(I, S)) / h
    return (lap + conv - sp.diags(q.ravel())).tocsc().astype(complex)


def make_cgo(sigma: ScalarField, rho: CgoVector, gamma: ScalarField | None = None,
             remainder: str = "antiperiodic") -> CgoSolution:
    """Build a CGO solution for ``-div(e^σ ∇u) = 0`` (or ``+ e^γ u`` when ``gamma`` is given).

    ``remainder="antiperiodic"`` solves the remainder equation on a torus of
    twice the side with antiperiodic wrap, whose Fourier modes avoid the
    zeros of ``-|ξ|^2 + 2iρ·ξ`` and so give ``|ψ| = O(1/|ρ|)``.  The potential
    is taken as zero outside the domain, so the equation holds exactly at
    every interior node.  ``remainder="dirichlet"`` solves on the domain
    itself with ``ψ = 0`` on the boundary.
    """
    if remainder not in ("antiperiodic", "dirichlet"):
        raise ValueError(f"unknown remainder mode {remainder!r}")
    g = sigma.grid
    n, h = g.n, g.h
    if rho.rho_mag > 200.0 / h:
        raise OverflowError(f"|rho|={rho.rho_mag} exceeds 200/h")
    X1, X2 = g.padded_coords
    k, kp = np.asarray(rho.k), np.asarray(rho.k_perp)
    a = rho.rho_mag / np.sqrt(2.0)
    growth = a * (k[0] * X1 + k[1] * X2)
    phase = a * (kp[0] * X1 + kp[1] * X2)
    if np.abs(growth).max() > _EXP_MAX:
        raise OverflowError("e^{rho.x} is not representable on this domain")
    q_int = _potential(sigma, gamma)
    r = rho.rho
    if remainder == "dirichlet":
        q = q_int
        sign = 0.0
        off = 0
    else:
        m = 2 * (n + 1)
        off = (n + 1) // 2
        q = np.zeros((m, m), dtype=complex)
        q[off:off + n, off:off + n] = q_int
        sign = -1.0
    A = _remainder_system(q, r, h, sign)
    b = q.ravel().astype(complex)
    if np.all(b == 0):
        full = np.zeros(q.shape, dtype=complex)
        res = 0.0
    else:
        x = spla.splu(A).solve(b)
        res = float(np.linalg.norm(A @ x - b) / np.linalg.norm(b))
        if not np.all(np.isfinite(x)) or res > 1e-8:
            raise SingularSystemError(f"CGO remainder solve residual {res:.3e}")
        full = x.reshape(q.shape)
    if remainder == "dirichlet":
        padded = np.zeros((n + 2, n + 2), dtype=complex)
        padded[1:-1, 1:-1] = full
    else:
        padded = full[off - 1:off + n + 1, off - 1:off + n + 1]
    psi_f = ScalarField.from_padded(g, padded)
    return CgoSolution(rho, sigma, psi_f, growth, phase, res, gamma)


@dataclass(frozen=True)
class ImagParts:
    u_I: ScalarField
    f_I: np.ndarray
    grad_u_I: VectorField
    grad_closed_form: VectorField


def cgo_imag_parts(sol: CgoSolution) -> ImagParts:
    """Imaginary parts of ``u`` and ``∇u``, the boundary trace, and the closed-form leading gradient."""
    g = sol.grid
    uI = ScalarField(g, sol.u.values.imag, sol.u.boundary_values.imag)
    gu = sol.grad_u
    gI = VectorField.from_arrays(g, gu.d1.values.imag, gu.d2.values.imag)
    a = sol.rho.rho_mag / np.sqrt(2.0)
    k, kp = np.asarray(sol.rho.k), np.asarray(sol.rho.k_perp)
    G = sol.growth[1:-1, 1:-1]
    th = sol.phase[1:-1, 1:-1]
    amp = a * np.exp(G)
    cf = VectorField.from_arrays(g, amp * (np.cos(th) * kp[0] + np.sin(th) * k[0]),
                                 amp * (np.cos(th) * kp[1] + np.sin(th) * k[1]))
    return ImagParts(uI, uI.boundary_values.real.copy(), gI, cf)


def gradbigger_ratio(sol: CgoSolution, u: ScalarField, mask: np.ndarray) -> float:
    """``sup_x |u_I ∇u| / |u ∇u_I|`` over ``mask``: the relative size of the dropped term."""
    parts = cgo_imag_parts(sol)
    du = gradient(u)
    uI = parts.u_I.values
    num = np.abs(uI) * np.sqrt(np.abs(du.d1.values) ** 2 + np.abs(du.d2.values) ** 2)
    gI = parts.grad_u_I
    den = np.abs(u.values) * np.sqrt(np.abs(gI.d1.values) ** 2 + np.abs(gI.d2.values) ** 2)
    return float((num[mask] / den[mask]).max())


@dataclass(frozen=True)
class PairField:
    V: VectorField
    leading: VectorField
    simplified: VectorField


def cgo_pair_fields(pairs: list[tuple[CgoSolution, CgoSolution]]) -> list[PairField]:
    """``V = u2 ∇u1 - u1 ∇u2`` from the imaginary parts of each CGO pair.

    ``leading`` is the unsimplified top-order term built from the
    closed-form gradients; ``simplified`` is its equal-magnitude reduction
    ``e^{(ρ1+ρ2)k·x/√2} sin(θ2 - θ1) k_perp`` scaled by ``ρ1/√2``.
    """
    out = []
    for s1, s2 in pairs:
        if s1.rho.k != s2.rho.k or s1.rho.k_perp != s2.rho.k_perp:
            raise ValueError("pairs must share k and k_perp")
        p1, p2 = cgo_imag_parts(s1), cgo_imag_parts(s2)
        g = s1.grid
        u1, u2 = p1.u_I.values, p2.u_I.values
        V = VectorField.from_arrays(g, u2 * p1.grad_u_I.d1.values - u1 * p2.grad_u_I.d1.values,
                                    u2 * p1.grad_u_I.d2.values - u1 * p2.grad_u_I.d2.values)
        G1, G2 = s1.growth[1:-1, 1:-1], s2.growth[1:-1, 1:-1]
        t1, t2 = s1.phase[1:-1, 1:-1], s2.phase[1:-1, 1:-1]
        l1 = np.exp(G1) * np.sin(t1)
        l2 = np.exp(G2) * np.sin(t2)
        c1, c2 = p1.grad_closed_form, p2.grad_closed_form
        lead = VectorField.from_arrays(g, l2 * c1.d1.values - l1 * c2.d1.values,
                                       l2 * c1.d2.values - l1 * c2.d2.values)
        kp = np.asarray(s1.rho.k_perp)
        a1 = s1.rho.rho_mag / np.sqrt(2.0)
        simp = a1 * np.exp(G1 + G2) * np.sin(t2 - t1)
        out.append(PairField(V, lead, VectorField.from_arrays(g, simp * kp[0], simp * kp[1])))
    return out
