"""Explicit linearized reconstructions and singular-value probes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import elliptic
from .grid import DomainMasks, Grid, GridMismatchError, ScalarField
from .io import csv_text
from .linearization import DenseOperator

KERNEL_TOL = 1e-8


@dataclass(frozen=True)
class SpectrumReport:
    singular_values: np.ndarray
    tol: float

    @property
    def sigma_max(self) -> float:
        return float(self.singular_values[0])

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1])

    @property
    def numerical_kernel_dim(self) -> int:
        return int(np.sum(self.singular_values <= self.tol * self.sigma_max))

    @property
    def condition(self) -> float:
        keep = self.singular_values[self.singular_values > self.tol * self.sigma_max]
        return float(keep[0] / keep[-1])

    def csv(self, comment: str | None = None) -> str:
        return csv_text(["index", "sigma"], [[i, float(s)] for i, s in enumerate(self.singular_values)], comment)


@dataclass(frozen=True)
class ReconResult:
    method: str
    rho_hat: ScalarField
    nu_hat: ScalarField | None = None
    rel_l2_error: float | None = None
    nu_rel_l2_error: float | None = None
    kernel_dim: int | None = None
    extras: dict = field(default_factory=dict)

    def summary(self) -> str:
        err = "" if self.rel_l2_error is None else repr(self.rel_l2_error)
        kd = "" if self.kernel_dim is None else str(self.kernel_dim)
        return f"{self.method} {err} {kd}"


def rel_l2(a: np.ndarray, b: np.ndarray) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def _restrict(masks: DomainMasks, values: np.ndarray) -> ScalarField:
    v = np.where(masks.omega_prime, values, 0.0)
    return ScalarField(masks.grid, v, np.zeros(masks.grid.n_boundary))


# ---------------------------------------------------------------- p < 1 boundary-value inversion

def _extrapolate_cubic(values: np.ndarray) -> np.ndarray:
    """Pad an interior array with cubic extrapolation along each axis (corners from the x1 pass)."""
    v = np.asarray(values)
    n = v.shape[0]
    p = np.zeros((n + 2, n + 2), dtype=v.dtype)
    p[1:-1, 1:-1] = v
    p[0, 1:-1] = 4 * v[0] - 6 * v[1] + 4 * v[2] - v[3]
    p[-1, 1:-1] = 4 * v[-1] - 6 * v[-2] + 4 * v[-3] - v[-4]
    p[:, 0] = 4 * p[:, 1] - 6 * p[:, 2] + 4 * p[:, 3] - p[:, 4]
    p[:, -1] = 4 * p[:, -2] - 6 * p[:, -3] + 4 * p[:, -4] - p[:, -5]
    return p


def _lap_padded(p: np.ndarray, h: float) -> np.ndarray:
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4 * p[1:-1, 1:-1]) / h**2


def a0x1_operator(grid: Grid, p: float, stencil: str = "compact") -> sp.spmatrix:
    """Dirichlet ``Δ_h - p ∂1²`` on the interior.

    ``compact`` uses the 5-point second difference, an independent O(h^2)
    discretization of the boundary-value problem.  ``wide`` uses ``D1 D1``
    with the centered ``D1`` of the reduced data, which inverts that discrete
    map almost exactly (errors then come from boundary extrapolation only).
    """
    n, h = grid.n, grid.h
    I = sp.identity(n, format="csr")
    T = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], shape=(n, n)) / h**2
    if stencil == "compact":
        D11 = T
    elif stencil == "wide":
        D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n)) / (2 * h)
        D11 = D @ D
    else:
        raise ValueError(f"unknown stencil {stencil!r}")
    return (sp.kron(T, I) + sp.kron(I, T) - p * sp.kron(D11, I)).tocsc()


def invert_A0x1(data: ScalarField, p: float, masks: DomainMasks | None = None,
                truth: ScalarField | None = None, stencil: str = "compact") -> ReconResult:
    """Solve ``Δρ - p ∂1²ρ = Δ(data)``, ``ρ = 0`` on the boundary, and restrict to Omega'.

    ``Δ(data)`` needs data on the boundary ring; it is filled by cubic
    extrapolation from the interior.
    """
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    g = data.grid
    rhs = _lap_padded(_extrapolate_cubic(data.values), g.h)
    A = a0x1_operator(g, p, stencil)
    rho = spla.splu(A.astype(complex)).solve(rhs.ravel().astype(complex)).reshape(g.n, g.n)
    if masks is not None:
        out = _restrict(masks, rho)
    else:
        out = ScalarField(g, rho, np.zeros(g.n_boundary))
    err = None
    if truth is not None:
        sel = masks.omega_prime if masks is not None else np.ones((g.n, g.n), bool)
        err = rel_l2(out.values[sel], truth.values[sel])
    return ReconResult("A0X1_BVP", out, rel_l2_error=err)


# ---------------------------------------------------------------- QPAT at the lambda point

def qpat_boundary_data(grid: Grid, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``f11 = e^{λx1}``, ``f12 = e^{λx2}``, ``f22 = e^{-λx2}`` on the boundary ring."""
    return (grid.eval_boundary(lambda x, y: np.exp(lam * x)),
            grid.eval_boundary(lambda x, y: np.exp(lam * y)),
            grid.eval_boundary(lambda x, y: np.exp(-lam * y)))


def qpat_lambda_coefficients(grid: Grid, lam: float):
    """``σ0 = -2 log λ`` (so ``e^σ0 = λ^-2``) and ``γ0 = 0`` as padded-constant fields."""
    from .elliptic import CoefficientSet
    m = grid.n + 2
    sig = ScalarField.from_padded(grid, np.full((m, m), -2.0 * np.log(lam)))
    gam = ScalarField.zeros(grid)
    return CoefficientSet(sigma=sig, gamma=gam)


def _apply_L(A: np.ndarray, grid: Grid, lam: float) -> np.ndarray:
    p = np.zeros((grid.n + 2, grid.n + 2), dtype=complex)
    p[1:-1, 1:-1] = A
    return -_lap_padded(p, grid.h) / lam**2 + A


def _d(arr: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered difference of interior columns ``(n, n, k)`` with zero boundary values."""
    p = np.pad(arr, [(1, 1), (1, 1)] + [(0, 0)] * (arr.ndim - 2))
    if axis == 0:
        return (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h)
    return (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)


def _lap_cols(arr: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(arr, [(1, 1), (1, 1)] + [(0, 0)] * (arr.ndim - 2))
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4 * p[1:-1, 1:-1]) / h**2


@dataclass(frozen=True)
class QpatLambdaSystem:
    """The eliminated first-order ``ρ``-system on Omega' columns."""

    grid: Grid
    lam: float
    matrix: np.ndarray
    cols: np.ndarray

    def rhs(self, LA11, LA12, LA22) -> np.ndarray:
        g, lam = self.grid, self.lam
        n = g.n
        X1, X2 = g.coords
        a1 = np.exp(lam * (X1 - X2))
        a2 = np.exp(-2 * lam * X2)
        lap = elliptic.dirichlet_laplacian(g)
        w = -lap.solve_raw((lam * LA12).ravel()).reshape(n, n)
        r1 = lam * LA11 - _lap_cols(a1 * w, g.h)
        r2 = lam * LA22 - _lap_cols(a2 * w, g.h)
        return np.concatenate([r1.ravel(), r2.ravel()])


def qpat_lambda_system(masks: DomainMasks, lam: float) -> QpatLambdaSystem:
    """Substitute the ν-elimination into the ``f11`` and ``f22`` equations (each times λ).

    Row block 1: ``e^{λx1}(D1 + λ)ρ - Δ(e^{λ(x1-x2)} Δ^{-1} e^{λx2}(D2 + λ)ρ)``;
    row block 2: ``-e^{-λx2}(D2 - λ)ρ - Δ(e^{-2λx2} Δ^{-1} e^{λx2}(D2 + λ)ρ)``.
    """
    g = masks.grid
    n, h = g.n, g.h
    X1, X2 = g.coords
    cols = masks.prime_index
    k = cols.size
    E = np.zeros((n * n, k))
    E[cols, np.arange(k)] = 1.0
    R = E.reshape(n, n, k)
    e1p = np.exp(lam * X1)[..., None]
    e2p = np.exp(lam * X2)[..., None]
    e2m = np.exp(-lam * X2)[..., None]
    a1 = np.exp(lam * (X1 - X2))[..., None]
    a2 = np.exp(-2 * lam * X2)[..., None]
    D1R, D2R = _d(R, h, 0), _d(R, h, 1)
    B = e2p * (D2R + lam * R)
    lap = elliptic.dirichlet_laplacian(g)
    W = -lap.solve_raw(B.reshape(n * n, k)).reshape(n, n, k)
    row1 = e1p * (D1R + lam * R) - _lap_cols(a1 * W, h)
    row2 = -e2m * (D2R - lam * R) - _lap_cols(a2 * W, h)
    M = np.concatenate([row1.reshape(n * n, k), row2.reshape(n * n, k)])
    return QpatLambdaSystem(g, lam, M, cols)


def qpat_lambda_reconstruct(lam: float, A11: ScalarField, A12: ScalarField, A22: ScalarField,
                            masks: DomainMasks, truth: tuple[ScalarField, ScalarField] | None = None,
                            system: QpatLambdaSystem | None = None) -> ReconResult:
    """Recover ``(ρ, ν)`` from the three linearized QPAT data at the λ point."""
    if not 0 < lam <= 0.5:
        raise ValueError(f"lambda must lie in (0, 0.5], got {lam}")
    g = masks.grid
    for a in (A11, A12, A22):
        if a.grid != g:
            raise GridMismatchError("data grid mismatch")
    n, h = g.n, g.h
    LA = [_apply_L(a.values, g, lam) for a in (A11, A12, A22)]
    sysm = system or qpat_lambda_system(masks, lam)
    rhs = sysm.rhs(*LA)
    coef, *_ = np.linalg.lstsq(sysm.matrix, rhs.astype(complex), rcond=None)
    rho = np.zeros(n * n, dtype=complex)
    rho[sysm.cols] = coef
    rho = rho.reshape(n, n)
    X1, X2 = g.coords
    e2p = np.exp(lam * X2)
    src = lam * e2p * (_d(rho, h, 1) + lam * rho) - lam**2 * LA[1]
    W = -elliptic.dirichlet_laplacian(g).solve_raw(src.ravel()).reshape(n, n)
    nu = W / e2p
    rho_f, nu_f = _restrict(masks, rho), _restrict(masks, nu)
    err = nerr = None
    if truth is not None:
        sel = masks.omega_prime
        err = rel_l2(rho_f.values[sel], truth[0].values[sel])
        nerr = rel_l2(nu_f.values[sel], truth[1].values[sel])
    res = float(np.linalg.norm(sysm.matrix @ coef - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return ReconResult("QPAT_LAMBDA", rho_f, nu_f, err, nerr, extras={"lsq_residual": res})


def qpat_principal_part(grid: Grid, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Second-order coefficients of ``D1(row block 1) - D2(row block 2)``.

    The local part of ``Δ(a Δ^{-1} b ∂ρ)`` is ``a b ∂ρ``; the remaining terms
    are of lower order.  The factors are taken from the same exponentials the
    assembled system uses.
    """
    X1, X2 = grid.coords
    e1p, e2p, e2m = np.exp(lam * X1), np.exp(lam * X2), np.exp(-lam * X2)
    a1, a2 = np.exp(lam * (X1 - X2)), np.exp(-2 * lam * X2)
    c11 = e1p
    c12 = -a1 * e2p
    c22 = e2m + a2 * e2p
    return c11, c12, c22


def a_lambda_printed(grid: Grid, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients of ``e^{λx1}∂1² - e^{λx2}∂1∂2 + 2e^{-λx2}∂2²`` as stated."""
    X1, X2 = grid.coords
    return np.exp(lam * X1), -np.exp(lam * X2), 2 * np.exp(-lam * X2)


def spot_check_principal(masks: DomainMasks, lam: float, seed: int = 0, n_spots: int = 5,
                         reference: str = "printed") -> dict:
    """Compare assembled principal coefficients with a reference at seeded random Omega' nodes."""
    g = masks.grid
    rng = np.random.default_rng(seed)
    nodes = rng.choice(masks.prime_index, size=n_spots, replace=False)
    got = [c.ravel()[nodes] for c in qpat_principal_part(g, lam)]
    if reference == "printed":
        ref = [c.ravel()[nodes] for c in a_lambda_printed(g, lam)]
    else:
        X1, X2 = g.coords
        ref = [np.exp(lam * X1).ravel()[nodes], -np.exp(lam * X1).ravel()[nodes],
               2 * np.exp(-lam * X2).ravel()[nodes]]
    errs = [np.abs(a - b) / np.abs(b) for a, b in zip(got, ref)]
    worst = float(max(e.max() for e in errs))
    return {"nodes": nodes, "rel_errors": errs, "max_rel_error": worst}


# ---------------------------------------------------------------- spectra

def sine_trial_basis(masks: DomainMasks, modes: int = 8) -> np.ndarray:
    """Orthonormalized ``sin(aπs) sin(bπt)`` modes on the Omega' bounding box, ``a, b = 1..modes``."""
    g = masks.grid
    X1, X2 = g.coords
    sel = masks.prime_index
    x1, x2 = X1.ravel()[sel], X2.ravel()[sel]
    lo1, hi1, lo2, hi2 = x1.min(), x1.max(), x2.min(), x2.max()
    # nodes on the box edge are kept so the box is the same physical square on every grid
    s = (x1 - lo1 + g.h) / (hi1 - lo1 + 2 * g.h)
    t = (x2 - lo2 + g.h) / (hi2 - lo2 + 2 * g.h)
    cols = [np.sin(a * np.pi * s) * np.sin(b * np.pi * t) for a in range(1, modes + 1) for b in range(1, modes + 1)]
    Q, _ = np.linalg.qr(np.stack(cols, axis=1))
    return Q


def svd_probe(op: DenseOperator | np.ndarray, tol: float = KERNEL_TOL,
              trial: np.ndarray | None = None) -> SpectrumReport:
    """Singular values in the discrete L2 norms; ``trial`` restricts to an orthonormal column basis.

    Rows and columns carry the same ``h^2`` weight, so the weighted singular
    values equal the plain ones of the stored matrix.
    """
    M = op.matrix if isinstance(op, DenseOperator) else np.asarray(op)
    if trial is not None:
        if isinstance(op, DenseOperator) and op.col_block.max() > 0:
            raise ValueError("trial bases apply to single-block operators")
        M = M @ trial
    s = np.linalg.svd(M, compute_uv=False)
    return SpectrumReport(np.sort(s)[::-1], tol)


def svd_pinv_reconstruct(op: DenseOperator, data: np.ndarray, tol: float = KERNEL_TOL,
                         truth: np.ndarray | None = None) -> ReconResult:
    """Truncated-SVD solution of ``op x = data`` (data ordered like ``op.row_map``)."""
    U, s, Vh = np.linalg.svd(op.matrix, full_matrices=False)
    keep = s > tol * s[0]
    coef = Vh[keep].conj().T @ ((U[:, keep].conj().T @ np.asarray(data)) / s[keep])
    g = op.grid
    vals = np.zeros(g.size, dtype=complex)
    b0 = op.col_block == 0
    vals[op.col_map[b0]] = coef[b0]
    rho = ScalarField(g, vals.reshape(g.n, g.n), np.zeros(g.n_boundary))
    nu = None
    if op.col_block.max() > 0:
        nv = np.zeros(g.size, dtype=complex)
        nv[op.col_map[~b0]] = coef[~b0]
        nu = ScalarField(g, nv.reshape(g.n, g.n), np.zeros(g.n_boundary))
    err = rel_l2(coef, np.asarray(truth)) if truth is not None else None
    return ReconResult("SVD_PINV", rho, nu, err, kernel_dim=int((~keep).sum()),
                       extras={"coefficients": coef})
