"""Principal symbols, ellipticity and spanning audits, and deformation sweeps.

Symbols are evaluated from discrete solutions at every Omega'' node (Omega'
for UMOT) against ``n_xi`` equispaced covector angles on the unit circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import elliptic
from .cgo import CgoVector, cgo_imag_parts, make_cgo, make_rho
from .elliptic import CoefficientSet
from .grid import DomainMasks, Grid, ScalarField, VectorField, cutoff_chi, gradient
from .io import csv_text

N_XI = 64
THRESHOLD = 1e-8


def xi_angles(n_xi: int = N_XI) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_xi) / n_xi


def unit_xi(n_xi: int = N_XI) -> tuple[np.ndarray, np.ndarray]:
    a = xi_angles(n_xi)
    return np.cos(a), np.sin(a)


@dataclass(frozen=True)
class SymbolSample:
    x: tuple[float, float]
    xi: tuple[float, float]
    value: complex | np.ndarray

    def __post_init__(self):
        if abs(np.hypot(*self.xi) - 1.0) > 1e-14:
            raise ValueError("xi must be a unit covector")


@dataclass(frozen=True)
class AuditReport:
    """Minimum of |symbol| (or smallest singular value) over the sampled ``(x, xi)``."""

    min_abs: float
    max_abs: float
    argmin_x: tuple[float, float]
    argmin_xi_angle: float
    samples: tuple[int, int]
    threshold: float
    verdict: str

    @property
    def ok(self) -> bool:
        return self.verdict in ("ELLIPTIC", "SPANNING", "COVERED")

    def row(self) -> list:
        return [self.min_abs, self.argmin_x[0], self.argmin_x[1], self.argmin_xi_angle, self.verdict]


def _report(vals: np.ndarray, xs: np.ndarray, angles: np.ndarray, rel: float, good: str, bad: str,
            relative: bool = True) -> AuditReport:
    """``vals`` has shape (n_x, n_xi) of nonnegative numbers."""
    vals = np.asarray(vals, dtype=float)
    flat = int(np.argmin(vals))
    ix, ia = np.unravel_index(flat, vals.shape)
    mn = float(vals[ix, ia])
    mx = float(vals.max())
    thr = rel * mx if relative else rel
    return AuditReport(mn, mx, (float(xs[ix, 0]), float(xs[ix, 1])), float(angles[ia]),
                       vals.shape, thr, good if mn >= thr and mx > 0 else bad)


def _nodes(masks: DomainMasks, region: str) -> np.ndarray:
    m = masks.omega_dprime if region == "dprime" else masks.omega_prime
    return m.ravel()


def _coords(masks: DomainMasks, sel: np.ndarray) -> np.ndarray:
    X1, X2 = masks.grid.coords
    return np.stack([X1.ravel()[sel], X2.ravel()[sel]], axis=1)


# ---------------------------------------------------------------- symbols

def aet_symbol(sigma, grad_u, p: float, xi) -> np.ndarray:
    """``e^{2σ/p}(2/p)(∇u·∇u - p(∇u·ξ)^2)`` with bilinear products; broadcasts."""
    g1, g2 = grad_u
    x1, x2 = xi
    gx = g1 * x1 + g2 * x2
    return np.exp(2.0 * np.asarray(sigma) / p) * (2.0 / p) * (g1 * g1 + g2 * g2 - p * gx * gx)


def cross_symbol(sigma, grad_u1, grad_u2, xi, variant: str = "exact") -> np.ndarray:
    """Symbol of the cross functional: ``e^{2σ}(c - 2(∇u1·ξ)(∇u2·ξ))``.

    ``c = 2 ∇u1·∇u2`` for the exact derivative, ``(∇u1·∇u2)^2`` for the
    printed data term.
    """
    a1, a2 = grad_u1
    b1, b2 = grad_u2
    x1, x2 = xi
    dot = a1 * b1 + a2 * b2
    c = 2.0 * dot if variant == "exact" else dot * dot
    return np.exp(2.0 * np.asarray(sigma)) * (c - 2.0 * (a1 * x1 + a2 * x2) * (b1 * x1 + b2 * x2))


def umot_symbol(mu0, u0, G0, chi) -> np.ndarray:
    """``-2 χ^2 e^{μ0} u0 G0`` (independent of the unit covector)."""
    return -2.0 * np.asarray(chi) ** 2 * np.exp(np.asarray(mu0)) * np.asarray(u0) * np.asarray(G0)


def qpat_symbol_block(u_vals: np.ndarray, grads: tuple[np.ndarray, np.ndarray], chi, xi):
    """Rows ``χ^2 (i ξ·∇u_j, u_j)`` for ``2J`` solutions.

    ``u_vals`` and each gradient component have shape ``(2J, ...)``.
    Returns the block of shape ``(..., 2J, 2)`` and the ``J`` determinants of
    consecutive row pairs.
    """
    u = np.asarray(u_vals)
    if u.shape[0] % 2:
        raise ValueError("need an even number 2J of solutions")
    c2 = np.asarray(chi) ** 2
    col0 = 1j * (grads[0] * xi[0] + grads[1] * xi[1]) * c2
    col1 = u * c2
    col0, col1 = np.broadcast_arrays(col0, col1)
    block = np.stack([col0, col1], axis=-1)
    block = np.moveaxis(block, 0, -2)
    dets = block[..., 0::2, 0] * block[..., 1::2, 1] - block[..., 0::2, 1] * block[..., 1::2, 0]
    return block, dets


@dataclass(frozen=True)
class BracketResult:
    vector: np.ndarray
    norm: float
    projected_norm: float


def bracket_check(k, k_perp, p: float, xi, theta: float) -> BracketResult:
    """``(k⊥ - p(ξ·k⊥)ξ) cos θ + (k - p(ξ·k)ξ) sin θ`` and its norm in the ``k, k⊥`` plane."""
    k, kp, xi = (np.asarray(v, float) for v in (k, k_perp, xi))
    if abs(np.linalg.norm(xi) - 1) > 1e-12:
        raise ValueError("xi must be a unit vector")
    v = (kp - p * (xi @ kp) * xi) * np.cos(theta) + (k - p * (xi @ k) * xi) * np.sin(theta)
    proj = np.array([v @ k, v @ kp])
    return BracketResult(v, float(np.linalg.norm(v)), float(np.linalg.norm(proj)))


# ---------------------------------------------------------------- audits

def _grads_at(u: ScalarField, sel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g = gradient(u)
    return g.d1.values.ravel()[sel], g.d2.values.ravel()[sel]


def audit_aet(coeffs: CoefficientSet, f, p: float, masks: DomainMasks, n_xi: int = N_XI,
              rel: float = THRESHOLD) -> AuditReport:
    u = elliptic.solve_conductivity(coeffs, f)
    sel = _nodes(masks, "dprime")
    g1, g2 = _grads_at(u, sel)
    s = coeffs.sigma.values.ravel()[sel]
    x1, x2 = unit_xi(n_xi)
    vals = np.abs(aet_symbol(s[:, None], (g1[:, None], g2[:, None]), p, (x1[None], x2[None])))
    return _report(vals, _coords(masks, sel), xi_angles(n_xi), rel, "ELLIPTIC", "NOT-ELLIPTIC")


def audit_umot(coeffs: CoefficientSet, u0: ScalarField, G0: ScalarField, masks: DomainMasks,
               rel: float = THRESHOLD) -> AuditReport:
    sel = _nodes(masks, "prime")
    chi = cutoff_chi(masks).values.ravel()[sel]
    vals = np.abs(umot_symbol(coeffs.mu.values.ravel()[sel], u0.values.ravel()[sel],
                              G0.values.ravel()[sel], chi))[:, None]
    return _report(vals, _coords(masks, sel), np.zeros(1), rel, "ELLIPTIC", "NOT-ELLIPTIC")


def _block_min_sv(u_list: Sequence[ScalarField], sel: np.ndarray, chi: np.ndarray, n_xi: int,
                  normalize: bool) -> np.ndarray:
    U = np.stack([u.values.ravel()[sel] for u in u_list])
    G = [gradient(u) for u in u_list]
    D1 = np.stack([g.d1.values.ravel()[sel] for g in G])
    D2 = np.stack([g.d2.values.ravel()[sel] for g in G])
    x1, x2 = unit_xi(n_xi)
    block, _ = qpat_symbol_block(U[..., None], (D1[..., None], D2[..., None]), chi[:, None],
                                 (x1[None, None], x2[None, None]))
    sv = np.linalg.svd(block, compute_uv=False)
    mins = sv[..., -1]
    if normalize:
        top = sv[..., 0].max(axis=1, keepdims=True)
        mins = np.divide(mins, top, out=np.zeros_like(mins), where=top > 0)
    return mins


def audit_qpat_block(u_list: Sequence[ScalarField], masks: DomainMasks, n_xi: int = N_XI,
                     rel: float = THRESHOLD, normalize: bool = True) -> AuditReport:
    # χ vanishes on the outer ring of Omega'' and with it the whole block; audit where χ > 0
    chi_all = cutoff_chi(masks).values.real.ravel()
    sel = _nodes(masks, "dprime") & (chi_all > 0)
    chi = chi_all[sel]
    mins = _block_min_sv(u_list, sel, chi, n_xi, normalize)
    return _report(mins, _coords(masks, sel), xi_angles(n_xi), rel, "ELLIPTIC", "NOT-ELLIPTIC",
                   relative=not normalize)


def spanning_audit(fields: Sequence[VectorField], masks: DomainMasks, rel: float = THRESHOLD,
                   normalize: bool = False) -> AuditReport:
    """Smallest singular value of the ``2 x k`` matrix of field values at each Omega'' node.

    With ``normalize`` each node's matrix is divided by its largest singular
    value first, which removes exponential growth of CGO-built fields.
    """
    if len(fields) < 2:
        raise ValueError("need at least two fields")
    sel = _nodes(masks, "dprime")
    M = np.stack([np.stack([f.d1.values.ravel()[sel], f.d2.values.ravel()[sel]]) for f in fields], axis=-1)
    M = np.moveaxis(M, 1, 0)  # (nodes, 2, k)
    sv = np.linalg.svd(M, compute_uv=False)
    mins = sv[:, -1]
    if normalize:
        mins = np.divide(mins, sv[:, 0], out=np.zeros_like(mins), where=sv[:, 0] > 0)
        thr = rel
    else:
        thr = rel * float(sv[:, 0].max())
    return _report(mins[:, None], _coords(masks, sel), np.zeros(1), thr, "SPANNING", "NOT-SPANNING",
                   relative=False)


def audit_report_csv(reports: Sequence[tuple[float, AuditReport]], comment: str | None = None) -> str:
    header = ["t", "min_abs", "argmin_x1", "argmin_x2", "argmin_xi_angle", "verdict"]
    return csv_text(header, [[float(t)] + r.row() for t, r in reports], comment)


# ---------------------------------------------------------------- deformation sweeps

@dataclass(frozen=True)
class State:
    """Coefficients and boundary data at one point of a deformation path."""

    sigma: ScalarField
    f: tuple[np.ndarray, ...]
    gamma: ScalarField | None = None


@dataclass(frozen=True)
class Leg:
    name: str
    at: Callable[[float], State] = field(repr=False)


@dataclass(frozen=True)
class DeformationPath:
    kind: str
    t_samples: tuple[float, ...]
    cgo_rho: tuple[CgoVector, ...]
    legs: tuple[Leg, ...]
    p: float | None = None
    pairs: tuple[tuple[int, int], ...] = ()

    def endpoint_gaps(self) -> list[float]:
        """Max difference of data and coefficients between consecutive leg endpoints."""
        out = []
        for a, b in zip(self.legs, self.legs[1:]):
            sa, sb = a.at(1.0), b.at(0.0)
            gap = np.abs(sa.sigma.padded() - sb.sigma.padded()).max()
            for fa, fb in zip(sa.f, sb.f):
                gap = max(gap, np.abs(fa - fb).max())
            if sa.gamma is not None or sb.gamma is not None:
                ga = sa.gamma.padded() if sa.gamma is not None else 0
                gb = sb.gamma.padded() if sb.gamma is not None else 0
                gap = max(gap, np.abs(ga - gb).max())
            out.append(float(gap))
        return out


@dataclass(frozen=True)
class SweepRow:
    leg: str
    t: float
    coverage: AuditReport
    spanning: AuditReport | None


@dataclass(frozen=True)
class SweepReport:
    kind: str
    rows: tuple[SweepRow, ...]
    threshold: float

    @property
    def min_over_path(self) -> float:
        return min(r.coverage.min_abs for r in self.rows)

    @property
    def min_spanning(self) -> float | None:
        vals = [r.spanning.min_abs for r in self.rows if r.spanning is not None]
        return min(vals) if vals else None

    @property
    def verdict(self) -> str:
        return "SEMI_FREDHOLM_PATH" if all(r.coverage.ok for r in self.rows) else "PATH_BROKEN"

    def csv(self, comment: str | None = None) -> str:
        header = ["leg", "t", "min_abs", "argmin_x1", "argmin_x2", "argmin_xi_angle", "verdict", "spanning_min"]
        rows = []
        for r in self.rows:
            sp = r.spanning.min_abs if r.spanning is not None else ""
            rows.append([r.leg, float(r.t)] + r.coverage.row() + [sp])
        return csv_text(header, rows, comment)


def coverage_values(symbols: Sequence[np.ndarray]) -> np.ndarray:
    """``max_j |s_j(x, ξ)| / max_{j, ξ} |s_j(x, ·)|`` for symbols of shape (n_x, n_xi)."""
    S = np.abs(np.stack(symbols))
    top = S.max(axis=(0, 2))
    cov = S.max(axis=0)
    return np.divide(cov, top[:, None], out=np.zeros_like(cov), where=top[:, None] > 0)


Builder = Callable[[State, DomainMasks], tuple[list[np.ndarray], list[VectorField] | None]]


def deformation_sweep(path: DeformationPath, builder: Builder, masks: DomainMasks,
                      n_xi: int = N_XI, rel: float = THRESHOLD) -> SweepReport:
    """Evaluate ``builder`` at every sampled ``t`` of every leg and audit coverage.

    The builder returns the list of constituent symbols on (Omega'' nodes,
    xi angles) and optionally vector fields whose spanning is recorded.
    Solver failures are re-raised naming the leg and ``t``.
    """
    sel = _nodes(masks, "dprime")
    xs = _coords(masks, sel)
    ang = xi_angles(n_xi)
    rows = []
    for leg in path.legs:
        for t in path.t_samples:
            try:
                symbols, fields = builder(leg.at(t), masks)
            except (elliptic.SingularSystemError, np.linalg.LinAlgError, RuntimeError) as exc:
                raise RuntimeError(f"sweep failed on leg {leg.name} at t={t!r}: {exc}") from exc
            cov = _report(coverage_values(symbols), xs, ang, rel, "COVERED", "UNCOVERED", relative=False)
            span = spanning_audit(fields, masks, rel, normalize=True) if fields else None
            rows.append(SweepRow(leg.name, float(t), cov, span))
    return SweepReport(path.kind, tuple(rows), rel)


def _lerp_sigma(sigma: ScalarField, s: float) -> ScalarField:
    return ScalarField.from_padded(sigma.grid, s * sigma.padded())


def _imag_trace(sigma: ScalarField, rho: CgoVector, gamma: ScalarField | None = None) -> np.ndarray:
    return cgo_imag_parts(make_cgo(sigma, rho, gamma)).f_I


def _t_grid(n_t: int) -> tuple[float, ...]:
    return tuple(float(x) for x in np.linspace(0.0, 1.0, n_t))


def p_small_path(sigma: ScalarField, fs: Sequence[np.ndarray], f0: Sequence[np.ndarray], p: float,
                 rho: CgoVector, n_t: int = 11) -> DeformationPath:
    """``(σ, f) → (σ, i f^I_σ) → (0, i f^I_0) → (0, f0)`` with one CGO vector for every functional."""
    fI_sigma = _imag_trace(sigma, rho)
    zero = ScalarField.zeros(sigma.grid)
    fI_zero = _imag_trace(zero, rho)
    m = len(fs)
    cache: dict[float, np.ndarray] = {}

    def fI_at(s):
        if s not in cache:
            cache[s] = _imag_trace(_lerp_sigma(sigma, s), rho)
        return cache[s]

    legs = (
        Leg("1", lambda t: State(sigma, tuple((1 - t) * fj + 1j * t * fI_sigma for fj in fs))),
        Leg("2", lambda t: State(_lerp_sigma(sigma, 1 - t), tuple(1j * fI_at(1 - t) for _ in range(m)))),
        Leg("3", lambda t: State(zero, tuple((1 - t) * 1j * fI_zero + t * g for g in f0))),
    )
    return DeformationPath("P_SMALL", _t_grid(n_t), (rho,), legs, p)


def aet_path(sigma: ScalarField, fs: Sequence[np.ndarray], f0: Sequence[np.ndarray],
             rho1: CgoVector, rho2: CgoVector, n_t: int = 11) -> DeformationPath:
    """2-D AET chain: the last datum follows ``ρ2``, the others ``ρ1``; the cross pair is ``(1, m)``."""
    zero = ScalarField.zeros(sigma.grid)
    m = len(fs)
    rhos = [rho1] * (m - 1) + [rho2]
    cache: dict[tuple[float, int], np.ndarray] = {}

    def fI(s, which):
        key = (s, which)
        if key not in cache:
            cache[key] = _imag_trace(_lerp_sigma(sigma, s), rho1 if which == 1 else rho2)
        return cache[key]

    def trace(s, j):
        return fI(s, 2 if j == m - 1 else 1)

    legs = (
        Leg("1", lambda t: State(sigma, tuple((1 - t) * fs[j] + 1j * t * trace(1.0, j) for j in range(m)))),
        Leg("2", lambda t: State(_lerp_sigma(sigma, 1 - t), tuple(1j * trace(1 - t, j) for j in range(m)))),
        Leg("3", lambda t: State(zero, tuple((1 - t) * 1j * trace(0.0, j) + t * f0[j] for j in range(m)))),
    )
    return DeformationPath("AET", _t_grid(n_t), (rho1, rho2), legs, 2.0, ((0, m - 1),))


def p_functional_builder(p: float, cross_pairs: Sequence[tuple[int, int]] = (), n_xi: int = N_XI,
                         cgo_spanning: bool = False):
    """Symbols of every ``A_{σ, f_j}`` plus cross symbols for the given index pairs."""
    x1, x2 = unit_xi(n_xi)
    xi = (x1[None], x2[None])

    def build(state: State, masks: DomainMasks):
        sel = _nodes(masks, "dprime")
        coeffs = CoefficientSet(sigma=state.sigma)
        op = elliptic.conductivity_operator(coeffs)
        us = [op.solve(None, f) for f in state.f]
        gr = [_grads_at(u, sel) for u in us]
        s = state.sigma.values.ravel()[sel][:, None]
        syms = [aet_symbol(s, (a[:, None], b[:, None]), p, xi) for a, b in gr]
        for i, j in cross_pairs:
            syms.append(cross_symbol(s, (gr[i][0][:, None], gr[i][1][:, None]),
                                     (gr[j][0][:, None], gr[j][1][:, None]), xi))
        fields = None
        if cgo_spanning:
            fields = [gradient(u) for u in us]
        return syms, fields

    return build


def qpat_path(sigma: ScalarField, gamma: ScalarField, fs: Sequence[np.ndarray], f0: Sequence[np.ndarray],
              rhos: Sequence[CgoVector], sigma0: ScalarField | None = None, n_t: int = 11) -> DeformationPath:
    """QPAT chain with one CGO vector per datum; ``γ_t = (1-t)γ``, ``σ_t = (1-t)σ + tσ0``."""
    g = sigma.grid
    sigma0 = sigma0 or ScalarField.zeros(g)
    zero = ScalarField.zeros(g)
    if len(rhos) != len(fs):
        raise ValueError("one CGO vector per boundary datum")

    def coeff_at(s):
        sig = ScalarField.from_padded(g, s * sigma.padded() + (1 - s) * sigma0.padded())
        gam = _lerp_sigma(gamma, s)
        return sig, gam

    cache: dict[float, list[np.ndarray]] = {}

    def traces(s):
        if s not in cache:
            sig, gam = coeff_at(s)
            cache[s] = [_imag_trace(sig, r, gam) for r in rhos]
        return cache[s]

    legs = (
        Leg("1", lambda t: State(sigma, tuple((1 - t) * f + 1j * t * fi for f, fi in zip(fs, traces(1.0))), gamma)),
        Leg("2", lambda t: State(*_swap(coeff_at(1 - t), tuple(1j * fi for fi in traces(1 - t))))),
        Leg("3", lambda t: State(sigma0, tuple((1 - t) * 1j * fi + t * f for fi, f in zip(traces(0.0), f0)), zero)),
    )
    pairs = tuple((2 * i, 2 * i + 1) for i in range(len(fs) // 2))
    return DeformationPath("QPAT", _t_grid(n_t), tuple(rhos), legs, None, pairs)


def _swap(coeffs, f):
    sig, gam = coeffs
    return sig, f, gam


def qpat_builder(pairs: Sequence[tuple[int, int]], n_xi: int = N_XI):
    """Block symbol (one 'constituent' per ξ: its smallest singular value) plus pair fields ``V``."""

    def build(state: State, masks: DomainMasks):
        sel = _nodes(masks, "dprime")
        coeffs = CoefficientSet(sigma=state.sigma, gamma=state.gamma)
        op = elliptic.diffusion_operator(coeffs)
        us = [op.solve(None, f) for f in state.f]
        # per-node normalization cancels χ^2 wherever χ > 0, so the block is taken without it
        mins = _block_min_sv(us, sel, np.ones(int(sel.sum())), n_xi, normalize=True)
        fields = []
        for i, j in pairs:
            gi, gj = gradient(us[i]), gradient(us[j])
            ui, uj = us[i].values, us[j].values
            fields.append(VectorField.from_arrays(op.grid, uj * gi.d1.values - ui * gj.d1.values,
                                                  uj * gi.d2.values - ui * gj.d2.values))
        return [mins], fields

    return build
