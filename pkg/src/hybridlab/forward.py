"""Nonlinear internal-data functionals of UMOT, AET and QPAT."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import elliptic
from .elliptic import BoundaryCondition, CoefficientSet, ROBIN1
from .grid import ScalarField, gradient
from .io import sidecar_text

Modality = Literal["UMOT", "AET_POWER", "AET_CROSS", "QPAT"]


def field_digest(f: ScalarField | np.ndarray | None) -> str:
    if f is None:
        return "none"
    arr = f.padded() if isinstance(f, ScalarField) else np.asarray(f, dtype=complex)
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<c16").tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class InternalData:
    """A measured interior function together with what produced it.

    ``rerun`` repeats the forward computation from the stored inputs.
    """

    modality: Modality
    field: ScalarField
    provenance: dict
    rerun: Callable[[], "InternalData"] = field(repr=False, compare=False, default=None)

    def sidecar(self) -> str:
        items = {"modality": self.modality}
        for k, v in self.provenance.items():
            if isinstance(v, (ScalarField, np.ndarray)):
                items[k] = "sha256:" + field_digest(v)
            elif isinstance(v, BoundaryCondition):
                items[k] = f"{v.kind}(gamma={np.asarray(v.robin_gamma).tolist() if v.kind == 'robin' else '-'})"
            else:
                items[k] = v
        return sidecar_text(items)


def _bc_data(bc: BoundaryCondition, S) -> BoundaryCondition:
    return BoundaryCondition(bc.kind, bc.robin_gamma, S)


def umot_data(coeffs: CoefficientSet, S, eta, B_bc: BoundaryCondition | None = None,
              C_bc: BoundaryCondition = ROBIN1) -> InternalData:
    """``F(xi) = u(xi) G(eta, xi)`` with ``u`` lit by boundary source ``S``.

    ``B_bc`` defaults to Dirichlet; only its kind and Robin gamma are used,
    the data being ``S``.
    """
    B_bc = B_bc or elliptic.DIRICHLET
    u = elliptic.solve_schrodinger(coeffs, _bc_data(B_bc, S))
    G = elliptic.greens_column(coeffs, C_bc.homogeneous(), eta)
    F = ScalarField(u.grid, u.values * G.values)
    prov = {"mu": coeffs.mu, "S": np.asarray(S, dtype=complex), "eta": eta, "B": B_bc, "C": C_bc,
            "green_convention": elliptic.greens_convention(C_bc)}
    return InternalData("UMOT", F, prov, lambda: umot_data(coeffs, S, eta, B_bc, C_bc))


def _power_field(sigma: ScalarField, u: ScalarField, p: float) -> np.ndarray:
    du = gradient(u)
    dot = du.d1.values * du.d1.values + du.d2.values * du.d2.values
    return np.exp(2.0 * sigma.values / p) * dot


def power_density(coeffs: CoefficientSet, f, p: float | None = None) -> InternalData:
    """``e^{2 sigma / p} grad u . grad u`` (bilinear) with ``u`` the conductivity solution."""
    p = coeffs.p if p is None else p
    if p is None or not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    u = elliptic.solve_conductivity(coeffs, f)
    F = ScalarField(u.grid, _power_field(coeffs.sigma, u, p))
    prov = {"sigma": coeffs.sigma, "f": np.asarray(f, dtype=complex), "p": p, "u": u}
    return InternalData("AET_POWER", F, prov, lambda: power_density(coeffs, f, p))


def cross_power(coeffs: CoefficientSet, f1, f2, p: float = 2.0) -> InternalData:
    """``e^{2 sigma} grad u1 . grad u2`` (unsquared) for the AET case ``p = 2``."""
    if p != 2:
        raise ValueError("cross_power is defined for p = 2 only")
    u1 = elliptic.solve_conductivity(coeffs, f1)
    u2 = elliptic.solve_conductivity(coeffs, f2)
    g1, g2 = gradient(u1), gradient(u2)
    dot = g1.d1.values * g2.d1.values + g1.d2.values * g2.d2.values
    F = ScalarField(u1.grid, np.exp(2.0 * coeffs.sigma.values) * dot)
    prov = {"sigma": coeffs.sigma, "f1": np.asarray(f1, dtype=complex),
            "f2": np.asarray(f2, dtype=complex), "p": p}
    return InternalData("AET_CROSS", F, prov, lambda: cross_power(coeffs, f1, f2, p))


def qpat_data(coeffs: CoefficientSet, f) -> InternalData:
    """``e^gamma u`` with ``u`` the diffusion solution (Grüneisen factor fixed to 1)."""
    u = elliptic.solve_diffusion(coeffs, f)
    F = ScalarField(u.grid, np.exp(coeffs.gamma.values) * u.values)
    prov = {"sigma": coeffs.sigma, "gamma": coeffs.gamma, "f": np.asarray(f, dtype=complex), "u": u}
    return InternalData("QPAT", F, prov, lambda: qpat_data(coeffs, f))
