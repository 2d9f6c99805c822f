import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridlab import cgo
from hybridlab.elliptic import CoefficientSet, solve_conductivity
from hybridlab.grid import ScalarField, make_grid

from conftest import bump

MAGS = (5.0, 10.0, 20.0, 40.0)


@pytest.fixture(scope="module")
def sig31(g31):
    return bump(g31, a=0.3, r=0.24)


@pytest.fixture(scope="module")
def ladder(sig31):
    return [cgo.make_cgo(sig31, cgo.make_rho(r)) for r in MAGS]


@given(st.floats(0.1, 500.0), st.floats(0, 2 * np.pi))
def test_rho_null_vector(mag, angle):
    k = (np.cos(angle), np.sin(angle))
    kp = (-np.sin(angle), np.cos(angle))
    r = cgo.make_rho(mag, k, kp)
    assert abs(r.self_dot()) <= 1e-14 * mag**2
    np.testing.assert_allclose(np.linalg.norm(r.rho), mag, rtol=1e-14)


def test_rho_validation():
    with pytest.raises(ValueError):
        cgo.make_rho(10, (1, 0), (1, 0))
    with pytest.raises(ValueError):
        cgo.make_rho(-1)


def test_zero_sigma_exact(g31):
    s = cgo.make_cgo(ScalarField.zeros(g31), cgo.make_rho(10))
    assert not np.any(s.psi.padded())
    assert s.residual == 0.0
    X1, X2 = g31.padded_coords
    rx = s.rho.rho[0] * X1 + s.rho.rho[1] * X2
    np.testing.assert_allclose(s.u.padded(), np.exp(rx), rtol=1e-13)


def test_zero_sigma_residual_is_discretization(g31):
    """Δ_h e^{ρ·x} ≠ 0 only through the O(h^2 ρ^4) truncation of the 5-point stencil."""
    z = ScalarField.zeros(g31)
    r31 = cgo.make_cgo(z, cgo.make_rho(10)).conductivity_residual()
    g63 = make_grid(63)
    r63 = cgo.make_cgo(ScalarField.zeros(g63), cgo.make_rho(10)).conductivity_residual()
    assert 3.5 < r31 / r63 < 4.5


def test_construction_identity(ladder):
    for s in ladder:
        expect = s.envelope * (1 + s.psi.padded())
        assert np.array_equal(s.u.padded(), expect)
        assert s.residual <= 1e-8


def test_sup_rho_psi_bounded(ladder):
    vals = np.array([s.sup_rho_psi() for s in ladder])
    assert np.all(vals > 0)
    assert vals.max() / vals.min() <= 4


def test_gradbigger_slope(ladder, g31, m31):
    probe = ScalarField.from_function(g31, lambda x, y: np.exp(0.5 * (x + y)))
    r = np.array([cgo.gradbigger_ratio(s, probe, m31.omega_prime) for s in ladder])
    slope = np.polyfit(np.log(MAGS), np.log(r), 1)[0]
    assert -1.3 <= slope <= -0.7
    C = r[1] * MAGS[1]
    assert np.all(r[2:] <= C / np.array(MAGS[2:]) * 1.1)


def test_constant_probe_degenerate(ladder, g31, m31):
    """For u ≡ 1 the dropped term u_I ∇u is identically zero."""
    one = ScalarField.from_function(g31, lambda x, y: np.ones_like(x))
    assert cgo.gradbigger_ratio(ladder[0], one, m31.omega_prime) == 0.0


def test_liouville_transform(sig31):
    """w = e^{σ/2} u solves Δw = qw with the same relative residual as the divergence form."""
    s = cgo.make_cgo(sig31, cgo.make_rho(10))
    assert s.conductivity_residual() < 1e-2
    np.testing.assert_allclose(s.schrodinger_residual(), s.conductivity_residual(), rtol=1e-6)


def test_closed_form_gradient_zero_sigma(g31):
    s = cgo.make_cgo(ScalarField.zeros(g31), cgo.make_rho(20))
    p = cgo.cgo_imag_parts(s)
    for a, b in ((p.grad_u_I.d1, p.grad_closed_form.d1), (p.grad_u_I.d2, p.grad_closed_form.d2)):
        np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-13 * np.abs(b.values).max())


@pytest.mark.parametrize("mag", MAGS)
def test_closed_form_never_vanishes(g31, sig31, mag):
    s = cgo.make_cgo(sig31, cgo.make_rho(mag))
    cf = cgo.cgo_imag_parts(s).grad_closed_form
    scaled = np.hypot(cf.d1.values.real, cf.d2.values.real) * np.exp(-s.growth[1:-1, 1:-1])
    np.testing.assert_allclose(scaled.min(), mag / np.sqrt(2), rtol=1e-12)


def test_imag_trace_matches_field(ladder):
    p = cgo.cgo_imag_parts(ladder[1])
    np.testing.assert_array_equal(p.f_I, p.u_I.boundary_values.real)
    assert np.isrealobj(p.f_I)


def test_trace_round_trip_converges(sig31):
    """Solving with the trace f_I recovers u_I up to discretization error, which is O(h^2)."""
    errs = []
    for g, sig in ((sig31.grid, sig31), (make_grid(63), None)):
        sig = sig if sig is not None else bump(g, a=0.3, r=0.24)
        p = cgo.cgo_imag_parts(cgo.make_cgo(sig, cgo.make_rho(10)))
        u = solve_conductivity(CoefficientSet(sigma=sig), p.f_I.astype(complex))
        errs.append(np.abs(u.values - p.u_I.values).max() / np.abs(p.u_I.values).max())
    assert errs[0] < 5e-3
    assert errs[0] / errs[1] > 3.0


def test_dirichlet_remainder_mode(sig31):
    s = cgo.make_cgo(sig31, cgo.make_rho(10), remainder="dirichlet")
    assert not np.any(s.psi.boundary_values)
    with pytest.raises(ValueError):
        cgo.make_cgo(sig31, cgo.make_rho(10), remainder="neumann")


def test_overflow_guard(g31):
    with pytest.raises(OverflowError):
        cgo.make_cgo(ScalarField.zeros(g31), cgo.make_rho(201.0 / g31.h))
    with pytest.raises(OverflowError):
        cgo.make_cgo(ScalarField.zeros(g31), cgo.make_rho(1500.0))


# ---------------------------------------------------------------- pair fields

@pytest.fixture(scope="module")
def pair(g31):
    z = ScalarField.zeros(g31)
    a = cgo.make_cgo(z, cgo.make_rho(10, (0, 1), (1, 0)))
    b = cgo.make_cgo(z, cgo.make_rho(10 * np.sqrt(2), (0, 1), (1, 0)))
    return a, b


def test_pair_parallel_to_k_perp(pair, m31):
    V = cgo.cgo_pair_fields([pair])[0].V
    d = m31.omega_dprime
    # L2 over Omega''; pointwise the ratio blows up where the k_perp component crosses zero
    dev = np.linalg.norm(V.d2.values[d]) / np.linalg.norm(V.d1.values[d])
    assert dev <= 0.25


def test_pair_matches_leading_term_zero_sigma(pair):
    pf = cgo.cgo_pair_fields([pair])[0]
    for a, b in ((pf.V.d1, pf.leading.d1), (pf.V.d2, pf.leading.d2)):
        np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-13 * np.abs(b.values).max())


def test_pair_phase_gap_nonzero(pair, m31):
    a, b = pair
    gap = np.sin(a.phase[1:-1, 1:-1] - b.phase[1:-1, 1:-1])[m31.omega_dprime]
    assert np.abs(gap).min() > 0


def test_pair_antisymmetric(pair):
    a, b = pair
    v, w = cgo.cgo_pair_fields([(a, b), (b, a)])
    assert np.array_equal(v.V.d1.values, -w.V.d1.values)
    assert np.array_equal(v.V.d2.values, -w.V.d2.values)


def test_pair_needs_shared_directions(g31):
    z = ScalarField.zeros(g31)
    a = cgo.make_cgo(z, cgo.make_rho(10, (0, 1), (1, 0)))
    b = cgo.make_cgo(z, cgo.make_rho(10, (1, 0), (0, -1)))
    with pytest.raises(ValueError):
        cgo.cgo_pair_fields([(a, b)])


def test_deterministic(sig31):
    a = cgo.make_cgo(sig31, cgo.make_rho(20))
    b = cgo.make_cgo(sig31, cgo.make_rho(20))
    assert np.array_equal(a.psi.padded(), b.psi.padded())

