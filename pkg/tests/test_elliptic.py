import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridlab import elliptic
from hybridlab.elliptic import (DIRICHLET, ROBIN1, BoundaryCondition, CoefficientSet, conductivity_operator,
                                diffusion_operator, greens_column, impulse_response, laplacian_inverse_dirichlet,
                                schrodinger_operator, solve_conductivity, solve_diffusion, solve_schrodinger)
from hybridlab.grid import ScalarField, make_grid, make_masks

from conftest import bump

# (-Δ + 1)u = 0 in the unit square, u = 1 on the boundary, value at the centre.
# u = 1 - w with (-Δ + 1)w = 1, w = 0: double sine series over odd m, n.
CENTRE_ORACLE = 0.9301914346655924


def _centre_series(M=1601):
    m = np.arange(1, M + 1, 2, dtype=float)
    A, B = np.meshgrid(m, m, indexing="ij")
    sgn = np.sin(A * np.pi / 2) * np.sin(B * np.pi / 2)
    return 1.0 - np.sum(16.0 / (np.pi**2 * A * B) / (np.pi**2 * (A**2 + B**2) + 1.0) * sgn)


def test_oracle_series():
    assert _centre_series() == pytest.approx(CENTRE_ORACLE, abs=1e-6)


def _zero(g):
    return ScalarField.zeros(g)


def test_schrodinger_centre_value(g63):
    u = solve_schrodinger(CoefficientSet(mu=_zero(g63)), BoundaryCondition("dirichlet", data=1.0))
    assert u.values[31, 31].real == pytest.approx(CENTRE_ORACLE, abs=2e-3)


def test_diffusion_centre_value(g63):
    c = CoefficientSet(sigma=_zero(g63), gamma=_zero(g63))
    u = solve_diffusion(c, np.ones(g63.n_boundary))
    assert u.values[31, 31].real == pytest.approx(CENTRE_ORACLE, abs=2e-3)


def test_schrodinger_manufactured_polynomial(g31):
    g = g31
    fn = lambda x, y: 2 * (x * (1 - x) + y * (1 - y)) + x * (1 - x) * y * (1 - y)
    u = schrodinger_operator(CoefficientSet(mu=_zero(g))).solve(g.eval(fn))
    X1, X2 = g.coords
    assert np.abs(u.values - X1 * (1 - X1) * X2 * (1 - X2)).max() <= g.h**2


def test_robin_homogeneous_zero(g31):
    u = solve_schrodinger(CoefficientSet(mu=_zero(g31)), ROBIN1)
    assert np.all(u.values == 0)


def test_conductivity_linear_exact(g31):
    c = CoefficientSet(sigma=_zero(g31))
    for fn in (lambda x, y: x, lambda x, y: y):
        u = solve_conductivity(c, g31.eval_boundary(fn))
        np.testing.assert_allclose(u.values, g31.eval(fn)[1:-1, 1:-1], rtol=0, atol=1e-13)


def test_energy_identity(g31):
    """Edge energy ``u^T K u`` equals the boundary flux pairing ``u_B^T (K u)_B``."""
    g = g31
    c = CoefficientSet(sigma=bump(g, r=0.24, a=0.3))
    op = conductivity_operator(c)
    u = solve_conductivity(c, g.eval_boundary(lambda x, y: x)).padded().ravel()
    E = elliptic.edges(g)
    energy = g.h**2 * np.sum(op.kappa * (E.D @ u) ** 2)
    Ku = op.K @ u
    bnd = g.boundary_mask.ravel()
    flux = g.h**2 * np.sum(u[bnd] * Ku[bnd])
    assert abs(energy - flux) <= 1e-8 * abs(energy)
    assert np.abs(Ku[~bnd]).max() <= 1e-8 * np.abs(Ku).max()


def _manufactured_error(n, kind):
    g = make_grid(n)
    uex = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y) * np.exp(x) + x * y
    lap = lambda x, y: (np.exp(x) * np.sin(np.pi * y) * ((1 - 2 * np.pi**2) * np.sin(np.pi * x)
                                                         + 2 * np.pi * np.cos(np.pi * x)))
    ux = lambda x, y: np.exp(x) * np.sin(np.pi * y) * (np.sin(np.pi * x) + np.pi * np.cos(np.pi * x)) + y
    uy = lambda x, y: np.pi * np.exp(x) * np.sin(np.pi * x) * np.cos(np.pi * y) + x
    sig = lambda x, y: 0.3 * x * y
    gam = lambda x, y: 0.2 * x - 0.1 * y
    data = g.eval_boundary(uex)
    if kind == "schrodinger":
        c = CoefficientSet(mu=ScalarField.from_function(g, lambda x, y: 0.5 * x))
        src = lambda x, y: -lap(x, y) + np.exp(0.5 * x) * uex(x, y)
        u = schrodinger_operator(c, DIRICHLET).solve(g.eval(src), data)
    else:
        c = CoefficientSet(sigma=ScalarField.from_function(g, sig),
                           gamma=ScalarField.from_function(g, gam) if kind == "diffusion" else None)
        # -div(e^s grad u) = -e^s (Δu + s_x u_x + s_y u_y)
        src = lambda x, y: -np.exp(sig(x, y)) * (lap(x, y) + 0.3 * y * ux(x, y) + 0.3 * x * uy(x, y))
        if kind == "diffusion":
            src0 = src
            src = lambda x, y: src0(x, y) + np.exp(gam(x, y)) * uex(x, y)
            op = diffusion_operator(c)
        else:
            op = conductivity_operator(c)
        u = op.solve(g.eval(src), data)
    return g.h * np.linalg.norm(u.values - g.eval(uex)[1:-1, 1:-1])


@pytest.mark.parametrize("kind", ["schrodinger", "conductivity", "diffusion"])
def test_manufactured_convergence(kind):
    e = [_manufactured_error(n, kind) for n in (15, 31, 63)]
    for a, b in zip(e, e[1:]):
        assert 3.5 <= a / b <= 4.5, e


def test_qpat_exponential_family(g63):
    lam = 0.1
    g = g63
    sig = ScalarField.from_padded(g, np.full((65, 65), -2 * np.log(lam)))
    c = CoefficientSet(sigma=sig, gamma=_zero(g))
    for fn in (lambda x, y: np.exp(lam * x), lambda x, y: np.exp(-lam * y)):
        u = solve_diffusion(c, g.eval_boundary(fn))
        assert np.abs(u.values - g.eval(fn)[1:-1, 1:-1]).max() <= g.h**2


def test_laplacian_inverse_examples(g31):
    g = g31
    src = ScalarField.from_function(g, lambda x, y: -2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y))
    w = laplacian_inverse_dirichlet(src)
    ex = np.sin(np.pi * g.coords[0]) * np.sin(np.pi * g.coords[1])
    assert np.abs(w.values - ex).max() <= g.h**2
    assert np.all(laplacian_inverse_dirichlet(_zero(g)).values == 0)
    imp = np.zeros((g.n, g.n))
    imp[15, 15] = 1 / g.h**2
    assert np.all(laplacian_inverse_dirichlet(ScalarField(g, imp)).values.real < 0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([7, 15, 31]))
def test_maximum_principle(seed, n):
    g = make_grid(n)
    rng = np.random.default_rng(seed)
    mu = ScalarField(g, rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, g.n_boundary))
    f = rng.uniform(0, 1, (n + 2, n + 2))
    data = rng.uniform(0, 1, g.n_boundary)
    u = schrodinger_operator(CoefficientSet(mu=mu), DIRICHLET).solve(f, data)
    assert u.values.real.min() >= -1e-12
    assert np.abs(u.values.imag).max() <= 1e-12 * np.abs(u.values).max()


@pytest.mark.parametrize("mu_amp", [0.0, 1.0, -1.0])
def test_green_positive_on_prime(g63, m63, mu_amp):
    mu = ScalarField.from_function(g63, lambda x, y: mu_amp * np.cos(3 * x) * np.sin(2 * y))
    G = greens_column(CoefficientSet(mu=mu), ROBIN1, 0)
    assert G.values.real[m63.omega_prime].min() >= 1e-6


def test_green_decreases_with_absorption(g31, m31):
    mask = np.where(np.pad(m31.omega_prime, 1), np.log(2.0), 0.0)
    eta = (16, 0)
    G0 = greens_column(CoefficientSet(mu=_zero(g31)), ROBIN1, eta).values.real
    G1 = greens_column(CoefficientSet(mu=ScalarField.from_padded(g31, mask)), ROBIN1, eta).values.real
    op = m31.omega_prime
    assert np.all(G1[op] <= G0[op])
    assert G1[15, 15] < G0[15, 15]


@pytest.mark.parametrize("bc", [DIRICHLET, ROBIN1])
def test_reciprocity(g31, bc):
    mu = bump(g31, a=0.7)
    c = CoefficientSet(mu=mu)
    a, b = (5, 9), (20, 14)
    ua = impulse_response(c, bc, a).padded()
    ub = impulse_response(c, bc, b).padded()
    assert ua[b] == pytest.approx(ub[a], rel=1e-10)


def test_dirichlet_green_convention(g31):
    c = CoefficientSet(mu=_zero(g31))
    G = greens_column(c, DIRICHLET, (0, 16))
    ref = impulse_response(c, DIRICHLET, (1, 16))
    assert np.array_equal(G.values, ref.values)
    assert "adjacent" in elliptic.greens_convention(DIRICHLET)
    with pytest.raises(ValueError):
        greens_column(c, ROBIN1, (5, 5))


def test_complex_coefficients_and_residual(g31):
    mu = ScalarField(g31, 0.3j * bump(g31).values)
    op = schrodinger_operator(CoefficientSet(mu=mu), ROBIN1)
    b = op.rhs(None, np.ones(g31.n_boundary))
    x = op.solve_raw(b)
    assert np.linalg.norm(op.matrix @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert np.abs(x.imag).max() > 0


def test_dirichlet_matrix_symmetric(g31):
    op = conductivity_operator(CoefficientSet(sigma=bump(g31, a=0.5)))
    A = op.matrix
    assert abs(A - A.T).max() == 0
    assert not np.iscomplexobj(A.data)


def test_robin_gamma_validation():
    with pytest.raises(ValueError):
        BoundaryCondition("robin", 0.0)
    with pytest.raises(ValueError):
        BoundaryCondition("robin", -1.0)


def test_admissible(g31, m31):
    assert CoefficientSet(sigma=bump(g31, r=0.2)).admissible(m31)
    assert not CoefficientSet(sigma=bump(g31, r=0.4)).admissible(m31)
