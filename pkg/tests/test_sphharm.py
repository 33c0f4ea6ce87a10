import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from geomag import sphharm as sh
from geomag.errors import DomainError, PrecisionError

Y00 = 0.5 / np.sqrt(np.pi)


@pytest.fixture(scope="module")
def tables():
    return sh.CouplingTables(4)


@pytest.fixture(scope="module")
def quad12():
    return sh.sphere_quadrature(12)


def _random_dirs(n, seed):
    d = np.random.default_rng(seed).normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# ---------------------------------------------------------------- scalar Y


def test_y00_is_constant():
    dirs = _random_dirs(5, 0)
    assert_allclose(sh.ynm(0, 0, dirs), Y00, rtol=1e-15)


def test_y10_north_pole():
    assert_allclose(sh.ynm(1, 0, [0.0, 0.0, 1.0]), np.sqrt(3 / (4 * np.pi)), rtol=1e-14)


def test_y21_unit_norm():
    q = sh.sphere_quadrature(3)
    y = sh.ynm(2, 1, q.nodes)
    assert_allclose(q.integrate(y * np.conj(y)), 1.0, atol=1e-13)


def test_invalid_order_rejected():
    with pytest.raises(DomainError):
        sh.ynm(1, 2, [0, 0, 1])


def test_orthonormality_up_to_degree_6(quad12):
    x = quad12.nodes
    Y = np.array([sh.ynm(n, m, x) for n, m in sh.harmonic_index(6)])
    gram = (Y * quad12.weights) @ np.conj(Y).T
    assert_allclose(gram, np.eye(len(Y)), atol=1e-10)


def test_angles_round_trip():
    dirs = _random_dirs(10, 1)
    th, ph = sh.to_angles(dirs)
    assert_allclose(sh.from_angles(th, ph), dirs, atol=1e-14)


# -------------------------------------------------------- surface gradient


def test_grad_s_y00_vanishes():
    assert_allclose(sh.grad_s_ynm(0, 0, _random_dirs(4, 2)), 0, atol=1e-15)


def test_grad_s_y10_on_equator():
    g = sh.grad_s_ynm(1, 0, [1.0, 0.0, 0.0])
    # -sqrt(3/4pi) e_theta with e_theta = -e_z at theta = pi/2, phi = 0
    assert_allclose(g, [0, 0, np.sqrt(3 / (4 * np.pi))], atol=1e-15)


def test_grad_s_finite_at_poles():
    g = sh.grad_s_ynm(3, 1, [[0, 0, 1.0], [0, 0, -1.0]])
    assert np.all(np.isfinite(g))


@pytest.mark.parametrize("n", range(5))
def test_laplace_beltrami_eigenvalue(n, quad12):
    for m in range(-n, n + 1):
        g = sh.grad_s_ynm(n, m, quad12.nodes)
        assert_allclose(quad12.integrate(np.sum(np.abs(g) ** 2, axis=1)), n * (n + 1), atol=1e-11)


def test_grad_s_is_tangential():
    x = _random_dirs(20, 3)
    g = sh.grad_s_ynm(4, -2, x)
    assert_allclose(np.einsum("qi,qi->q", g, x), 0, atol=1e-13)


# ---------------------------------------------------------- vector harmonics


def test_N_degree_zero():
    x = _random_dirs(6, 4)
    assert_allclose(sh.vector_harmonic("N", 0, 0, x), Y00 * x, atol=1e-15)


def test_vector_orthogonality(quad12):
    x = quad12.nodes
    N = np.array([sh.vector_harmonic("N", n, m, x) for n, m in sh.harmonic_index(4)])
    gram = np.einsum("aqi,bqi,q->ab", np.conj(N), N, quad12.weights)
    expected = np.diag([(n + 1) * (2 * n + 1) for n, _ in sh.harmonic_index(4)])
    assert_allclose(gram, expected, atol=1e-9)


def test_N_Q_cross_orthogonality(quad12):
    x = quad12.nodes
    worst = 0.0
    for n in range(4):
        for np_ in range(1, 4):
            if n == np_:
                continue
            for m in range(-n, n + 1):
                for mp in range(-np_, np_ + 1):
                    a = np.conj(sh.vector_harmonic("N", n, m, x))
                    b = sh.vector_harmonic("Q", np_, mp, x)
                    worst = max(worst, abs(quad12.integrate(np.sum(a * b, axis=1))))
    assert worst < 1e-12


def test_vector_harmonic_kind_checks():
    with pytest.raises(DomainError):
        sh.vector_harmonic("X", 1, 0, [0, 0, 1])
    with pytest.raises(DomainError):
        sh.vector_harmonic("Q", 0, 0, [0, 0, 1])


def test_exterior_gradient_finite_difference():
    rng = np.random.default_rng(5)
    h = 1e-5
    for _ in range(20):
        n = int(rng.integers(0, 5))
        m = int(rng.integers(-n, n + 1))
        p = rng.normal(size=3)
        p *= rng.uniform(1, 3) / np.linalg.norm(p)
        r = np.linalg.norm(p)

        def f(y):
            return sh.ynm(n, m, y) / np.linalg.norm(y) ** (n + 1)

        fd = np.array([(f(p + h * e) - f(p - h * e)) / (2 * h) for e in np.eye(3)])
        exact = -sh.vector_harmonic("N", n, m, p) / r ** (n + 2)
        assert_allclose(fd, exact, rtol=1e-6, atol=1e-9 * np.abs(exact).max())


# -------------------------------------------------------------- quadrature


def test_quadrature_level_one():
    q = sh.sphere_quadrature(1)
    assert len(q) == 2
    assert_allclose(q.weights.sum(), 4 * np.pi, rtol=1e-15)


def test_quadrature_level_eight_exactness():
    q = sh.sphere_quadrature(8)
    y32 = sh.ynm(3, 2, q.nodes)
    assert_allclose(q.integrate(y32 * np.conj(y32)), 1.0, atol=1e-12)
    assert abs(q.integrate(y32 * np.conj(sh.ynm(2, 1, q.nodes)))) < 1e-12


def test_quadrature_rejects_level_zero():
    with pytest.raises(DomainError):
        sh.sphere_quadrature(0)


@settings(max_examples=25, deadline=None)
@given(level=st.integers(1, 12))
def test_quadrature_weights_sum(level):
    q = sh.sphere_quadrature(level)
    assert_allclose(q.weights.sum(), 4 * np.pi, rtol=1e-13)
    assert q.degree == 2 * level - 1
    assert_allclose(np.linalg.norm(q.nodes, axis=1), 1.0, rtol=1e-15)


# -------------------------------------------------------- coupling vectors


def test_coupling_ab_degree_zero(quad12):
    a, b = sh.coupling_ab(1, 0, 0, 0, quad12)
    assert_allclose(a, 0, atol=1e-15)
    assert_allclose(b, [0, 0, 1 / np.sqrt(3)], atol=1e-14)


def test_coupling_selection_rule(tables):
    for n in range(5):
        for np_ in range(5):
            if abs(n - np_) == 1:
                continue
            for m in range(-n, n + 1):
                for mp in range(-np_, np_ + 1):
                    assert np.abs(tables.a(np_, mp, n, m)).max() < 1e-12
                    assert np.abs(tables.b(np_, mp, n, m)).max() < 1e-12


def test_a12_equals_3_b12(tables):
    for m in range(-2, 3):
        for mp in range(-1, 2):
            assert_allclose(tables.a(1, mp, 2, m), 3 * tables.b(1, mp, 2, m), atol=1e-9)


def test_coupling_ab_matches_tables(tables, quad12):
    a, b = sh.coupling_ab(2, -1, 3, 0, quad12)
    assert_allclose(a, tables.a(2, -1, 3, 0), atol=1e-13)
    assert_allclose(b, tables.b(2, -1, 3, 0), atol=1e-13)


def test_coupling_ab_needs_exactness():
    with pytest.raises(PrecisionError):
        sh.coupling_ab(3, 0, 4, 0, sh.sphere_quadrature(2))


def test_coupling_c_linear_in_inputs(tables):
    # (n', n) pairs outside the selection rule have a = b = 0, hence c = d = 0
    c, d = sh.coupling_cd(3, 1, 0, 0, tables)
    assert_allclose(c, 0, atol=1e-13)
    assert_allclose(d, 0, atol=1e-13)


@pytest.mark.parametrize("form", ["exact"])
def test_decomposition_identity(tables, form):
    dirs = _random_dirs(100, 6)
    worst = 0.0
    for n in range(4):
        for m in range(-n, n + 1):
            A = sh.eval_A(n, m, dirs)
            for xi in np.eye(3):
                worst = max(worst, np.abs(A @ xi - sh.decompose_A(n, m, xi, dirs, tables, form)).max())
    assert worst <= 1e-9


def test_printed_d_combination(tables):
    # d for (n'=1, n=2) in the closed form -(1/3)(a_{1,2} + 3 conj(a_{2,1}))
    for m in range(-2, 3):
        for mp in range(-1, 2):
            d = sh.coupling_d(1, mp, 2, m, tables, form="printed")
            ref = -(tables.a(1, mp, 2, m) + 3 * np.conj(tables.a(2, m, 1, mp))) / 3
            assert_allclose(d, ref, atol=1e-12)


def test_printed_c_agrees_on_upper_branch(tables):
    for n in range(3):
        for m in range(-n, n + 1):
            for mp in range(-n - 1, n + 2):
                c_ex = sh.coupling_c(n + 1, mp, n, m, tables)
                c_pr = sh.coupling_c(n + 1, mp, n, m, tables, form="printed")
                assert_allclose(c_pr, c_ex, atol=1e-12)


def test_printed_d_fails_decomposition(tables):
    dirs = _random_dirs(50, 7)
    A = sh.eval_A(2, 0, dirs)
    xi = np.array([0.3, -0.2, 1.0])
    err = np.abs(A @ xi - sh.decompose_A(2, 0, xi, dirs, tables, "printed")).max()
    assert err > 1e-3


def test_coupling_domain_errors(tables):
    with pytest.raises(DomainError):
        sh.coupling_d(0, 0, 1, 0, tables)
    with pytest.raises(DomainError):
        sh.coupling_c(-1, 0, 0, 0, tables)
    with pytest.raises(DomainError):
        tables.a(9, 0, 0, 0)


# ------------------------------------------------------------------ A matrix


def test_A00_closed_form():
    x = _random_dirs(8, 8)
    ref = Y00 * (np.eye(3) - 3 * x[:, :, None] * x[:, None, :])
    A = sh.eval_A(0, 0, x)
    assert_allclose(A, ref, atol=1e-14)
    assert_allclose(np.trace(A, axis1=1, axis2=2), 0, atol=1e-14)
    assert_allclose(A, np.swapaxes(A, 1, 2), atol=1e-14)


def test_hessian_expansion_against_direct_kernel():
    R = 2.0
    x = _random_dirs(5, 10) * R
    z = _random_dirs(5, 11) * 0.3 * R
    zh = z / np.linalg.norm(z, axis=1, keepdims=True)
    total = np.zeros((5, 3, 3), dtype=complex)
    for n in range(26):
        for m in range(-n, n + 1):
            total += (
                sh.eval_A(n, m, x)
                * (np.conj(sh.ynm(n, m, zh)) * (0.3 * R) ** n / ((2 * n + 1) * R ** (n + 3)))[:, None, None]
            )
    r = x - z
    d = np.linalg.norm(r, axis=1)
    direct = (np.eye(3) - 3 * r[:, :, None] * r[:, None, :] / d[:, None, None] ** 2) / (4 * np.pi * d[:, None, None] ** 3)
    assert_allclose(total.real, direct, rtol=0, atol=1e-8 * np.abs(direct).max())
    assert np.abs(total.imag).max() < 1e-12


# -------------------------------------------------------- projection matrices


def test_projection_C_entries():
    pm = sh.projection_matrices(sh.sphere_quadrature(6))
    assert_allclose(pm.C[1, 2], -2 * np.sqrt(3), atol=1e-12)
    assert abs(pm.C[1, 0]) < 1e-13
    assert abs(np.linalg.det(pm.C)) > 0
    assert pm.cond_C < 10


def test_projection_D_is_zero():
    pm = sh.projection_matrices(sh.sphere_quadrature(6))
    assert_allclose(pm.D, 0, atol=1e-13)
    assert not pm.d_invertible
    assert pm.notes


def test_projection_needs_exactness():
    with pytest.raises(PrecisionError):
        sh.projection_matrices(sh.sphere_quadrature(2))


# ------------------------------------------------------------ solid tables


def test_solid_tables_match_scalar_routines():
    p = np.random.default_rng(12).normal(size=(7, 3))
    T = sh.solid_table(4, p)
    G = sh.solid_grad_table(4, p)
    H = sh.solid_hessian_table(4, p)
    for k, (n, m) in enumerate(sh.harmonic_index(4)):
        assert_allclose(T[:, k], sh.solid_harmonic(n, m, p), atol=1e-13)
    for k, (n, m) in enumerate(sh.harmonic_index(4, 1)):
        assert_allclose(G[:, k], sh.solid_grad(n, m, p), atol=1e-12)
        assert_allclose(H[:, k], sh.solid_hessian(n, m, p), atol=1e-12)


def test_solid_harmonic_at_origin():
    assert_allclose(sh.solid_harmonic(0, 0, [0, 0, 0]), Y00)
    assert sh.solid_harmonic(2, 1, [0, 0, 0]) == 0


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 6), data=st.data())
def test_solid_harmonic_homogeneity(n, data):
    m = data.draw(st.integers(-n, n))
    s = data.draw(st.floats(0.1, 10))
    p = np.array([0.3, -0.4, 0.5])
    assert_allclose(sh.solid_harmonic(n, m, s * p), s**n * sh.solid_harmonic(n, m, p), rtol=1e-11, atol=1e-300)
