import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from geomag import layerpot as lp
from geomag import polarization as pz
from geomag.errors import DomainError

MATERIAL_SETS = {
    "high_mu": pz.Materials(eps_s=2.0, mu=(50.0,), eps=(1.0,), sigma=(0.0,)),
    "conducting": pz.Materials(eps_s=2.0, mu=(3.0,), eps=(1.0,), sigma=(1.0,), omega=1e-6),
    "moderate_shell": pz.Materials(eps_s=1.3, mu=(2.0,), eps=(4.0,), sigma=(0.0,)),
}


@pytest.fixture(scope="module")
def ops():
    return {r: lp.assemble_K_star(lp.make_unit_sphere_mesh(r)) for r in (1, 2, 3)}


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -------------------------------------------------------------- parameters


def test_lambda_mu():
    assert pz.lambda_params(pz.Materials(mu=(2.0,)), 0).lam_mu == pytest.approx(1.5)


def test_lambda_eps_corrected():
    assert pz.lambda_params(pz.Materials(eps_s=2.0, eps0=1.0), 0).lam_eps == pytest.approx(1.5)


def test_lambda_eps_degenerate_form_is_half():
    m = pz.Materials(eps_s=3.7)
    assert pz.lambda_params(m, 0, eps_form="degenerate").lam_eps == 0.5


def test_lambda_gamma_small_omega_limit():
    m = pz.Materials(eps0=0.5, eps_s=1.0, mu=(2.0,), eps=(1.0,), sigma=(1.0,), omega=1e-6)
    lam = pz.lambda_params(m, 0).lam_gamma
    assert abs(lam - 0.5) < 1e-5


def test_equal_shell_and_background_rejected():
    with pytest.raises(DomainError):
        pz.lambda_params(pz.Materials(eps_s=1.0, eps0=1.0), 0)


def test_zero_contrast_mu_rejected():
    with pytest.raises(DomainError):
        pz.lambda_params(pz.Materials(mu=(1.0,)), 0)


@pytest.mark.parametrize(
    "kw", [{"mu0": 0.0}, {"eps_s": -1.0}, {"omega": 0.0}, {"mu": (-1.0,)}, {"sigma": (-1.0,)},
           {"mu": (1.0, 2.0)}],
)
def test_material_validation(kw):
    with pytest.raises(DomainError):
        pz.Materials(**kw)


def test_anomaly_index_checked():
    with pytest.raises(DomainError):
        pz.lambda_params(pz.Materials(), 3)


def test_with_anomaly_copy():
    m = pz.Materials(mu=(2.0, 3.0), eps=(1.0, 1.0), sigma=(0.0, 0.0))
    m2 = m.with_anomaly(1, mu=7.0)
    assert m2.mu == (2.0, 7.0)
    assert m.mu == (2.0, 3.0)


# ---------------------------------------------------------- closed form ball


def test_ball_P0_is_pi():
    t = pz.analytic_ball_tensors(pz.Materials(eps_s=2.0, eps0=1.0), 0)
    assert_allclose(t.P0, np.pi * np.eye(3), rtol=1e-14)


def test_ball_mu0M_in_shell_limit():
    m = pz.Materials(eps_s=1.0 + 1e-8, eps0=1.0, mu=(2.0,))
    t = pz.analytic_ball_tensors(m, 0)
    assert_allclose(m.mu0 * t.M, np.pi * np.eye(3), rtol=1e-7)


def test_ball_M_finite_near_zero_contrast():
    base = pz.Materials(eps_s=2.0)
    ms = [pz.analytic_ball_tensors(base.with_anomaly(0, mu=1.0 + e), 0).M[0, 0] for e in (1e-3, 1e-6, -1e-6)]
    limit = pz.ball_mu0M(base, 1.0) / base.mu0
    assert_allclose(ms, limit, rtol=2e-3)
    k = 3 * 2.0 / (2.0 + 2.0)
    assert_allclose(limit, 4 * np.pi / 3 * k)


def test_ball_mu0M_closed_form_matches_tensors():
    for mu in (0.3, 2.0, 50.0):
        m = pz.Materials(eps_s=2.0, mu=(mu,))
        assert_allclose(pz.analytic_ball_tensors(m, 0).M[0, 0] * m.mu0, pz.ball_mu0M(m, mu), rtol=1e-13)


def test_combination_identity():
    m = MATERIAL_SETS["conducting"]
    t = pz.analytic_ball_tensors(m, 0)
    assert_allclose(t.P, m.mu0 * t.M - m.eps0 * t.D - t.P0, rtol=0, atol=0)


def test_closed_form_only_for_ball():
    with pytest.raises(DomainError):
        pz.analytic_ball_tensors(pz.Materials(), 0, shape="cube")


def test_d_sign_switch_changes_D_only():
    m = pz.Materials(eps_s=2.0, mu=(3.0,), eps=(5.0,), sigma=(0.0,))
    plus = pz.analytic_ball_tensors(m, 0, d_sign=1)
    minus = pz.analytic_ball_tensors(m, 0, d_sign=-1)
    assert_allclose(plus.M, minus.M)
    assert_allclose(plus.P0, minus.P0)
    assert not np.allclose(plus.D, minus.D)


# ----------------------------------------------------------------- BEM vs ball


@pytest.mark.parametrize("name", sorted(MATERIAL_SETS))
def test_bem_matches_closed_form_refinement_3(name, ops):
    m = MATERIAL_SETS[name]
    bem = pz.compute_tensors(ops[3], m, 0)
    ref = pz.analytic_ball_tensors(m, 0)
    for k in ("P0", "D", "M", "P"):
        if np.linalg.norm(getattr(ref, k)) > 0:
            assert _rel(getattr(bem, k), getattr(ref, k)) <= 0.02, k


def test_P0_refinement_3():
    bem = pz.compute_tensors(lp.make_unit_sphere_mesh(3), pz.Materials(eps_s=2.0), 0)
    assert _rel(bem.P0, np.pi * np.eye(3)) <= 0.02


@pytest.mark.parametrize("ref,tol", [(1, 0.08), (2, 0.04), (3, 0.02)])
def test_convergence_ladder(ref, tol, ops):
    worst = 0.0
    for m in MATERIAL_SETS.values():
        bem = pz.compute_tensors(ops[ref], m, 0)
        exact = pz.analytic_ball_tensors(m, 0)
        for k in ("P0", "D", "M", "P"):
            if np.linalg.norm(getattr(exact, k)) > 0:
                worst = max(worst, _rel(getattr(bem, k), getattr(exact, k)))
    assert worst <= tol


def test_errors_decrease_with_refinement(ops):
    m = MATERIAL_SETS["high_mu"]
    ref_t = pz.analytic_ball_tensors(m, 0)
    errs = [_rel(pz.compute_tensors(ops[r], m, 0).P, ref_t.P) for r in (1, 2, 3)]
    assert errs[0] > errs[1] > errs[2]


def test_bem_tensors_symmetric(ops):
    bem = pz.compute_tensors(ops[3], MATERIAL_SETS["high_mu"], 0)
    for k in ("P0", "D", "M", "P"):
        t = getattr(bem, k)
        assert np.linalg.norm(t - t.T) <= 1e-2 * np.linalg.norm(t)


def test_bem_combination_identity(ops):
    m = MATERIAL_SETS["moderate_shell"]
    bem = pz.compute_tensors(ops[2], m, 0)
    assert_allclose(bem.P, m.mu0 * bem.M - m.eps0 * bem.D - bem.P0, rtol=0, atol=0)


def test_D_vanishes_small_omega(ops):
    m = MATERIAL_SETS["conducting"]
    bem = pz.compute_tensors(ops[2], m, 0)
    assert np.linalg.norm(bem.D) <= 1e-5 * np.linalg.norm(bem.M)
    assert np.linalg.norm(bem.P - m.mu0 * bem.M + bem.P0) <= 1e-4 * np.linalg.norm(m.mu0 * bem.M)


@pytest.mark.parametrize("s", [0.1, 10.0])
def test_shape_scaling(s):
    mesh = lp.make_unit_sphere_mesh(2)
    m = MATERIAL_SETS["moderate_shell"]
    t1 = pz.compute_tensors(mesh, m, 0)
    ts = pz.compute_tensors(mesh.scaled(s), m, 0)
    for k in ("P0", "D", "M"):
        assert_allclose(getattr(ts, k), s**3 * getattr(t1, k), rtol=1e-10, atol=1e-10 * s**3 * np.abs(getattr(t1, k)).max())


def test_degenerate_lambda_eps_breaks_oracle(ops):
    m = MATERIAL_SETS["conducting"]
    bad = pz.compute_tensors(ops[2], m, 0, eps_form="degenerate")
    assert _rel(bad.P0, pz.analytic_ball_tensors(m, 0).P0) > 0.5


def test_d_sign_bem_tracks_closed_form(ops):
    m = pz.Materials(eps_s=2.0, mu=(3.0,), eps=(5.0,), sigma=(0.0,))
    for sign in (1, -1):
        bem = pz.compute_tensors(ops[3], m, 0, d_sign=sign)
        assert _rel(bem.D, pz.analytic_ball_tensors(m, 0, d_sign=sign).D) <= 0.02
    with pytest.raises(DomainError):
        pz.compute_tensors(ops[1], m, 0, d_sign=0)


def test_operator_reuse(ops):
    a = pz.compute_tensors(ops[2], MATERIAL_SETS["high_mu"], 0)
    b = pz.compute_tensors(ops[2], MATERIAL_SETS["high_mu"], 0)
    assert_allclose(a.P, b.P, rtol=0, atol=0)
    assert a.diagnostics["panels"] == 320


def test_as_dict_layout():
    d = pz.analytic_ball_tensors(MATERIAL_SETS["conducting"], 0).as_dict()
    assert set(d) == {"P0", "D", "M", "P"}
    assert np.array(d["D"]["im"]).shape == (3, 3)


# ----------------------------------------------------------- nonsingularity


def test_nonsingular_zero_contrast():
    m = pz.Materials(mu0=1.0, eps0=1.0, eps_s=2.0, mu=(1.0,), eps=(2.0,), sigma=(0.0,))
    d = pz.check_nonsingular(m, 0)
    assert_allclose(d.condition_value, 6 * m.mu0 * m.eps0 * m.gamma(0))
    assert d.nonsingular


def test_nonsingular_conducting_limit():
    m = MATERIAL_SETS["conducting"]
    d = pz.check_nonsingular(m, 0)
    assert abs(d.condition_value) > 1e5
    assert d.nonsingular


def test_constructed_root_is_singular():
    # the root is a negative permittivity, so it is fed to the condition directly
    g = pz.nonsingular_root_gamma(3.0, 1.0, 1.0, 1.0)
    assert abs(pz.nonsingular_condition(3.0, g, 1.0, 1.0, 1.0)) < 1e-14
    assert abs(pz.nonsingular_condition(3.0, g + 0.1, 1.0, 1.0, 1.0)) > 1e-2


def test_condition_matches_diagnostic():
    m = MATERIAL_SETS["moderate_shell"]
    d = pz.check_nonsingular(m, 0)
    assert d.condition_value == pz.nonsingular_condition(m.mu[0], m.gamma(0), m.mu0, m.eps_s, m.eps0)


@settings(max_examples=40, deadline=None)
@given(
    mu=st.floats(0.05, 100).filter(lambda x: abs(x - 1) > 1e-3),
    eps_s=st.floats(1.05, 10),
)
def test_ball_mu0M_monotone_and_positive(mu, eps_s):
    m = pz.Materials(eps_s=eps_s, mu=(mu,))
    v = pz.ball_mu0M(m, mu)
    assert v > 0
    assert pz.ball_mu0M(m, mu * 1.01) < v
    assert_allclose(pz.analytic_ball_tensors(m, 0).M[0, 0] * m.mu0, v, rtol=1e-10)
