from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from mattisglass.model import SpecError, basic_model_spec, ising_spec
from mattisglass.variational import (
    PathParameterization, PhiFunction, RateFunctionTable, check_phi_properties, conjugate_table, legendre_dual,
    limit_free_energy, phi_of_x, rate_function_IG, rate_function_J_basic,
)

SMALL = dict(n_m=17, n_x=65)


@pytest.mark.parametrize("x", [0.0, 0.4, -1.3])
def test_no_interaction_phi_is_minus_log_cosh(x):
    spec = ising_spec(t=0.0)
    assert PhiFunction(spec)(x) == pytest.approx(-math.log(math.cosh(x)), abs=1e-10)


def test_phi_nondecreasing_in_k():
    spec = basic_model_spec(0.5)
    v0 = phi_of_x([0.0], spec, k=0).value
    v1 = phi_of_x([0.0], spec, k=1).value
    assert v1 >= v0 - 1e-12


def test_phi_rs_stationarity():
    # at k=0 the optimal overlap solves q = E tanh^2(sqrt(2t*2q) g + x) for xi = a^2
    spec = basic_model_spec(0.6)
    res = phi_of_x([0.3], spec, k=0)
    q = float(res.path.values[-1, 0, 0])
    z, w = np.polynomial.hermite_e.hermegauss(120)
    w = w / w.sum()
    rhs = float(w @ np.tanh(math.sqrt(4 * spec.t * q) * z + 0.3) ** 2)
    assert q == pytest.approx(rhs, abs=1e-5)


def test_legendre_dual_synthetic_quadratic():
    phi = lambda x: -0.5 * float(np.dot(x, x))
    assert legendre_dual(phi, [1.0]).value == pytest.approx(0.5, abs=1e-9)
    ms = np.linspace(-2, 2, 21)
    vals = np.array([legendre_dual(phi, [m]).value for m in ms])
    assert np.all(np.diff(vals, 2) >= -1e-9)
    assert legendre_dual(phi, [0.5, -1.0]).value == pytest.approx(0.625, abs=1e-8)


def test_entropy_conjugate_and_forbidden_region():
    spec = ising_spec(t=0.0)
    phi = PhiFunction(spec)
    assert abs(legendre_dual(phi, [0.0], 1.0).value) <= 1e-9
    m = 0.6
    entropy = 0.5 * ((1 + m) * math.log(1 + m) + (1 - m) * math.log(1 - m))
    assert legendre_dual(phi, [m], 1.0).value == pytest.approx(entropy, abs=1e-6)
    assert legendre_dual(phi, [1.5], 1.0).value == math.inf


def test_conjugate_table_convex():
    spec = basic_model_spec(0.3)
    table = conjugate_table(PhiFunction(spec), spec, **SMALL)
    assert np.all(np.isfinite(table.values))
    assert np.all(np.diff(table.values, 2) >= -1e-7)
    assert table.meta["phi_evaluations"] > 0


def _entropy_conjugate(m):
    m = np.abs(np.asarray(m, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * ((1 + m) * np.log1p(m) + (1 - m) * np.log1p(-m))
    return np.where(m >= 1.0, math.log(2.0), out)


def test_J_nonnegative_and_vanishes_at_argmax():
    spec = basic_model_spec(0.2)
    J = rate_function_J_basic(spec, **SMALL)
    assert J.values.min() >= -1e-9
    assert np.allclose(J.values, J.values[::-1], atol=1e-7)  # m -> -m symmetry
    m_star = np.array(J.meta["argmax_refined"])
    sup = J.meta["sup_G_minus_phistar"]
    phistar = legendre_dual(PhiFunction(spec), m_star, 1.0).value
    assert -float(m_star @ m_star) + phistar + sup == pytest.approx(0.0, abs=1e-9)


def test_J_without_disorder_closed_form():
    # t = 0: phi* is the binary entropy conjugate; m* solves m = tanh(2m)
    spec = basic_model_spec(0.0)
    J = rate_function_J_basic(spec, **SMALL)
    m_star = brentq(lambda m: m - math.tanh(2 * m), 0.5, 1.0)
    m = J.m[:, 0]
    want = m_star ** 2 - m ** 2 + _entropy_conjugate(m) - _entropy_conjugate(m_star)
    assert np.max(np.abs(J.values - want)) <= 1e-6
    assert abs(J.meta["argmax_refined"][0]) == pytest.approx(m_star, abs=1e-5)


def test_J_rejects_other_models():
    with pytest.raises(SpecError):
        rate_function_J_basic(ising_spec(xi_betas=(0.0, 0.5), t=0.1), **SMALL)


def test_IG_shift():
    spec = basic_model_spec(0.3)
    phi = PhiFunction(spec)
    table = conjugate_table(phi, spec, **SMALL)
    rate = rate_function_IG("0", spec, phi, table, **SMALL)
    assert rate.values.min() == pytest.approx(0.0, abs=1e-9)
    assert rate.meta["sup_G_minus_phistar"] == pytest.approx(-phi([0.0]), abs=1e-7)


def test_limit_without_mattis_term_is_phi0():
    spec = basic_model_spec(0.4)
    phi = PhiFunction(spec)
    res = limit_free_energy("0", spec, phi=phi, **SMALL)
    assert res.value == pytest.approx(phi([0.0]), abs=1e-7)
    assert limit_free_energy("0", ising_spec(t=0.0), **SMALL).value == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("spec, G", [
    (basic_model_spec(0.2), "m_1^2"),
    (basic_model_spec(0.5), "m_1^2"),
    (basic_model_spec(0.3), "0.5*m_1 + m_1^4"),
    (ising_spec(xi_betas=(0.0, 0.4, 0.3), t=0.2, G="m^2"), "m^2"),
    (ising_spec(xi_betas=(0.2, 0.5), t=0.1, G="abs(m)"), "abs(m)"),
])
def test_reduced_matches_infsup(spec, G):
    phi = PhiFunction(spec)
    a = limit_free_energy(G, spec, "reduced", phi=phi, **SMALL).value
    b = limit_free_energy(G, spec, "infsup", phi=phi, n_x=65, n_outer=17).value
    assert a == pytest.approx(b, abs=1e-6)


def test_phi_property_report():
    spec = basic_model_spec(0.3)
    pairs = np.array([[[-1.0], [0.5]], [[0.2], [1.1]], [[-0.3], [-0.1]]])
    rep = check_phi_properties(PhiFunction(spec), spec, pairs, np.array([[0.0], [0.7]]))
    assert rep.lipschitz_ratio <= rep.lipschitz_bound + 1e-9
    assert rep.min_concavity_defect >= -1e-9
    assert rep.dq_gaps[-1] <= rep.dq_gaps[0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3), st.integers(1, 2), st.data())
def test_decoded_paths_are_valid(k, D, data):
    par = PathParameterization(k, D, 2.0)
    theta = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=par.n_params, max_size=par.n_params)))
    path = par.decode(theta)
    path.check()
    assert np.linalg.norm(path.values[-1]) <= 2.0 + 1e-9


def test_table_csv_roundtrip(tmp_path):
    table = RateFunctionTable(np.array([[-1.0], [0.0], [1.0]]), np.array([math.inf, 0.1 / 3, 2.0]))
    path = tmp_path / "t.csv"
    table.to_csv(path)
    back = RateFunctionTable.from_csv(path)
    assert np.array_equal(back.m, table.m)
    assert np.array_equal(back.values, table.values)
    assert path.read_text().splitlines()[0] == "m_1,value"


@pytest.mark.parametrize("x", [0.5, 1.0, 1.5])
def test_weak_coupling_expansion_fixes_field_scale(x):
    # phi(x) = -log cosh x + t tanh^4 x + O(t^2); half the cavity-field scale would halve the t term
    t = 0.01
    spec = basic_model_spec(math.sqrt(2 * t))
    excess = PhiFunction(spec)(x) + math.log(math.cosh(x))
    assert abs(excess - t * math.tanh(x) ** 4) <= 2 * t ** 2
