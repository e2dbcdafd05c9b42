from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.hermite import hermgauss

from mattisglass.model import (
    QUADRATIC_MATRIX, DiscretePath, DisorderLaw, GeneralizedSpinMap, MattisFunction, MixtureXi, ModelSpec,
    PathError, SpinPrior, basic_model_spec, ising_spec, validate_spec,
)
from mattisglass.parisi import (
    QuadratureRule, effective_path, parisi_P, psi_eval, terminal_condition, theta_eval, theta_integral,
)

TAU = ising_spec(h="tau_1", rademacher=False)


def _gauss(n=200):
    z, w = hermgauss(n)
    return math.sqrt(2.0) * z, w / math.sqrt(math.pi)


def rs_closed_form(qbar, x):
    z, w = _gauss()
    return qbar / 2.0 - float(np.sum(w * np.log(np.cosh(math.sqrt(qbar) * z + x))))


def one_rsb_reference(q0, q1, zeta, x):
    """Two nested quadratures written out directly (Ising spins, h = tau)."""
    z, w = _gauss(120)
    outer = []
    for y in math.sqrt(q0) * z:
        inner = np.log(np.cosh(y + math.sqrt(q1 - q0) * z + x)) - q1 / 2.0
        outer.append(math.log(float(np.sum(w * np.exp(zeta * inner)))) / zeta)
    return -float(np.sum(w * np.array(outer)))


def test_quadrature_rule_moments():
    rule = QuadratureRule.gauss_hermite(32)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert abs(rule.expect(lambda g: g)) < 1e-12
    assert abs(rule.expect(lambda g: g ** 3)) < 1e-12
    assert rule.expect(lambda g: g ** 2) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        QuadratureRule.gauss_hermite(1)


def test_theta_examples():
    assert theta_eval(MixtureXi("scalar-mixture", (0.0, 1.0)), 0.5) == pytest.approx(0.25)
    assert theta_eval(MixtureXi("scalar-mixture", (0.0, 0.0, 1.0)), 1.0) == pytest.approx(2.0)
    assert theta_eval(MixtureXi("scalar-mixture", (0.3, 0.2, 0.7)), 0.0) == 0.0


def test_terminal_condition_examples():
    assert terminal_condition([0.0], [1.0], [0.0], 0.0, TAU) == pytest.approx(0.0, abs=1e-15)
    assert terminal_condition([0.0], [1.0], [0.5], 0.0, TAU) == pytest.approx(math.log(math.cosh(0.5)))
    assert terminal_condition([0.0], [1.0], [0.0], 1.0, TAU) == pytest.approx(-0.5)


@pytest.mark.parametrize("qbar", [0.25, 1.0, 2.0])
@pytest.mark.parametrize("x", [0.0, 0.5, -0.5])
def test_rs_closed_form(qbar, x):
    ref = rs_closed_form(qbar, x)
    assert psi_eval(DiscretePath.constant(qbar), [x], TAU, 128) == pytest.approx(ref, rel=1e-8)
    assert psi_eval(DiscretePath.constant(qbar), [x], TAU) == pytest.approx(ref, rel=1e-4)


@pytest.mark.parametrize("q0, q1, zeta, x", [(0.2, 0.9, 0.4, 0.3), (0.0, 0.5, 0.7, -1.0), (0.5, 1.5, 0.1, 0.0)])
def test_one_step_against_direct_nesting(q0, q1, zeta, x):
    path = DiscretePath([zeta], [q0, q1])
    assert psi_eval(path, [x], TAU, 64) == pytest.approx(one_rsb_reference(q0, q1, zeta, x), rel=1e-9, abs=1e-12)


def test_rademacher_chi_gauge():
    # h = tau * chi with symmetric chi has the same psi as h = tau (spin flip symmetry)
    path = DiscretePath([0.5], [0.2, 0.8])
    assert psi_eval(path, [0.7], basic_model_spec(0.3)) == pytest.approx(psi_eval(path, [0.7], TAU), abs=1e-13)


def _vector_spec():
    spec = ModelSpec(D=2, d=2, L=1, xi=MixtureXi(QUADRATIC_MATRIX, (0.7,)),
                     prior=SpinPrior([[1.0, 0.0], [0.0, 1.0], [-0.6, -0.8]], [0.3, 0.3, 0.4]),
                     chi=DisorderLaw([[1.0]], [1.0]), h=GeneralizedSpinMap(("tau_1", "tau_2"), 2, 1),
                     G=MattisFunction("0", 2), t=0.3, q=DiscretePath.zero(2))
    return validate_spec(spec)


def test_vector_rs_against_cholesky_quadrature():
    spec = _vector_spec()
    q = np.array([[0.5, 0.2], [0.2, 0.3]])
    x = np.array([0.4, -0.2])
    z, w = _gauss(60)
    chol = np.linalg.cholesky(q)
    g = np.stack(np.meshgrid(z, z, indexing="ij"), -1).reshape(-1, 2) @ chol.T
    ww = np.outer(w, w).ravel()
    sup, pw = spec.prior.support, spec.prior.weights
    expo = np.log(pw) + g @ sup.T - 0.5 * np.einsum("si,ij,sj->s", sup, q, sup) + sup @ x
    top = expo.max(axis=1, keepdims=True)
    ref = -float(ww @ (np.log(np.exp(expo - top).sum(axis=1)) + top[:, 0]))
    assert psi_eval(DiscretePath.constant(q), x, spec, 48) == pytest.approx(ref, rel=1e-10)


def test_rank_deficient_increment():
    spec = _vector_spec()
    q = np.array([[0.4, 0.0], [0.0, 0.0]])
    val = psi_eval(DiscretePath.constant(q), [0.1, 0.2], spec)
    jitter = psi_eval(DiscretePath.constant(q + 1e-12 * np.eye(2)), [0.1, 0.2], spec)
    assert val == pytest.approx(jitter, abs=1e-9)


def test_psi_zero_path_zero_field():
    for spec in (TAU, basic_model_spec(0.4), _vector_spec()):
        assert abs(psi_eval(DiscretePath.zero(spec.D), np.zeros(spec.d), spec)) <= 1e-12


def test_non_monotone_path_rejected():
    with pytest.raises(PathError):
        psi_eval(DiscretePath([0.5], [0.6, 0.2]), [0.0], TAU)


def test_effective_path_examples():
    xi = MixtureXi("scalar-mixture", (0.0, 1.0))
    q = DiscretePath([0.4], [0.1, 0.3])
    same = effective_path(q, 0.5, xi, DiscretePath.zero(1))
    assert np.allclose(same.values, q.values) and np.allclose(same.zetas, q.zetas)
    assert np.allclose(effective_path(DiscretePath.zero(1), 0.0, xi, DiscretePath([0.5], [0.1, 0.2])).values, 0.0)
    # cavity-field scale: q + 2 t grad xi(p)
    eff = effective_path(DiscretePath.zero(1), 1.0, xi, DiscretePath.constant(0.3))
    assert eff.values[0, 0, 0] == pytest.approx(1.2)
    merged = effective_path(q, 1.0, xi, DiscretePath([0.7], [0.1, 0.2]))
    assert np.allclose(merged.zetas, [0.4, 0.7])
    assert np.allclose(merged.values.ravel(), [0.1 + 0.4, 0.3 + 0.4, 0.3 + 0.8])


def test_parisi_P_examples():
    spec = basic_model_spec(0.2)  # t = 0.02
    p = DiscretePath.constant(0.1)
    want = psi_eval(DiscretePath.constant(2 * 0.02 * 0.2), [0.0], spec) - 0.02 * 0.01
    assert parisi_P(p, [0.0], spec) == pytest.approx(want, abs=1e-14)
    assert parisi_P(DiscretePath.zero(1), [0.3], spec) == pytest.approx(psi_eval(spec.q, [0.3], spec))
    t0 = ising_spec(t=0.0)
    assert parisi_P(DiscretePath([0.5], [0.2, 0.9]), [1.0], t0) == pytest.approx(-math.log(math.cosh(1.0)), abs=1e-12)


def test_theta_integral_step_sum():
    xi = MixtureXi("scalar-mixture", (0.0, 1.0))
    p = DiscretePath([0.25, 0.5], [0.1, 0.2, 0.4])
    assert theta_integral(xi, p) == pytest.approx(0.25 * 0.01 + 0.25 * 0.04 + 0.5 * 0.16)


def _paths(max_k=3):
    @st.composite
    def build(draw):
        k = draw(st.integers(0, max_k))
        zetas = sorted(draw(st.lists(st.floats(0.02, 0.98), min_size=k, max_size=k, unique=True)))
        if any(b - a < 1e-3 for a, b in zip(zetas, zetas[1:])):
            zetas = list(np.linspace(0.1, 0.9, k))
        incs = draw(st.lists(st.floats(0.0, 0.5), min_size=k + 1, max_size=k + 1))
        return DiscretePath(zetas, np.cumsum(incs))
    return build()


@settings(max_examples=30, deadline=None)
@given(_paths(2), st.floats(-1.5, 1.5), st.floats(0.05, 0.95))
def test_refinement_invariance(path, x, where):
    bp = path.breakpoints
    seg = min(int(np.searchsorted(bp, where, side="right")) - 1, path.k)
    s_new = bp[seg] + 0.5 * (bp[seg + 1] - bp[seg])
    refined = DiscretePath(np.insert(path.zetas, seg, s_new), np.insert(path.values, seg, path.values[seg], axis=0))
    assert abs(psi_eval(refined, [x], TAU) - psi_eval(path, [x], TAU)) <= 1e-9


@settings(max_examples=10, deadline=None)
@given(_paths(2), st.floats(-1.0, 1.0))
def test_quadrature_convergence(path, x):
    # path values up to 1.0; the gap at 32 vs 64 nodes stays below 1e-7 on this range
    vals = {n: psi_eval(path, [x], TAU, n) for n in (8, 16, 32, 64)}
    gaps = [abs(vals[n] - vals[2 * n]) for n in (8, 16, 32)]
    assert gaps[-1] <= 1e-7
    for a, b in zip(gaps, gaps[1:]):
        assert b <= a or b < 1e-12  # below ~1e-12 the gaps are round-off


@settings(max_examples=20, deadline=None)
@given(_paths(1), st.floats(-2, 2), st.floats(-2, 2))
def test_concave_and_lipschitz_in_x(path, a, b):
    spec = basic_model_spec(0.3)
    fa, fb = psi_eval(path, [a], spec), psi_eval(path, [b], spec)
    mid = psi_eval(path, [(a + b) / 2], spec)
    assert mid - (fa + fb) / 2 >= -1e-8
    assert abs(fa - fb) <= spec.lipschitz_bound * abs(a - b) + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_theta_nonnegative(a, betas):
    assert theta_eval(MixtureXi("scalar-mixture", tuple(betas)), a) >= -1e-12
    m = np.array([[a, 0.3 * a], [0.3 * a, 0.5]])
    assert theta_eval(MixtureXi(QUADRATIC_MATRIX, (betas[0],)), m) >= -1e-12
