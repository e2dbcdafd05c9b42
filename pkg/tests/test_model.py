from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mattisglass.model import (
    QUADRATIC_MATRIX, DiscretePath, MixtureXi, PathError, SpecError, basic_model_spec, dump_spec, grad_xi,
    ising_spec, load_spec, path_value, spec_from_dict, spec_hash, spec_to_dict, validate_spec, xi_eval,
)


def test_basic_model_constants():
    spec = basic_model_spec(0.4)
    assert spec.t == pytest.approx(0.08)
    assert spec.beta == pytest.approx(0.4)
    assert spec.lipschitz_bound == 1.0
    assert spec.h_table.shape == (2, 2, 1)


def test_xi_and_gradient():
    xi = MixtureXi("scalar-mixture", (0.5, 1.0, 0.3))
    a = 0.7
    assert xi_eval(xi, a) == pytest.approx(0.25 * a + a ** 2 + 0.09 * a ** 3)
    eps = 1e-6
    fd = (xi_eval(xi, a + eps) - xi_eval(xi, a - eps)) / (2 * eps)
    assert grad_xi(xi, a)[0, 0] == pytest.approx(fd, rel=1e-8)
    qm = MixtureXi(QUADRATIC_MATRIX, (0.5,))
    a2 = np.array([[0.3, 0.1], [0.1, 0.2]])
    assert xi_eval(qm, a2) == pytest.approx(0.25 * np.sum(a2 ** 2))
    assert np.allclose(grad_xi(qm, a2), 0.5 * a2)


def test_path_value_right_continuous():
    p = DiscretePath([0.3, 0.7], [0.1, 0.4, 0.9])
    assert path_value(p, 0.0)[0, 0] == 0.1
    assert path_value(p, 0.3)[0, 0] == 0.4
    assert path_value(p, 0.69)[0, 0] == 0.4
    assert path_value(p, 1.0)[0, 0] == 0.9
    with pytest.raises(ValueError):
        path_value(p, 1.5)


@pytest.mark.parametrize("zetas, values, field", [
    ([0.5, 0.4], [0.1, 0.2, 0.3], "q.zetas"),
    ([0.0], [0.1, 0.2], "q.zetas"),
    ([0.5], [0.3, 0.2], "q.values[1]"),
    ([], [-0.1], "q.values[0]"),
])
def test_path_validation(zetas, values, field):
    with pytest.raises(PathError) as err:
        DiscretePath(zetas, values).check()
    assert err.value.field == field


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["prior"].update(weights=[0.5, -0.5]), "prior.weights"),
    (lambda d: d["prior"].update(support=[[-2.0], [2.0]]), "prior.support"),
    (lambda d: d["chi"].update(probs=[0.5, 0.6]), "chi.probs"),
    (lambda d: d.update(G="m_2"), "G"),
    (lambda d: d.update(h=["tau_1*zeta"]), "h[0]"),
    (lambda d: d.update(t=-1.0), "t"),
    (lambda d: d.update(G="1/m"), "G"),
    (lambda d: d["xi"].update(kind="cubic"), "xi.kind"),
    (lambda d: d.pop("prior"), "prior"),
])
def test_spec_errors_name_the_field(mutate, field):
    doc = spec_to_dict(basic_model_spec(0.3))
    mutate(doc)
    with pytest.raises(SpecError) as err:
        validate_spec(spec_from_dict(doc))
    assert err.value.field == field


def test_json_roundtrip_and_hash(tmp_path):
    spec = ising_spec(xi_betas=(0.1, 0.5, 0.2), t=0.3, G="m^2 - 0.1*m")
    path = tmp_path / "spec.json"
    dump_spec(spec, path)
    back = load_spec(path)
    assert spec_to_dict(back) == spec_to_dict(spec)
    assert spec_hash(back) == spec_hash(spec)
    assert spec_hash(spec) != spec_hash(basic_model_spec(0.3))
    json.loads(path.read_text())


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(SpecError):
        load_spec(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=4), st.lists(st.floats(0.01, 0.99), min_size=3, max_size=3))
def test_sorted_cumulative_paths_validate(incs, zs):
    k = len(incs) - 1
    zetas = np.unique(np.round(np.sort(zs[:k]), 6))
    if zetas.size != k:
        return
    DiscretePath(zetas, np.cumsum(incs)).check()
