from __future__ import annotations

import json

import numpy as np
import pytest

from mattisglass.cli import main
from mattisglass.model import basic_model_spec, dump_spec, ising_spec, spec_to_dict
from mattisglass.variational import PhiFunction, conjugate_table


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _rows(text):
    lines = text.strip().splitlines()
    return lines[0].split(","), [[float(c) for c in line.split(",")] for line in lines[1:]]


@pytest.fixture
def spec_file(tmp_path):
    def write(spec, name="spec.json"):
        path = tmp_path / name
        dump_spec(spec, path)
        return str(path)
    return write


def test_psi_zero_path(capsys):
    code, out, _ = run(capsys, "psi", "--x", "0")
    assert code == 0
    cols, rows = _rows(out)
    assert cols == ["x_1", "psi"]
    assert rows == [[0.0, 0.0]]


def test_psi_constant_path_batch(capsys, spec_file):
    path = spec_file(ising_spec(h="tau_1", rademacher=False))
    code, out, _ = run(capsys, "psi", "--spec", path, "--path", '{"values": [[1.0]]}',
                       "--x", "0", "--x", "0.5", "--quad-nodes", "128")
    assert code == 0
    z, w = np.polynomial.hermite_e.hermegauss(200)
    w = w / w.sum()
    for x, val in _rows(out)[1]:
        assert val == pytest.approx(0.5 - float(w @ np.log(np.cosh(z + x))), rel=1e-9)


def test_malformed_spec_names_field(capsys, tmp_path):
    doc = spec_to_dict(basic_model_spec(0.2))
    doc["prior"]["weights"] = [0.5, -0.5]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, "psi", "--spec", str(path))
    assert code == 2
    assert "prior.weights" in err


def test_basic_flag_requires_basic_model(capsys, spec_file):
    code, _, err = run(capsys, "rate", "--basic", "--spec", spec_file(ising_spec(xi_betas=(0.0, 0.5), t=0.1)))
    assert code == 2 and "basic model" in err


def test_verify_rejects_oversized_n_before_work(capsys):
    code, out, err = run(capsys, "verify", "--n-list", "10,30")
    assert code == 2 and out == "" and "N=30" in err


def test_verify_corrupted_tolerance_fails(capsys):
    code, out, err = run(capsys, "verify", "--checks", "3", "--override", "psi_zero=-1")
    assert code == 1
    assert "psi_zero" in err
    report = json.loads(out)
    assert report[0]["status"] == "fail" and report[0]["tolerance"] == -1


def test_verify_subset_passes(capsys):
    code, out, _ = run(capsys, "verify", "--checks", "1,3,13")
    assert code == 0
    report = json.loads(out)
    assert [r["check"] for r in report] == ["psi_closed_form", "psi_zero", "expression_parser"]
    assert all(set(r) == {"check", "status", "measured", "tolerance", "seconds"} for r in report)


def test_rate_reruns_are_byte_identical(capsys, tmp_path):
    bodies = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(capsys, "rate", "--basic", "--grid", "9", "--out", str(out))[0] == 0
        bodies.append((out / "rate.csv").read_bytes())
        meta = json.loads((out / "rate.meta.json").read_text())
        assert meta["quantity"] == "J" and "threads" in meta and "spec_hash" in meta
    assert bodies[0] == bodies[1]
    assert bodies[0].startswith(b"m_1,value\n")


def test_rate_without_mattis_term(capsys, spec_file):
    spec = basic_model_spec(0.3).replace(G="0")
    code, out, _ = run(capsys, "rate", "--spec", spec_file(spec), "--grid", "9")
    assert code == 0
    phi = PhiFunction(spec)
    table = conjugate_table(phi, spec, n_m=9)
    _, rows = _rows(out)
    assert np.allclose([r[1] for r in rows], table.values - phi([0.0]), atol=1e-9)


def test_limit_fe_methods_agree(capsys):
    vals = []
    for method in ("reduced", "infsup"):
        code, out, _ = run(capsys, "limit-fe", "--method", method, "--grid", "17", "--format", "json")
        assert code == 0
        doc = json.loads(out)
        vals.append(doc["rows"][0][-1])
    assert vals[0] == pytest.approx(vals[1], abs=1e-6)


def test_enumerate_without_interaction(capsys, spec_file):
    path = spec_file(basic_model_spec(0.0).replace(G="0"))
    code, out, _ = run(capsys, "enumerate", "--spec", path, "--n-list", "4,6", "--samples", "3")
    assert code == 0
    cols, rows = _rows(out)
    assert cols == ["N", "seed", "free_energy_G", "free_energy_0"]
    assert len(rows) == 6
    assert all(abs(r[2]) < 1e-14 and abs(r[3]) < 1e-14 for r in rows)


def test_mcmc_histogram(capsys):
    code, out, err = run(capsys, "mcmc", "--n-list", "6", "--sweeps", "5000", "--burn-in", "100")
    assert code == 0 and "acceptance rate" in err
    _, rows = _rows(out)
    assert sum(r[-1] for r in rows) == pytest.approx(1.0)


def test_ldp_compare_without_interaction(capsys, spec_file, tmp_path):
    # t = 0: the exact rate is the entropy conjugate; the finite-N gap is the Stirling
    # correction, about 0.09 at the edge bins for N = 18
    path = spec_file(basic_model_spec(0.0).replace(G="0"))
    code, _, _ = run(capsys, "ldp-compare", "--spec", path, "--samples", "1", "--grid", "17", "--out", str(tmp_path))
    assert code == 0
    meta = json.loads((tmp_path / "ldp_compare.meta.json").read_text())
    gaps = [meta["sup_distance"][n] for n in ("10", "14", "18")]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 0.1
    _, rows = _rows((tmp_path / "ldp_compare.csv").read_text())
    interior = [r[-1] for r in rows if r[0] == 18 and abs(r[1]) <= 0.5]
    assert max(interior) <= 0.02


def test_bad_flags(capsys):
    assert run(capsys, "phi", "--quad-nodes", "1")[0] == 2
    assert run(capsys, "phi", "--x", "abc")[0] == 2
    assert run(capsys, "verify", "--override", "nonsense")[0] == 2
