import csv
import json

import numpy as np
import pytest

from diskpsc.cli import RunConfig, report_plotdata, run
from diskpsc.errors import ConfigurationError


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("DISKPSC_OUT", str(tmp_path))
    return tmp_path


def _run(capsys, *argv):
    code = run(list(argv))
    o, e = capsys.readouterr()
    return code, (json.loads(o) if o.strip() else None), (json.loads(e) if e.strip() else None)


def test_mesh_gen(out, capsys):
    code, rep, _ = _run(capsys, "mesh", "gen", "--level", "2")
    assert code == 0
    data = json.loads((out / "mesh_L2.json").read_text())
    assert data["refinement_level"] == 2 and len(data["boundary_loop"]) == 24
    assert rep["quality"]["min_edge_length"] > 0


def test_lambda1_hemisphere(out, capsys):
    code, rep, _ = _run(capsys, "lambda1", "--metric", "hemisphere", "--level", "5")
    assert code == 0
    assert 0.98 <= rep["lambda1"] <= 1.02
    assert rep["membership"]["verdict"] == "yes"


def test_lambda1_metric_file(out, capsys, tmp_path):
    from diskpsc.mesh import generate_disk_mesh
    from diskpsc.metric import named_metric

    named_metric(generate_disk_mesh(4), "hemisphere").save(tmp_path / "h.json")
    code, rep, _ = _run(capsys, "lambda1", "--metric", str(tmp_path / "h.json"), "--level", "3")
    assert code == 0 and abs(rep["lambda1"] - 1) < 0.02


def test_path_build_and_sweep_roundtrip(out, capsys):
    code, _, _ = _run(capsys, "path", "build", "--from", "hemisphere", "--to", "hemisphere", "--level", "3", "-N", "8")
    assert code == 0
    code, rep, _ = _run(capsys, "path", "sweep", "--path", str(out / "path.json"), "--level", "3")
    assert code == 0 and rep["in_M"]
    sweep = json.loads((out / "sweep.json").read_text())
    assert np.ptp(sweep["lambda"]) == 0
    code, rep, _ = _run(capsys, "report", "plotdata", "--input", str(out / "sweep.json"))
    assert code == 0 and any("Hslice" in w for w in rep["warnings"])
    rows = list(csv.reader(l for l in (out / "plotdata" / "lambda_t.csv").read_text().splitlines() if not l.startswith("#")))
    assert len({r[1] for r in rows}) == 1


def test_moser_run(out, capsys):
    _run(capsys, "path", "build", "--from", "scaled_flat:sqrt2", "--to", "hemisphere", "--level", "4", "-N", "16")
    code, rep, _ = _run(capsys, "moser", "run", "--path", str(out / "path.json"), "--seed-density", "3")
    assert code == 0
    assert rep["max_compatibility"] < 1e-9 * 2 * np.pi


def test_warped_build(out, capsys):
    code, rep, _ = _run(
        capsys, "concordance", "build", "--kind", "warped", "--from", "scaled_flat:sqrt2", "--to", "hemisphere",
        "--level", "5", "-N", "64",
    )
    assert code == 0
    assert rep["verdict"] == "pass" and rep["mode"] == "weak-min"
    cyl = out / "certificate_cylinder.json"
    code, rep2, _ = _run(capsys, "concordance", "verify", "--cylinder", str(cyl), "--out", str(out / "again.json"))
    assert code == 0 and rep2["min_R_g"] == rep["min_R_g"]
    code, rep3, _ = _run(capsys, "report", "plotdata", "--input", str(out / "certificate.json"))
    assert code == 0 and not rep3["warnings"]
    minR = np.loadtxt(out / "plotdata" / "minR_t.csv", delimiter=",", comments="#")
    assert np.all(minR[:, 1] > 0)


def test_outward_plotdata(out, capsys):
    code, _, _ = _run(
        capsys, "concordance", "build", "--kind", "outward", "--from", "hemisphere", "--to", "hemisphere",
        "--level", "4", "-N", "16", "--epsilon", "0.05",
    )
    assert code == 0
    report_plotdata(json.loads((out / "certificate.json").read_text()), out / "p")
    h = np.loadtxt(out / "p" / "Hslice_t.csv", delimiter=",", comments="#")[:, 1]
    assert h[0] == 0 and np.all(np.diff(h) > 0)


def test_flat_plain_fails(out, capsys):
    code, rep, _ = _run(
        capsys, "concordance", "build", "--kind", "plain", "--from", "flat", "--to", "flat", "--level", "4", "-N", "8",
    )
    assert code == 2 and rep["verdict"] == "fail"
    assert rep["max_abs_H_cyl"] == pytest.approx(1, abs=1e-2)
    code, _, _ = _run(capsys, "concordance", "verify", "--cylinder", str(out / "certificate_cylinder.json"))
    assert code == 2


def test_deterministic_reports(out, capsys):
    args = ["concordance", "build", "--kind", "cylinder", "--metric", "hemisphere", "--level", "3"]
    _run(capsys, *args, "--out", str(out / "a.json"))
    _run(capsys, *args, "--out", str(out / "b.json"))
    assert (out / "a.json").read_bytes() == (out / "b.json").read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["lambda1", "--metric", "sphere"],
        ["lambda1"],
        ["lambda1", "--metric", "flat", "--level", "11"],
        ["concordance", "build", "--kind", "warped", "--level", "3"],
        ["path", "sweep", "--path", "/nonexistent/path.json"],
        ["frobnicate"],
    ],
)
def test_errors_exit_1(out, capsys, argv):
    code, o, e = _run(capsys, *argv)
    assert code == 1 and o is None
    assert {"error", "message"} <= set(e)


def test_config_file(out, capsys, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"level": 3, "nonsense": 1}))
    code, _, e = _run(capsys, "lambda1", "--metric", "flat", "--config", str(tmp_path / "cfg.json"))
    assert code == 1 and e["error"] == "ConfigurationError"
    (tmp_path / "cfg.json").write_text(json.dumps({"level": 3}))
    code, rep, _ = _run(capsys, "lambda1", "--metric", "flat", "--config", str(tmp_path / "cfg.json"))
    assert code == 0 and rep["membership"]["level"] == 3


def test_runconfig_validation():
    with pytest.raises(ConfigurationError):
        RunConfig(substeps=2).validate()
    assert RunConfig().validate().level == 5
