import csv
import json

import numpy as np
import pytest

from c2stadium.cli import main


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "quad.json").write_text("[1, 0, -1]")
    return tmp_path


def write_cfg(d, name, **cfg):
    p = d / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_scan_rows(workdir):
    cfg = write_cfg(workdir, "scan.json", shape="quad.json", alpha=0.05, n=[0, 1, 2, 3])
    out = workdir / "scan.csv"
    assert main(["smallsep", "scan", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [int(r["n"]) for r in rows] == [0, 1, 2, 3]
    assert rows[0]["verdict"] == "elliptic"
    assert float(rows[0]["zeta"]) == pytest.approx(0.3868989235658745, abs=1e-10)
    assert all(r["verdict"] == "no-solution" for r in rows[1:])


def test_scan_parallel_matches_serial(workdir):
    cfg = write_cfg(workdir, "scan.json", shape="quad.json", alphas=[0.05, 0.03], n=[0, 1])
    a, b = workdir / "a.csv", workdir / "b.csv"
    assert main(["smallsep", "scan", "--config", cfg, "--out", str(a)]) == 0
    assert main(["smallsep", "scan", "--config", cfg, "--out", str(b), "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_empty_range(workdir):
    cfg = write_cfg(workdir, "scan.json", shape="quad.json", alpha=0.05, n=[])
    out = workdir / "scan.csv"
    assert main(["smallsep", "scan", "--config", cfg, "--out", str(out)]) == 0
    assert out.read_text() == ""


def test_missing_shape_file(workdir, capsys):
    cfg = write_cfg(workdir, "scan.json", shape="nope.json", alpha=0.05, n=[0])
    assert main(["smallsep", "scan", "--config", cfg]) == 2
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["level"] == "error" and "not found" in diag["message"]


def test_bad_parameters(workdir):
    assert main(["smallsep", "scan", "--config", str(workdir / "absent.json")]) == 2
    cfg = write_cfg(workdir, "bad.json", shape="quad.json", alpha=2.0)
    assert main(["smallsep", "orbit", "--config", cfg]) == 2
    assert main(["table", "--config", cfg, "--seed", "-1"]) == 2
    assert main(["nonsense"]) == 2


def test_table_command(workdir):
    cfg = write_cfg(workdir, "t.json", shape="quad.json", alpha=0.1, L=1.0, samples=64)
    out = workdir / "t.json.out"
    assert main(["table", "--config", cfg, "--out", str(out), "--format", "json"]) == 0
    rows = json.loads(out.read_text())
    assert len(rows) == 64
    pts = np.array([[r["x"], r["y"]] for r in rows])
    assert np.abs(pts[:, 1]).max() == pytest.approx(2.0012496949900903 / 2, abs=1e-3)


def test_smallsep_orbit_with_continuation(workdir):
    cfg = write_cfg(workdir, "o.json", shape="quad.json", alpha=0.05, n=0, L_values=[0.0, 0.01])
    out = workdir / "o.json.out"
    assert main(["smallsep", "orbit", "--config", cfg, "--out", str(out), "--format", "json"]) == 0
    rows = json.loads(out.read_text())
    assert rows[0]["trace"] == pytest.approx(-1.0506123221212005, abs=1e-9)
    assert len(rows) == 3 and all(r["verdict"] == "elliptic" for r in rows)


def test_intervals(workdir):
    out = {}
    for eps in (0.1, 0.4):
        cfg = write_cfg(workdir, f"i{eps}.json", shape="quad.json", alpha=0.1, epsilon=eps, n=[16, 17])
        path = workdir / f"i{eps}.out"
        assert main(["largesep", "intervals", "--config", cfg, "--out", str(path), "--format", "json"]) == 0
        out[eps] = json.loads(path.read_text())
    assert len(out[0.1]) == 6
    for narrow, wide in zip(out[0.4], out[0.1]):
        assert narrow["L_hi"] - narrow["L_lo"] < wide["L_hi"] - wide["L_lo"]


def test_intervals_verified(workdir):
    cfg = write_cfg(workdir, "iv.json", shape="quad.json", alpha=0.1, n=[16], verify=True)
    path = workdir / "iv.out"
    assert main(["largesep", "intervals", "--config", cfg, "--out", str(path), "--format", "json"]) == 0
    rows = json.loads(path.read_text())
    assert all(r["elliptic"] and r["closure"] < 1e-8 for r in rows)


def test_inadmissible_alpha(workdir, capsys):
    cfg = write_cfg(workdir, "i.json", shape="quad.json", alpha=1.2, n=[16])
    assert main(["largesep", "intervals", "--config", cfg]) == 3
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "inadmissible" in diag["message"]


def test_pass_command(workdir):
    cfg = write_cfg(workdir, "p.json", shape="quad.json", alpha=0.1)
    path = workdir / "p.out"
    assert main(["largesep", "pass", "--config", cfg, "--out", str(path), "--format", "json"]) == 0
    (row,) = json.loads(path.read_text())
    assert row["a20"] == pytest.approx(row["a20_closed"], rel=1e-8)
    assert row["kappa"] == pytest.approx(54.185, abs=1e-3)


def test_allsep_command(workdir):
    cfg = write_cfg(workdir, "a.json", n=[1], rho_ratio=[0.3], l=[0.0])
    path = workdir / "a.out"
    assert main(["largesep", "allsep", "--config", cfg, "--out", str(path)]) == 0
    (row,) = read_csv(path)
    assert float(row["half_trace"]) == pytest.approx(0.6)
    assert row["elliptic"] == "True"


def _portrait(workdir, name, seed, **cfg):
    path = workdir / f"{name}.csv"
    c = write_cfg(workdir, f"{name}.json", shape="quad.json", **cfg)
    assert main(["portrait", "--config", c, "--out", str(path), "--seed", str(seed)]) == 0
    return path


def test_portrait_deterministic(workdir):
    kw = dict(alpha=0.05, n=0, initial_conditions=3, iterates=20, radius=1e-4)
    a = _portrait(workdir, "a", 7, **kw).read_bytes()
    b = _portrait(workdir, "b", 7, **kw).read_bytes()
    c = _portrait(workdir, "c", 8, **kw).read_bytes()
    assert a == b and a != c


def test_portrait_hyperbolic_escapes(workdir):
    path = _portrait(workdir, "h", 0, alpha=0.1, orbit="largesep", n=8, t=4.5,
                     initial_conditions=2, iterates=80, radius=1e-6)
    d = np.array([[float(r["x"]), float(r["y"])] for r in read_csv(path)])
    assert np.abs(d).max() > 1e-2


@pytest.mark.slow
def test_portrait_elliptic_bounded(workdir):
    path = _portrait(workdir, "e", 0, alpha=0.05, n=0, initial_conditions=1, iterates=10_000, radius=1e-4)
    d = np.array([[float(r["x"]), float(r["y"])] for r in read_csv(path)])
    assert len(d) == 10_001
    assert np.abs(d).max() < 1e-3
