import csv
import json

import numpy as np
import pytest

from rirsim import cli
from rirsim.dynamics import GainTrace
from rirsim.fileio import RunManifest, TRACE_HEADER, read_trace_csv, write_trace_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_trace_csv_round_trip(tmp_path, rng):
    n = 25
    tr = GainTrace(times=np.sort(rng.uniform(0, 1e-4, n)), gain=1 + rng.normal(size=n) * 1e-3,
                   probe_amp=rng.normal(size=n) + 1j * rng.normal(size=n),
                   delta=rng.normal(size=n) * 1e6, a_in=np.full(n, 0.72 + 0j), provenance="perturbative")
    path = tmp_path / "t.csv"
    write_trace_csv(path, tr)
    with open(path) as fh:
        header = next(csv.reader(fh))
    assert header == TRACE_HEADER and header[:5] == ["time_s", "delta_rad_s", "gain", "re_a2", "im_a2"]
    back = read_trace_csv(path)
    for name in ("times", "gain", "probe_amp", "delta", "a_in"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))
    assert back.provenance == "perturbative"


def test_manifest_hash_stable(tmp_path):
    m = RunManifest(command="step", params={"beta": 13e3}, grid={"dp": 0.05}, solver={},
                    schedule={"segments": []}, extra={"x": 1})
    path = tmp_path / "m.json"
    m.write(path)
    again = RunManifest.read(path)
    assert again.content_hash == m.content_hash
    d = read_json(path)
    d["params"]["beta"] = 1.0
    with pytest.raises(ValueError):
        RunManifest.from_dict(d)


def test_step_command(tmp_path):
    out = tmp_path / "s"
    assert run("step", "--intensity", 100, "--delta-khz", -280, "--duration-us", 6, "--out", out) == 0
    metrics = read_json(f"{out}.metrics.json")
    assert metrics["t_max_s"] == pytest.approx(1.79e-6, rel=0.15)
    manifest = RunManifest.read(f"{out}.manifest.json")
    assert metrics["manifest_hash"] == manifest.content_hash
    tr = read_trace_csv(f"{out}.csv")
    assert tr.gain.size == metrics["n_steps"] + 1


def test_step_zero_intensity(tmp_path):
    out = tmp_path / "z"
    assert run("step", "--intensity", 0, "--delta-khz", -280, "--duration-us", 3, "--out", out) == 0
    assert np.all(read_trace_csv(f"{out}.csv").gain == 1.0)


def test_step_snapshots(tmp_path):
    out = tmp_path / "snap"
    assert run("step", "--intensity", 10, "--delta-khz", -140, "--duration-us", 2,
               "--snapshot-every", 10, "--out", out) == 0
    assert sorted(tmp_path.glob("snap.snap*.csv"))


def test_rerun_is_bit_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert run("step", "--intensity", 30, "--delta-khz", -200, "--duration-us", 4, "--out", out) == 0
        outs.append([p.read_bytes() for p in (tmp_path / f"r{k}.csv", tmp_path / f"r{k}.manifest.json",
                                              tmp_path / f"r{k}.metrics.json")])
    assert outs[0] == outs[1]


def test_missing_config_is_usage_error(tmp_path):
    out = tmp_path / "x"
    code = run("step", "--intensity", 1, "--delta-khz", -280, "--config", tmp_path / "none.ini",
               "--out", out)
    assert code == cli.EXIT_USAGE
    assert list(tmp_path.iterdir()) == []


def test_bad_argument_is_usage_error(tmp_path):
    assert run("step", "--intensity", -1, "--delta-khz", 1, "--out", tmp_path / "x") == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        run("step", "--delta-khz", 1, "--out", tmp_path / "x")
    assert err.value.code == cli.EXIT_USAGE
    assert list(tmp_path.iterdir()) == []


def test_unwritable_output_is_io_error(tmp_path):
    code = run("step", "--intensity", 1, "--delta-khz", -280, "--out", tmp_path / "nope" / "x")
    assert code == cli.EXIT_IO


def test_config_file_is_used(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[physics]\nn_atoms = 1e6\n[grid]\ndp = 0.1\np_max = 25\n")
    out = tmp_path / "c"
    assert run("step", "--intensity", 10, "--delta-khz", -280, "--duration-us", 2,
               "--config", cfg, "--out", out) == 0
    m = read_json(f"{out}.manifest.json")
    assert m["params"]["n_atoms"] == 1e6 and m["grid"]["dp"] == 0.1


def test_quench_command(tmp_path):
    out = tmp_path / "q"
    assert run("quench", "--i-high", 1, "--i-low", 1, "--delta-khz", -140, "--t-low-us", 100,
               "--out", out) == 0
    assert read_json(f"{out}.metrics.json")["d_hole"] == pytest.approx(1.0, abs=1e-3)


def test_scan_both_chirps(tmp_path):
    out = tmp_path / "sc"
    assert run("scan", "--intensity", 0.5, "--rate-mhz-ms", 8, "--both-chirps", "--out", out) == 0
    cmp_ = read_json(f"{out}.compare.json")
    assert cmp_["g_ratio"] > 1 and cmp_["delta_nu_max_khz"] > 0
    assert read_trace_csv(f"{out}.minus.csv").delta[0] > 0


def test_scan_perturbative_mode(tmp_path):
    out = tmp_path / "p"
    assert run("scan", "--intensity", 0.5, "--mode", "perturbative", "--out", out) == 0
    assert read_trace_csv(f"{out}.plus.csv").provenance == "perturbative"
    assert "normalization" in RunManifest.read(f"{out}.plus.manifest.json").extra


def test_scan_no_feature(tmp_path):
    assert run("scan", "--intensity", 0, "--out", tmp_path / "n") == cli.EXIT_NOT_FOUND


def test_sweep_scan(tmp_path, monkeypatch):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "scan", "rates_mhz_ms": [10, 20], "intensities": [0.5],
                                "chirps": ["+", "-"]}))
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--spec", spec, "--out", out) == 0
    rows = list(csv.DictReader(open(out)))
    assert [(r["rate_mhz_ms"], r["chirp"]) for r in rows] == [("10", "+"), ("10", "-"),
                                                              ("20", "+"), ("20", "-")]
    assert all(r["status"] == "ok" for r in rows)
    assert float(rows[0]["g_ratio"]) > 1
    first = out.read_bytes()
    monkeypatch.setenv(cli.WORKERS_ENV, "1")
    assert run("sweep", "--spec", spec, "--out", out) == 0
    assert out.read_bytes() == first


def test_sweep_marks_failed_rows(tmp_path, monkeypatch):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "scan", "rates_mhz_ms": [20], "intensities": [0, 0.5],
                                "chirps": ["+"]}))
    monkeypatch.setenv(cli.WORKERS_ENV, "1")
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--spec", spec, "--out", out) == cli.EXIT_PARTIAL
    rows = list(csv.DictReader(open(out)))
    assert rows[0]["status"].startswith("failed") and rows[1]["status"] == "ok"


def test_sweep_quench(tmp_path, monkeypatch):
    spec = tmp_path / "q.json"
    spec.write_text(json.dumps({"kind": "quench", "intensities": [1, 10], "t_low_us": 100}))
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    out = tmp_path / "q.csv"
    assert run("sweep", "--spec", spec, "--out", out) == 0
    rows = list(csv.DictReader(open(out)))
    assert [float(r["i_high_uw_cm2"]) for r in rows] == [1.0, 10.0]


@pytest.mark.parametrize("content", ["{}", '{"kind": "scan", "rates_mhz_ms": []}', "[1, 2]", "not json",
                                     '{"kind": "other"}'])
def test_sweep_bad_spec(tmp_path, content):
    spec = tmp_path / "s.json"
    spec.write_text(content)
    assert run("sweep", "--spec", spec, "--out", tmp_path / "o.csv") == cli.EXIT_USAGE
    assert not (tmp_path / "o.csv").exists()


def test_bad_worker_count(tmp_path, monkeypatch):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"kind": "scan", "rates_mhz_ms": [10]}))
    monkeypatch.setenv(cli.WORKERS_ENV, "zero")
    assert run("sweep", "--spec", spec, "--out", tmp_path / "o.csv") == cli.EXIT_USAGE
