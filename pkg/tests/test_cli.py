from __future__ import annotations

import csv
import json

import pytest

from pmsm_uq.cli import main


def read_csv(path):
    with path.open() as fh:
        header = fh.readline()
        return header, list(csv.DictReader(fh))


def test_nominal_run_writes_outputs(tmp_path, spec):
    out = tmp_path / "nominal"
    assert main(["--out", str(out), "--refinement", "0", "--jobs", "1"]) == 0
    header, rows = read_csv(out / "nominal.csv")
    assert header.startswith("# pmsm_uq ")
    assert f"config_hash={spec.config_hash()}" in header and "mode=nominal refinement=0" in header
    values = {r["quantity"]: float(r["value"]) for r in rows}
    assert 3.0 < values["tau0"] < 5.0
    assert values["maxwell_band_torque"] == pytest.approx(values["tau0"], rel=0.05)
    _, trace = read_csv(out / "trace.csv")
    assert len(trace) == 144
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == spec.config_hash()
    assert {"trace.csv", "spectrum.csv", "nominal.csv", "trace.png", "spectrum.png"} <= set(manifest["files"])
    assert (out / "trace.png").stat().st_size > 0
    events = [json.loads(line) for line in (out / "log.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "start" and events[-1]["event"] == "done"


def test_stochastic_mode_requires_seed(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "--mode", "uq-mc"]) == 2
    assert "run.seed" in capsys.readouterr().err


@pytest.mark.parametrize("text, field", [
    ("[geometry]\nairgap = -1.0\n", "geometry.airgap"),
    ("[run]\nn_mc = 1\n", "run.n_mc"),
    ("[run]\nbogus = 1\n", "run.bogus"),
    ("[drive\n", "cfg.toml"),
])
def test_config_errors_name_the_field(tmp_path, capsys, text, field):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(text)
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_unreachable_eccentricity_exits_cleanly(tmp_path):
    code = main(["--out", str(tmp_path), "--mode", "sweep", "--refinement", "0", "--eps", "0.9",
                 "--no-plots", "--jobs", "1"])
    assert code == 1
    events = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert events[-1]["event"] == "error"


def test_gpc_run_with_config_run_table(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('[run]\nmode = "uq-gpc"\nnodes_per_dim = 1\n')
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out), "--no-plots", "--jobs", "1"]) == 0
    _, rows = read_csv(out / "summary.csv")
    assert [r["method"] for r in rows] == ["gPC", "gPC"]
    _, samples = read_csv(out / "samples.csv")
    assert len(samples) == 1 and float(samples[0]["r0"]) == 0.0
    assert (out / "cache" / "samples.jsonl").exists()
