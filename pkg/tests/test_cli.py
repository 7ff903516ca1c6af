import csv
import json

import pytest

from inequality_process import cli

FAST_FIT = {"restarts": 2, "anneal": {"initial_temperature": 0.01, "min_temperature": 0.001,
                                      "steps_per_epoch": 100}}


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"years": {"start": 1961, "end": 1975}, "doodson_medians": True}))
    cfg = root / "fit.json"
    cfg.write_text(json.dumps(FAST_FIT))
    assert _run("synth", "--spec", spec, "--out", root / "synth") == 0
    assert _run("fit", "--panel", root / "synth" / "panel.csv", "--config", cfg, "--out", root / "fit",
                "--baseline") == 0
    return root


def test_synth_default_has_258_rows(tmp_path, capsys):
    assert _run("synth", "--out", tmp_path) == 0
    rows = list(csv.reader((tmp_path / "panel.csv").open()))
    assert len(rows) - 1 == 258
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert len(truth["omegas"]) == 6
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "synth" and manifest["tool_version"]
    assert len(manifest["input_hash"]) == 64


def test_synth_is_byte_reproducible(tmp_path):
    for d in ("a", "b"):
        assert _run("synth", "--noise", "multinomial", "--n", "300", "--seed", "5", "--out", tmp_path / d) == 0
    for name in ("panel.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_bad_shares_exit_2(tmp_path, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"years": [2000, 2001], "shares": [[0.2] * 6, [0.1] * 6]}))
    assert _run("synth", "--spec", spec, "--out", tmp_path / "o") == 2
    assert "row 0" in capsys.readouterr().err
    assert not (tmp_path / "o").exists() or not any((tmp_path / "o").iterdir())


def test_fit_outputs(work):
    fit = json.loads((work / "fit" / "fit.json").read_text())
    assert fit["omegas"] == pytest.approx([0.4524, 0.4030, 0.3573, 0.3256, 0.2542, 0.2084], abs=1e-3)
    assert fit["baseline"]["r_squared"] >= fit["r_squared"]
    header = (work / "fit" / "expected.csv").read_text().splitlines()[0]
    assert header.startswith("year,class_id,share,median,f01")


def test_fit_malformed_csv_exit_2_without_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("year,class_id,share\n2000,1,x\n")
    out = tmp_path / "out"
    assert _run("fit", "--panel", bad, "--out", out) == 2
    assert not out.exists() or not any(out.iterdir())
    assert "error" in capsys.readouterr().err


def test_fit_bootstrap_on_noiseless_panel_requires_n(work, tmp_path):
    cfg = work / "fit.json"
    assert _run("fit", "--panel", work / "synth" / "panel.csv", "--config", cfg, "--bootstrap", "3",
                "--out", tmp_path) == 2


def test_fit_with_deflator(work, tmp_path):
    d = tmp_path / "defl.csv"
    d.write_text("year,index\n" + "".join(f"{y},1.0\n" for y in range(1961, 2004)))
    cfg = work / "fit.json"
    assert _run("fit", "--panel", work / "synth" / "panel.csv", "--config", cfg, "--deflator", d,
                "--out", tmp_path / "o") == 0
    a = json.loads((tmp_path / "o" / "fit.json").read_text())["omegas"]
    b = json.loads((work / "fit" / "fit.json").read_text())["omegas"]
    assert a == b


def test_simulate_conservation_and_rounds_zero(tmp_path):
    assert _run("simulate", "--particles", "500", "--rounds", "40", "--seed", "3", "--out", tmp_path / "a") == 0
    rows = list(csv.DictReader((tmp_path / "a" / "trajectory.csv").open()))
    totals = [float(r["total_wealth"]) for r in rows]
    assert max(totals) - min(totals) < 1e-9 * totals[0]
    init = tmp_path / "pop.csv"
    init.write_text("particle_id,class_id,wealth\n0,0,1.5\n1,0,2.5\n2,0,3.0\n")
    assert _run("simulate", "--population", init, "--rounds", "0", "--out", tmp_path / "b") == 0
    pop = list(csv.DictReader((tmp_path / "b" / "population.csv").open()))
    assert [float(r["wealth"]) for r in pop] == [1.5, 2.5, 3.0]


def test_simulate_variant_switch(tmp_path):
    for v in ("inequality-process", "saved-wealth"):
        assert _run("simulate", "--particles", "100", "--rounds", "5", "--variant", v, "--out", tmp_path / v) == 0
    a = (tmp_path / "inequality-process" / "population.csv").read_text()
    b = (tmp_path / "saved-wealth" / "population.csv").read_text()
    assert a != b


def test_output_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert _run("simulate", "--particles", "10", "--rounds", "1") == 0
    assert (tmp_path / "env" / "population.csv").exists()


def test_dynamics_from_fit_is_stretch(work, tmp_path):
    assert _run("dynamics", "--fit", work / "fit" / "fit.json", "--product-change", "0.10", "--out", tmp_path) == 0
    v = json.loads((tmp_path / "verdict.json").read_text())
    assert v["verdict"] == "STRETCH"
    assert v["p90_growth_exceeds_p10_growth"] is True
    assert v["percentile_growth"]["0.9"] > v["percentile_growth"]["0.1"] > 0
    header = (tmp_path / "dynamics.csv").read_text().splitlines()[0]
    assert header == "x0,quantity,value"


def test_dynamics_zero_change(tmp_path):
    argv = ["dynamics", "--omegas", "0.3", "0.4", "--shares", "0.5", "0.5", "--product", "10000",
            "--product-change", "0", "--out", tmp_path]
    assert _run(*argv) == 0
    assert json.loads((tmp_path / "verdict.json").read_text())["verdict"] == "NO-CHANGE"


def test_dynamics_missing_params_exit_2(tmp_path):
    assert _run("dynamics", "--omegas", "0.3", "--out", tmp_path) == 2


def test_analyze_bundle(work, tmp_path):
    assert _run("analyze", "--panel", work / "synth" / "panel.csv", "--fit", work / "fit" / "fit.json",
                "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "tail_ratios.csv").open()))
    assert all(float(r["value"]) == 1.0 for r in rows if r["year"] == "1961")
    mat = list(csv.reader((tmp_path / "bin_correlations.csv").open()))[1:]
    vals = [[float(v) if v else None for v in row[1:]] for row in mat]
    for i in range(len(vals)):
        assert vals[i][i] in (1.0, None)
        for j in range(len(vals)):
            if vals[i][j] is not None:
                assert vals[i][j] == pytest.approx(vals[j][i], abs=1e-15)
    corr = list(csv.DictReader((tmp_path / "series_correlations.csv").open()))
    assert all(float(r["corr_with_product"]) > 0.999 for r in corr)


def test_rerun_is_deterministic(work, tmp_path):
    cfg = work / "fit.json"
    assert _run("fit", "--panel", work / "synth" / "panel.csv", "--config", cfg, "--baseline",
                "--out", tmp_path) == 0
    for name in ("fit.json", "expected.csv", "baseline_expected.csv"):
        assert (tmp_path / name).read_bytes() == (work / "fit" / name).read_bytes()
