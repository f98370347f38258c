import json

import pandas as pd
import pytest

from gammort.cli import build_parser, main
from gammort.config import RunConfig, env_overrides, load_config
from gammort.errors import ConfigError, VersionError

SMALL = {"omega": 20, "split_age": 10, "k": 6, "k_fs": 4, "year_range": [1990, 2019], "cutoff": 2010,
         "countries": ["AAA", "BBB"], "version": 1}


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os
    for key in list(os.environ):
        if key.startswith("GAMMORT_"):
            monkeypatch.delenv(key)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    cfg = dict(SMALL, data_dir=str(root / "data"), out=str(root / "out"))
    (root / "config.json").write_text(json.dumps(cfg))
    assert main(["synth", "--config", str(root / "config.json"), "--out", str(root / "data"), "--seed", "5"]) == 0
    return root


def test_help_documents_env(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fit", "--help"])
    assert "GAMMORT_" in capsys.readouterr().out


def test_config_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"threshold": 0.2, "horizon": 5}))
    cfg = load_config(path, {"horizon": 7}, environ={"GAMMORT_THRESHOLD": "0.3", "GAMMORT_K": "8"})
    assert (cfg.threshold, cfg.horizon, cfg.k) == (0.3, 7, 8)
    assert env_overrides({"GAMMORT_COUNTRIES": "AUT, CZE", "OTHER": "x"}) == {"countries": ("AUT", "CZE")}


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(None, {"cutoff": 1950}, environ={})
    assert info.value.field == "cutoff"
    with pytest.raises(ConfigError):
        load_config(None, {"horizon": 0}, environ={})
    with pytest.raises(ConfigError):
        load_config(None, {"threshold": -1.0}, environ={})
    path = tmp_path / "v.json"
    path.write_text(json.dumps({"version": 2}))
    with pytest.raises(VersionError):
        load_config(path, environ={})
    assert RunConfig().validate().test_horizon == 9


def test_invalid_cutoff_exit_code(workspace, capsys):
    code = main(["fit", "--config", str(workspace / "config.json"), "--cutoff", "2500"])
    assert code == 2
    assert "cutoff" in capsys.readouterr().err


def test_missing_data_nonzero(tmp_path, capsys):
    code = main(["fit", "--data-dir", str(tmp_path), "--countries", "ZZZ", "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 1 and len(err.strip().splitlines()) == 1


def test_staged_commands(workspace, capsys):
    cfg = str(workspace / "config.json")
    out = workspace / "out"
    assert main(["ingest", "--config", cfg]) == 0
    assert (out / "panel.csv").exists() and (out / "kct.csv").exists()
    assert main(["fit", "--config", cfg]) == 0
    model = json.loads((out / "model.json").read_text())
    labels = [t["label"] for t in model["terms"]]
    assert labels[1:] == ["age", "gender:age", "s(kct,bs=ts)", "s(kct,by=gender:age,bs=ts)", "s(cohort,bs=ts)",
                          "s(country:gender:age,bs=re)", "s(kt,country:gender:age,bs=fs,m=1)",
                          "s(cohort,country:gender:age,bs=fs,m=1)"]
    log = json.loads((out / "run_log.json").read_text())
    assert 0.5 <= log["retained_fraction"] <= 1 and "fit" in log["timings_seconds"] and log["edf"]
    for name in ("resid_fitted.csv", "qq.csv", "acf.csv", "smooth_curves.csv", "asdr_trajectories.csv",
                 "kt.csv", "kct.csv", "lograte_vs_kt.csv", "fitted_vs_kt.csv"):
        assert (out / name).exists(), name
    assert main(["diagnose", "--config", cfg]) == 0
    assert main(["forecast", "--config", cfg]) == 0
    fc = pd.read_csv(out / "gamm_forecast.csv")
    assert sorted(fc["year"].unique()) == list(range(2011, 2020))
    first = (out / "gamm_forecast.csv").read_bytes()
    assert main(["forecast", "--config", cfg]) == 0
    assert (out / "gamm_forecast.csv").read_bytes() == first
    assert main(["evaluate", "--config", cfg]) == 0
    ratios = pd.read_csv(out / "report_ratios.csv")
    assert len(ratios[ratios["scale"] == "rate"]) == 4 and set(ratios["baseline"]) == {"LL"}
    assert "LL test set/GAMM test set" in (out / "report.txt").read_text()


def test_evaluate_without_baseline(workspace, capsys, tmp_path):
    cfg = str(workspace / "config.json")
    out = tmp_path / "nb"
    assert main(["fit", "--config", cfg, "--out", str(out)]) == 0
    assert main(["forecast", "--config", cfg, "--out", str(out), "--no-baseline"]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    assert "warning" in capsys.readouterr().err
    rows = pd.read_csv(out / "report.csv")
    assert set(rows["model"]) == {"GAMM"}


def test_model_version_mismatch(workspace, tmp_path, capsys):
    cfg = str(workspace / "config.json")
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 0
    src = json.loads((tmp_path / "model.json").read_text())
    src["schema"] = "gammort.model/0"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(src))
    capsys.readouterr()
    assert main(["forecast", "--config", cfg, "--model", str(bad), "--out", str(tmp_path)]) == 1
    assert "VersionError" in capsys.readouterr().err


def test_run_all_deterministic_and_single_mode(workspace):
    cfg = str(workspace / "config.json")
    a, b = workspace / "ra", workspace / "rb"
    assert main(["run-all", "--config", cfg, "--out", str(a)]) == 0
    assert main(["run-all", "--config", cfg, "--out", str(b)]) == 0
    for name in ("model.json", "model_untrimmed.json", "report.csv", "report_ratios.csv", "gamm_forecast.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    s = workspace / "single"
    assert main(["run-all", "--config", cfg, "--out", str(s), "--mode", "single", "--cutoff", "1999",
                 "--horizon", "20", "--workers", "2"]) == 0
    unit = s / "AAA_female"
    model = json.loads((unit / "model.json").read_text())
    assert [t["label"] for t in model["terms"]] == ["(Intercept)", "age", "s(kt,age,bs=fs,m=1)"]
    fc = pd.read_csv(unit / "gamm_forecast.csv")
    assert sorted(fc["year"].unique()) == list(range(2000, 2020))
    ratios = pd.read_csv(s / "report_ratios.csv")
    assert set(ratios["baseline"]) == {"LC"} and len(ratios[ratios["scale"] == "rate"]) == 4
