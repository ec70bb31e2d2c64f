import json
import os

import pandas as pd
import pytest

from src import __version__
from src.core.assembly import (
    ANNULUS_COLUMNS,
    CHECK_COLUMNS,
    PREDICTION_COLUMNS,
    STATS_COLUMNS,
    ResultAssembler,
    _sanitize_filename,
)
from src.core.config import EnsembleConfig, parse_config
from src.core.fields import SourceSpec, VelocitySpec
from src.core.predictor import predict_bands
from src.core.validator import CheckReport


def _prediction():
    return predict_bands(VelocitySpec(U=0.01, beta=-3.0, K_max=16), SourceSpec(kappa_g=2.0), [2.0, 4.0, 8.0])


def test_sanitize_label():
    assert _sanitize_filename('run: "beta/3"  v2') == "run_beta3_v2"
    assert len(_sanitize_filename("x" * 80)) == 50


def test_predictions_table(tmp_path):
    assembler = ResultAssembler(str(tmp_path))
    path = assembler.write_predictions(_prediction())
    frame = pd.read_csv(path, keep_default_na=False)
    assert list(frame.columns) == PREDICTION_COLUMNS
    assert list(frame["kappa"]) == [2.0, 4.0, 8.0]
    assert frame.loc[0, "flags"] == "below-validity"
    assert frame.loc[2, "flags"] == ""
    assert not os.path.exists(f"{path}.tmp")


def test_floats_keep_full_precision(tmp_path):
    prediction = _prediction()
    path = ResultAssembler(str(tmp_path)).write_predictions(prediction)
    frame = pd.read_csv(path, float_precision="round_trip")
    assert frame.loc[2, "expected_vartheta"] == prediction.band(8.0).expected_vartheta


def test_checks_verdict_and_annulus(tmp_path):
    report = CheckReport("demo")
    report.check_close("one", 1.0, 1.0, rel=1e-9)
    report.check_at_most("two", 2.0, 1.0)
    assembler = ResultAssembler(str(tmp_path), label="demo run")
    checks = pd.read_csv(assembler.write_checks(report))
    assert list(checks.columns) == CHECK_COLUMNS
    assert list(checks["passed"]) == [True, False]
    with open(assembler.write_verdict(report)) as f:
        assert json.load(f)["verdict"] == "fail"
    rows = [{"beta": -3.0, "jx": 1, "jy": 0, "kappa": 8.0, "lattice_sum": 1.0, "integral": 0.9,
             "error": 0.1, "ratio": 0.2, "cell_ratio": 0.003}]
    annulus = assembler.write_annulus(rows)
    assert os.path.basename(annulus) == "demo_run_annulus.csv"
    assert list(pd.read_csv(annulus).columns) == ANNULUS_COLUMNS


def test_failed_write_leaves_no_file(tmp_path):
    assembler = ResultAssembler(str(tmp_path))

    def broken(tmp):
        with open(tmp, "w") as f:
            f.write("partial")
        raise RuntimeError("disk full")

    with pytest.raises(RuntimeError):
        assembler._commit("broken.csv", broken)
    assert os.listdir(tmp_path) == []
    assert assembler.files == []


def test_plot_script_references_stats_columns(tmp_path):
    assembler = ResultAssembler(str(tmp_path))
    script_path = assembler.write_plot_script(str(tmp_path / "ensemble_stats.csv"), "static ensemble")
    with open(script_path) as f:
        script = f.read()
    kappa = STATS_COLUMNS.index("kappa") + 1
    mean = STATS_COLUMNS.index("sample_mean") + 1
    assert f"using {kappa}:{mean}:" in script
    assert "'ensemble_stats.csv'" in script
    assert "set logscale xy" in script


def test_manifest_reproduces_config(tmp_path):
    config = EnsembleConfig()
    assembler = ResultAssembler(str(tmp_path))
    manifest = assembler.start_manifest("predict", config, threads=2)
    assembler.write_predictions(_prediction())
    report = CheckReport()
    report.check_close("one", 1.0, 1.0, rel=1e-9)
    with open(assembler.finish_manifest(manifest, report)) as f:
        data = json.load(f)
    assert data["command"] == "predict"
    assert data["version"] == __version__
    assert data["threads"] == 2
    assert data["files"] == ["predictions.csv", "manifest.json"]
    assert data["verdict"] == {"verdict": "pass", "passed": 1, "total": 1}
    assert parse_config(data["config"]) == config
