import json
from pathlib import Path

import numpy as np
import pytest

from ttu.cli import main
from tests.conftest import synthetic_bundle

SIM_CONFIG = {
    "n": 220,
    "seed": 9,
    "void_rate": 0.7,
    "theta": {"rho0": 0.35, "rho1": 0.6, "mu0": 80.0, "mu1": 200.0,
              "sigma0": 40.0, "sigma1": 50.0, "beta": [0.5, -0.3, 0.4, 0.2]},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "sim.json"
    cfg.write_text(json.dumps(SIM_CONFIG))
    cohort = root / "cohort.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(cohort)]) == 0
    return root, cohort


@pytest.fixture(scope="module")
def fitted(workdir):
    root, cohort = workdir
    out = root / "bundle"
    code = main(["fit", "--data", str(cohort), "--out", str(out),
                 "--chains", "2", "--warmup", "200", "--draws", "150",
                 "--max-treedepth", "8", "--seed", "3"])
    assert code == 0
    return root, cohort, out


class TestUsage:
    def test_unknown_flag_exits_1(self, capsys):
        assert main(["fit", "--nope"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_command_exits_1(self):
        assert main(["transmogrify"]) == 1

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["fit", "--data", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_bad_simulate_config_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"n": 10}))
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "x.csv")]) == 2


class TestSimulate:
    def test_cohort_csv_readable(self, workdir):
        _, cohort = workdir
        from ttu.data import read_dataset
        records = read_dataset(cohort)
        assert len(records) == SIM_CONFIG["n"]


class TestPipeline:
    def test_fit_wrote_bundle(self, fitted):
        _, _, out = fitted
        assert (out / "manifest.json").exists()
        assert (out / "curve.csv").exists()

    def test_evaluate(self, fitted):
        root, cohort, out = fitted
        ev = root / "eval"
        assert main(["evaluate", "--bundle", str(out), "--data", str(cohort),
                     "--out", str(ev)]) == 0
        gof = json.loads((ev / "gof.json").read_text())
        for key in ("ise", "rmse_time", "ks", "cvm", "abc", "iae", "coverage",
                    "avg_band_width"):
            assert key in gof
        lm = json.loads((ev / "landmarks.json").read_text())
        assert lm["landmarks"] == [60.0, 120.0, 180.0, 240.0, 300.0]
        assert len(lm["auc"]) == 5
        curve_rows = (ev / "curve.csv").read_text().splitlines()
        assert curve_rows[0] == "t_min,observed,post_mean,band_low,band_high"
        assert len(curve_rows) == 302

    def test_recalibrate(self, fitted, tmp_path):
        root, cohort, out = fitted
        dest = tmp_path / "recal.json"
        assert main(["recalibrate", "--bundle", str(out), "--data", str(cohort),
                     "--landmarks", "120,300", "--out", str(dest)]) == 0
        result = json.loads(dest.read_text())
        assert result["landmarks"] == [120.0, 300.0]
        for fit in result["fits"]:
            assert fit["post"]["slope"] == pytest.approx(1.0, abs=1e-6)
            assert fit["post"]["citl"] == pytest.approx(0.0, abs=1e-6)

    def test_dca(self, fitted, tmp_path):
        root, cohort, out = fitted
        dest = tmp_path / "dca"
        assert main(["dca", "--bundle", str(out), "--data", str(cohort),
                     "--out", str(dest), "--bootstrap", "50"]) == 0
        payload = json.loads((dest / "dca.json").read_text())
        assert len(payload["thresholds"]) == 51
        header = (dest / "dca.csv").read_text().splitlines()[0]
        assert header.startswith("threshold,nb_model,nb_admit_all,nb_admit_none")

    def test_robustness(self, fitted, tmp_path):
        root, cohort, out = fitted
        dest = tmp_path / "rob.json"
        assert main(["robustness", "--bundle", str(out), "--data", str(cohort),
                     "--deltas", "5,10", "--seed", "1", "--out", str(dest)]) == 0
        table = json.loads(dest.read_text())
        assert table["deltas"] == [0.0, 5.0, 10.0]
        assert len(table["rows"]) == 3
        assert set(table["rows"][0]["auc"].keys()) == {"60", "120", "180",
                                                       "240", "300"}


class TestSbcCommand:
    def test_small_run(self, tmp_path):
        dest = tmp_path / "sbc.json"
        code = main(["sbc", "--replications", "2", "--n", "40",
                     "--warmup", "100", "--draws", "40", "--max-treedepth", "5",
                     "--seed", "4", "--out", str(dest)])
        assert code == 0
        payload = json.loads(dest.read_text())
        assert len(payload["ranks"]) == 2


class TestServeRefusal:
    def test_failed_bundle_exits_2(self, tmp_path):
        bundle = synthetic_bundle(tmp_path / "b", symmetric=True)
        diag_path = bundle.path / "diagnostics.json"
        diag = json.loads(diag_path.read_text())
        diag["failed"] = True
        diag_path.write_text(json.dumps(diag))
        assert main(["serve", "--bundle", str(bundle.path), "--port", "0"]) == 2

    def test_serve_without_bundle_exits_1(self, monkeypatch):
        monkeypatch.delenv("TTU_BUNDLE", raising=False)
        assert main(["serve"]) == 1
