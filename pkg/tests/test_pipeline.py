import json

import numpy as np
import pytest

from yokefit.cli import main
from yokefit.config import (RunConfig, apply_seed_override, default_config,
                            load_config, parse_config, save_config,
                            serialize_config)
from yokefit.errors import ConfigError
from yokefit.inversion import load_observations
from yokefit.magnetostatics import DipoleGeometry
from yokefit.pipeline import (cmd_build_model, cmd_identify, cmd_make_data,
                              cmd_sensitivity, cmd_validate,
                              geometry_from_config)

FAST_OVERRIDES = """
[inversion]
swarm_size = 6
iterations = 4
early_stop_tol = 0
"""


@pytest.fixture()
def fast_config(tmp_path):
    cfg = parse_config(FAST_OVERRIDES)
    cfg.values[("paths", "out_dir")] = str(tmp_path / "out")
    return cfg


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = default_config()
        again = parse_config(serialize_config(cfg))
        assert again.values == cfg.values

    def test_file_round_trip(self, tmp_path):
        cfg = default_config()
        cfg.values[("inversion", "swarm_size")] = 12
        cfg.values[("model", "synthetic")] = True
        path = tmp_path / "run.ini"
        save_config(cfg, path)
        back = load_config(path)
        assert back.values == cfg.values

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration key"):
            parse_config("[solver]\nnewton_tolerance = 1e-8\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration section"):
            parse_config("[sovler]\nnewton_tol = 1e-8\n")

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[model]\nsynthetic = maybe\n")
        with pytest.raises(ConfigError):
            parse_config("[solver]\nlinear_solver = lu\n")
        with pytest.raises(ConfigError):
            parse_config("[inversion]\nswarm_size = 0\n")
        with pytest.raises(ConfigError):
            parse_config("[inversion]\ncurrent_min = 100\ncurrent_max = 50\n")

    def test_seed_override_rekeys_all_seeds(self):
        cfg = default_config()
        apply_seed_override(cfg, 999)
        assert cfg.get("model", "seed") == 999
        assert cfg.get("inversion", "seed") == 1000
        assert cfg.get("inversion", "y0_seed") == 1001

    def test_geometry_mapping_millimeters(self):
        cfg = default_config()
        geom = geometry_from_config(cfg)
        assert geom.gap_height == pytest.approx(0.68)
        assert isinstance(geom, DipoleGeometry)


class TestBuildModelStage:
    def test_artifacts_and_determinism(self, fast_config, stats):
        out = fast_config.out_dir()
        cmd_build_model(fast_config)
        first = (out / "model.json").read_bytes()
        assert (out / "eigenvalues.csv").exists()
        assert (out / "modes.csv").exists()
        cmd_build_model(fast_config)
        assert (out / "model.json").read_bytes() == first

        # spectrum CSV carries the full spectrum; its sum is the trace
        rows = (out / "eigenvalues.csv").read_text().splitlines()[1:]
        lam = np.array([float(r.split(",")[1]) for r in rows])
        assert lam.size == fast_config.get("model", "grid_n")
        assert abs(lam.sum() - stats.trace) / stats.trace < 1e-8

    def test_modes_csv_has_truncation_columns(self, fast_config):
        cmd_build_model(fast_config)
        header = ((fast_config.out_dir() / "modes.csv")
                  .read_text().splitlines()[0])
        M = fast_config.get("model", "truncation")
        assert header == "B_T,mean_H" + "".join(f",mode{m+1}" for m in range(M))

    def test_strictly_decreasing_spectrum_reported(self, fast_config):
        report = cmd_build_model(fast_config)
        lam = report["eigenvalues"]
        assert all(b < a for a, b in zip(lam, lam[1:]))
        assert len(lam) == 4


class TestSensitivityStage:
    def test_map_columns_and_ranking(self, fast_config):
        cmd_sensitivity(fast_config)
        out = fast_config.out_dir()
        header = (out / "sensitivity_map.csv").read_text().splitlines()[0]
        M = fast_config.get("model", "truncation")
        assert header == "x,y," + ",".join(f"dBy_mode{m+1}" for m in range(M))

        doc = json.loads((out / "probe_ranking.json").read_text())
        assert len(doc["probes"]) == fast_config.get("inversion", "probe_count")
        geom = geometry_from_config(fast_config)
        x0, x1, y0, y1 = geom.gap_rectangle()
        for p in doc["probes"]:
            assert x0 <= p["x_m"] <= x1 and y0 <= p["y_m"] <= y1

    def test_rank1_reproducible_across_reruns(self, fast_config):
        first = cmd_sensitivity(fast_config)["probes"][0]
        second = cmd_sensitivity(fast_config)["probes"][0]
        assert first == second


class TestMakeDataStage:
    def test_training_and_validation_files(self, fast_config):
        cmd_make_data(fast_config)
        out = fast_config.out_dir()
        train = load_observations(out / "obs_train.csv")
        assert train.currents.size == 8
        assert len(np.unique(train.currents)) == 8
        assert train.probes.shape[0] == 5

        val = load_observations(out / "obs_validation.csv")
        assert np.sum(val.currents > train.currents.max()) == 2
        # monotone loading at every axis probe
        assert np.all(np.diff(val.data, axis=0) > 0.0)

        gt = json.loads((out / "ground_truth.json").read_text())
        assert len(gt["y0"]) == 4
        assert gt["y0_seed"] == fast_config.get("inversion", "y0_seed")

    def test_byte_idempotent(self, fast_config):
        cmd_make_data(fast_config)
        out = fast_config.out_dir()
        snap = {n: (out / n).read_bytes()
                for n in ("obs_train.csv", "obs_validation.csv",
                          "ground_truth.json")}
        cmd_make_data(fast_config)
        for n, blob in snap.items():
            assert (out / n).read_bytes() == blob


class TestIdentifyStage:
    def test_artifacts_accounting_and_rerun_identity(self, fast_config):
        res1 = cmd_identify(fast_config)
        out = fast_config.out_dir()
        doc = json.loads((out / "identification.json").read_text())
        assert doc["evaluations"] * 8 == doc["forward_solves"] + doc["cache_hits"]
        assert (out / "e_rel.csv").exists()
        assert (out / "e_abs.csv").exists()
        assert "PASS" in (out / "summary.txt").read_text() or \
               "FAIL" in (out / "summary.txt").read_text()

        blob1 = (out / "identification.json").read_bytes()
        res2 = cmd_identify(fast_config)
        assert np.array_equal(res1.y_hat, res2.y_hat)
        assert (out / "identification.json").read_bytes() == blob1

    def test_history_nonincreasing(self, fast_config):
        res = cmd_identify(fast_config)
        assert np.all(np.diff(res.history) <= 0.0)


class TestValidateStage:
    def test_validate_passes_then_fails_on_tight_threshold(self, fast_config):
        cmd_identify(fast_config)
        # 4 swarm iterations will not reach machine-zero errors
        fast_config.values[("inversion", "e_rel_threshold")] = 1e-30
        assert cmd_validate(fast_config) is False
        txt = (fast_config.out_dir() / "validation_summary.txt").read_text()
        assert "FAIL" in txt

    def test_validate_requires_artifacts(self, fast_config):
        with pytest.raises(ConfigError, match="missing"):
            cmd_validate(fast_config)


class TestCli:
    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[solver]\nbogus_key = 1\n")
        assert main(["--config", str(bad), "build-model"]) == 2

    def test_missing_config_file_exit_code(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.ini"),
                     "build-model"]) == 2

    def test_numerical_failure_exit_code(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[solver]\nnewton_max_iter = 1\n"
                       "[paths]\nout_dir = " + str(tmp_path / "o") + "\n")
        assert main(["--config", str(ini), "make-data"]) == 3

    def test_threshold_failure_exit_code(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text(
            "[inversion]\nswarm_size = 6\niterations = 4\n"
            "early_stop_tol = 0\ne_rel_threshold = 1e-30\n"
            "[paths]\nout_dir = " + str(tmp_path / "o") + "\n")
        assert main(["--config", str(ini), "identify"]) == 0
        assert main(["--config", str(ini), "validate"]) == 4

    def test_out_flag_overrides_config(self, tmp_path):
        target = tmp_path / "elsewhere"
        code = main(["--out", str(target), "build-model"])
        assert code == 0
        assert (target / "model.json").exists()

    def test_bad_threads_rejected(self, tmp_path):
        assert main(["--threads", "0", "--out", str(tmp_path),
                     "build-model"]) == 2

    def test_timestamps_confined_to_summary(self, fast_config):
        out = fast_config.out_dir()
        cmd_identify(fast_config)
        stamped = (out / "summary.txt").read_text()
        assert "finished:" in stamped
        for name in ("model.json", "identification.json", "obs_train.csv",
                     "e_rel.csv", "e_abs.csv"):
            blob = (out / name).read_text()
            assert "finished:" not in blob
