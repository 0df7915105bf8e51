"""Scenario validation and pipeline tests at desk scale.

Horizons here are deliberately tiny; the statistical claims behind each
scenario kind get their full-length treatment in the acceptance suite.
"""

import copy
import json

import numpy as np
import pytest

from eemsync import (
    ConfigError,
    KINDS,
    NumericalError,
    check_collective_gain,
    check_obs_gain,
    run_scenario,
    validate_config,
    weight_long,
    weight_short,
)
from eemsync import scenarios as scen


def raw_config(kind="free-run", **over):
    cfg = {
        "name": over.pop("name", "case"),
        "kind": kind,
        "model": {
            "n_clocks": 3,
            "tau": 1.0,
            "sigma1": [1.700e-10, 0.886e-10, 1.221e-10],
            "sigma2": [1.507e-13, 0.532e-13, 0.167e-13],
            "meas_std": [0.4353e-14, 0.0759e-14],
        },
        "horizon": 400,
        "seed": 42,
    }
    cfg.update(over)
    return cfg


class TestValidateConfig:
    def test_bundled_configs_cover_every_kind(self):
        from eemsync.cli import _bundled_dir

        kinds = set()
        for path in sorted(_bundled_dir().iterdir()):
            if path.name.endswith(".json"):
                cfg = validate_config(json.loads(path.read_text()))
                assert cfg.name == path.name[: -len(".json")]
                kinds.add(cfg.kind)
        assert kinds == set(KINDS)

    def test_missing_sigma_list_is_named(self):
        raw = raw_config()
        del raw["model"]["sigma2"]
        with pytest.raises(ConfigError, match="sigma2"):
            validate_config(raw)

    def test_weight_normalization_enforced(self):
        raw = raw_config("determinate-kf")
        raw["controller"] = {"weight": [0.5, 0.3, 0.1]}
        with pytest.raises(ConfigError, match="sum to 1"):
            validate_config(raw)

    def test_problems_are_aggregated(self):
        raw = raw_config(horizon=3, seed=-1)
        raw["model"]["meas_std"] = [1e-15]
        with pytest.raises(ConfigError) as excinfo:
            validate_config(raw)
        message = str(excinfo.value)
        assert len(excinfo.value.problems) >= 3
        assert "horizon" in message
        assert "seed" in message
        assert "meas_std" in message

    def test_pinned_weight_rejected(self):
        raw = raw_config("steer-to-clock")
        raw["controller"] = {"weight": "uniform"}
        with pytest.raises(ConfigError, match="pins the weight"):
            validate_config(raw)

    def test_unknown_fields_rejected(self):
        raw = raw_config("balanced", commentary="hello")
        raw["controller"] = {"bogus": 1}
        with pytest.raises(ConfigError) as excinfo:
            validate_config(raw)
        message = str(excinfo.value)
        assert "commentary" in message
        assert "controller.bogus" in message

    def test_outputs_selectors_checked(self):
        raw = raw_config(outputs=["allan", "gains"])
        with pytest.raises(ConfigError, match="'gains' is not available"):
            validate_config(raw)

    def test_unknown_kind_fails_fast(self):
        with pytest.raises(ConfigError, match="free-run"):
            validate_config(raw_config("bogus"))

    def test_kind_defaults_fill_controller(self):
        cfg = validate_config(raw_config("balanced"))
        assert cfg.controller is not None
        assert cfg.controller.mode == "balanced"
        assert cfg.controller.m == 200
        assert check_obs_gain(cfg.controller.F_o, 3, 1.0) < 1.0
        assert check_collective_gain(cfg.controller.K_bo, 200, 1.0) < 1.0
        s1 = np.asarray(raw_config()["model"]["sigma1"]) ** 2
        np.testing.assert_allclose(cfg.weight, weight_short(s1).q, rtol=1e-12)

        cfg_long = validate_config(raw_config("sync-best-long"))
        s2 = np.asarray(raw_config()["model"]["sigma2"]) ** 2
        np.testing.assert_allclose(cfg_long.weight, weight_long(s2).q, rtol=1e-12)
        assert cfg_long.controller.mode == "sync-only"

    def test_json_string_accepted(self):
        cfg = validate_config(json.dumps(raw_config()))
        assert cfg.kind == "free-run"
        with pytest.raises(ConfigError, match="not valid JSON"):
            validate_config("{oops")


class TestTrendStatistics:
    def test_flat_noise_is_trend_free(self):
        rng = np.random.default_rng(1)
        stats = scen._trend_statistics(rng.normal(size=4000))
        assert stats["trend_free"]
        assert stats["blocks"] == 50

    def test_ramp_is_detected(self):
        rng = np.random.default_rng(2)
        series = 0.05 * np.arange(4000.0) + rng.normal(size=4000)
        stats = scen._trend_statistics(series)
        assert not stats["trend_free"]
        assert stats["slope"] == pytest.approx(0.05, rel=0.05)


class TestRunScenario:
    def test_manifest_hashes_reproducible(self, tmp_path):
        raw = raw_config()
        m1 = run_scenario(validate_config(raw), str(tmp_path / "a"))
        m2 = run_scenario(validate_config(copy.deepcopy(raw)), str(tmp_path / "b"))
        assert m1["status"] == "ok"
        assert m1["files"] == m2["files"]
        assert {f["name"] for f in m1["files"]} >= {"allan_index.json", "summary.json"}
        assert set(m1["versions"]) == {"eemsync", "numpy", "scipy"}

        on_disk = json.loads((tmp_path / "a" / "case" / "manifest.json").read_text())
        assert on_disk == m1

    def test_free_run_statistics_near_analytical(self, tmp_path):
        cfg = validate_config(raw_config(horizon=20_000))
        manifest = run_scenario(cfg, str(tmp_path))
        for entry in manifest["summary"]["clocks"].values():
            assert entry["allan_at_1s"] == pytest.approx(
                entry["analytical_at_1s"], rel=0.2
            )

    def test_determinate_runner_equivalence(self, tmp_path):
        cfg = validate_config(raw_config("determinate-kf", horizon=300))
        manifest = run_scenario(cfg, str(tmp_path))
        assert manifest["summary"]["max_rel_deviation"] <= 1e-8

    def test_steered_clock_untouched(self, tmp_path):
        cfg = validate_config(raw_config("steer-to-clock", horizon=300))
        manifest = run_scenario(cfg, str(tmp_path))
        assert manifest["summary"]["steered_clock_max_abs_input"] == 0.0
        assert "trend_free" in manifest["summary"]["relative_phase_trend"]

    def test_balanced_counts_kicks(self, tmp_path):
        raw = raw_config("balanced", horizon=1000)
        raw["controller"] = {"period": 200}
        manifest = run_scenario(validate_config(raw), str(tmp_path))
        # kicks land on k = 0, 200, ..., 800; the k = 0 command is zero
        # because the observer starts from a zero estimate
        assert manifest["summary"]["collective_kicks"] == 4
        assert "sampled_mean_phase_trend" in manifest["summary"]

    def test_suboptimal_kind_runs(self, tmp_path):
        cfg = validate_config(raw_config("standard-kf-suboptimal", horizon=300))
        manifest = run_scenario(cfg, str(tmp_path))
        assert manifest["summary"]["optimal_allan_at_1s"] > 0.0
        assert manifest["summary"]["suboptimal_allan_at_1s"] > 0.0

    def test_trajectory_output_toggle(self, tmp_path):
        with_traj = raw_config(outputs=["summary", "trajectory"], name="with")
        without = raw_config(outputs=["summary"], name="without")
        m_with = run_scenario(validate_config(with_traj), str(tmp_path))
        m_without = run_scenario(validate_config(without), str(tmp_path))
        assert any(f["name"] == "trajectory.csv" for f in m_with["files"])
        assert not any(f["name"] == "trajectory.csv" for f in m_without["files"])

    def test_numerical_failure_partial_manifest(self, tmp_path, monkeypatch):
        def explode(cfg, art, jobs):
            raise NumericalError("synthetic breakdown")

        monkeypatch.setitem(scen._RUNNERS, "free-run", explode)
        cfg = validate_config(raw_config())
        with pytest.raises(NumericalError, match="synthetic breakdown"):
            run_scenario(cfg, str(tmp_path))
        manifest = json.loads((tmp_path / "case" / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert manifest["partial"] is True
        assert "NumericalError" in manifest["error"]
        assert manifest["files"] == []
