import json

import numpy as np
import pytest

from risflow.cli import main
from risflow.config import EXAMPLE_CONFIG, grid_locations, load_config
from risflow.errors import ConfigError
from risflow.output import read_csv_body


class TestConfig:
    def test_example_config_parses(self):
        cfg = load_config(text=EXAMPLE_CONFIG)
        sc = cfg.scenario
        assert (sc.N, sc.K, sc.M) == (16, 2, 64)
        # APs in the lower-left sub-region
        assert np.all((sc.ap_positions >= -1) & (sc.ap_positions <= -0.75))
        np.testing.assert_allclose(sc.location_positions, [[0.25, 0.25], [0.75, 0.75]])
        assert sc.noise_power > 0

    def test_layout_seeded(self):
        a = load_config(overrides=["scenario.seed=3"]).scenario.ap_positions
        b = load_config(overrides=["scenario.seed=3"]).scenario.ap_positions
        c = load_config(overrides=["scenario.seed=4"]).scenario.ap_positions
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_grid(self):
        g = grid_locations(5, 0.1, 1.0)
        assert g.shape == (25, 2) and g.min() == pytest.approx(0.1) and g.max() == pytest.approx(1.0)
        assert load_config(profile="grid").scenario.K == 25

    def test_thermal_noise_mode(self):
        sc = load_config(overrides=["noise.mode=thermal"]).scenario
        assert sc.noise_power == pytest.approx(6.31e-13, rel=1e-2)

    def test_line_diagnostics(self):
        text = "[scenario]\nseed = 1\nn_elements = sixty\n"
        with pytest.raises(ConfigError, match="line 3"):
            load_config(text=text)

    def test_rejects_zero_noise(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["noise.mode=fixed", "noise.power_w=0"])

    def test_bad_values(self):
        for ov in ("correlation.rho_t=1.5", "geometry.locations=spiral", "scenario.arrival_rates=1 2 3",
                   "geometry.location_positions=2 2", "nosuchsyntax"):
            with pytest.raises(ConfigError):
                load_config(overrides=[ov])
        with pytest.raises(ConfigError):
            load_config(profile="huge")

    def test_hash_tracks_content(self):
        assert load_config().hash == load_config().hash
        assert load_config().hash != load_config(overrides=["simulation.slots=5"]).hash


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


class TestCli:
    def test_optimize_identity(self, tmp_path):
        assert _run(tmp_path, "optimize", "--set", "correlation.model=identity") == 0
        d = json.loads((tmp_path / "optimize.json").read_text())
        assert d["gamma_certified"] == pytest.approx(1.0)
        assert d["meta"]["config_hash"] and "seed" in d["meta"]

    def test_optimize_exponential(self, tmp_path):
        assert _run(tmp_path, "optimize") == 0
        d = json.loads((tmp_path / "optimize.json").read_text())
        assert d["gamma_certified"] >= np.pi / 4 and d["mode"] == "continuous"

    def test_optimize_equal_shortcut(self, tmp_path):
        assert _run(tmp_path, "optimize", "--set", "correlation.rho_r=0.9") == 0
        assert json.loads((tmp_path / "optimize.json").read_text())["mode"] == "equal"

    def test_simulate_zero_rate(self, tmp_path):
        assert _run(tmp_path, "simulate", "--slots", "200", "--set", "scenario.arrival_rates=0") == 0
        body = read_csv_body(tmp_path / "trace.csv").splitlines()
        assert body[0] == "slot,X_1,X_2,sum,moving_avg"
        assert all(line.split(",")[1:] == ["0", "0", "0", "0.0"] for line in body[1:])
        assert len(body) == 201

    def test_simulate_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["simulate", "--slots", "3000", "--policy", "random", "--seed", "4", "--out", str(d)]) == 0
        assert read_csv_body(a / "trace.csv") == read_csv_body(b / "trace.csv")
        text = (a / "trace.csv").read_text()
        assert "# config_hash=" in text and "# seed=4" in text

    def test_region_empty_rays(self, tmp_path):
        assert _run(tmp_path, "region", "--set", "region.rays_deg=") == 0
        assert read_csv_body(tmp_path / "region.csv").strip() == \
            "policy,angle_deg,d_1,d_2,scale,lower,upper,bracketed"

    def test_region_needs_two_locations(self, tmp_path):
        assert _run(tmp_path, "region", "--profile", "grid") == 1

    def test_fluid(self, tmp_path):
        assert _run(tmp_path, "fluid") == 0
        rep = json.loads((tmp_path / "drift.json").read_text())
        assert rep["inside"] and rep["negative_drift"] and rep["drained_by_bound"]

    def test_sweep(self, tmp_path):
        assert _run(tmp_path, "sweep", "--slots", "500", "--set", "sweep.rates=0.1 0.2") == 0
        rows = read_csv_body(tmp_path / "sweep.csv").splitlines()
        assert len(rows) == 5

    def test_validate_reduced(self, tmp_path, capsys):
        assert _run(tmp_path, "validate", "--reduced") == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") >= 8

    def test_validate_rejects_zero_noise(self, tmp_path):
        assert _run(tmp_path, "validate", "--set", "noise.mode=fixed", "--set", "noise.power_w=0") == 1

    def test_config_error_exit(self, tmp_path):
        assert _run(tmp_path, "simulate", "--config", str(tmp_path / "missing.ini")) == 1

    def test_numeric_error_exit(self, tmp_path):
        # a degenerate geometry surfaces while building the statistics
        assert _run(tmp_path, "optimize", "--set", "scenario.n_elements=0") in (1, 2)

    def test_config_file(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text(EXAMPLE_CONFIG)
        assert main(["optimize", "--config", str(p), "--out", str(tmp_path)]) == 0
