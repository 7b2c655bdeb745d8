import json

import numpy as np
import pytest

from delayloop.cli import (ConfigError, load_preset, main, parse_config,
                           preset_names)

BASE_CFG = """\
model = two_level
model.drive = 0.0
model.phi = 3.141592653589793
model.tau = 1.0
engine = cascade
t_max = 1.5
n_samples = 13
output = {out}
"""


def write_cfg(tmp_path, text, name="scenario.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestConfigParsing:
    def test_round_trip(self):
        cfg = parse_config(BASE_CFG.format(out="x"))
        assert cfg.model == "two_level"
        assert cfg.engine == "cascade"
        assert cfg.t_max == 1.5
        assert cfg.n_samples == 13
        assert cfg.model_params["tau"] == 1.0

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# heading\n\nmodel = two_level\nmodel.tau = 2.0 # inline\n")
        assert cfg.model_params["tau"] == 2.0

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("model = two_level\nmodel.banana = 1\n")

    def test_unknown_model_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("model = spin_chain\n")

    def test_bad_samples_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("model = two_level\nn_samples = 1\n")

    def test_dde_requires_undriven(self):
        with pytest.raises(ConfigError):
            parse_config("model = two_level\nmodel.drive = 1.0\nengine = dde\n")

    def test_collision_needs_bin_width(self):
        with pytest.raises(ConfigError):
            parse_config("model = two_level\nengine = collision\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("model = two_level\nmodel = cavity\n")


class TestRun:
    def test_run_writes_csv_and_manifest(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write_cfg(tmp_path, BASE_CFG.format(out="out1"))
        assert main(["run", "--config", cfg]) == 0
        header = (tmp_path / "out1.csv").read_text().splitlines()[0]
        assert header == "t,P_e,re_coh,im_coh,trace_err,min_eig"
        manifest = json.loads((tmp_path / "out1.manifest.json").read_text())
        assert manifest["truncated"] is False
        assert manifest["engines"]["cascade"]["max_trace_err"] < 1e-8

    def test_csv_deterministic(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write_cfg(tmp_path, BASE_CFG.format(out="d1"))
        assert main(["run", "--config", cfg]) == 0
        first = (tmp_path / "d1.csv").read_bytes()
        assert main(["run", "--config", cfg]) == 0
        assert (tmp_path / "d1.csv").read_bytes() == first

    def test_parse_error_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write_cfg(tmp_path, "model = nonsense\n")
        assert main(["run", "--config", cfg]) == 2
        assert not (tmp_path / "run.manifest.json").exists()

    def test_missing_config_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2

    def test_budget_exceeded_exit_3_partial_csv(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        # t_max = 8 tau needs more than six copies: truncation expected
        text = BASE_CFG.format(out="part") .replace("t_max = 1.5", "t_max = 8.0")
        cfg = write_cfg(tmp_path, text)
        assert main(["run", "--config", cfg]) == 3
        data = np.genfromtxt(tmp_path / "part.csv", delimiter=",", names=True)
        assert data["t"].max() <= 6.0 + 1e-9
        manifest = json.loads((tmp_path / "part.manifest.json").read_text())
        assert manifest["truncated"] is True
        assert any("truncated" in n for n in manifest["notes"])

    def test_cavity_schema(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        text = """\
model = cavity
model.detuning = 0.0
model.fock_cutoff = 3
model.kappa1 = 1.0
model.kappa2 = 1.0
model.phi = 3.141592653589793
model.tau = 0.5
initial = coherent
initial.alpha = 0.4
engine = dde
t_max = 1.2
n_samples = 7
output = cav
"""
        cfg = write_cfg(tmp_path, text)
        assert main(["run", "--config", cfg]) == 0
        header = (tmp_path / "cav.csv").read_text().splitlines()[0]
        assert header == "t,re_a,im_a,n_phot,trace_err,min_eig"


class TestCompare:
    def test_two_engine_diff_column(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write_cfg(tmp_path, BASE_CFG.format(out="c1"))
        assert main(["compare", "--config", cfg, "--engines", "cascade,dde",
                     "--output", "c1"]) == 0
        data = np.genfromtxt(tmp_path / "c1.csv", delimiter=",", names=True)
        assert "abs_diff" in data.dtype.names
        assert data["abs_diff"].max() < 1e-10

    def test_single_engine_rejected(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write_cfg(tmp_path, BASE_CFG.format(out="c2"))
        assert main(["compare", "--config", cfg, "--engines", "cascade"]) == 2


class TestSweep:
    def test_tau_sweep_plateau_column(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        text = BASE_CFG.format(out="sw").replace("engine = cascade", "engine = dde") \
                                        .replace("t_max = 1.5", "t_max = 40.0") \
                                        .replace("n_samples = 13", "n_samples = 161")
        cfg = write_cfg(tmp_path, text)
        assert main(["sweep", "--config", cfg, "--parameter", "tau",
                     "--values", "0.5,1.0,2.0", "--output", "sw"]) == 0
        summary = np.genfromtxt(tmp_path / "sw_sweep_summary.csv",
                                delimiter=",", names=True)
        predicted = 1.0 / (1.0 + summary["tau"]) ** 2
        assert np.allclose(summary["plateau_prediction"], predicted, atol=1e-12)
        assert np.max(np.abs(summary["late_mean"] - predicted)) < 0.01

    def test_phi_sweep_trapping_only_at_pi(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        text = BASE_CFG.format(out="swp").replace("engine = cascade", "engine = dde") \
                                         .replace("t_max = 1.5", "t_max = 30.0") \
                                         .replace("n_samples = 13", "n_samples = 121")
        cfg = write_cfg(tmp_path, text)
        assert main(["sweep", "--config", cfg, "--parameter", "phi",
                     "--values", "0,1.5707963267948966,3.141592653589793",
                     "--output", "swp"]) == 0
        summary = np.genfromtxt(tmp_path / "swp_sweep_summary.csv",
                                delimiter=",", names=True)
        late = summary["late_mean"]
        assert late[2] > 0.2          # trapped at phi = pi
        assert late[0] < 1e-2         # decays at phi = 0
        assert late[1] < 0.1

    def test_parallel_jobs(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        text = BASE_CFG.format(out="swj").replace("engine = cascade", "engine = dde") \
                                         .replace("t_max = 1.5", "t_max = 10.0")
        cfg = write_cfg(tmp_path, text)
        assert main(["sweep", "--config", cfg, "--parameter", "tau",
                     "--values", "0.5,1.0", "--jobs", "2", "--output", "swj"]) == 0
        assert (tmp_path / "swj_tau_0.5.csv").exists()
        assert (tmp_path / "swj_tau_1.csv").exists()
        assert (tmp_path / "swj_sweep_summary.csv").exists()

    def test_empty_values_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write_cfg(tmp_path, BASE_CFG.format(out="swe"))
        assert main(["sweep", "--config", cfg, "--parameter", "tau",
                     "--values", ""]) == 2

    def test_bad_parameter_exit_2(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = write_cfg(tmp_path, BASE_CFG.format(out="swb"))
        assert main(["sweep", "--config", cfg, "--parameter", "kappa",
                     "--values", "1.0"]) == 2


class TestPresets:
    def test_names(self):
        assert preset_names() == ["panel_a", "panel_b", "panel_c"]

    def test_presets_parse(self):
        for name in preset_names():
            cfg = parse_config(load_preset(name))
            assert cfg.model == "two_level"
            assert cfg.engine == "cascade"

    def test_panel_parameters(self):
        a = parse_config(load_preset("panel_a"))
        assert a.model_params["drive"] == 0.0
        assert a.model_params["tau"] == 1.0
        b = parse_config(load_preset("panel_b"))
        assert b.model_params["drive"] == pytest.approx(np.pi)
        assert b.model_params["tau"] == 1.0
        c = parse_config(load_preset("panel_c"))
        assert c.model_params["drive"] == pytest.approx(10 * np.pi)
        assert c.model_params["tau"] == pytest.approx(0.1)
        assert c.t_max == pytest.approx(0.6)
        assert "capped" in c.note

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_preset("panel_z")
