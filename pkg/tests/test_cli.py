import json

import numpy as np
import pytest

from tgate.cli import main
from tgate.config import ExperimentConfig, default_config
from tgate.errors import ConfigError


def test_default_config_resolves():
    cfg = default_config()
    assert cfg.gate["tau_us"] == 160.0
    assert cfg.tau == pytest.approx(160e-6)
    assert cfg.delta_m == pytest.approx(2 * np.pi * 12.5e3)
    assert cfg.run["mode"] == "stationary"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_dict({"gate": {"tau_su": 1.0}})
    with pytest.raises(ConfigError, match="unknown config section"):
        ExperimentConfig.from_dict({"laser": {}})


def test_type_and_range_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"gate": {"tau_us": "long"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"run": {"mode": "sideways"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"noise": {"ramsey_contrast_loss": 0.9}})


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text("""
[gate]
tau_us = 120.0
delta_m_khz = 10.0

[run]
mode = "stationary"
seed = 7
""")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.gate["tau_us"] == 120.0
    assert cfg.run["seed"] == 7
    # digest stable and independent of the output directory
    cfg2 = ExperimentConfig.from_dict({
        "gate": {"tau_us": 120.0, "delta_m_khz": 10.0},
        "run": {"mode": "stationary", "seed": 7, "out_dir": "elsewhere"}})
    assert cfg.digest() == cfg2.digest()


def test_missing_config_file_is_config_error(tmp_path, capsys):
    code = main(["run-gate", "--config", str(tmp_path / "nope.toml")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[gate]\nwibble = 3\n")
    code = main(["selftest"]) if False else main(
        ["run-gate", "--config", str(path)])
    assert code == 2


def test_infeasible_trap_exit_code(tmp_path, capsys):
    path = tmp_path / "hot.toml"
    path.write_text("[trap]\nomega_com_mhz = 40.0\n")
    code = main(["build-waveform", "--config", str(path),
                 "--out", str(tmp_path / "o")])
    assert code == 3
    assert "infeasible" in capsys.readouterr().err.lower()


def test_scan_empty_grid_usage_error(tmp_path, capsys):
    code = main(["scan", "--kind", "mode-detuning", "--points", "0",
                 "--out", str(tmp_path / "s")])
    assert code == 2
    assert "empty scan grid" in capsys.readouterr().err


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out


def test_build_waveform_outputs(tmp_path):
    out = tmp_path / "w"
    code = main(["build-waveform", "--seed", "4", "--out", str(out)])
    assert code == 0
    table = (out / "doppler_profile.csv").read_text().splitlines()
    assert table[0].startswith("# config ")
    header = [ln for ln in table if not ln.startswith("#")][0]
    assert header == "segment,doppler_before_hz,doppler_after_hz"
    manifest = json.loads((out / "build_manifest.json").read_text())
    assert manifest["seed"] == 4
    assert "waveform_corrected.txt" in manifest["outputs"]
    assert (out / "waveform_corrected.txt").exists()
