"""Strict TOML experiment configuration.

Every physical quantity carries its unit in the key name; unknown keys or
sections are rejected.  The parsed config maps onto the plant and gate
objects used by the pipeline.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field

from .constants import TWO_PI
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_SCHEMA = {
    "trap": {
        "pitch_um": float,
        "n_electrodes": int,
        "electrode_width_um": float,
        "omega_com_mhz": float,
        "omega_ripple_fraction": float,
        "timing_errors": list,
        "filter_tau_us": float,
        "seed": int,
    },
    "beam": {
        "waist_um": float,
        "axis_angle_deg": float,
        "wavelength_nm": float,
        "stark_split_khz": float,
        "peak_rabi_khz": float,
    },
    "gate": {
        "tau_us": float,
        "delta_m_khz": float,
        "delta_g_khz": float,
        "loops": int,
        "shots": int,
        "parity_phases": int,
        "fock_cutoff": int,
        "nbar": float,
        "n_segments": int,
    },
    "noise": {
        "enabled": bool,
        "ramsey_contrast_loss": float,
        "ramsey_delay_us": float,
    },
    "run": {
        "mode": str,
        "seed": int,
        "out_dir": str,
    },
}

_DEFAULTS = {
    "trap": {"pitch_um": 60.0, "n_electrodes": 11, "electrode_width_um": 60.0,
             "omega_com_mhz": 1.41, "omega_ripple_fraction": 0.046,
             "timing_errors": None, "filter_tau_us": 2.0, "seed": 0},
    "beam": {"waist_um": 15.0, "axis_angle_deg": 45.0, "wavelength_nm": 729.0,
             "stark_split_khz": 5.0, "peak_rabi_khz": 0.0},
    "gate": {"tau_us": 160.0, "delta_m_khz": 12.5, "delta_g_khz": 0.0,
             "loops": 2, "shots": 500, "parity_phases": 16,
             "fock_cutoff": 15, "nbar": 0.0, "n_segments": 8},
    "noise": {"enabled": True, "ramsey_contrast_loss": 0.014,
              "ramsey_delay_us": 160.0},
    "run": {"mode": "stationary", "seed": 1, "out_dir": "out"},
}

GATE_MODES = ("stationary", "transport-static", "transport-dynamic")


@dataclass(frozen=True)
class ExperimentConfig:
    trap: dict = field(default_factory=dict)
    beam: dict = field(default_factory=dict)
    gate: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        sections = {}
        for name, payload in raw.items():
            if name not in _SCHEMA:
                raise ConfigError(f"unknown config section [{name}]")
            if not isinstance(payload, dict):
                raise ConfigError(f"section [{name}] must be a table")
            schema = _SCHEMA[name]
            merged = dict(_DEFAULTS[name])
            for key, value in payload.items():
                if key not in schema:
                    raise ConfigError(f"unknown key {key!r} in section [{name}]")
                want = schema[key]
                if want is float and isinstance(value, int):
                    value = float(value)
                optional = _DEFAULTS[name].get(key) is None
                if not isinstance(value, want) and not (optional and value is None):
                    raise ConfigError(
                        f"{name}.{key} must be {want.__name__}, "
                        f"got {type(value).__name__}")
                merged[key] = value
            sections[name] = merged
        for name in _SCHEMA:
            sections.setdefault(name, dict(_DEFAULTS[name]))
        cfg = cls(**sections)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        if self.run["mode"] not in GATE_MODES:
            raise ConfigError(f"run.mode must be one of {GATE_MODES}")
        if self.gate["tau_us"] <= 0 or self.gate["shots"] < 1:
            raise ConfigError("gate.tau_us must be > 0 and gate.shots >= 1")
        if self.gate["fock_cutoff"] < 2:
            raise ConfigError("gate.fock_cutoff must be >= 2")
        if not (0.0 <= self.noise["ramsey_contrast_loss"] < 0.5):
            raise ConfigError("noise.ramsey_contrast_loss must lie in [0, 0.5)")
        te = self.trap["timing_errors"]
        if te is not None and len(te) != self.gate["n_segments"]:
            raise ConfigError("trap.timing_errors must have one entry per "
                              "gate segment")

    def digest(self) -> str:
        """Stable hash of the resolved configuration (output path excluded)."""
        run = {k: v for k, v in self.run.items() if k != "out_dir"}
        blob = json.dumps({"trap": self.trap, "beam": self.beam,
                           "gate": self.gate, "noise": self.noise,
                           "run": run}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # unit-resolved accessors -------------------------------------------
    @property
    def omega_com(self) -> float:
        return TWO_PI * self.trap["omega_com_mhz"] * 1e6

    @property
    def tau(self) -> float:
        return self.gate["tau_us"] * 1e-6

    @property
    def delta_m(self) -> float:
        return TWO_PI * self.gate["delta_m_khz"] * 1e3

    @property
    def stark_split(self) -> float:
        return TWO_PI * self.beam["stark_split_khz"] * 1e3


def default_config() -> ExperimentConfig:
    return ExperimentConfig.from_dict({})
