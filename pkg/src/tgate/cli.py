"""Command-line interface: config-driven experiments with diffable outputs.

Subcommands: build-waveform, run-gate, scan, calibrate, selftest.  Every
command is byte-reproducible under a fixed config and seed: tables carry
fixed-format floats, the run manifest has sorted keys, and nothing
timestamps itself.

Exit codes: 0 success, 2 config/usage error, 3 calibration failure,
4 integration failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .config import GATE_MODES, ExperimentConfig, default_config
from .constants import TWO_PI
from .errors import (CalibrationError, ConfigError, InfeasibleKeyframeError,
                     IntegrationError, TgateError, TrajectoryError,
                     VoltageClampError)
from .pipeline import (build_corrected_waveform, plant_from_config, run_gate)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3
EXIT_INTEGRATION = 4


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def write_table(path: Path, columns: list[str], rows, header_lines=()):
    """Comma-separated table with '#' header lines (units, config hash)."""
    lines = [f"# {h}" for h in header_lines]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_manifest(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2,
                               default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _load_config(args) -> ExperimentConfig:
    cfg = (ExperimentConfig.from_file(args.config) if args.config
           else default_config())
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("run", {})["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides.setdefault("run", {})["mode"] = args.mode
    if getattr(args, "shots", None):
        overrides.setdefault("gate", {})["shots"] = args.shots
    if getattr(args, "out", None):
        overrides.setdefault("run", {})["out_dir"] = args.out
    if overrides:
        merged = {"trap": dict(cfg.trap), "beam": dict(cfg.beam),
                  "gate": dict(cfg.gate), "noise": dict(cfg.noise),
                  "run": dict(cfg.run)}
        for section, kv in overrides.items():
            merged[section].update(kv)
        cfg = ExperimentConfig.from_dict(merged)
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.run["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_build_waveform(args) -> int:
    from .trap import write_waveform

    cfg = _load_config(args)
    out = _out_dir(cfg)
    plant = plant_from_config(cfg)
    bundle = build_corrected_waveform(plant, seed=cfg.run["seed"],
                                      stark_split=cfg.stark_split,
                                      n_segments=cfg.gate["n_segments"])
    head = [f"config {cfg.digest()}", f"seed {cfg.run['seed']}"]
    write_waveform(bundle.waveform, out / "waveform_corrected.txt")
    rows = [(k, bundle.uncorrected_doppler[k] / TWO_PI,
             bundle.doppler.segment_doppler[k] / TWO_PI)
            for k in range(len(bundle.doppler.segment_doppler))]
    write_table(out / "doppler_profile.csv",
                ["segment", "doppler_before_hz", "doppler_after_hz"], rows,
                head + ["per-segment fitted Doppler shift (Hz)"])
    write_manifest(out / "build_manifest.json",
                   {"config_digest": cfg.digest(),
                    "seed": cfg.run["seed"],
                    "backend": kernels.backend(),
                    "outputs": ["waveform_corrected.txt",
                                "doppler_profile.csv"],
                    "reports": bundle.reports()})
    spread = bundle.doppler.spread / TWO_PI
    print(f"corrected waveform written; per-segment Doppler spread "
          f"{spread:.0f} Hz in {bundle.doppler.rounds} rounds")
    return EXIT_OK


def cmd_run_gate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    plant = plant_from_config(cfg)
    mode = cfg.run["mode"]
    bundle = build_corrected_waveform(plant, seed=cfg.run["seed"],
                                      stark_split=cfg.stark_split,
                                      n_segments=cfg.gate["n_segments"])
    result = run_gate(plant, mode, bundle, seed=cfg.run["seed"],
                      shots=cfg.gate["shots"],
                      parity_phases=cfg.gate["parity_phases"])
    est = result.estimate
    write_manifest(out / f"gate_{mode}.json",
                   {"config_digest": cfg.digest(),
                    "seed": cfg.run["seed"],
                    "backend": kernels.backend(),
                    "result": result.to_report()})
    print(f"{mode}: F = {est.fidelity:.4f} +/- {est.fidelity_err:.4f} "
          f"(P0 = {est.p0:.3f}, P2 = {est.p2:.3f}, A = {est.amplitude:.4f})")
    return EXIT_OK


def cmd_scan(args) -> int:
    from .calib import carrier_spectroscopy, scan_mode_detuning
    from .measure import asymmetry_metric

    cfg = _load_config(args)
    out = _out_dir(cfg)
    plant = plant_from_config(cfg)
    head = [f"config {cfg.digest()}", f"seed {cfg.run['seed']}",
            f"kind {args.kind}"]
    if args.points < 1:
        print("error: empty scan grid (--points must be >= 1)",
              file=sys.stderr)
        return EXIT_CONFIG

    if args.kind == "mode-detuning":
        bundle = build_corrected_waveform(plant, seed=cfg.run["seed"],
                                          stark_split=cfg.stark_split)
        result = run_gate(plant, cfg.run["mode"], bundle,
                          seed=cfg.run["seed"], shots=cfg.gate["shots"])
        setup = result.setup
        span = TWO_PI * args.span_khz * 1e3
        values = np.linspace(-span, span, args.points)
        scan = scan_mode_detuning(setup, values, shots=cfg.gate["shots"],
                                  seed=cfg.run["seed"])
        pops = scan.populations
        sig = scan.sigmas
        rows = [(v / TWO_PI, *pops[i], *sig[i])
                for i, v in enumerate(values)]
        write_table(out / f"scan_mode_detuning_{cfg.run['mode']}.csv",
                    ["delta_m_hz", "P0", "P1", "P2",
                     "P0_err", "P1_err", "P2_err"], rows,
                    head + [f"mode {cfg.run['mode']}",
                            f"shots {cfg.gate['shots']}"])
        try:
            asym = asymmetry_metric(scan)
            print(f"scan written; asymmetry metric {asym:.4f}")
        except ValueError:
            print("scan written")
        return EXIT_OK

    if args.kind == "carrier-spectrum":
        bundle = build_corrected_waveform(plant, seed=cfg.run["seed"],
                                          stark_split=cfg.stark_split)
        nominal = bundle.beam.axial_wavenumber * 0.5
        span = TWO_PI * args.span_khz * 1e3
        grid = np.linspace(nominal - span, nominal + span, args.points)
        flags = {}
        for label, wf in (("uncorrected", bundle.uncorrected_waveform),
                          ("corrected", bundle.waveform)):
            res = carrier_spectroscopy(plant.trap, wf, bundle.beam,
                                       "full", "auto", grid, plant.spacing,
                                       shots=cfg.gate["shots"],
                                       seed=cfg.run["seed"])
            rows = list(zip(grid / TWO_PI, res.signal, res.signal_err))
            write_table(out / f"carrier_spectrum_{label}.csv",
                        ["detuning_hz", "excited_ions", "err"], rows,
                        head + [f"multimodal {res.multimodal}"])
            flags[label] = res.multimodal
        print(f"spectra written; multimodal: uncorrected = "
              f"{flags['uncorrected']}, corrected = {flags['corrected']}")
        return EXIT_OK

    print(f"error: unknown scan kind {args.kind!r}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    plant = plant_from_config(cfg)
    bundle = build_corrected_waveform(plant, seed=cfg.run["seed"],
                                      stark_split=cfg.stark_split,
                                      n_segments=cfg.gate["n_segments"])
    write_manifest(out / "calibration.json",
                   {"config_digest": cfg.digest(),
                    "seed": cfg.run["seed"],
                    "backend": kernels.backend(),
                    "reports": bundle.reports()})
    print(f"confinement rounds {bundle.confinement.rounds} "
          f"(residual {bundle.confinement.residual:.3%}); "
          f"Doppler rounds {bundle.doppler.rounds} "
          f"(spread {bundle.doppler.spread / TWO_PI:.0f} Hz)")
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Fast oracle suite: propagator, analytic loop, Doppler arithmetic."""
    import numpy.linalg as la

    from .beam import BeamModel, doppler_envelope
    from .dynamics import (GateParams, analytic_ms_reference, propagate,
                           propagate_expm_reference)
    from .envelopes import EnvelopeSet
    from .qcore import (BELL_TARGET, basis_state, build_space,
                        overlap_fidelity)
    from .trap import Trajectory

    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        failures += 0 if ok else 1

    spec, ops = build_space(6)
    comm = ops.a @ ops.a_dagger - ops.a_dagger @ ops.a
    diag = np.real(np.diag(comm)).reshape(4, -1)
    check("ladder commutator", bool(np.allclose(diag[:, :-1], 1.0, atol=1e-12)))

    params = GateParams(tau=20e-6, delta_m=TWO_PI * 14e3,
                        delta_g=TWO_PI * 1.1e3)
    env = EnvelopeSet.constant(20e-6, TWO_PI * 90e3, stark=TWO_PI * 0.8e3)
    psi0 = basis_state(spec, 0, 0, 1)
    fast = propagate(psi0, params, env, tol=1e-8)
    oracle = propagate_expm_reference(psi0, params, env, ops, dt=1e-9)
    err = float(np.max(np.abs(fast - oracle)))
    check("propagator vs expm oracle", err < 1e-8, f"max err {err:.1e}")

    gate = GateParams(tau=160e-6, delta_m=TWO_PI * 12.5e3)
    ref = analytic_ms_reference(gate)
    spec15, _ = build_space(15)
    out = propagate(basis_state(spec15, 0, 0, 0), gate,
                    EnvelopeSet.constant(160e-6, ref.ideal_rabi), tol=1e-9)
    fid = overlap_fidelity(out, BELL_TARGET)
    check("analytic ideal-power Bell fidelity", fid > 0.9999, f"F = {fid:.6f}")
    check("loop closure", abs(ref.alpha(160e-6)) < 1e-12)

    beam = BeamModel()
    traj = Trajectory(t=np.array([0.0, 1.0]), x=np.zeros(2),
                      v=np.full(2, 0.5), omega_com=np.zeros(2))
    dd = doppler_envelope(traj, beam)[0] / TWO_PI
    check("Doppler arithmetic 0.5 m/s at 45 deg",
          abs(dd - 485.0e3) < 100.0, f"{dd / 1e3:.1f} kHz")

    a = propagate(psi0, params, env, tol=1e-8)
    b = propagate(psi0, params, env, tol=1e-8)
    check("propagation determinism", bool(np.array_equal(a, b)))

    print(f"selftest: {'all passed' if failures == 0 else f'{failures} failed'} "
          f"(backend {kernels.backend()})")
    return EXIT_OK if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tgate",
        description="Transport-enabled Molmer-Sorensen gate simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=str, default=None,
                        help="TOML config path (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=str, default=None,
                        help="output directory (overrides run.out_dir)")

    sp = sub.add_parser("build-waveform",
                        help="solve, synthesize, and flatten the transport waveform")
    common(sp)
    sp.set_defaults(func=cmd_build_waveform)

    sp = sub.add_parser("run-gate", help="calibrate and run one gate mode")
    common(sp)
    sp.add_argument("--mode", choices=GATE_MODES, default=None)
    sp.add_argument("--shots", type=int, default=None)
    sp.set_defaults(func=cmd_run_gate)

    sp = sub.add_parser("scan", help="emit figure-data tables")
    common(sp)
    sp.add_argument("--kind", choices=["mode-detuning", "carrier-spectrum"],
                    required=True)
    sp.add_argument("--mode", choices=GATE_MODES, default=None)
    sp.add_argument("--shots", type=int, default=None)
    sp.add_argument("--span-khz", type=float, default=35.0)
    sp.add_argument("--points", type=int, default=71)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("calibrate",
                        help="run the flattening calibrations and emit reports")
    common(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("selftest", help="run the fast oracle suite")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleKeyframeError as exc:
        print(f"calibration failure: infeasible keyframe: {exc}",
              file=sys.stderr)
        return EXIT_CALIBRATION
    except (CalibrationError, VoltageClampError, TrajectoryError) as exc:
        print(f"calibration failure: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except IntegrationError as exc:
        print(f"integration failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except TgateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
