"""Closed-loop calibration routines run against the simulated plant.

Every routine measures the plant the way the experiment does (spectra with
shot noise, population scans with multinomial sampling) and returns a
result object carrying a machine-readable report for CLI emission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit

from .beam import BeamModel, rabi_envelopes, stark_envelope
from .constants import TWO_PI
from .dynamics import DEFAULT_FOCK_CUTOFF, GateParams, NoiseModel, run_shots
from .envelopes import EnvelopeSet
from .errors import (CalibrationError, EstimationError, RescanRequiredError,
                     TrajectoryError)
from .measure import sample_shots
from .pulses import excited_population
from .trap import (Trajectory, TrapModel, Waveform, extract_trajectory,
                   retime_segments, solve_keyframe)

MAX_PROBE_STARK = TWO_PI * 200.0


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanResult:
    """Population scan over one parameter."""

    parameter: str
    values: np.ndarray
    counts: np.ndarray                  # (n, 3) ints: (n0, n1, n2) per point
    shots: int
    metadata: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray:
        return self.counts / self.shots

    @property
    def sigmas(self) -> np.ndarray:
        p = self.populations
        return np.sqrt(np.maximum(p * (1 - p), 1.0 / self.shots) / self.shots)

    def argmin_p1(self) -> tuple[float, float]:
        """(grid minimum, quadratic refinement) of the P1 curve."""
        p1 = self.populations[:, 1]
        i = int(np.argmin(p1))
        grid_min = float(self.values[i])
        if 0 < i < self.values.size - 1:
            x = self.values[i - 1:i + 2]
            y = p1[i - 1:i + 2]
            denom = (y[0] - 2 * y[1] + y[2])
            if denom > 0:
                refined = x[1] + 0.5 * (x[1] - x[0]) * (y[0] - y[2]) / denom
                return grid_min, float(refined)
        return grid_min, grid_min

    def to_report(self) -> dict:
        return {"parameter": self.parameter,
                "values": self.values.tolist(),
                "counts": self.counts.tolist(),
                "shots": self.shots,
                "metadata": self.metadata}


@dataclass(frozen=True)
class SpectroscopyResult:
    """Single-tone spectrum with a Gaussian peak fit."""

    detunings: np.ndarray
    signal: np.ndarray                  # mean excited-ion number in [0, 2]
    signal_err: np.ndarray
    center: float                       # nan when multimodal
    center_err: float
    width: float
    multimodal: bool
    metadata: dict = field(default_factory=dict)

    def to_report(self) -> dict:
        return {"detunings": self.detunings.tolist(),
                "signal": self.signal.tolist(),
                "signal_err": self.signal_err.tolist(),
                "center": self.center, "center_err": self.center_err,
                "width": self.width, "multimodal": self.multimodal,
                "metadata": self.metadata}


@dataclass(frozen=True)
class GateSetup:
    """Everything needed to run gate shots during calibration."""

    params: GateParams
    env: EnvelopeSet
    noise: NoiseModel = NoiseModel()
    fock_cutoff: int = DEFAULT_FOCK_CUTOFF
    nbar: float = 0.0
    tol: float = 3e-7

    def run(self, n_shots: int, seed) -> np.ndarray:
        noise = replace(self.noise, seed=_as_seed(seed))
        return run_shots(self.params, self.env, noise, n_shots,
                         nbar=self.nbar, fock_cutoff=self.fock_cutoff,
                         tol=self.tol)

    def measure(self, n_shots: int, seed) -> np.ndarray:
        """Sampled (P0, P1, P2) from a fresh ensemble."""
        s1, s2 = np.random.SeedSequence(_as_seed(seed)).spawn(2)
        states = self.run(n_shots, s1)
        rec = sample_shots(states, n_shots, np.random.default_rng(s2))
        return np.array(rec.populations), np.array(rec.counts)

    def with_params(self, **kw) -> "GateSetup":
        return replace(self, params=self.params.with_(**kw))


def _as_seed(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(seed)


# ---------------------------------------------------------------------------
# spectroscopy
# ---------------------------------------------------------------------------

def _window_slice(traj: Trajectory, window) -> slice:
    if window == "full":
        return slice(0, traj.t.size)
    k = int(window)
    if not traj.segment_slices or not (0 <= k < len(traj.segment_slices)):
        raise ValueError(f"no segment {window!r} in trajectory")
    return traj.segment_slices[k]


def _probe_windows(trap: TrapModel, wf: Waveform, beam: BeamModel,
                   ion_spacing: float, window,
                   traj: Trajectory | None = None):
    traj = extract_trajectory(trap, wf) if traj is None else traj
    sl = _window_slice(traj, window)
    t = traj.t[sl]
    sub = Trajectory(t=t, x=traj.x[sl], v=traj.v[sl],
                     omega_com=traj.omega_com[sl])
    om1, om2 = rabi_envelopes(sub, beam, ion_spacing)
    doppler = beam.axial_wavenumber * sub.v
    return sub, t, om1, om2, doppler


def carrier_spectroscopy(trap: TrapModel, wf: Waveform, beam: BeamModel,
                         window, probe_power, detunings: np.ndarray,
                         ion_spacing: float, shots: int = 500, seed: int = 0,
                         traj: Trajectory | None = None) -> SpectroscopyResult:
    """Single-tone carrier probe during transport (full or one segment).

    ``probe_power`` scales the beam's peak Rabi frequency; "auto" picks a
    pulse area of ~pi for the brighter ion over the window.  The probe
    Stark shift must stay below 2 pi * 200 Hz.
    """
    detunings = np.asarray(detunings, dtype=float)
    if detunings.size < 5:
        raise ValueError("need at least 5 probe detunings")
    sub, t, om1, om2, doppler = _probe_windows(trap, wf, beam, ion_spacing,
                                               window, traj)
    if probe_power == "auto":
        area = max(np.trapezoid(om1, t), np.trapezoid(om2, t))
        probe_power = math.pi / area if area > 0 else 0.0
        st1 = stark_envelope(om1, om2, beam).max()
        if st1 > 0:
            probe_power = min(probe_power,
                              math.sqrt(0.8 * MAX_PROBE_STARK / st1))
    om1 = om1 * probe_power
    om2 = om2 * probe_power
    stark = stark_envelope(om1, om2, beam)
    if stark.max() > MAX_PROBE_STARK:
        raise ValueError(
            f"probe Stark shift {stark.max() / TWO_PI:.0f} Hz exceeds "
            f"{MAX_PROBE_STARK / TWO_PI:.0f} Hz; reduce probe power")
    p1 = excited_population(t, om1, doppler + stark, detunings)
    p2 = excited_population(t, om2, doppler + stark, detunings)
    return _sample_and_fit(detunings, p1, p2, shots, seed, window,
                           {"probe_power": float(probe_power),
                            "window": str(window), "kind": "carrier"})


def _sample_and_fit(detunings, p1, p2, shots, seed, window,
                    metadata) -> SpectroscopyResult:
    rng = np.random.default_rng(seed)
    b1 = rng.binomial(shots, np.clip(p1, 0, 1))
    b2 = rng.binomial(shots, np.clip(p2, 0, 1))
    signal = (b1 + b2) / shots
    f1, f2 = b1 / shots, b2 / shots
    err = np.sqrt(np.maximum(f1 * (1 - f1) + f2 * (1 - f2), 1.0 / shots) / shots)
    center, center_err, width, multimodal = _gaussian_peak_fit(
        detunings, signal, err)
    if multimodal and window != "full":
        raise CalibrationError(
            f"segment {window} spectrum is multimodal; segments must be "
            "locally single-peaked")
    return SpectroscopyResult(detunings=detunings, signal=signal,
                              signal_err=err, center=center,
                              center_err=center_err, width=width,
                              multimodal=multimodal, metadata=metadata)


#: Single-peak lines are sinc-like rather than Gaussian, so a clean peak
#: leaves systematic fit residuals of a few percent of its amplitude; the
#: multimodality floor allows for that on top of shot noise.
LINESHAPE_ALLOWANCE = 0.05


def _gaussian_peak_fit(x, y, err):
    """Least-squares single-Gaussian fit with a multimodality flag."""
    span = x[-1] - x[0]
    i_max = int(np.argmax(y))
    p0 = [float(y.min()), float(y.max() - y.min()), float(x[i_max]), span / 8]

    def model(xx, off, amp, c, w):
        return off + amp * np.exp(-0.5 * ((xx - c) / w) ** 2)

    try:
        popt, pcov = curve_fit(model, x, y, p0=p0, maxfev=20000)
    except RuntimeError as exc:
        raise EstimationError(f"peak fit failed: {exc}") from exc
    resid = y - model(x, *popt)
    rms = float(np.sqrt(np.mean(resid**2)))
    floor = max(float(np.median(err)), LINESHAPE_ALLOWANCE * abs(popt[1]))
    multimodal = rms > 3.0 * floor
    center = float(popt[2])
    center_err = float(np.sqrt(max(pcov[2, 2], 0.0)))
    width = abs(float(popt[3]))
    if multimodal:
        return float("nan"), float("nan"), width, True
    if not (x.min() <= center <= x.max()):
        raise EstimationError("fitted center left the scanned range")
    return center, center_err, width, False


# ---------------------------------------------------------------------------
# confinement profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileResult:
    positions: np.ndarray
    omegas: np.ndarray
    noise_std: float
    failures: tuple[int, ...] = ()

    def to_report(self) -> dict:
        return {"positions": self.positions.tolist(),
                "omega_com": self.omegas.tolist(),
                "noise_std": self.noise_std,
                "failures": list(self.failures)}


def measure_com_profile(trap: TrapModel, positions: np.ndarray,
                        omega_target: float, scale_factors=None,
                        noise_std: float = 1e-3, n_avg: int = 4,
                        seed: int = 0) -> ProfileResult:
    """Tickle-style measurement of the COM frequency at static wells.

    Modeled as a direct curvature readout of the perturbed plant with
    fractional Gaussian noise per measurement, averaged ``n_avg`` times
    (the experiment averages fluorescence over hundreds of repetitions).
    """
    positions = np.asarray(positions, dtype=float)
    if scale_factors is None:
        scale_factors = np.ones_like(positions)
    scale_factors = np.asarray(scale_factors, dtype=float)
    rng = np.random.default_rng(seed)
    omegas = np.full(positions.size, np.nan)
    failures = []
    for i, x0 in enumerate(positions):
        volts = solve_keyframe(trap, float(x0), omega_target) * scale_factors[i]
        try:
            _, om = trap.plant_well(volts, float(x0))
        except TrajectoryError:
            failures.append(i)
            continue
        noise = rng.normal(0.0, noise_std, n_avg).mean() if noise_std > 0 else 0.0
        omegas[i] = om * (1.0 + noise)
    return ProfileResult(positions=positions, omegas=omegas,
                         noise_std=noise_std, failures=tuple(failures))


@dataclass(frozen=True)
class ConfinementCalibration:
    positions: np.ndarray
    factors: np.ndarray
    rounds: int
    residual: float                     # max fractional deviation, measured
    history: tuple[dict, ...]

    def to_report(self) -> dict:
        return {"positions": self.positions.tolist(),
                "factors": self.factors.tolist(),
                "rounds": self.rounds, "residual": self.residual,
                "history": list(self.history)}


def flatten_confinement(measure_fn, positions: np.ndarray,
                        omega_target: float, tol: float = 2e-3,
                        max_rounds: int = 5) -> ConfinementCalibration:
    """Iterate multiplicative voltage scalings until the profile is flat.

    ``measure_fn(factors) -> omegas`` runs the (noisy) profile measurement
    with the given per-position scale factors applied.
    """
    positions = np.asarray(positions, dtype=float)
    factors = np.ones_like(positions)
    history = []
    for round_ in range(1, max_rounds + 1):
        omegas = np.asarray(measure_fn(factors), dtype=float)
        if np.any(~np.isfinite(omegas)):
            raise CalibrationError("profile measurement failed at "
                                   f"{np.nonzero(~np.isfinite(omegas))[0]}")
        dev = float(np.max(np.abs(omegas / omega_target - 1.0)))
        history.append({"round": round_, "max_deviation": dev,
                        "omegas": omegas.tolist()})
        if dev < tol:
            return ConfinementCalibration(positions=positions,
                                          factors=factors, rounds=round_,
                                          residual=dev,
                                          history=tuple(history))
        factors = factors * (omega_target / omegas) ** 2
    raise CalibrationError(
        f"confinement flattening did not reach {tol:.1%} in {max_rounds} rounds "
        f"(last deviation {dev:.2%})")


# ---------------------------------------------------------------------------
# Doppler flattening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DopplerCalibration:
    waveform: Waveform
    rounds: int
    segment_doppler: np.ndarray         # measured, final round (rad/s)
    spread: float                       # max - min of the final round
    history: tuple[dict, ...]

    def to_report(self) -> dict:
        return {"rounds": self.rounds,
                "segment_doppler": self.segment_doppler.tolist(),
                "spread": self.spread,
                "history": list(self.history)}


def measure_segment_doppler(trap: TrapModel, wf: Waveform, beam: BeamModel,
                            ion_spacing: float, shots: int = 500,
                            seed: int = 0, half_span: float = TWO_PI * 60e3,
                            n_points: int = 41,
                            centers_guess: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fitted Doppler shift of every segment (segmented spectroscopy).

    Starts from a wide scan around the nominal Doppler shift and
    re-centers up to twice when a fitted peak lands near a grid edge.
    """
    traj = extract_trajectory(trap, wf)
    n_seg = len(traj.segment_slices)
    seeds = np.random.SeedSequence(seed).spawn(3 * n_seg)
    centers = np.empty(n_seg)
    errs = np.empty(n_seg)
    for k in range(n_seg):
        if centers_guess is not None:
            mid = centers_guess[k]
            span = max(half_span / 3, TWO_PI * 20e3)
        else:
            mid = beam.axial_wavenumber * 0.5  # nominal 0.5 m/s
            span = half_span
        for attempt in range(3):
            grid = np.linspace(mid - span, mid + span, n_points)
            try:
                res = carrier_spectroscopy(trap, wf, beam, k, "auto", grid,
                                           ion_spacing, shots=shots,
                                           seed=_as_seed(seeds[3 * k + attempt]),
                                           traj=traj)
            except EstimationError:
                span *= 1.8  # fit walked off the grid; widen the scan
                continue
            edge = 2 * (grid[1] - grid[0])
            if (res.center - grid[0] < edge) or (grid[-1] - res.center < edge):
                mid = res.center
                continue
            centers[k] = res.center
            errs[k] = res.center_err
            break
        else:
            raise CalibrationError(
                f"segment {k} Doppler peak did not settle inside the scan")
    return centers, errs


def flatten_doppler(trap: TrapModel, wf: Waveform, beam: BeamModel,
                    ion_spacing: float, tol: float = TWO_PI * 2e3,
                    max_rounds: int = 5, shots: int = 500,
                    seed: int = 0) -> DopplerCalibration:
    """Retiming loop: equalize the measured per-segment Doppler shifts.

    The retiming target is the duration-weighted mean, which preserves the
    total transport time budget.  Stops when the measured spread (max-min)
    is within ``tol``.
    """
    seeds = np.random.SeedSequence(seed).spawn(max_rounds)
    history = []
    current = wf
    centers = None
    for round_ in range(1, max_rounds + 1):
        centers, errs = measure_segment_doppler(
            trap, current, beam, ion_spacing, shots=shots,
            seed=_as_seed(seeds[round_ - 1]),
            centers_guess=centers if round_ > 1 else None)
        spread = float(centers.max() - centers.min())
        history.append({"round": round_,
                        "segment_doppler": centers.tolist(),
                        "fit_errors": errs.tolist(),
                        "spread": spread})
        if spread <= tol:
            return DopplerCalibration(waveform=current, rounds=round_,
                                      segment_doppler=centers, spread=spread,
                                      history=tuple(history))
        durations = np.array([s.duration for s in current.segments])
        target = float(np.sum(durations * centers) / durations.sum())
        current = retime_segments(current, centers / target)
    raise CalibrationError(
        f"Doppler flattening did not reach {tol / TWO_PI:.0f} Hz spread in "
        f"{max_rounds} rounds (last spread {spread / TWO_PI:.0f} Hz)")


# ---------------------------------------------------------------------------
# sideband calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SidebandCalibration:
    omega_blue: float                   # fitted blue-sideband detuning (rad/s)
    omega_red: float
    blue_err: float
    red_err: float
    power: str

    @property
    def mode_frequency(self) -> float:
        return 0.5 * (self.omega_blue - self.omega_red)

    @property
    def common_shift(self) -> float:
        """Doppler plus Stark common-mode offset of both sidebands."""
        return 0.5 * (self.omega_blue + self.omega_red)

    def to_report(self) -> dict:
        return {"omega_blue": self.omega_blue, "omega_red": self.omega_red,
                "blue_err": self.blue_err, "red_err": self.red_err,
                "mode_frequency": self.mode_frequency,
                "common_shift": self.common_shift, "power": self.power}


def _sideband_scan(t, rabi1, rabi2, shift, eta, mode_freq, sign, guess,
                   shots, seed, half_span, n_points):
    """One sideband line: resonance at sign*mode + shift, Rabi eta*Omega."""
    grid = sign * mode_freq + np.linspace(guess - half_span,
                                          guess + half_span, n_points)
    p1 = excited_population(t, eta * rabi1, sign * mode_freq + shift,
                            grid)
    p2 = excited_population(t, eta * rabi2, sign * mode_freq + shift,
                            grid)
    rng = np.random.default_rng(seed)
    b1 = rng.binomial(shots, np.clip(p1, 0, 1))
    b2 = rng.binomial(shots, np.clip(p2, 0, 1))
    signal = (b1 + b2) / shots
    f1, f2 = b1 / shots, b2 / shots
    err = np.sqrt(np.maximum(f1 * (1 - f1) + f2 * (1 - f2), 1.0 / shots) / shots)
    center, center_err, _, multimodal = _gaussian_peak_fit(grid, signal, err)
    if multimodal:
        raise CalibrationError("sideband spectrum is multimodal")
    return center, center_err


def calibrate_sidebands(trap: TrapModel, wf: Waveform | None, beam: BeamModel,
                        ion_spacing: float, power: str = "reduced",
                        gate_rabi: float | None = None,
                        window="full", tau: float = 160e-6,
                        eta_bm: float = 0.042, shots: int = 500,
                        seed: int = 0,
                        stationary_volts: np.ndarray | None = None,
                        omega_target: float = TWO_PI * 1.41e6) -> SidebandCalibration:
    """Fit the blue and red breathing-mode sideband frequencies.

    ``power = "reduced"`` probes with a pi-area pulse and negligible Stark
    shift (bare, Doppler-shifted sidebands); ``power = "full"`` probes at
    the gate intensity (``gate_rabi``), returning Stark-shifted values.
    Both sidebands see the mode at sqrt(3) * omega_COM of the local well
    plus the common Doppler and Stark offsets.  With ``wf = None`` the
    ions sit in a static well at the beam center (``stationary_volts`` or
    a freshly solved keyframe).
    """
    if wf is None:
        t = np.linspace(0.0, tau, 33)
        x = np.zeros_like(t)
        volts = (stationary_volts if stationary_volts is not None
                 else solve_keyframe(trap, 0.0, omega_target))
        _, om_true = trap.plant_well(volts, 0.0)
        traj = Trajectory(t=t, x=x, v=np.zeros_like(t),
                          omega_com=np.full_like(t, om_true))
        sl = slice(0, t.size)
    else:
        traj = extract_trajectory(trap, wf)
        sl = _window_slice(traj, window)
    t = traj.t[sl]
    sub = Trajectory(t=t, x=traj.x[sl], v=traj.v[sl],
                     omega_com=traj.omega_com[sl])
    om1, om2 = rabi_envelopes(sub, beam, ion_spacing)
    doppler = beam.axial_wavenumber * sub.v
    mode = float(np.mean(sub.omega_bm))

    if power == "reduced":
        area = max(np.trapezoid(eta_bm * om1, t), np.trapezoid(eta_bm * om2, t))
        scale = math.pi / area if area > 0 else 0.0
        # sideband pi pulses are power hungry (eta suppression); cap the
        # probe at the Stark budget and accept partial excitation
        st1 = stark_envelope(om1, om2, beam).max()
        if st1 > 0:
            scale = min(scale, math.sqrt(0.8 * MAX_PROBE_STARK / st1))
    elif power == "full":
        if gate_rabi is None:
            raise ValueError("full-power calibration needs gate_rabi")
        scale = gate_rabi / beam.peak_rabi
    else:
        raise ValueError("power must be 'reduced' or 'full'")
    om1 = om1 * scale
    om2 = om2 * scale
    stark = stark_envelope(om1, om2, beam)
    # resonance(t) = sign*omega_bm(t) + doppler(t) + stark(t); express the
    # scan relative to sign*mean(omega_bm)
    shift_b = (sub.omega_bm - mode) + doppler + stark
    shift_r = -(sub.omega_bm - mode) + doppler + stark
    guess = float(np.mean(doppler))
    s1, s2 = np.random.SeedSequence(seed).spawn(2)
    half = TWO_PI * (40e3 if wf is not None else 15e3)
    blue, blue_err = _sideband_scan(t, om1, om2, shift_b, eta_bm, mode, +1,
                                    guess, shots, _as_seed(s1), half, 41)
    red, red_err = _sideband_scan(t, om1, om2, shift_r, eta_bm, mode, -1,
                                  guess, shots, _as_seed(s2), half, 41)
    return SidebandCalibration(omega_blue=blue, omega_red=red,
                               blue_err=blue_err, red_err=red_err,
                               power=power)


def measure_segment_stark(trap: TrapModel, wf: Waveform, beam: BeamModel,
                          ion_spacing: float, gate_rabi: float,
                          eta_bm: float = 0.042, shots: int = 500,
                          seed: int = 0, min_area: float = 0.3) -> np.ndarray:
    """Per-segment Stark shift at gate power, measured differentially.

    The full-power sideband common-mode shift carries Doppler plus Stark;
    subtracting the carrier-probe Doppler baseline of the same segment
    isolates the light shift the way the segmented calibration does.
    Segments whose sideband pulse area at gate power stays below
    ``min_area`` cannot produce a fittable line and come back as NaN
    (the outermost segments sit in the dark beam skirt).
    """
    traj = extract_trajectory(trap, wf)
    n_seg = len(traj.segment_slices)
    seeds = np.random.SeedSequence(seed).spawn(n_seg)
    baseline, _ = measure_segment_doppler(trap, wf, beam, ion_spacing,
                                          shots=shots, seed=seed + 1)
    gate_beam = beam.with_(peak_rabi=gate_rabi)
    out = np.full(n_seg, np.nan)
    for k in range(n_seg):
        sl = traj.segment_slices[k]
        sub = Trajectory(t=traj.t[sl], x=traj.x[sl], v=traj.v[sl],
                         omega_com=traj.omega_com[sl])
        om1, om2 = rabi_envelopes(sub, gate_beam, ion_spacing)
        area = eta_bm * max(np.trapezoid(om1, sub.t), np.trapezoid(om2, sub.t))
        if area < min_area:
            continue
        full = calibrate_sidebands(trap, wf, beam, ion_spacing, power="full",
                                   gate_rabi=gate_rabi, window=k,
                                   eta_bm=eta_bm, shots=shots,
                                   seed=_as_seed(seeds[k]))
        out[k] = full.common_shift - baseline[k]
    return out


# ---------------------------------------------------------------------------
# gate-parameter scans
# ---------------------------------------------------------------------------

def scan_mode_detuning(setup: GateSetup, values: np.ndarray,
                       shots: int = 500, seed: int = 0,
                       scale_fn=None) -> ScanResult:
    """Populations vs mode detuning.

    ``scale_fn(delta_m) -> rabi_scale`` lets the scan track the power that
    keeps the gate balanced at each detuning (the loop phase scales with
    power^2 / delta_m); omitted, the power stays fixed.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty scan grid")
    seeds = np.random.SeedSequence(seed).spawn(values.size)
    counts = np.empty((values.size, 3), dtype=int)
    for i, dm in enumerate(values):
        kw = {"delta_m": float(dm)}
        if scale_fn is not None:
            kw["rabi_scale"] = float(scale_fn(float(dm)))
        _, c = setup.with_params(**kw).measure(shots, seeds[i])
        counts[i] = c
    return ScanResult(parameter="delta_m", values=values, counts=counts,
                      shots=shots,
                      metadata={"delta_g": setup.params.delta_g,
                                "rabi_scale": setup.params.rabi_scale,
                                "tracked_power": scale_fn is not None})


def select_operating_detuning(scan: ScanResult,
                              floor_margin: float = 0.004) -> float:
    """Smallest-|delta_m| point whose P1 is at the scan's noise floor.

    P1 keeps creeping down toward large |delta_m| (smaller phase-space
    loops at ever higher power), so "minimize P1" in practice means the
    first detuning that reaches the measurement floor; anything beyond
    wastes optical power.
    """
    p1 = scan.populations[:, 1]
    sigma = np.sqrt(np.maximum(p1 * (1 - p1), 1.0 / scan.shots) / scan.shots)
    threshold = float(p1.min()) + max(floor_margin, 2.0 * float(sigma.min()))
    candidates = np.nonzero(p1 <= threshold)[0]
    best = candidates[np.argmin(np.abs(scan.values[candidates]))]
    return float(scan.values[best])


def scan_global_detuning(setup: GateSetup, values: np.ndarray,
                         shots: int = 500, seed: int = 0) -> tuple[float, ScanResult]:
    """Find the global detuning that minimizes P1 (quadratic refinement)."""
    values = np.asarray(values, dtype=float)
    if values.size < 3:
        raise ValueError("need at least 3 scan points")
    seeds = np.random.SeedSequence(seed).spawn(values.size)
    counts = np.empty((values.size, 3), dtype=int)
    for i, dg in enumerate(values):
        _, c = setup.with_params(delta_g=float(dg)).measure(shots, seeds[i])
        counts[i] = c
    scan = ScanResult(parameter="delta_g", values=values, counts=counts,
                      shots=shots,
                      metadata={"delta_m": setup.params.delta_m,
                                "rabi_scale": setup.params.rabi_scale})
    p1 = scan.populations[:, 1]
    i = int(np.argmin(p1))
    if i in (0, values.size - 1):
        raise RescanRequiredError("P1 minimum sits on the scan edge; widen the scan")
    _, best = scan.argmin_p1()
    return float(best), scan


def balance_power(setup: GateSetup, shots: int = 500, seed: int = 0,
                  bracket: tuple[float, float] = (0.75, 1.3),
                  n_grid: int = 7, max_rounds: int = 3) -> tuple[float, dict]:
    """Adjust the global power until P0 and P2 balance.

    P0 - P2 is monotone in the accumulated gate phase, which grows with
    the square of the power scale; a linear fit in scale^2 locates the
    zero crossing, verified by a fresh measurement.
    """
    seeds = np.random.SeedSequence(seed).spawn(max_rounds + 1)
    tol = 2.0 / math.sqrt(shots)
    scale = setup.params.rabi_scale
    lo, hi = bracket
    history = []
    for round_ in range(max_rounds):
        grid = scale * np.linspace(lo, hi, n_grid)
        sub_seeds = np.random.SeedSequence(_as_seed(seeds[round_])).spawn(n_grid)
        imbalance = np.empty(n_grid)
        for i, s in enumerate(grid):
            pops, _ = setup.with_params(rabi_scale=float(s)).measure(
                shots, sub_seeds[i])
            imbalance[i] = pops[0] - pops[2]
        design = np.column_stack([grid**2, np.ones_like(grid)])
        coef, *_ = np.linalg.lstsq(design, imbalance, rcond=None)
        history.append({"round": round_ + 1, "grid": grid.tolist(),
                        "imbalance": imbalance.tolist()})
        if coef[0] <= 0:
            raise CalibrationError("no P0/P2 crossing found in the power bracket")
        root = -coef[1] / coef[0]
        if root <= 0:
            raise CalibrationError("power balance root is unphysical")
        scale = float(math.sqrt(root))
        pops, _ = setup.with_params(rabi_scale=scale).measure(
            shots, seeds[max_rounds])
        if abs(pops[0] - pops[2]) < tol:
            return scale, {"rounds": round_ + 1, "history": history,
                           "final_imbalance": float(pops[0] - pops[2])}
        lo, hi = 0.93, 1.07
    raise CalibrationError("power balance did not converge")


# ---------------------------------------------------------------------------
# dynamic Stark compensation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StarkCompensation:
    waveform: Waveform
    velocity_offsets: np.ndarray        # m/s per segment
    segment_stark: np.ndarray           # rad/s per segment
    residual_mean: float                # time mean of |stark - staircase| (rad/s)
    effective_shift: float = 0.0        # intensity-weighted signed residual

    def to_report(self) -> dict:
        return {"velocity_offsets": self.velocity_offsets.tolist(),
                "segment_stark": self.segment_stark.tolist(),
                "residual_mean": self.residual_mean,
                "effective_shift": self.effective_shift}


def dynamic_stark_compensation(trap: TrapModel, wf: Waveform, beam: BeamModel,
                               ion_spacing: float, gate_rabi: float,
                               rabi_scale: float = 1.0,
                               segment_stark: np.ndarray | None = None,
                               segment_doppler_offset: np.ndarray | None = None,
                               max_velocity_fraction: float = 0.2) -> StarkCompensation:
    """Counteract the time-varying Stark shift with segment velocity offsets.

    Each segment gets one velocity knob, so its *mean* extra Doppler shift
    is matched to its mean Stark shift; ``segment_doppler_offset`` (the
    measured residual of each segment's Doppler shift from the calibrated
    reference) is nulled by the same adjustment.  The report carries the
    staircase residual mean |stark(t) - staircase(t)| over the transit.
    """
    traj = extract_trajectory(trap, wf)
    gate_beam = beam.with_(peak_rabi=gate_rabi * rabi_scale)
    om1, om2 = rabi_envelopes(traj, gate_beam, ion_spacing)
    stark = stark_envelope(om1, om2, gate_beam)
    slices = traj.segment_slices
    if segment_stark is None:
        segment_stark = np.array([stark[s].mean() for s in slices])
    else:
        segment_stark = np.asarray(segment_stark, dtype=float)
    target_shift = segment_stark.copy()
    if segment_doppler_offset is not None:
        target_shift = target_shift - np.asarray(segment_doppler_offset,
                                                 dtype=float)
    v_seg = np.array([traj.v[s].mean() for s in slices])
    dv = target_shift / beam.axial_wavenumber
    if np.any(np.abs(dv) > max_velocity_fraction * np.abs(v_seg)):
        raise CalibrationError(
            "required velocity offsets exceed "
            f"{max_velocity_fraction:.0%} of the nominal velocity")
    stretch = v_seg / (v_seg + dv)
    new_wf = retime_segments(wf, stretch)

    new_traj = extract_trajectory(trap, new_wf)
    om1n, om2n = rabi_envelopes(new_traj, gate_beam, ion_spacing)
    stark_new = stark_envelope(om1n, om2n, gate_beam)
    staircase = np.empty_like(stark_new)
    for k, s in enumerate(new_traj.segment_slices):
        staircase[s] = segment_stark[k]
    residual = float(np.mean(np.abs(stark_new - staircase)))
    weight = om1n**2 + om2n**2
    effective = float(np.sum((stark_new - staircase) * weight)
                      / max(weight.sum(), 1e-300))
    return StarkCompensation(waveform=new_wf, velocity_offsets=dv,
                             segment_stark=segment_stark,
                             residual_mean=residual,
                             effective_shift=effective)
