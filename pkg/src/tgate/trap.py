"""Synthetic 1-D electrode plant, waveform synthesis, and trajectories.

The electrode basis is a row of Gaussian bump functions (potential per
volt) on a fixed pitch.  The *ideal* basis is what the keyframe solver
sees; the *plant* adds per-electrode gain errors and a stray potential,
which calibration routines must discover the same way the experiment
does.  Positions are meters, voltages volts, curvatures V/m^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from . import kernels
from .constants import CA40_MASS, ELEMENTARY_CHARGE, TWO_PI
from .errors import (InfeasibleKeyframeError, ResolutionError,
                     TrajectoryError, VoltageClampError)

MAX_VOLTAGE = 12.0
SAMPLE_PERIOD = 5e-9
DEFAULT_OMEGA_COM = TWO_PI * 1.41e6


@dataclass(frozen=True)
class StrayField:
    """Stray potential as a sum of sinusoids, U(x) = sum A sin(k x + p)."""

    amplitudes: tuple[float, ...] = ()
    wavenumbers: tuple[float, ...] = ()
    phases: tuple[float, ...] = ()

    @classmethod
    def from_curvature_ripple(cls, fractions, wavelengths, phases,
                              kappa_ref: float) -> "StrayField":
        """Components sized by their curvature ripple relative to kappa_ref.

        A component with fraction f at wavelength L modulates the well
        curvature by f*kappa_ref peak, which is also the fractional
        velocity ripple it imprints on transport.
        """
        amps = []
        ks = []
        for f, lam in zip(fractions, wavelengths):
            k = TWO_PI / lam
            amps.append(f * kappa_ref / k**2)
            ks.append(k)
        return cls(tuple(amps), tuple(ks), tuple(phases))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.asarray(self.amplitudes, dtype=float),
                np.asarray(self.wavenumbers, dtype=float),
                np.asarray(self.phases, dtype=float))

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for a, k, p in zip(self.amplitudes, self.wavenumbers, self.phases):
            out = out + a * np.sin(k * x + p)
        return out


@dataclass(frozen=True)
class TrapModel:
    """Electrode geometry plus injectable imperfections.

    ``playback_timing_errors`` models waveform-delivery clock distortion:
    fractional per-segment duration errors applied when a waveform plays,
    i.e., piecewise-constant velocity errors in exactly the span of the
    retiming knob (the experiment's correction mechanism).
    """

    electrode_centers: np.ndarray       # (n_e,), m
    electrode_width: float              # Gaussian 1/e half-width, m
    electrode_amp: float                # potential per volt at center
    gain_errors: np.ndarray             # per-electrode gamma, effective 1+gamma
    stray: StrayField
    filter_tau: float = 2e-6
    ion_mass: float = CA40_MASS
    playback_timing_errors: tuple[float, ...] = ()

    def __post_init__(self):
        centers = np.asarray(self.electrode_centers, dtype=float)
        gains = np.asarray(self.gain_errors, dtype=float)
        if gains.shape != centers.shape:
            raise ValueError("gain_errors must match electrode count")
        centers.setflags(write=False)
        gains.setflags(write=False)
        object.__setattr__(self, "electrode_centers", centers)
        object.__setattr__(self, "gain_errors", gains)

    @property
    def n_electrodes(self) -> int:
        return self.electrode_centers.size

    # ---- ideal basis ----------------------------------------------------
    def basis(self, x) -> np.ndarray:
        """phi_i(x) for the ideal basis; shape (len(x), n_e)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = (x[:, None] - self.electrode_centers[None, :]) / self.electrode_width
        return self.electrode_amp * np.exp(-u * u)

    def basis_d1(self, x0: float) -> np.ndarray:
        u = (x0 - self.electrode_centers) / self.electrode_width
        return self.electrode_amp * np.exp(-u * u) * (-2 * u / self.electrode_width)

    def basis_d2(self, x0: float) -> np.ndarray:
        u = (x0 - self.electrode_centers) / self.electrode_width
        return (self.electrode_amp * np.exp(-u * u)
                * (4 * u * u - 2) / self.electrode_width**2)

    # ---- unit conversions ----------------------------------------------
    def omega_to_curvature(self, omega: float) -> float:
        return omega**2 * self.ion_mass / ELEMENTARY_CHARGE

    def curvature_to_omega(self, curvature) -> np.ndarray:
        return np.sqrt(ELEMENTARY_CHARGE * np.asarray(curvature) / self.ion_mass)

    # ---- perturbed plant -------------------------------------------------
    def plant_arrays(self):
        widths = np.full(self.n_electrodes, self.electrode_width)
        amps = np.full(self.n_electrodes, self.electrode_amp)
        gains = 1.0 + self.gain_errors
        s_amp, s_k, s_ph = self.stray.arrays()
        return (self.electrode_centers, widths, amps, gains, s_amp, s_k, s_ph)

    def plant_well(self, volts: np.ndarray, x_init: float) -> tuple[float, float]:
        """Plant-truth minimum position and mode frequency for one voltage set."""
        centers, widths, amps, gains, s_amp, s_k, s_ph = self.plant_arrays()
        x, curv, status = kernels.find_minima(
            np.asarray(volts, dtype=float)[None, :], centers, widths, amps,
            gains, s_amp, s_k, s_ph, np.array([x_init]), 1e-9)
        if status[0] != 0:
            raise TrajectoryError("no confining well at requested position", frame=0)
        return float(x[0]), float(self.curvature_to_omega(curv[0]))

    def with_imperfections(self, gain_errors=None, stray=None,
                           playback_timing_errors=None) -> "TrapModel":
        kw = {}
        if gain_errors is not None:
            kw["gain_errors"] = np.asarray(gain_errors, dtype=float)
        if stray is not None:
            kw["stray"] = stray
        if playback_timing_errors is not None:
            kw["playback_timing_errors"] = tuple(playback_timing_errors)
        return replace(self, **kw)


def ideal_trap(n_electrodes: int = 11, pitch: float = 60e-6,
               width: float = 60e-6, amp: float = 0.05,
               filter_tau: float = 2e-6) -> TrapModel:
    """Imperfection-free trap with electrodes centered on the origin."""
    half = (n_electrodes - 1) / 2.0
    centers = (np.arange(n_electrodes) - half) * pitch
    return TrapModel(electrode_centers=centers, electrode_width=width,
                     electrode_amp=amp, gain_errors=np.zeros(n_electrodes),
                     stray=StrayField(), filter_tau=filter_tau)


# ---------------------------------------------------------------------------
# keyframes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyframeSet:
    """Solved static wells along the transport axis."""

    positions: np.ndarray               # (n_k,), m
    volts: np.ndarray                   # (n_k, n_e)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.volts, dtype=float)
        if v.shape[0] != pos.size:
            raise ValueError("keyframe arrays disagree")
        pos.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "volts", v)

    @property
    def n_keyframes(self) -> int:
        return self.positions.size

    def scaled(self, factors: np.ndarray) -> "KeyframeSet":
        f = np.asarray(factors, dtype=float)
        return KeyframeSet(self.positions, self.volts * f[:, None])


def solve_keyframe(trap: TrapModel, x0: float, omega_target: float,
                   window: float = 40e-6, n_fit: int = 81,
                   reg: float = 1e-6) -> np.ndarray:
    """Voltage set whose ideal-basis potential is a harmonic well at x0.

    Regularized least squares against the quadratic target over
    [x0 - window, x0 + window], with the gradient and curvature at x0
    enforced exactly through Lagrange multipliers.  Uses the ideal basis
    only; the perturbed plant is what calibration must discover.
    """
    if omega_target <= 0:
        raise ValueError("omega_target must be positive")
    span = trap.electrode_centers
    if not (span[0] <= x0 <= span[-1]):
        raise InfeasibleKeyframeError(f"x0 = {x0 * 1e6:.1f} um outside electrode coverage")
    kappa = trap.omega_to_curvature(omega_target)
    xs = np.linspace(x0 - window, x0 + window, n_fit)
    a = trap.basis(xs)
    target = 0.5 * kappa * (xs - x0) ** 2
    ata = a.T @ a
    lam = reg * np.trace(ata) / trap.n_electrodes
    # constraints nondimensionalized by the electrode width for conditioning
    w = trap.electrode_width
    cons = np.vstack([trap.basis_d1(x0) * w, trap.basis_d2(x0) * w**2])
    d = np.array([0.0, kappa * w**2])
    n_e = trap.n_electrodes
    kkt = np.zeros((n_e + 2, n_e + 2))
    kkt[:n_e, :n_e] = ata + lam * np.eye(n_e)
    kkt[:n_e, n_e:] = cons.T
    kkt[n_e:, :n_e] = cons
    rhs = np.concatenate([a.T @ target, d])
    volts = np.linalg.solve(kkt, rhs)[:n_e]

    if np.max(np.abs(volts)) > MAX_VOLTAGE:
        clamped = np.clip(volts, -MAX_VOLTAGE, MAX_VOLTAGE)
        grad = float(trap.basis_d1(x0) @ clamped)
        curv = float(trap.basis_d2(x0) @ clamped)
        grad_bad = abs(grad) > 1e-3 * kappa * 1e-6
        curv_bad = abs(curv - kappa) > 5e-3 * kappa
        if grad_bad or curv_bad:
            raise InfeasibleKeyframeError(
                f"clamp active at x0 = {x0 * 1e6:.1f} um and residual above "
                f"threshold (curvature error {abs(curv - kappa) / kappa:.2%})")
        volts = clamped
    return volts


def solve_transport_keyframes(trap: TrapModel, start: float, stop: float,
                              omega_target: float,
                              spacing: float = 2e-6) -> KeyframeSet:
    """Keyframes on a fixed spacing from start to stop (inclusive)."""
    n = int(round((stop - start) / spacing))
    if n < 1 or abs(start + n * spacing - stop) > 1e-12:
        raise ValueError("span must be an integer multiple of the spacing")
    positions = start + spacing * np.arange(n + 1)
    volts = np.array([solve_keyframe(trap, float(x), omega_target)
                      for x in positions])
    return KeyframeSet(positions, volts)


# ---------------------------------------------------------------------------
# waveforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    kf_start: int
    kf_end: int
    duration: float         # snapped to the sample grid

    @property
    def n_frames(self) -> int:
        return int(round(self.duration / SAMPLE_PERIOD))


@dataclass(frozen=True)
class Waveform:
    """Per-electrode voltage frames rendered from keyframes and segments."""

    keyframes: KeyframeSet
    segments: tuple[Segment, ...]
    frames: np.ndarray                  # (n_frames, n_e)
    frame_kf_coord: np.ndarray          # fractional keyframe index per frame
    sample_period: float = SAMPLE_PERIOD

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def times(self) -> np.ndarray:
        return self.sample_period * np.arange(self.n_frames)

    def segment_slices(self) -> tuple[slice, ...]:
        out = []
        start = 0
        for seg in self.segments:
            out.append(slice(start, start + seg.n_frames))
            start += seg.n_frames
        return tuple(out)

    def nominal_positions(self) -> np.ndarray:
        """Commanded well position per frame (ideal-basis path)."""
        return np.interp(self.frame_kf_coord,
                         np.arange(self.keyframes.n_keyframes),
                         self.keyframes.positions)


def _snap_duration(duration: float) -> float:
    n = int(round(duration / SAMPLE_PERIOD))
    return n * SAMPLE_PERIOD


def _render(keyframes: KeyframeSet, segments: tuple[Segment, ...]) -> Waveform:
    coords = []
    for seg in segments:
        n = seg.n_frames
        if n < 10:
            raise ResolutionError(
                f"segment of {seg.duration * 1e6:.3f} us has {n} < 10 samples")
        local = seg.kf_start + (seg.kf_end - seg.kf_start) * np.arange(n) / n
        coords.append(local)
    coord = np.concatenate(coords)
    idx = np.minimum(coord.astype(int), keyframes.n_keyframes - 2)
    w = coord - idx
    frames = (keyframes.volts[idx] * (1.0 - w)[:, None]
              + keyframes.volts[idx + 1] * w[:, None])
    if np.max(np.abs(frames)) > MAX_VOLTAGE:
        raise VoltageClampError("rendered frames exceed +/-12 V")
    return Waveform(keyframes=keyframes, segments=segments, frames=frames,
                    frame_kf_coord=coord)


def synthesize_waveform(keyframes: KeyframeSet, total_duration: float,
                        n_segments: int = 8) -> Waveform:
    """Linear-in-time interpolation through the keyframes, evenly indexed.

    The keyframe intervals are split into ``n_segments`` equal runs; each
    segment initially gets an equal share of the total duration.
    """
    if keyframes.n_keyframes < 2:
        raise ValueError("need at least 2 keyframes")
    if total_duration <= 0:
        raise ValueError("duration must be positive")
    n_int = keyframes.n_keyframes - 1
    if n_int % n_segments != 0:
        raise ValueError(f"{n_int} keyframe intervals do not divide into "
                         f"{n_segments} segments")
    per = n_int // n_segments
    dur = _snap_duration(total_duration / n_segments)
    segments = tuple(Segment(i * per, (i + 1) * per, dur)
                     for i in range(n_segments))
    return _render(keyframes, segments)


def apply_confinement_scaling(wf: Waveform, positions: np.ndarray,
                              factors: np.ndarray) -> Waveform:
    """Multiply keyframe voltages by factors interpolated in position."""
    positions = np.asarray(positions, dtype=float)
    factors = np.asarray(factors, dtype=float)
    if not np.all(np.isfinite(factors)):
        raise ValueError("scale factors must be finite")
    per_kf = np.interp(wf.keyframes.positions, positions, factors)
    return _render(wf.keyframes.scaled(per_kf), wf.segments)


def retime_segments(wf: Waveform, stretch_factors) -> Waveform:
    """Rescale segment durations; the spatial keyframe path is unchanged."""
    f = np.asarray(stretch_factors, dtype=float)
    if f.size != len(wf.segments):
        raise ValueError("need one stretch factor per segment")
    if np.any(f <= 0):
        raise ValueError("stretch factors must be positive")
    segments = tuple(Segment(s.kf_start, s.kf_end, _snap_duration(s.duration * fi))
                     for s, fi in zip(wf.segments, f))
    return _render(wf.keyframes, segments)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Instantaneous well position, velocity, and mode frequency."""

    t: np.ndarray                       # s
    x: np.ndarray                       # m
    v: np.ndarray                       # m/s
    omega_com: np.ndarray               # rad/s
    segment_slices: tuple[slice, ...] = ()

    @property
    def omega_bm(self) -> np.ndarray:
        """Breathing mode of two ions in the same well."""
        return math.sqrt(3.0) * self.omega_com

    @property
    def duration(self) -> float:
        return float(self.t[-1])


def filtered_frames(trap: TrapModel, wf: Waveform) -> np.ndarray:
    """Effective voltages after the per-electrode first-order low-pass."""
    alpha = 1.0 - math.exp(-wf.sample_period / trap.filter_tau)
    zi = (1.0 - alpha) * wf.frames[0]
    out, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], wf.frames, axis=0,
                     zi=zi[None, :])
    return out


def extract_trajectory(trap: TrapModel, wf: Waveform) -> Trajectory:
    """Quasi-static trajectory: the ion follows the instantaneous minimum
    of the filtered, imperfection-perturbed potential, played back with
    the plant's segment-timing distortion."""
    if trap.playback_timing_errors:
        if len(trap.playback_timing_errors) != len(wf.segments):
            raise ValueError("plant timing errors do not match the waveform "
                             "segmentation")
        wf = retime_segments(wf, 1.0 + np.asarray(trap.playback_timing_errors))
    eff = filtered_frames(trap, wf)
    x_init = wf.nominal_positions()
    centers, widths, amps, gains, s_amp, s_k, s_ph = trap.plant_arrays()
    x, curv, status = kernels.find_minima(eff, centers, widths, amps, gains,
                                          s_amp, s_k, s_ph, x_init, 1e-9)
    bad = np.nonzero(status)[0]
    if bad.size:
        raise TrajectoryError(
            f"well lost at frame {bad[0]} (t = {bad[0] * wf.sample_period * 1e6:.2f} us)",
            frame=int(bad[0]))
    t = wf.times()
    v = np.gradient(x, wf.sample_period)
    omega = trap.curvature_to_omega(curv)
    return Trajectory(t=t, x=x, v=v, omega_com=omega,
                      segment_slices=wf.segment_slices())


# ---------------------------------------------------------------------------
# waveform file format
# ---------------------------------------------------------------------------

WAVEFORM_FORMAT_VERSION = 1


def write_waveform(wf: Waveform, path) -> None:
    """Versioned column-oriented text file; exact numeric round-trip."""
    lines = [f"# tgate-waveform v{WAVEFORM_FORMAT_VERSION}",
             f"# sample_period = {wf.sample_period!r}",
             f"# electrodes = {wf.frames.shape[1]}",
             "[keyframes]"]
    for pos, row in zip(wf.keyframes.positions, wf.keyframes.volts):
        lines.append(" ".join([repr(float(pos))] + [repr(float(v)) for v in row]))
    lines.append("[segments]")
    for seg in wf.segments:
        lines.append(f"{seg.kf_start} {seg.kf_end} {seg.duration!r}")
    lines.append("[frames]")
    times = wf.times()
    for t, row in zip(times, wf.frames):
        lines.append(" ".join([repr(float(t))] + [repr(float(v)) for v in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_waveform(path) -> Waveform:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("# tgate-waveform v"):
        raise ValueError("not a tgate waveform file")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != WAVEFORM_FORMAT_VERSION:
        raise ValueError(f"unsupported waveform format version {version}")
    sample_period = float(lines[1].split("=", 1)[1])
    section = None
    kf_rows, seg_rows, frame_rows = [], [], []
    for ln in lines[2:]:
        if not ln or ln.startswith("#"):
            continue
        if ln.startswith("["):
            section = ln.strip("[]")
            continue
        if section == "keyframes":
            kf_rows.append([float(tok) for tok in ln.split()])
        elif section == "segments":
            a, b, d = ln.split()
            seg_rows.append(Segment(int(a), int(b), float(d)))
        elif section == "frames":
            frame_rows.append([float(tok) for tok in ln.split()])
    kf = np.array(kf_rows)
    keyframes = KeyframeSet(kf[:, 0], kf[:, 1:])
    frames = np.array(frame_rows)[:, 1:]
    segments = tuple(seg_rows)
    coords = []
    for seg in segments:
        n = seg.n_frames
        coords.append(seg.kf_start + (seg.kf_end - seg.kf_start)
                      * np.arange(n) / n)
    return Waveform(keyframes=keyframes, segments=segments, frames=frames,
                    frame_kf_coord=np.concatenate(coords),
                    sample_period=sample_period)


# ---------------------------------------------------------------------------
# default plant
# ---------------------------------------------------------------------------

TRANSPORT_START = -40e-6
TRANSPORT_STOP = 40e-6


def _omega_profile_ppk(trap: TrapModel, omega_target: float) -> float:
    """Peak-to-peak fractional omega_COM variation over the transport region."""
    xs = np.linspace(TRANSPORT_START, TRANSPORT_STOP, 17)
    omegas = []
    for x0 in xs:
        volts = solve_keyframe(trap, float(x0), omega_target)
        _, om = trap.plant_well(volts, float(x0))
        omegas.append(om)
    omegas = np.array(omegas)
    return float((omegas.max() - omegas.min()) / omegas.mean())


#: Clustered sign pattern: long dwells at a few distinct Doppler shifts,
#: which is what resolves into a multi-peaked full-transit spectrum.
DEFAULT_TIMING_ERRORS = (-0.026, -0.019, -0.024, -0.021, 0.022, 0.019,
                         0.025, 0.024)


def make_plant(omega_com: float = DEFAULT_OMEGA_COM,
               omega_ripple: float = 0.046,
               stray_mix: tuple[float, ...] = (0.85, 0.15),
               stray_wavelengths: tuple[float, ...] = (320e-6, 130e-6),
               stray_phases: tuple[float, ...] = (2.6, 4.4),
               timing_errors: tuple[float, ...] = DEFAULT_TIMING_ERRORS,
               gain_errors=None,
               **trap_kwargs) -> TrapModel:
    """Trap with a stray field tuned to the target confinement ripple.

    ``omega_ripple`` is the fractional peak-to-peak omega_COM variation
    over the transport region.  The stray curvature that produces it also
    shifts the moving well (a curvature ripple fraction equals a velocity
    ripple fraction); together with the per-segment ``timing_errors`` of
    roughly +/-2% this puts the uncorrected per-segment Doppler spread
    well above 20 kHz at 0.5 m/s and makes the full-transit spectrum
    multi-peaked.
    """
    base = ideal_trap(**trap_kwargs)
    base = base.with_imperfections(playback_timing_errors=timing_errors)
    if gain_errors is not None:
        base = base.with_imperfections(gain_errors=gain_errors)
    if omega_ripple == 0.0:
        return base
    kappa = base.omega_to_curvature(omega_com)
    mix = np.asarray(stray_mix, dtype=float)
    mix = mix / mix.sum()

    def build(scale: float) -> TrapModel:
        stray = StrayField.from_curvature_ripple(scale * mix,
                                                 stray_wavelengths,
                                                 stray_phases, kappa)
        return base.with_imperfections(stray=stray)

    # secant iteration of the overall stray scale against the measured ripple
    scale = omega_ripple
    trap = build(scale)
    for _ in range(6):
        got = _omega_profile_ppk(trap, omega_com)
        if abs(got - omega_ripple) < 0.01 * omega_ripple:
            break
        scale *= omega_ripple / max(got, 1e-6)
        trap = build(scale)
    return trap
