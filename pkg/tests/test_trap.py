import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from tgate.constants import (CA40_MASS, ELEMENTARY_CHARGE, EPSILON_0, TWO_PI,
                             ion_spacing)
from tgate.errors import (InfeasibleKeyframeError, ResolutionError,
                          VoltageClampError)
from tgate.trap import (DEFAULT_OMEGA_COM, MAX_VOLTAGE, TRANSPORT_START,
                        TRANSPORT_STOP, KeyframeSet, apply_confinement_scaling,
                        extract_trajectory, filtered_frames, ideal_trap,
                        make_plant, read_waveform, retime_segments,
                        solve_keyframe, solve_transport_keyframes,
                        synthesize_waveform, write_waveform)

OMEGA = DEFAULT_OMEGA_COM


@pytest.fixture(scope="module")
def trap():
    return ideal_trap()


@pytest.fixture(scope="module")
def transport_wf(trap):
    kf = solve_transport_keyframes(trap, TRANSPORT_START, TRANSPORT_STOP, OMEGA)
    return synthesize_waveform(kf, 160e-6)


@pytest.fixture(scope="module")
def plant():
    return make_plant()


def test_keyframe_meets_target_curvature(trap):
    volts = solve_keyframe(trap, 0.0, OMEGA)
    x, om = trap.plant_well(volts, 0.0)
    assert abs(x) < 1e-9
    assert abs(om / OMEGA - 1.0) < 1e-4  # within 0.01%
    assert om / TWO_PI == pytest.approx(1.41e6, rel=1e-4)


def test_keyframe_mirror_symmetry(trap):
    volts = solve_keyframe(trap, 0.0, OMEGA)
    assert np.max(np.abs(volts - volts[::-1])) < 1e-9


def test_keyframe_curvature_vs_finite_difference(trap):
    """Independent oracle: second difference of sum(V_i phi_i)."""
    x0 = 13e-6
    volts = solve_keyframe(trap, x0, OMEGA)
    h = 2e-8
    pot = trap.basis(np.array([x0 - h, x0, x0 + h])) @ volts
    fd = (pot[0] - 2 * pot[1] + pot[2]) / h**2
    kappa = trap.omega_to_curvature(OMEGA)
    assert abs(fd - kappa) / kappa < 1e-3


def test_keyframe_infeasible_raises(trap):
    # curvature scales with omega^2; far beyond the +/-12 V budget
    with pytest.raises(InfeasibleKeyframeError):
        solve_keyframe(trap, 0.0, TWO_PI * 15e6)
    with pytest.raises(InfeasibleKeyframeError):
        solve_keyframe(trap, 1e-3, OMEGA)  # outside coverage


def test_ion_spacing_against_coulomb_oracle():
    """Energy-minimization oracle for the two-ion equilibrium spacing."""
    omega = OMEGA
    coul = ELEMENTARY_CHARGE**2 / (4 * math.pi * EPSILON_0)

    def energy(d):
        return 2 * 0.5 * CA40_MASS * omega**2 * (d / 2) ** 2 + coul / d

    res = minimize_scalar(energy, bounds=(1e-6, 20e-6), method="bounded",
                          options={"xatol": 1e-12})
    assert ion_spacing(omega) == pytest.approx(res.x, rel=1e-6)
    assert ion_spacing(omega) == pytest.approx(4.5e-6, rel=0.02)


def test_synthesize_constant_for_identical_keyframes(trap):
    volts = solve_keyframe(trap, 0.0, OMEGA)
    kf = KeyframeSet(np.array([0.0, 2e-6]), np.vstack([volts, volts]))
    wf = synthesize_waveform(kf, 2e-6, n_segments=1)
    assert np.ptp(wf.frames, axis=0).max() < 1e-12


def test_frame_count_is_exact(transport_wf):
    assert transport_wf.n_frames == round(160e-6 / 5e-9)
    assert transport_wf.duration == pytest.approx(160e-6)
    assert len(transport_wf.segments) == 8


def test_voltage_clamp_invariant(transport_wf):
    assert np.max(np.abs(transport_wf.frames)) <= MAX_VOLTAGE


def test_clamp_violation_raises(trap):
    volts = solve_keyframe(trap, 0.0, OMEGA)
    kf = KeyframeSet(np.array([0.0, 2e-6]), np.vstack([volts, volts * 30]))
    with pytest.raises(VoltageClampError):
        synthesize_waveform(kf, 2e-6, n_segments=1)


def test_ideal_transport_velocity(trap, transport_wf):
    traj = extract_trajectory(trap, transport_wf)
    interior = slice(4000, -4000)
    assert np.max(np.abs(traj.v[interior] - 0.5)) < 0.005  # < 1%
    assert traj.t.size == transport_wf.n_frames


def test_sqrt3_mode_relation(trap, transport_wf):
    traj = extract_trajectory(trap, transport_wf)
    ratio = traj.omega_bm / traj.omega_com
    assert np.max(np.abs(ratio - math.sqrt(3.0))) < 1e-6


def test_static_waveform_zero_velocity(trap):
    volts = solve_keyframe(trap, 0.0, OMEGA)
    kf = KeyframeSet(np.array([0.0, 2e-6]), np.vstack([volts, volts]))
    wf = synthesize_waveform(kf, 20e-6, n_segments=1)
    traj = extract_trajectory(trap, wf)
    assert np.max(np.abs(traj.v)) < 1e-6


def test_retime_identity(trap, transport_wf):
    same = retime_segments(transport_wf, np.ones(8))
    assert np.array_equal(same.frames, transport_wf.frames)


def test_retime_halves_local_velocity(trap, transport_wf):
    factors = np.ones(8)
    factors[3] = 2.0
    slow = retime_segments(transport_wf, factors)
    t0 = extract_trajectory(trap, transport_wf)
    t1 = extract_trajectory(trap, slow)
    sl0 = t0.segment_slices[3]
    sl1 = t1.segment_slices[3]
    v0 = np.median(t0.v[sl0])
    v1 = np.median(t1.v[sl1])
    assert v1 == pytest.approx(v0 / 2, rel=0.02)


def test_retime_preserves_spatial_path(transport_wf):
    # negligible filter: the electrode lag is a separate physical effect
    fast = ideal_trap(filter_tau=1e-12)
    factors = np.array([1.3, 0.8, 1.1, 0.95, 1.2, 0.9, 1.05, 1.0])
    retimed = retime_segments(transport_wf, factors)
    t0 = extract_trajectory(fast, transport_wf)
    t1 = extract_trajectory(fast, retimed)
    # same keyframe-coordinate parameterization -> same positions
    x0 = np.interp(retimed.frame_kf_coord, transport_wf.frame_kf_coord, t0.x)
    assert np.max(np.abs(t1.x - x0)) < 10e-9


def test_retime_resolution_guard(transport_wf):
    with pytest.raises(ResolutionError):
        retime_segments(transport_wf, np.full(8, 1e-4))


def test_confinement_scaling_identity(transport_wf):
    pos = np.linspace(TRANSPORT_START, TRANSPORT_STOP, 17)
    out = apply_confinement_scaling(transport_wf, pos, np.ones(17))
    assert np.allclose(out.frames, transport_wf.frames)


def test_confinement_scaling_quadratic_rule(trap):
    """Scaling voltages by s multiplies omega^2 by s (plant oracle)."""
    volts = solve_keyframe(trap, 0.0, OMEGA)
    _, om0 = trap.plant_well(volts, 0.0)
    s = 1.04
    _, om1 = trap.plant_well(volts * s, 0.0)
    assert om1 / om0 == pytest.approx(math.sqrt(s), rel=1e-6)


def test_confinement_scaling_continuity(transport_wf):
    pos = np.linspace(TRANSPORT_START, TRANSPORT_STOP, 17)
    factors = 1.0 + 0.02 * np.sin(np.linspace(0, 3, 17))
    out = apply_confinement_scaling(transport_wf, pos, factors)
    steps = np.abs(np.diff(out.frames, axis=0)).max()
    assert steps < 1e-3  # no voltage step above 1 mV between frames


def test_filter_time_constant(trap):
    n = 4000
    frames = np.zeros((n, trap.n_electrodes))
    frames[n // 2:] = 1.0
    kf = KeyframeSet(np.array([0.0, 2e-6]),
                     np.zeros((2, trap.n_electrodes)))
    wf_like = synthesize_waveform(kf, n * 5e-9, n_segments=1)
    wf = type(wf_like)(keyframes=kf, segments=wf_like.segments, frames=frames,
                       frame_kf_coord=wf_like.frame_kf_coord)
    eff = filtered_frames(trap, wf)
    # one time constant (2 us = 400 samples) after the step: 1 - 1/e
    idx = n // 2 + 400
    assert eff[idx, 0] == pytest.approx(1 - math.exp(-1), abs=5e-3)


def test_playback_timing_errors_change_duration(plant, transport_wf):
    traj = extract_trajectory(plant, transport_wf)
    eps = np.asarray(plant.playback_timing_errors)
    expected = sum(s.duration * (1 + e)
                   for s, e in zip(transport_wf.segments, eps))
    assert traj.duration == pytest.approx(expected, abs=5e-9 * 10)
    with pytest.raises(ValueError):
        bad = plant.with_imperfections(playback_timing_errors=(0.01,) * 3)
        extract_trajectory(bad, transport_wf)


def test_plant_omega_ripple_target(plant):
    xs = np.linspace(TRANSPORT_START, TRANSPORT_STOP, 17)
    oms = []
    for x0 in xs:
        volts = solve_keyframe(plant, float(x0), OMEGA)
        oms.append(plant.plant_well(volts, float(x0))[1])
    oms = np.array(oms)
    ripple = (oms.max() - oms.min()) / oms.mean()
    assert ripple == pytest.approx(0.046, abs=0.004)


def test_plant_doppler_spread_target(plant):
    kf = solve_transport_keyframes(plant, TRANSPORT_START, TRANSPORT_STOP, OMEGA)
    wf = synthesize_waveform(kf, 160e-6)
    traj = extract_trajectory(plant, wf)
    k_ax = TWO_PI / 729e-9 * math.cos(math.radians(45))
    seg = np.array([(k_ax * traj.v[s]).mean() for s in traj.segment_slices])
    assert (seg.max() - seg.min()) >= TWO_PI * 20e3


def test_waveform_round_trip(tmp_path, trap):
    kf = solve_transport_keyframes(trap, -4e-6, 4e-6, OMEGA)
    wf = synthesize_waveform(kf, 4e-6, n_segments=4)
    path = tmp_path / "wf.txt"
    write_waveform(wf, path)
    back = read_waveform(path)
    assert np.array_equal(back.frames, wf.frames)
    assert np.array_equal(back.keyframes.volts, wf.keyframes.volts)
    assert np.array_equal(back.keyframes.positions, wf.keyframes.positions)
    assert back.segments == wf.segments
    assert back.sample_period == wf.sample_period
