import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgate.measure import (MeasurementRecord, apply_analysis_pulse,
                           asymmetry_metric, bell_fidelity, parity_scan,
                           sample_shots)
from tgate.qcore import basis_state, build_space, populations

SPEC, _ = build_space(6)


def bell_state():
    return (basis_state(SPEC, 0, 0, 0) - 1j * basis_state(SPEC, 1, 1, 0)) / np.sqrt(2)


def test_record_counts_partition():
    with pytest.raises(ValueError):
        MeasurementRecord(shots=10, counts=(3, 3, 3))
    rec = MeasurementRecord(shots=10, counts=(2, 3, 5))
    assert rec.populations == (0.2, 0.3, 0.5)


def test_sample_shots_pure_bright():
    rec = sample_shots(basis_state(SPEC, 0, 0, 0), 100, seed=0)
    assert rec.counts == (0, 0, 100)


def test_sample_shots_bell():
    rec = sample_shots(bell_state(), 100_000, seed=4)
    n0, n1, n2 = rec.counts
    assert n1 == 0
    assert abs(n0 / rec.shots - 0.5) < 0.005


def test_sample_shots_reproducible():
    states = np.array([bell_state(), basis_state(SPEC, 0, 0, 2)])
    a = sample_shots(states, 333, seed=7)
    b = sample_shots(states, 333, seed=7)
    assert a.counts == b.counts


def test_sample_shots_frequency_convergence():
    """Empirical frequencies approach populations at the 1/sqrt(N) rate."""
    psi = (basis_state(SPEC, 0, 0, 0) + basis_state(SPEC, 0, 1, 1)
           + 0.5 * basis_state(SPEC, 1, 1, 0))
    psi /= np.linalg.norm(psi)
    truth = np.array(populations(psi))
    shots = 100_000
    rec = sample_shots(psi, shots, seed=11)
    emp = np.array(rec.populations)
    assert np.max(np.abs(emp - truth)) < 4.0 / math.sqrt(shots)


def test_analysis_pulse_is_unitary_and_collective():
    rot_states = apply_analysis_pulse(bell_state(), 0.37)
    assert np.linalg.norm(rot_states[0]) == pytest.approx(1.0, abs=1e-12)
    # pi/2 pulse on |SS0> splits into the four spin components
    out = apply_analysis_pulse(basis_state(SPEC, 0, 0, 0), 0.0)[0]
    p0, p1, p2 = populations(out)
    assert p0 == pytest.approx(0.25, abs=1e-12)
    assert p1 == pytest.approx(0.5, abs=1e-12)


def test_parity_scan_ideal_bell():
    bell = bell_state()

    def runner(n, seed):
        return np.tile(bell, (n, 1))

    phases = np.linspace(0, np.pi, 12, endpoint=False)
    res = parity_scan(runner, phases, 400, seed=5)
    assert res.amplitude > 0.97
    # parity oscillates at 2 phi: fit residuals stay at shot-noise level
    model = res.amplitude * np.cos(2 * phases + res.phase_offset) + res.offset
    assert np.max(np.abs(res.parities - model)) < 0.1


def test_parity_scan_dephased_mixture():
    spec = SPEC
    half = [basis_state(spec, 0, 0, 0), basis_state(spec, 1, 1, 0)]

    def runner(n, seed):
        return np.array([half[i % 2] for i in range(n)])

    phases = np.linspace(0, np.pi, 12, endpoint=False)
    res = parity_scan(runner, phases, 500, seed=6)
    assert res.amplitude < 3.0 * math.sqrt(2.0 / (12 * 500)) + 0.02


def test_bell_fidelity_formula():
    rec = MeasurementRecord(shots=1000, counts=(500, 0, 500))
    assert bell_fidelity(rec, 1.0).fidelity == pytest.approx(1.0)
    assert bell_fidelity(rec, 0.94).fidelity == pytest.approx(0.97)
    rec2 = MeasurementRecord(shots=1000, counts=(500, 100, 400))
    assert bell_fidelity(rec2, 0.9).fidelity == pytest.approx(0.90)
    est = bell_fidelity(rec2, 0.9, amplitude_err=0.01)
    assert est.fidelity_err > 0


def test_bell_fidelity_monotone():
    rec_lo = MeasurementRecord(shots=1000, counts=(450, 100, 450))
    rec_hi = MeasurementRecord(shots=1000, counts=(480, 40, 480))
    for a_lo, a_hi in [(0.8, 0.9), (0.5, 0.95)]:
        assert bell_fidelity(rec_lo, a_lo).fidelity < bell_fidelity(rec_hi, a_hi).fidelity


def test_bell_fidelity_rejects_bad_amplitude():
    rec = MeasurementRecord(shots=10, counts=(5, 0, 5))
    with pytest.raises(ValueError):
        bell_fidelity(rec, 1.2)


class _Scan:
    def __init__(self, values, populations):
        self.values = values
        self.populations = populations


def test_asymmetry_metric_symmetric_scan():
    v = np.linspace(-10e3, 10e3, 21) * 2 * np.pi
    pops = np.column_stack([np.cos(v * 1e-5) ** 2 / 2,
                            np.zeros_like(v),
                            1 - np.cos(v * 1e-5) ** 2 / 2])
    assert asymmetry_metric(_Scan(v, pops)) == 0.0


def test_asymmetry_metric_detects_asymmetry():
    v = np.array([-2.0, -1.0, 1.0, 2.0])
    pops = np.array([[0.1, 0.1, 0.8], [0.2, 0.2, 0.6],
                     [0.25, 0.2, 0.55], [0.1, 0.4, 0.5]])
    # pairs: (1, -1): |0.25-0.2|+|0.2-0.2|+|0.55-0.6| = 0.1
    #        (2, -2): |0.1-0.1|+|0.4-0.1|+|0.5-0.8| = 0.6
    assert asymmetry_metric(_Scan(v, pops)) == pytest.approx((0.1 + 0.6) / 6)


def test_asymmetry_metric_rejects_asymmetric_grid():
    v = np.array([-2.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        asymmetry_metric(_Scan(v, np.zeros((3, 3))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parity_bounded_for_zero_one_bright_states(seed):
    """|parity| <= 1 for any state in the zero one-bright subspace."""
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=2) + 1j * rng.normal(size=2)
    amps /= np.linalg.norm(amps)
    psi = amps[0] * basis_state(SPEC, 0, 0, 0) + amps[1] * basis_state(SPEC, 1, 1, 0)
    for phi in rng.uniform(0, 2 * np.pi, 5):
        out = apply_analysis_pulse(psi, phi)[0]
        p0, p1, p2 = populations(out)
        assert abs(p0 + p2 - p1) <= 1.0 + 1e-9
