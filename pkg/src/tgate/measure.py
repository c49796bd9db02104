"""Projective measurement simulation, parity analysis, and fidelity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .qcore import populations


@dataclass(frozen=True)
class MeasurementRecord:
    """Trinomial counts by bright-ion number over one ensemble."""

    shots: int
    counts: tuple[int, int, int]        # (n0, n1, n2), n0 = both dark

    def __post_init__(self):
        if sum(self.counts) != self.shots:
            raise ValueError("counts must partition shots")

    @property
    def populations(self) -> tuple[float, float, float]:
        n0, n1, n2 = self.counts
        return n0 / self.shots, n1 / self.shots, n2 / self.shots

    @property
    def sigmas(self) -> tuple[float, float, float]:
        """Binomial 68% half-widths of the three populations."""
        return tuple(math.sqrt(max(p * (1.0 - p), 1.0 / self.shots) / self.shots)
                     for p in self.populations)

    def to_dict(self) -> dict:
        p = self.populations
        s = self.sigmas
        return {"shots": self.shots,
                "counts": list(self.counts),
                "P0": p[0], "P1": p[1], "P2": p[2],
                "P0_err": s[0], "P1_err": s[1], "P2_err": s[2]}


@dataclass(frozen=True)
class FidelityEstimate:
    """Bell fidelity from populations plus parity amplitude."""

    p0: float
    p2: float
    p0_err: float
    p2_err: float
    amplitude: float
    amplitude_err: float
    fidelity: float
    fidelity_err: float

    def to_dict(self) -> dict:
        return {"P0": self.p0, "P0_err": self.p0_err,
                "P2": self.p2, "P2_err": self.p2_err,
                "A": self.amplitude, "A_err": self.amplitude_err,
                "F": self.fidelity, "F_err": self.fidelity_err}


def _ensemble_populations(states: np.ndarray) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states))
    w = np.abs(states.reshape(states.shape[0], 4, -1)) ** 2
    blocks = w.sum(axis=2)
    # bright count: SS -> 2, SD/DS -> 1, DD -> 0
    return np.column_stack([blocks[:, 3], blocks[:, 1] + blocks[:, 2],
                            blocks[:, 0]])


def sample_shots(states: np.ndarray, shots: int,
                 seed: int | np.random.Generator = 0) -> MeasurementRecord:
    """Draw one trinomial detection outcome per shot.

    When the ensemble size equals ``shots`` each member is measured once
    (the natural pairing with :func:`tgate.dynamics.run_shots`); otherwise
    members are drawn uniformly at random.  Deterministic under the seed.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = _ensemble_populations(states)
    m = probs.shape[0]
    if m == shots:
        sel = probs
    else:
        sel = probs[rng.integers(0, m, size=shots)]
    u = rng.random(shots)
    c0 = sel[:, 0]
    c1 = c0 + sel[:, 1]
    outcome = (u >= c0).astype(int) + (u >= c1).astype(int)
    n1 = int(np.count_nonzero(outcome == 1))
    n2 = int(np.count_nonzero(outcome == 2))
    n0 = shots - n1 - n2
    return MeasurementRecord(shots=shots, counts=(n0, n1, n2))


def analysis_pulse(phase: float, fock_dim: int) -> np.ndarray:
    """Ideal instantaneous collective pi/2 rotation with analysis phase."""
    c = 1.0 / math.sqrt(2.0)
    r = np.array([[c, -1j * c * np.exp(-1j * phase)],
                  [-1j * c * np.exp(1j * phase), c]])
    return np.kron(np.kron(r, r), np.eye(fock_dim))


def apply_analysis_pulse(states: np.ndarray, phase: float) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states))
    rot = analysis_pulse(phase, states.shape[1] // 4)
    return states @ rot.T


@dataclass(frozen=True)
class ParityScanResult:
    phases: np.ndarray
    parities: np.ndarray
    parity_errs: np.ndarray
    amplitude: float
    amplitude_err: float
    phase_offset: float
    offset: float
    records: tuple[MeasurementRecord, ...]

    def to_dict(self) -> dict:
        return {"phases_rad": self.phases.tolist(),
                "parity": self.parities.tolist(),
                "parity_err": self.parity_errs.tolist(),
                "A": self.amplitude, "A_err": self.amplitude_err,
                "phase_offset_rad": self.phase_offset,
                "offset": self.offset,
                "records": [r.to_dict() for r in self.records]}


def parity_scan(gate_runner, phases: np.ndarray, shots_per_phase: int,
                seed: int = 0) -> ParityScanResult:
    """Scan the analysis-pulse phase and fit Pi(phi) = A cos(2 phi + phi0).

    ``gate_runner(n_shots, seed)`` must return the ensemble of post-gate
    states for one phase point.  The fit frequency is fixed at 2 phi; a
    constant term absorbs any phase-independent background.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.size < 4:
        raise ValueError("need at least 4 analysis phases")
    seeds = np.random.SeedSequence(seed).spawn(2 * phases.size)
    parities = np.empty(phases.size)
    sigmas = np.empty(phases.size)
    records = []
    for k, phi in enumerate(phases):
        states = gate_runner(shots_per_phase, seeds[2 * k])
        rotated = apply_analysis_pulse(states, phi)
        rec = sample_shots(rotated, shots_per_phase,
                           np.random.default_rng(seeds[2 * k + 1]))
        p0, p1, p2 = rec.populations
        parities[k] = p0 + p2 - p1
        sigmas[k] = 2.0 * math.sqrt(max(p1 * (1 - p1), 1.0 / rec.shots) / rec.shots)
        records.append(rec)

    design = np.column_stack([np.cos(2 * phases), np.sin(2 * phases),
                              np.ones_like(phases)])
    coef, *_ = np.linalg.lstsq(design, parities, rcond=None)
    a, b, off = coef
    amp = math.hypot(a, b)
    if not np.isfinite(amp):
        raise EstimationError("parity fit failed")
    # propagate the per-point binomial variance through the linear fit
    gram_inv = np.linalg.inv(design.T @ design)
    cov = gram_inv @ design.T @ np.diag(sigmas**2) @ design @ gram_inv
    if amp > 0:
        jac = np.array([a / amp, b / amp, 0.0])
    else:
        jac = np.array([1.0, 0.0, 0.0])
    amp_err = float(math.sqrt(max(jac @ cov @ jac, 0.0)))
    return ParityScanResult(
        phases=phases, parities=parities, parity_errs=sigmas,
        amplitude=min(amp, 1.0), amplitude_err=max(amp_err, 1e-12),
        phase_offset=math.atan2(-b, a), offset=float(off),
        records=tuple(records))


def bell_fidelity(record: MeasurementRecord, amplitude: float,
                  amplitude_err: float = 0.0) -> FidelityEstimate:
    """F = (P0 + P2 + A)/2 with first-order uncertainty propagation."""
    if not (0.0 <= amplitude <= 1.0):
        raise ValueError("parity amplitude must lie in [0, 1]")
    p0, p1, p2 = record.populations
    s = record.sigmas
    f = 0.5 * (p0 + p2 + amplitude)
    # P0 + P2 = 1 - P1, so var(P0 + P2) is the binomial variance of P1
    var_pop = max(p1 * (1 - p1), 1.0 / record.shots) / record.shots
    f_err = 0.5 * math.sqrt(var_pop + amplitude_err**2)
    return FidelityEstimate(
        p0=p0, p2=p2, p0_err=s[0], p2_err=s[2],
        amplitude=amplitude, amplitude_err=amplitude_err,
        fidelity=min(max(f, 0.0), 1.0), fidelity_err=max(f_err, 1e-12))


def asymmetry_metric(scan) -> float:
    """Mean mirror asymmetry of population curves about delta_m = 0.

    ``scan`` needs ``values`` (the detuning grid, rad/s) and
    ``populations`` (one (P0, P1, P2) row per point).  The grid must be
    symmetric about zero; the metric averages sum_k |P_k(d) - P_k(-d)| / 3
    over the positive detunings.
    """
    values = np.asarray(scan.values, dtype=float)
    pops = np.asarray(scan.populations, dtype=float)
    order = np.argsort(values)
    values = values[order]
    pops = pops[order]
    scale = max(np.max(np.abs(values)), 1.0)
    pos = values > scale * 1e-12
    neg = values < -scale * 1e-12
    vp, vn = values[pos], -values[neg][::-1]
    if vp.size != vn.size or not np.allclose(vp, vn, rtol=1e-9, atol=scale * 1e-12):
        raise ValueError("scan grid is not symmetric about zero")
    diff = np.abs(pops[pos] - pops[neg][::-1])
    return float(np.mean(diff.sum(axis=1) / 3.0))
