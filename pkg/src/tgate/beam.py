"""Gaussian-beam geometry: Rabi, Stark, and Doppler envelopes.

The 729 nm beam crosses the trap axis at 45 degrees, so the axial field
envelope has the projected waist w_ax = w / cos(45deg).  Both MS tones
share one spatial mode (they co-propagate through a single fiber), so a
single envelope serves both tones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .constants import TWO_PI
from .envelopes import EnvelopeSet
from .trap import Trajectory


@dataclass(frozen=True)
class BeamModel:
    """Stationary bichromatic beam crossing the trap axis."""

    wavelength: float = 729e-9          # m
    axis_angle: float = math.radians(45.0)
    waist: float = 15e-6                # m, field 1/e^2 intensity radius
    center: float = 0.0                 # beam center on the trap axis, m
    peak_rabi: float = TWO_PI * 105e3   # carrier Rabi at center, rad/s
    stark_coeff: float = 0.0            # kappa, s: stark = kappa * Omega^2

    def __post_init__(self):
        if self.waist <= 0:
            raise ValueError("waist must be positive")
        if self.stark_coeff < 0:
            raise ValueError("stark_coeff must be >= 0")

    @property
    def axial_waist(self) -> float:
        """Projected field waist along the trap axis."""
        return self.waist / math.cos(self.axis_angle)

    @property
    def axial_wavenumber(self) -> float:
        """Projection of the optical k-vector on the transport axis."""
        return TWO_PI / self.wavelength * math.cos(self.axis_angle)

    def field_envelope(self, x) -> np.ndarray:
        """Relative field amplitude at axial position x (1 at center)."""
        u = (np.asarray(x, dtype=float) - self.center) / self.axial_waist
        return np.exp(-u * u)

    def with_(self, **kw) -> "BeamModel":
        return replace(self, **kw)


def rabi_envelopes(traj: Trajectory, beam: BeamModel,
                   ion_spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-ion carrier Rabi frequency along the trajectory.

    The ions sit at x(t) -/+ d/2; each sees the field envelope at its own
    position (the intensity envelope is the square of this).
    """
    om1 = beam.peak_rabi * beam.field_envelope(traj.x - 0.5 * ion_spacing)
    om2 = beam.peak_rabi * beam.field_envelope(traj.x + 0.5 * ion_spacing)
    return om1, om2


def stark_envelope(omega_1: np.ndarray, omega_2: np.ndarray,
                   beam: BeamModel) -> np.ndarray:
    """Ion-averaged quadratic light shift kappa * (W1^2 + W2^2) / 2."""
    return beam.stark_coeff * 0.5 * (np.asarray(omega_1) ** 2
                                     + np.asarray(omega_2) ** 2)


def doppler_envelope(traj: Trajectory, beam: BeamModel) -> np.ndarray:
    """First-order Doppler shift k v cos(angle) seen by the moving ions."""
    return beam.axial_wavenumber * traj.v


def make_envelopes(traj: Trajectory, beam: BeamModel, ion_spacing: float,
                   doppler_reference: float = 0.0,
                   max_nodes: int = 2001) -> EnvelopeSet:
    """EnvelopeSet for a transport gate, decimated to ``max_nodes``.

    ``doppler_reference`` is the calibrated Doppler offset already folded
    into the tone frequencies; the envelope carries only the residual.
    """
    idx = np.arange(traj.t.size)
    if traj.t.size > max_nodes:
        stride = int(np.ceil(traj.t.size / max_nodes))
        idx = np.unique(np.concatenate([idx[::stride], [traj.t.size - 1]]))
    sub = Trajectory(t=traj.t[idx], x=traj.x[idx], v=traj.v[idx],
                     omega_com=traj.omega_com[idx])
    om1, om2 = rabi_envelopes(sub, beam, ion_spacing)
    stark = stark_envelope(om1, om2, beam)
    doppler = doppler_envelope(sub, beam) - doppler_reference
    return EnvelopeSet(sub.t, om1, om2, stark, doppler)


def stationary_envelopes(tau: float, beam: BeamModel, ion_spacing: float,
                         position: float = 0.0) -> EnvelopeSet:
    """Constant envelopes for ions parked at ``position``."""
    x = np.full(2, position)
    t = np.array([0.0, tau])
    traj = Trajectory(t=t, x=x, v=np.zeros(2), omega_com=np.zeros(2))
    om1, om2 = rabi_envelopes(traj, beam, ion_spacing)
    stark = stark_envelope(om1, om2, beam)
    return EnvelopeSet(t, om1, om2, stark, np.zeros(2))


def stark_coeff_for_sideband_split(beam: BeamModel, traj: Trajectory,
                                   peak_rabi: float,
                                   ion_spacing: float,
                                   target_split: float) -> float:
    """kappa such that the Stark shift in the most intense portion of the
    transit exceeds the edge-segment value by ``target_split`` at the gate
    peak Rabi frequency.

    The center value is the pointwise maximum (the drive-weighted fit of
    the center segment emphasizes its brightest part); the edge is the
    mean over the outermost segments.
    """
    if not traj.segment_slices:
        raise ValueError("trajectory carries no segment structure")
    probe = beam.with_(peak_rabi=peak_rabi, stark_coeff=1.0)
    om1, om2 = rabi_envelopes(traj, probe, ion_spacing)
    per_unit = stark_envelope(om1, om2, probe)
    first, last = traj.segment_slices[0], traj.segment_slices[-1]
    edge = min(per_unit[first].mean(), per_unit[last].mean())
    split = per_unit.max() - edge
    if split <= 0:
        raise ValueError("degenerate envelope: no center-to-edge contrast")
    return float(target_split / split)
