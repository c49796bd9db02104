"""Time-dependent drive envelopes fed to the propagator.

An :class:`EnvelopeSet` samples the per-ion carrier Rabi frequencies, the
ac Stark shift, and the residual Doppler shift on one strictly increasing
time grid covering the interaction window.  Values between grid points are
linearly interpolated; integrated phases are therefore piecewise quadratic
and are evaluated in closed form (no quadrature error).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvelopeSet:
    """Sampled Omega_1(t), Omega_2(t), Stark shift and Doppler shift (rad/s)."""

    t: np.ndarray
    omega_1: np.ndarray
    omega_2: np.ndarray
    stark: np.ndarray
    doppler: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("time grid needs at least two points")
        if not np.all(np.diff(t) > 0):
            raise ValueError("time grid must be strictly increasing")
        arrays = {}
        for name in ("omega_1", "omega_2", "stark", "doppler"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != t.shape:
                raise ValueError(f"{name} must share the time grid shape")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arrays[name] = arr
        if np.any(arrays["omega_1"] < 0) or np.any(arrays["omega_2"] < 0):
            raise ValueError("Rabi envelopes must be non-negative")
        object.__setattr__(self, "t", t)
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        t.setflags(write=False)

    @classmethod
    def constant(cls, tau: float, omega: float, stark: float = 0.0,
                 doppler: float = 0.0) -> "EnvelopeSet":
        """Flat envelopes over [0, tau] (stationary gate)."""
        if tau <= 0:
            raise ValueError("tau must be positive")
        t = np.array([0.0, tau])
        one = np.ones(2)
        return cls(t, omega * one, omega * one, stark * one, doppler * one)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def covers(self, tau: float, slack: float = 1e-12) -> bool:
        return self.t[0] <= slack and self.t[-1] >= tau - slack

    def _locate(self, t: float) -> int:
        j = int(np.searchsorted(self.t, t, side="right")) - 1
        return min(max(j, 0), self.t.size - 2)

    def interpolate(self, t: float) -> tuple[float, float, float, float]:
        """(omega_1, omega_2, stark, doppler) at time t (linear interpolation)."""
        j = self._locate(t)
        w = (t - self.t[j]) / (self.t[j + 1] - self.t[j])
        out = []
        for arr in (self.omega_1, self.omega_2, self.stark, self.doppler):
            out.append(float(arr[j] + w * (arr[j + 1] - arr[j])))
        return tuple(out)

    def net_shift_phase(self, t: float) -> float:
        """Integral of (doppler - stark) from the grid start to t.

        Exact for the piecewise-linear envelopes: trapezoid sums at the
        nodes plus the quadratic remainder inside the current interval.
        """
        tg, net, phi = self.t, self._net(), self._phi_nodes()
        j = self._locate(t)
        dt = t - tg[j]
        slope = (net[j + 1] - net[j]) / (tg[j + 1] - tg[j])
        return float(phi[j] + net[j] * dt + 0.5 * slope * dt * dt)

    def _net(self) -> np.ndarray:
        return self.doppler - self.stark

    def _phi_nodes(self) -> np.ndarray:
        net = self._net()
        dt = np.diff(self.t)
        phi = np.zeros_like(self.t)
        phi[1:] = np.cumsum(0.5 * (net[1:] + net[:-1]) * dt)
        return phi

    def pack(self) -> tuple[np.ndarray, ...]:
        """Contiguous float64 arrays (t, omega_1, omega_2, net, phi) for kernels.

        ``net`` is doppler - stark at the nodes and ``phi`` its running
        integral, so kernels never re-integrate.
        """
        return (
            np.ascontiguousarray(self.t),
            np.ascontiguousarray(self.omega_1),
            np.ascontiguousarray(self.omega_2),
            np.ascontiguousarray(self._net()),
            np.ascontiguousarray(self._phi_nodes()),
        )
