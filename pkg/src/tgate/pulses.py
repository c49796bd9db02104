"""Two-level pulse response used by the spectroscopy simulations.

Carrier and sideband probes never entangle the ions in this model, so
each ion is an independent two-level system driven with a time-dependent
Rabi envelope and detuning.  The propagator below applies the exact SU(2)
rotation of the midpoint-frozen Hamiltonian on a fine fixed grid,
vectorized across a batch of probe detunings.
"""

from __future__ import annotations

import numpy as np


def excited_population(t: np.ndarray, rabi: np.ndarray, shift: np.ndarray,
                       probe_detunings: np.ndarray,
                       dt_max: float = 25e-9) -> np.ndarray:
    """P(excited) after the pulse, for every probe detuning.

    ``shift`` is the instantaneous resonance offset (Doppler plus Stark)
    sampled on the same grid as ``rabi``; the effective detuning of probe
    ``d`` is d - shift(t).  Starts in the ground state.
    """
    t = np.asarray(t, dtype=float)
    rabi = np.asarray(rabi, dtype=float)
    shift = np.asarray(shift, dtype=float)
    probes = np.atleast_1d(np.asarray(probe_detunings, dtype=float))
    span = t[-1] - t[0]
    n_steps = max(int(np.ceil(span / dt_max)), 8)
    tt = np.linspace(t[0], t[-1], n_steps + 1)
    om = np.interp(tt, t, rabi)
    sh = np.interp(tt, t, shift)
    # drive phase theta(t) = probe * (t - t0) - integral(shift)
    dtau = np.diff(tt)
    psi_cum = np.concatenate([[0.0], np.cumsum(0.5 * (sh[1:] + sh[:-1]) * dtau)])

    c_g = np.ones(probes.size, dtype=complex)
    c_e = np.zeros(probes.size, dtype=complex)
    for k in range(n_steps):
        h = dtau[k]
        om_m = 0.5 * (om[k] + om[k + 1])
        t_mid = 0.5 * (tt[k] + tt[k + 1]) - t[0]
        psi_mid = 0.5 * (psi_cum[k] + psi_cum[k + 1])
        theta = probes * t_mid - psi_mid
        a = 0.5 * om_m * h
        cos_a = np.cos(a)
        sin_a = np.sin(a)
        ph = np.exp(1j * theta)
        g_new = cos_a * c_g - 1j * sin_a * ph * c_e
        e_new = cos_a * c_e - 1j * sin_a * np.conj(ph) * c_g
        c_g, c_e = g_new, e_new
    return np.abs(c_e) ** 2
