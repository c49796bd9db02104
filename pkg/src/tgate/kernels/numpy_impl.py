"""Pure-numpy reference implementations of the hot kernels.

Selected with TGATE_BACKEND=numpy.  Functionally identical to the numba
backend (same stepper, same tableau); slower because the inner loops run
as vectorized numpy calls per stage instead of compiled loops.
"""

from __future__ import annotations

import numpy as np

from ._tableau import (A21, A31, A32, A41, A42, A43, A51, A52, A53, A54,
                       A61, A62, A63, A64, A65, B1, B3, B4, B5, B6,
                       C2, C3, C4, C5, E1, E3, E4, E5, E6, E7,
                       MAX_FACTOR, MIN_FACTOR, SAFETY)

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAXSTEPS = 2

# spin-block transitions of (Omega_1 sigma+_1 - Omega_2 sigma+_2):
# (from block, to block, which Rabi envelope, sign)
_TRANSITIONS = ((0, 2, 0, 1.0), (1, 3, 0, 1.0), (0, 1, 1, -1.0), (2, 3, 1, -1.0))


def _coeffs(t, delta_m, delta_g, eta, spin_phase, rabi_scale,
            tg, om1, om2, net, phi):
    """Interpolated drive coefficients for the two tone groups at time t."""
    j = min(max(int(np.searchsorted(tg, t, side="right")) - 1, 0), tg.size - 2)
    h = tg[j + 1] - tg[j]
    dt = t - tg[j]
    w = dt / h
    o1 = (om1[j] + w * (om1[j + 1] - om1[j])) * rabi_scale
    o2 = (om2[j] + w * (om2[j + 1] - om2[j])) * rabi_scale
    slope = (net[j + 1] - net[j]) / h
    big_phi = delta_g * t + phi[j] + net[j] * dt + 0.5 * slope * dt * dt
    thb = delta_m * t + big_phi
    thr = delta_m * t - big_phi
    cb = -1j * 0.5 * eta * np.exp(1j * (spin_phase - thb))
    cr = -1j * 0.5 * eta * np.exp(1j * (spin_phase + thr))
    return o1, o2, cb, cr


def _rhs(t, psi, nf, sqrtn, eta, delta_m, delta_g, spin_phase, rabi_scale,
         tg, om1, om2, net, phi):
    """d(psi)/dt = -i H(t) psi via block-shift slicing (no dense matrices)."""
    o1, o2, cb, cr = _coeffs(t, delta_m, delta_g, eta, spin_phase, rabi_scale,
                             tg, om1, om2, net, phi)
    p = psi.reshape(4, nf)
    out = np.zeros_like(p)
    om = (o1, o2)
    for bf, bt, which, sign in _TRANSITIONS:
        wb = cb * (sign * om[which])
        wr = cr * (sign * om[which])
        # a^dagger sigma+ : |bf, n> -> |bt, n+1>
        out[bt, 1:] += wb * sqrtn[1:] * p[bf, :-1]
        out[bf, :-1] -= np.conj(wb) * sqrtn[1:] * p[bt, 1:]
        # a sigma+ : |bf, n> -> |bt, n-1>
        out[bt, :-1] += wr * sqrtn[1:] * p[bf, 1:]
        out[bf, 1:] -= np.conj(wr) * sqrtn[1:] * p[bt, :-1]
    return out.reshape(-1)


def ms_propagate(psi0, nf, eta, delta_m, delta_g, spin_phase, rabi_scale,
                 tg, om1, om2, net, phi, t_start, t_end, rtol, atol,
                 max_steps=10_000_000):
    """Adaptive DP5 integration of the MS Schrodinger equation.

    Returns (psi, status, accepted_steps).
    """
    sqrtn = np.sqrt(np.arange(nf, dtype=float))
    args = (nf, sqrtn, eta, delta_m, delta_g, spin_phase, rabi_scale,
            tg, om1, om2, net, phi)
    y = np.array(psi0, dtype=complex, copy=True)
    span = t_end - t_start
    if span <= 0:
        return y, STATUS_OK, 0
    t = t_start
    h = span * 1e-3
    hmin = span * 1e-15
    k1 = _rhs(t, y, *args)
    naccept = 0
    nsteps = 0
    while t < t_end:
        nsteps += 1
        if nsteps > max_steps:
            return y, STATUS_MAXSTEPS, naccept
        if h < hmin:
            return y, STATUS_UNDERFLOW, naccept
        h = min(h, t_end - t)
        k2 = _rhs(t + C2 * h, y + h * (A21 * k1), *args)
        k3 = _rhs(t + C3 * h, y + h * (A31 * k1 + A32 * k2), *args)
        k4 = _rhs(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3), *args)
        k5 = _rhs(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3
                                       + A54 * k4), *args)
        k6 = _rhs(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4
                                  + A65 * k5), *args)
        y5 = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = _rhs(t + h, y5, *args)
        err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err_norm = np.sqrt(np.mean((np.abs(err) / scale) ** 2))
        if err_norm <= 1.0:
            t += h
            y = y5
            k1 = k7
            naccept += 1
            factor = MAX_FACTOR if err_norm == 0 else min(
                MAX_FACTOR, SAFETY * err_norm ** -0.2)
        else:
            factor = max(MIN_FACTOR, SAFETY * err_norm ** -0.2)
        h *= factor
    return y, STATUS_OK, naccept


def ms_propagate_ensemble(psi0s, eps, nf, eta, delta_m, delta_g, spin_phase,
                          rabi_scale, tg, om1, om2, net, phi, t_start, t_end,
                          rtol, atol, max_steps=10_000_000):
    """Propagate each shot with its own carrier offset added to delta_g."""
    n = psi0s.shape[0]
    out = np.empty_like(psi0s)
    status = np.zeros(n, dtype=np.int64)
    nsteps = np.zeros(n, dtype=np.int64)
    for i in range(n):
        out[i], status[i], nsteps[i] = ms_propagate(
            psi0s[i], nf, eta, delta_m, delta_g + eps[i], spin_phase,
            rabi_scale, tg, om1, om2, net, phi, t_start, t_end, rtol, atol,
            max_steps)
    return out, status, nsteps


def _potential_derivs(x, volts, centers, widths, amps, gains,
                      stray_amp, stray_k, stray_phase):
    u = (x - centers) / widths
    g = gains * volts * amps * np.exp(-u * u)
    d1 = float(np.sum(g * (-2.0 * u / widths)))
    d2 = float(np.sum(g * (4.0 * u * u - 2.0) / widths**2))
    arg = stray_k * x + stray_phase
    d1 += float(np.sum(stray_amp * stray_k * np.cos(arg)))
    d2 -= float(np.sum(stray_amp * stray_k**2 * np.sin(arg)))
    return d1, d2


def find_minima(volts, centers, widths, amps, gains, stray_amp, stray_k,
                stray_phase, x_init, xtol=1e-9, max_iter=60, max_step=5e-6):
    """Newton search for the potential minimum of every frame.

    Returns (x, curvature, status) with status 1 where the well is lost.
    """
    n_frames = volts.shape[0]
    x_out = np.empty(n_frames)
    c_out = np.empty(n_frames)
    status = np.zeros(n_frames, dtype=np.int64)
    for f in range(n_frames):
        x = x_init[f]
        converged = False
        for _ in range(max_iter):
            d1, d2 = _potential_derivs(x, volts[f], centers, widths, amps,
                                       gains, stray_amp, stray_k, stray_phase)
            if d2 <= 0:
                break
            step = -d1 / d2
            step = min(max(step, -max_step), max_step)
            x += step
            if abs(step) < xtol:
                converged = True
                break
        d1, d2 = _potential_derivs(x, volts[f], centers, widths, amps, gains,
                                   stray_amp, stray_k, stray_phase)
        x_out[f] = x
        c_out[f] = d2
        if not converged or d2 <= 0:
            status[f] = 1
    return x_out, c_out, status
