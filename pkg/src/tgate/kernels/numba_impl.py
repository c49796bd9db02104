"""Numba-compiled hot kernels (default backend).

Same algorithms as :mod:`tgate.kernels.numpy_impl`, written as explicit
loops for JIT compilation.  Shot ensembles and per-frame minimum searches
parallelize over the outer index with deterministic per-index output.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from ._tableau import (A21, A31, A32, A41, A42, A43, A51, A52, A53, A54,
                       A61, A62, A63, A64, A65, B1, B3, B4, B5, B6,
                       C2, C3, C4, C5, E1, E3, E4, E5, E6, E7,
                       MAX_FACTOR, MIN_FACTOR, SAFETY)

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAXSTEPS = 2


@njit(cache=True)
def _rhs(t, psi, out, nf, sqrtn, eta, delta_m, delta_g, spin_phase,
         rabi_scale, tg, om1, om2, net, phi):
    """out <- -i H(t) psi, using the block-shift structure of H."""
    ng = tg.shape[0]
    j = np.searchsorted(tg, t) - 1
    if j < 0:
        j = 0
    if j > ng - 2:
        j = ng - 2
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

    for i in range(psi.shape[0]):
        out[i] = 0.0

    for k in range(4):
        if k == 0:
            bf, bt, wgt = 0, 2, o1
        elif k == 1:
            bf, bt, wgt = 1, 3, o1
        elif k == 2:
            bf, bt, wgt = 0, 1, -o2
        else:
            bf, bt, wgt = 2, 3, -o2
        base_f = bf * nf
        base_t = bt * nf
        cbw = cb * wgt
        crw = cr * wgt
        for n in range(nf - 1):
            s = sqrtn[n + 1]
            # a^dagger sigma+ : |bf, n> -> |bt, n+1>
            amp = cbw * s
            out[base_t + n + 1] += amp * psi[base_f + n]
            out[base_f + n] -= np.conj(amp) * psi[base_t + n + 1]
            # a sigma+ : |bf, n+1> -> |bt, n>
            amp = crw * s
            out[base_t + n] += amp * psi[base_f + n + 1]
            out[base_f + n + 1] -= np.conj(amp) * psi[base_t + n]


@njit(cache=True)
def ms_propagate(psi0, nf, eta, delta_m, delta_g, spin_phase, rabi_scale,
                 tg, om1, om2, net, phi, t_start, t_end, rtol, atol,
                 max_steps=10_000_000):
    """Adaptive DP5 integration; returns (psi, status, accepted_steps)."""
    dim = psi0.shape[0]
    sqrtn = np.sqrt(np.arange(nf).astype(np.float64))
    y = psi0.copy()
    span = t_end - t_start
    if span <= 0:
        return y, STATUS_OK, 0
    k1 = np.empty(dim, np.complex128)
    k2 = np.empty(dim, np.complex128)
    k3 = np.empty(dim, np.complex128)
    k4 = np.empty(dim, np.complex128)
    k5 = np.empty(dim, np.complex128)
    k6 = np.empty(dim, np.complex128)
    k7 = np.empty(dim, np.complex128)
    ytmp = np.empty(dim, np.complex128)
    y5 = np.empty(dim, np.complex128)

    t = t_start
    h = span * 1e-3
    hmin = span * 1e-15
    _rhs(t, y, k1, nf, sqrtn, eta, delta_m, delta_g, spin_phase, rabi_scale,
         tg, om1, om2, net, phi)
    naccept = 0
    nsteps = 0
    while t < t_end:
        nsteps += 1
        if nsteps > max_steps:
            return y, STATUS_MAXSTEPS, naccept
        if h < hmin:
            return y, STATUS_UNDERFLOW, naccept
        if h > t_end - t:
            h = t_end - t
        for i in range(dim):
            ytmp[i] = y[i] + h * (A21 * k1[i])
        _rhs(t + C2 * h, ytmp, k2, nf, sqrtn, eta, delta_m, delta_g,
             spin_phase, rabi_scale, tg, om1, om2, net, phi)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(t + C3 * h, ytmp, k3, nf, sqrtn, eta, delta_m, delta_g,
             spin_phase, rabi_scale, tg, om1, om2, net, phi)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(t + C4 * h, ytmp, k4, nf, sqrtn, eta, delta_m, delta_g,
             spin_phase, rabi_scale, tg, om1, om2, net, phi)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i]
                                  + A54 * k4[i])
        _rhs(t + C5 * h, ytmp, k5, nf, sqrtn, eta, delta_m, delta_g,
             spin_phase, rabi_scale, tg, om1, om2, net, phi)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i]
                                  + A64 * k4[i] + A65 * k5[i])
        _rhs(t + h, ytmp, k6, nf, sqrtn, eta, delta_m, delta_g,
             spin_phase, rabi_scale, tg, om1, om2, net, phi)
        for i in range(dim):
            y5[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i]
                                + B5 * k5[i] + B6 * k6[i])
        _rhs(t + h, y5, k7, nf, sqrtn, eta, delta_m, delta_g,
             spin_phase, rabi_scale, tg, om1, om2, net, phi)

        err_sq = 0.0
        for i in range(dim):
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                     + E6 * k6[i] + E7 * k7[i])
            ya = abs(y[i])
            yb = abs(y5[i])
            big = ya if ya > yb else yb
            sc = atol + rtol * big
            r = abs(e) / sc
            err_sq += r * r
        err_norm = np.sqrt(err_sq / dim)

        if err_norm <= 1.0:
            t += h
            for i in range(dim):
                y[i] = y5[i]
                k1[i] = k7[i]
            naccept += 1
            if err_norm == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err_norm ** -0.2
                if factor > MAX_FACTOR:
                    factor = MAX_FACTOR
        else:
            factor = SAFETY * err_norm ** -0.2
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
        h *= factor
    return y, STATUS_OK, naccept


@njit(cache=True, parallel=True)
def ms_propagate_ensemble(psi0s, eps, nf, eta, delta_m, delta_g, spin_phase,
                          rabi_scale, tg, om1, om2, net, phi, t_start, t_end,
                          rtol, atol, max_steps=10_000_000):
    """Propagate each shot with its own carrier offset added to delta_g."""
    n = psi0s.shape[0]
    out = np.empty_like(psi0s)
    status = np.zeros(n, dtype=np.int64)
    nsteps = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        yi, st, ns = ms_propagate(psi0s[i], nf, eta, delta_m,
                                  delta_g + eps[i], spin_phase, rabi_scale,
                                  tg, om1, om2, net, phi, t_start, t_end,
                                  rtol, atol, max_steps)
        out[i] = yi
        status[i] = st
        nsteps[i] = ns
    return out, status, nsteps


@njit(cache=True)
def _potential_derivs(x, volts, centers, widths, amps, gains,
                      stray_amp, stray_k, stray_phase):
    d1 = 0.0
    d2 = 0.0
    for i in range(volts.shape[0]):
        u = (x - centers[i]) / widths[i]
        g = gains[i] * volts[i] * amps[i] * np.exp(-u * u)
        d1 += g * (-2.0 * u / widths[i])
        d2 += g * (4.0 * u * u - 2.0) / (widths[i] * widths[i])
    for j in range(stray_amp.shape[0]):
        arg = stray_k[j] * x + stray_phase[j]
        d1 += stray_amp[j] * stray_k[j] * np.cos(arg)
        d2 -= stray_amp[j] * stray_k[j] * stray_k[j] * np.sin(arg)
    return d1, d2


@njit(cache=True, parallel=True)
def find_minima(volts, centers, widths, amps, gains, stray_amp, stray_k,
                stray_phase, x_init, xtol=1e-9, max_iter=60, max_step=5e-6):
    """Newton search for the potential minimum of every frame."""
    n_frames = volts.shape[0]
    x_out = np.empty(n_frames)
    c_out = np.empty(n_frames)
    status = np.zeros(n_frames, dtype=np.int64)
    for f in prange(n_frames):
        x = x_init[f]
        converged = False
        for _ in range(max_iter):
            d1, d2 = _potential_derivs(x, volts[f], centers, widths, amps,
                                       gains, stray_amp, stray_k, stray_phase)
            if d2 <= 0:
                break
            step = -d1 / d2
            if step > max_step:
                step = max_step
            elif step < -max_step:
                step = -max_step
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
