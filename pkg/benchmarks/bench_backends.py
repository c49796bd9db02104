#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot paths on production-sized problems: a single gate
propagation, a shot ensemble, and trajectory extraction over a full
32000-frame waveform.

    python benchmarks/bench_backends.py [--repeats 3]
"""

import argparse
import math
import time

import numpy as np

from tgate.constants import TWO_PI
from tgate.dynamics import GateParams, analytic_ms_reference
from tgate.envelopes import EnvelopeSet
from tgate.kernels import numba_impl, numpy_impl
from tgate.qcore import build_space
from tgate.trap import (DEFAULT_OMEGA_COM, TRANSPORT_START, TRANSPORT_STOP,
                        filtered_frames, make_plant, solve_transport_keyframes,
                        synthesize_waveform)


def build_gate_problem():
    tau = 160e-6
    params = GateParams(tau=tau, delta_m=TWO_PI * 15e3)
    omega = math.sqrt(3.0) * analytic_ms_reference(
        GateParams(tau=tau, delta_m=TWO_PI * 12.5e3)).ideal_rabi
    t = np.linspace(0, tau, 1601)
    u = (-40e-6 + 0.5 * t) / 21.2e-6
    envelope = omega * np.exp(-u * u)
    env = EnvelopeSet(t, envelope, envelope, 0.2e4 * np.exp(-2 * u * u),
                      1e3 * np.sin(TWO_PI * t / 80e-6))
    spec, _ = build_space(15)
    psi0 = np.zeros(spec.dim, dtype=complex)
    psi0[0] = 1.0
    return params, env, spec, psi0


def bench(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--shots", type=int, default=256)
    args = ap.parse_args()

    params, env, spec, psi0 = build_gate_problem()
    tg, om1, om2, net, phi = env.pack()
    prop_args = (spec.fock_dim, params.eta_bm, params.delta_m, params.delta_g,
                 params.spin_phase, params.rabi_scale, tg, om1, om2, net, phi,
                 0.0, params.tau, 1e-9, 1e-11)

    psi0s = np.tile(psi0, (args.shots, 1))
    eps = np.random.default_rng(0).normal(0, 1e3, args.shots)

    plant = make_plant()
    kf = solve_transport_keyframes(plant, TRANSPORT_START, TRANSPORT_STOP,
                                   DEFAULT_OMEGA_COM)
    wf = synthesize_waveform(kf, 160e-6)
    frames = filtered_frames(plant, wf)
    centers, widths, amps, gains, s_amp, s_k, s_ph = plant.plant_arrays()
    x_init = wf.nominal_positions()

    cases = {
        "gate propagation (dim 64, 160 us)":
            lambda impl: impl.ms_propagate(psi0, *prop_args),
        f"shot ensemble ({args.shots} shots)":
            lambda impl: impl.ms_propagate_ensemble(psi0s, eps, *prop_args),
        "trajectory minima (32000 frames)":
            lambda impl: impl.find_minima(frames, centers, widths, amps,
                                          gains, s_amp, s_k, s_ph, x_init,
                                          1e-9),
    }

    # trigger JIT compilation outside the timed region
    for fn in cases.values():
        fn(numba_impl)

    width = max(len(k) for k in cases)
    print(f"{'case':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for name, fn in cases.items():
        t_nb = bench(lambda: fn(numba_impl), args.repeats)
        t_np = bench(lambda: fn(numpy_impl), args.repeats)
        print(f"{name:<{width}}  {t_nb * 1e3:>8.1f}ms  "
              f"{t_np * 1e3:>8.1f}ms  {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
