"""The numpy fallback must agree with the numba backend to solver accuracy."""

import math

import numpy as np
import pytest

from tgate import kernels
from tgate.constants import TWO_PI
from tgate.dynamics import GateParams, NoiseModel, analytic_ms_reference
from tgate.envelopes import EnvelopeSet
from tgate.kernels import numba_impl, numpy_impl
from tgate.qcore import basis_state, build_space


@pytest.fixture
def ms_problem():
    tau = 40e-6
    params = GateParams(tau=tau, delta_m=TWO_PI * 14e3,
                        delta_g=TWO_PI * 1.2e3, spin_phase=0.7)
    t = np.linspace(0, tau, 9)
    rng = np.random.default_rng(5)
    env = EnvelopeSet(t, rng.uniform(3e5, 6e5, 9), rng.uniform(3e5, 6e5, 9),
                      rng.normal(0, 1e4, 9), rng.normal(0, 1e4, 9))
    spec, _ = build_space(8)
    psi0 = basis_state(spec, 0, 0, 1)
    return params, env, spec, psi0


def _run(impl, params, env, spec, psi0):
    tg, om1, om2, net, phi = env.pack()
    psi, status, steps = impl.ms_propagate(
        psi0, spec.fock_dim, params.eta_bm, params.delta_m, params.delta_g,
        params.spin_phase, params.rabi_scale, tg, om1, om2, net, phi,
        0.0, params.tau, 1e-10, 1e-12)
    assert status == 0
    return psi, steps


def test_propagator_backends_agree(ms_problem):
    params, env, spec, psi0 = ms_problem
    a, steps_a = _run(numba_impl, params, env, spec, psi0)
    b, steps_b = _run(numpy_impl, params, env, spec, psi0)
    # same stepper, but rounding differs (fma / summation order), so the
    # step sequences may diverge at an accept boundary; both backends must
    # agree to the solver tolerance
    assert abs(steps_a - steps_b) <= 2
    assert np.max(np.abs(a - b)) < 1e-7


def test_numpy_backend_matches_expm_oracle(ms_problem):
    """The fallback is accurate in its own right, not just numba-adjacent."""
    from tgate.dynamics import propagate_expm_reference

    params, env, spec, psi0 = ms_problem
    _, ops = build_space(spec.fock_cutoff)
    psi, _ = _run(numpy_impl, params, env, spec, psi0)
    oracle = propagate_expm_reference(psi0, params, env, ops, dt=1e-9)
    assert np.max(np.abs(psi - oracle)) < 1e-8


def test_ensemble_backends_agree(ms_problem):
    params, env, spec, psi0 = ms_problem
    psi0s = np.tile(psi0, (5, 1))
    eps = np.linspace(-2e3, 2e3, 5)
    tg, om1, om2, net, phi = env.pack()
    args = (psi0s, eps, spec.fock_dim, params.eta_bm, params.delta_m,
            params.delta_g, params.spin_phase, params.rabi_scale,
            tg, om1, om2, net, phi, 0.0, params.tau, 1e-9, 1e-11)
    a, st_a, _ = numba_impl.ms_propagate_ensemble(*args)
    b, st_b, _ = numpy_impl.ms_propagate_ensemble(*args)
    assert np.all(st_a == 0) and np.all(st_b == 0)
    assert np.max(np.abs(a - b)) < 1e-6


def test_find_minima_backends_agree():
    rng = np.random.default_rng(11)
    n_e = 7
    centers = (np.arange(n_e) - 3) * 60e-6
    widths = np.full(n_e, 60e-6)
    amps = np.full(n_e, 0.05)
    gains = 1.0 + rng.normal(0, 0.01, n_e)
    volts = np.tile(rng.normal(0, 2.0, n_e), (40, 1))
    volts[:, 3] = -2.0
    s_amp = np.array([1e-4])
    s_k = np.array([TWO_PI / 90e-6])
    s_ph = np.array([0.3])
    x0 = np.linspace(-5e-6, 5e-6, 40)
    out_a = numba_impl.find_minima(volts, centers, widths, amps, gains,
                                   s_amp, s_k, s_ph, x0, 1e-9)
    out_b = numpy_impl.find_minima(volts, centers, widths, amps, gains,
                                   s_amp, s_k, s_ph, x0, 1e-9)
    assert np.all(out_a[2] == 0) and np.all(out_b[2] == 0)
    assert np.max(np.abs(out_a[0] - out_b[0])) < 1e-12
    assert np.allclose(out_a[1], out_b[1], rtol=1e-12)


def test_backend_selection_round_trip():
    original = kernels.backend()
    try:
        kernels.set_backend("numpy")
        assert kernels.backend() == "numpy"
        spec, _ = build_space(6)
        params = GateParams(tau=20e-6, delta_m=TWO_PI * 12e3)
        env = EnvelopeSet.constant(20e-6, analytic_ms_reference(
            GateParams(tau=160e-6, delta_m=TWO_PI * 12.5e3)).ideal_rabi)
        from tgate.dynamics import propagate
        out = propagate(basis_state(spec, 0, 0, 0), params, env, tol=1e-8)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-9
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
    finally:
        kernels.set_backend(original)
    assert kernels.backend() == original
