import numpy as np
import pytest
from scipy.integrate import quad

from tgate.envelopes import EnvelopeSet


def random_envelope(seed, n=17, tau=100e-6):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, tau, n - 2))
    t = np.concatenate([[0.0], t, [tau]])
    om = rng.uniform(0, 2e5, n)
    return EnvelopeSet(t, om, om * rng.uniform(0.5, 1.0),
                       rng.normal(0, 1e4, n), rng.normal(0, 1e4, n))


def test_grid_validation():
    with pytest.raises(ValueError):
        EnvelopeSet(np.array([0.0, 0.0]), np.ones(2), np.ones(2),
                    np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        EnvelopeSet(np.array([0.0, 1.0]), -np.ones(2), np.ones(2),
                    np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        EnvelopeSet(np.array([0.0, 1.0]), np.ones(3), np.ones(2),
                    np.zeros(2), np.zeros(2))


def test_constant_factory():
    env = EnvelopeSet.constant(1e-4, 2e5, stark=100.0, doppler=-50.0)
    assert env.duration == pytest.approx(1e-4)
    assert env.interpolate(3e-5) == pytest.approx((2e5, 2e5, 100.0, -50.0))
    # integral of (doppler - stark) is linear in t
    assert env.net_shift_phase(1e-4) == pytest.approx(-150.0 * 1e-4)


def test_interpolation_matches_numpy():
    env = random_envelope(3)
    ts = np.linspace(0, env.t[-1], 41)
    for t in ts:
        o1, o2, s, d = env.interpolate(t)
        assert o1 == pytest.approx(np.interp(t, env.t, env.omega_1), abs=1e-9)
        assert s == pytest.approx(np.interp(t, env.t, env.stark), abs=1e-9)
        assert d == pytest.approx(np.interp(t, env.t, env.doppler), abs=1e-9)


def test_phase_matches_quadrature_oracle():
    env = random_envelope(11)

    def integrand(t):
        _, _, s, d = env.interpolate(t)
        return d - s

    for t_end in (0.2e-4, 0.537e-4, env.t[-1]):
        ref, _ = quad(integrand, 0.0, t_end, limit=400,
                      points=env.t[env.t < t_end])
        assert env.net_shift_phase(t_end) == pytest.approx(ref, abs=1e-9)
