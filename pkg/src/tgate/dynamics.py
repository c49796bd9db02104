"""MS-interaction Hamiltonian, Schrodinger propagation, and oracles.

The interaction-frame Hamiltonian for the bichromatic drive is

    H(t) = (eta/2) (a+ e^{-i th_b(t)} + a e^{+i th_r(t)})
           (W1(t) s+_1 - W2(t) s+_2) e^{i phase} + h.c.

with th_b(t) = dm*t + Phi(t), th_r(t) = dm*t - Phi(t) and
Phi(t) = integral of (dg + doppler(t') - stark(t')).  For constant
envelopes and zero Doppler this is exactly the textbook bichromatic MS
form with tone detunings dm + dg - stark from the sidebands.  hbar = 1;
all energies are angular frequencies.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .envelopes import EnvelopeSet
from .errors import IntegrationError, NoSolutionError
from .qcore import (DEFAULT_FOCK_CUTOFF, HilbertSpec, OperatorSet, build_space,
                    basis_state, check_thermal_cutoff)

#: Default spin-dependent-force phase.  The drive phase is imposed at the
#: start of the interaction; pi/2 makes |SS0> evolve to the target Bell
#: state (|SS> - i|DD>)/sqrt(2) at positive mode detuning.
DEFAULT_SPIN_PHASE = math.pi / 2.0


@dataclass(frozen=True)
class GateParams:
    """Drive parameters of one MS interaction."""

    tau: float                      # interaction duration (s)
    delta_m: float                  # mode detuning (rad/s)
    delta_g: float = 0.0            # global detuning (rad/s)
    omega_bm: float = 2.0 * math.pi * 2.45e6   # breathing mode (rad/s)
    eta_bm: float = 0.042           # Lamb-Dicke parameter
    spin_phase: float = DEFAULT_SPIN_PHASE
    rabi_scale: float = 1.0         # global power knob on both tones

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not (0.0 < self.eta_bm < 0.3):
            raise ValueError("eta_bm must lie in (0, 0.3)")
        if self.omega_bm <= abs(self.delta_m) + abs(self.delta_g):
            raise ValueError("omega_bm must exceed |delta_m| + |delta_g|")

    @property
    def tone_detunings(self) -> tuple[float, float]:
        """(blue, red) tone detunings from the bare carrier."""
        blue = self.omega_bm + self.delta_m + self.delta_g
        red = -self.omega_bm - self.delta_m + self.delta_g
        return blue, red

    def with_(self, **kw) -> "GateParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class NoiseModel:
    """Per-shot quasi-static carrier-frequency error of the drive laser.

    Each shot draws eps ~ N(0, sigma_carrier).  The observable consequence
    of the offset is the laser phase accumulated against the qubits by the
    end of the shot: every later analysis pulse is a laser pulse, so the
    shot's state acquires the collective frame phase exp(i eps tau sz/2)
    before measurement.  With the drive off this reproduces the single-ion
    Ramsey dephasing used by :func:`calibrate_noise` exactly, and it gives
    the Bell coherence the factor-4 variance of collective dephasing.

    The offset is deliberately *not* inserted into the tone detunings
    during the drive: a truly static in-drive offset is partially echoed
    away by the bichromatic dressing (measured pair/single dephasing
    variance ratio ~1.8 instead of 4), which would under-predict the
    laser-coherence error budget the model is calibrated to reproduce.
    """

    sigma_carrier: float = 0.0      # rad/s
    seed: int = 0

    def __post_init__(self):
        if self.sigma_carrier < 0:
            raise ValueError("sigma_carrier must be >= 0")


@lru_cache(maxsize=8)
def cached_space(fock_cutoff: int) -> tuple[HilbertSpec, OperatorSet]:
    return build_space(fock_cutoff)


def ms_hamiltonian(t: float, params: GateParams, env: EnvelopeSet,
                   ops: OperatorSet | None = None) -> np.ndarray:
    """Dense Hamiltonian at time t (Hermitian by construction)."""
    if not (0.0 <= t <= params.tau * (1 + 1e-12)):
        raise ValueError(f"t = {t} outside the interaction window [0, {params.tau}]")
    if ops is None:
        ops = cached_space(DEFAULT_FOCK_CUTOFF)[1]
    om1, om2, _, _ = env.interpolate(t)
    om1 *= params.rabi_scale
    om2 *= params.rabi_scale
    big_phi = params.delta_g * t + env.net_shift_phase(t)
    thb = params.delta_m * t + big_phi
    thr = params.delta_m * t - big_phi
    cb = 0.5 * params.eta_bm * np.exp(1j * (params.spin_phase - thb))
    cr = 0.5 * params.eta_bm * np.exp(1j * (params.spin_phase + thr))
    half = (cb * (om1 * ops.ad_sp1 - om2 * ops.ad_sp2)
            + cr * (om1 * ops.a_sp1 - om2 * ops.a_sp2))
    return half + half.conj().T


def _check_env(params: GateParams, env: EnvelopeSet):
    if not env.covers(params.tau, slack=1e-12 + 1e-9 * params.tau):
        raise ValueError("envelope grid does not cover [0, tau]")


def propagate(state: np.ndarray, params: GateParams, env: EnvelopeSet,
              tol: float = 1e-8, fock_cutoff: int | None = None) -> np.ndarray:
    """Integrate the Schrodinger equation over [0, tau].

    ``tol`` bounds the max-norm error of the final state against the
    exact solution (verified against the brute-force oracle in tests).
    """
    if not (1e-12 < tol < 1e-4):
        raise ValueError("tol must lie in (1e-12, 1e-4)")
    _check_env(params, env)
    state = np.ascontiguousarray(state, dtype=complex)
    if fock_cutoff is None:
        fock_cutoff = state.size // 4 - 1
    nf = fock_cutoff + 1
    if state.size != 4 * nf:
        raise ValueError("state length inconsistent with Fock cutoff")
    tg, om1, om2, net, phi = env.pack()
    psi, status, _ = kernels.ms_propagate(
        state, nf, params.eta_bm, params.delta_m, params.delta_g,
        params.spin_phase, params.rabi_scale, tg, om1, om2, net, phi,
        0.0, params.tau, tol * 1e-2, tol * 1e-3)
    if status == kernels.STATUS_UNDERFLOW:
        raise IntegrationError("step size underflow during propagation",
                               t=params.tau)
    if status == kernels.STATUS_MAXSTEPS:
        raise IntegrationError("step budget exhausted during propagation")
    return psi


def _expm_apply(h: np.ndarray, psi: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i h dt) @ psi via the Taylor series, run to machine precision.

    Valid because ||h|| dt << 1 on the 1 ns oracle grid; the series is
    truncated only when the next term falls below 1e-18 of the state norm.
    """
    out = psi.copy()
    term = psi
    for k in range(1, 30):
        term = (-1j * dt / k) * (h @ term)
        out += term
        if np.linalg.norm(term) < 1e-18:
            return out
    raise IntegrationError("expm Taylor series failed to converge; "
                           "reduce the oracle step size")


def propagate_expm_reference(state: np.ndarray, params: GateParams,
                             env: EnvelopeSet, ops: OperatorSet,
                             dt: float = 1e-9) -> np.ndarray:
    """Brute-force oracle: piecewise matrix exponentials on a fixed grid.

    Evaluates the dense Hamiltonian at each step midpoint and applies its
    exponential exactly.  Independent of the adaptive integrator path; used
    to pin its accuracy.
    """
    _check_env(params, env)
    psi = np.array(state, dtype=complex)
    n_steps = int(math.ceil(params.tau / dt))
    t = 0.0
    for _ in range(n_steps):
        step = min(dt, params.tau - t)
        if step <= 0:
            break
        h = ms_hamiltonian(t + 0.5 * step, params, env, ops)
        psi = _expm_apply(h, psi, step)
        t += step
    return psi


@dataclass(frozen=True)
class MsReference:
    """Closed-form constant-drive MS quantities for one parameter set."""

    params: GateParams
    loops: float            # K = delta_m * tau / 2pi
    ideal_rabi: float       # carrier Omega with eta*Omega = |dm| / (2 sqrt|K|)
    geometric_phase: float  # (eta*Omega/2)^2 * tau / delta_m at ideal_rabi
    omega: float            # carrier Omega the trajectory below refers to

    def alpha(self, t) -> np.ndarray:
        """Spin-dependent displacement -(eta W/2)(e^{-i dm t} - 1)/dm."""
        dm = self.params.delta_m
        t = np.asarray(t, dtype=float)
        return -(self.params.eta_bm * self.omega / 2.0) * (
            np.exp(-1j * dm * t) - 1.0) / dm

    def phase(self, omega: float | None = None) -> float:
        """Accumulated geometric phase at loop closure for carrier omega."""
        om = self.omega if omega is None else omega
        return (self.params.eta_bm * om / 2.0) ** 2 * self.params.tau / self.params.delta_m


def analytic_ms_reference(params: GateParams,
                          omega: float | None = None) -> MsReference:
    """Constant-envelope MS oracle: displacement loop, phase, ideal power."""
    if params.delta_m == 0:
        raise ValueError("analytic reference requires delta_m != 0")
    loops = params.delta_m * params.tau / (2.0 * math.pi)
    if abs(loops - round(loops)) > 1e-6:
        warnings.warn(
            f"delta_m * tau / 2pi = {loops:.6f} is not an integer; "
            "the phase-space loop does not close", stacklevel=2)
    ideal = abs(params.delta_m) / (2.0 * math.sqrt(abs(loops)) * params.eta_bm)
    om = ideal if omega is None else omega
    ref = MsReference(params=params, loops=loops, ideal_rabi=ideal,
                      geometric_phase=0.0, omega=om)
    return replace(ref, geometric_phase=ref.phase(om))


def run_shots(params: GateParams, env: EnvelopeSet, noise: NoiseModel,
              n_shots: int, nbar: float = 0.0,
              fock_cutoff: int = DEFAULT_FOCK_CUTOFF,
              tol: float = 1e-8) -> np.ndarray:
    """Ensemble of final states, one per shot.

    Each shot samples a thermal initial Fock state and a carrier offset
    (see :class:`NoiseModel`), propagates, and closes the shot in the
    laser frame.  Shots sharing an initial Fock state share one
    propagation.  Deterministic under the noise seed; shots are
    independent so evaluation order does not matter.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    _check_env(params, env)
    spec, _ = cached_space(fock_cutoff)
    check_thermal_cutoff(spec, nbar)
    rng = np.random.default_rng(noise.seed)
    eps = (rng.normal(0.0, noise.sigma_carrier, size=n_shots)
           if noise.sigma_carrier > 0 else np.zeros(n_shots))
    if nbar > 0:
        p = nbar / (1.0 + nbar)
        ns = np.floor(np.log1p(-rng.random(n_shots)) / np.log(p)).astype(int)
        ns = np.minimum(ns, spec.fock_cutoff).astype(int)
    else:
        ns = np.zeros(n_shots, dtype=int)

    unique_n = np.unique(ns)
    psi0s = np.zeros((unique_n.size, spec.dim), dtype=complex)
    for k, n in enumerate(unique_n):
        psi0s[k, spec.index(0, 0, int(n))] = 1.0

    tg, om1, om2, net, phi = env.pack()
    finals, status, _ = kernels.ms_propagate_ensemble(
        psi0s, np.zeros(unique_n.size), spec.fock_dim, params.eta_bm,
        params.delta_m, params.delta_g, params.spin_phase, params.rabi_scale,
        tg, om1, om2, net, phi, 0.0, params.tau, tol * 1e-2, tol * 1e-3)
    bad = np.nonzero(status)[0]
    if bad.size:
        raise IntegrationError(
            f"{bad.size} initial state(s) failed to integrate "
            f"(first: n = {unique_n[bad[0]]})", shot=int(bad[0]))

    lookup = {int(n): k for k, n in enumerate(unique_n)}
    states = finals[[lookup[int(n)] for n in ns]]
    if noise.sigma_carrier > 0:
        # collective laser-frame phase: blocks (SS, SD, DS, DD) pick up
        # exp(i eps tau m) with m = -1, 0, 0, +1
        block_sign = np.repeat([-1.0, 0.0, 0.0, 1.0], spec.fock_dim)
        states = states * np.exp(1j * np.outer(eps * params.tau, block_sign))
    return states


def ramsey_contrast(sigma: float, delay: float, n_nodes: int = 61) -> float:
    """Fringe contrast of a pi/2 - delay - pi/2 sequence under carrier noise.

    Simulates the experiment: the bright-state probability
    (1 + cos(eps*delay + phase))/2 is averaged over the Gaussian offset
    distribution (Gauss-Hermite quadrature) and the fringe amplitude fitted
    over a phase scan.
    """
    if sigma == 0:
        return 1.0
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    epsT = sigma * delay * x
    phases = np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False)
    p = 0.5 * (1.0 + np.cos(epsT[:, None] + phases[None, :]))
    fringe = (w[:, None] * p).sum(axis=0) / w.sum()
    design = np.column_stack([np.cos(phases), np.sin(phases),
                              np.ones_like(phases)])
    coef, *_ = np.linalg.lstsq(design, fringe, rcond=None)
    return 2.0 * float(np.hypot(coef[0], coef[1]))


def calibrate_noise(target_contrast_loss: float, delay: float) -> float:
    """Carrier-noise sigma reproducing a Ramsey contrast loss at ``delay``."""
    if not (0.0 < target_contrast_loss < 0.5):
        if target_contrast_loss == 0.0:
            return 0.0
        raise ValueError("target contrast loss must lie in [0, 0.5)")
    if delay <= 0:
        raise ValueError("delay must be positive")

    def loss(sigma):
        return (1.0 - ramsey_contrast(sigma, delay)) - target_contrast_loss

    hi = 6.0 / delay
    if loss(hi) < 0:
        raise NoSolutionError(
            f"contrast loss {target_contrast_loss} unreachable below sigma = {hi}")
    return float(brentq(loss, 0.0, hi, rtol=1e-4, xtol=1e-12))
