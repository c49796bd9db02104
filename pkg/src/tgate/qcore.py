"""Hilbert space, operators, and state utilities for two qubits + one mode.

Basis ordering (the single authoritative definition, used everywhere):

    index(s1, s2, n) = (2*s1 + s2) * (fock_cutoff + 1) + n

with spin labels S -> 0 (ground, bright) and D -> 1 (metastable, dark),
and phonon number n in [0, fock_cutoff].  n varies fastest, so the state
vector is four contiguous Fock blocks in the order SS, SD, DS, DD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CutoffTooSmallError

SPIN_BLOCKS = ("SS", "SD", "DS", "DD")

#: Target Bell state (|SS> - i|DD>)/sqrt(2) in the (SS, SD, DS, DD) spin basis.
BELL_TARGET = np.array([1.0, 0.0, 0.0, -1.0j]) / np.sqrt(2.0)

DEFAULT_FOCK_CUTOFF = 15


@dataclass(frozen=True)
class HilbertSpec:
    """Dimensions and index bookkeeping of the spin-spin-mode space."""

    fock_cutoff: int

    def __post_init__(self):
        if self.fock_cutoff < 2:
            raise ValueError(f"fock_cutoff must be >= 2, got {self.fock_cutoff}")

    @property
    def fock_dim(self) -> int:
        return self.fock_cutoff + 1

    @property
    def dim(self) -> int:
        return 4 * self.fock_dim

    def index(self, s1: int, s2: int, n: int) -> int:
        """Flat index of |s1 s2 n> (s: S=0, D=1)."""
        if not (0 <= s1 <= 1 and 0 <= s2 <= 1 and 0 <= n <= self.fock_cutoff):
            raise ValueError(f"bad basis labels ({s1}, {s2}, {n})")
        return (2 * s1 + s2) * self.fock_dim + n

    def unindex(self, idx: int) -> tuple[int, int, int]:
        """Inverse of :meth:`index`."""
        block, n = divmod(int(idx), self.fock_dim)
        return block >> 1, block & 1, n


@dataclass(frozen=True)
class OperatorSet:
    """Dense operators on the full space.  Immutable and shareable."""

    spec: HilbertSpec
    a: np.ndarray
    a_dagger: np.ndarray
    sigma_plus_1: np.ndarray
    sigma_plus_2: np.ndarray
    sigma_minus_1: np.ndarray
    sigma_minus_2: np.ndarray
    identity: np.ndarray
    # Products used by the MS Hamiltonian, cached once.
    ad_sp1: np.ndarray = field(repr=False, default=None)
    ad_sp2: np.ndarray = field(repr=False, default=None)
    a_sp1: np.ndarray = field(repr=False, default=None)
    a_sp2: np.ndarray = field(repr=False, default=None)


def _single_spin(op2: np.ndarray, ion: int, fock_dim: int) -> np.ndarray:
    """Lift a 2x2 spin operator on one ion to the full space."""
    eye2 = np.eye(2, dtype=complex)
    eyef = np.eye(fock_dim, dtype=complex)
    if ion == 1:
        return np.kron(np.kron(op2, eye2), eyef)
    return np.kron(np.kron(eye2, op2), eyef)


def build_space(fock_cutoff: int) -> tuple[HilbertSpec, OperatorSet]:
    """Construct the spin-spin-mode space and its dense operator set.

    The mode ladder is truncated at ``fock_cutoff``: a annihilates as usual
    and [a, a_dagger] = 1 everywhere except the top Fock row.
    """
    spec = HilbertSpec(fock_cutoff)
    nf = spec.fock_dim

    a_mode = np.zeros((nf, nf), dtype=complex)
    for n in range(1, nf):
        a_mode[n - 1, n] = np.sqrt(n)

    eye4 = np.eye(4, dtype=complex)
    a = np.kron(eye4, a_mode)
    ad = a.conj().T

    # sigma_plus = |D><S| in the (S, D) single-spin basis
    sp = np.zeros((2, 2), dtype=complex)
    sp[1, 0] = 1.0
    sp1 = _single_spin(sp, 1, nf)
    sp2 = _single_spin(sp, 2, nf)

    ops = OperatorSet(
        spec=spec,
        a=a,
        a_dagger=ad,
        sigma_plus_1=sp1,
        sigma_plus_2=sp2,
        sigma_minus_1=sp1.conj().T,
        sigma_minus_2=sp2.conj().T,
        identity=np.eye(spec.dim, dtype=complex),
        ad_sp1=ad @ sp1,
        ad_sp2=ad @ sp2,
        a_sp1=a @ sp1,
        a_sp2=a @ sp2,
    )
    for arr in (ops.a, ops.a_dagger, ops.sigma_plus_1, ops.sigma_plus_2,
                ops.sigma_minus_1, ops.sigma_minus_2, ops.identity,
                ops.ad_sp1, ops.ad_sp2, ops.a_sp1, ops.a_sp2):
        arr.setflags(write=False)
    return spec, ops


def basis_state(spec: HilbertSpec, s1: int, s2: int, n: int) -> np.ndarray:
    """Unit vector |s1 s2 n>."""
    psi = np.zeros(spec.dim, dtype=complex)
    psi[spec.index(s1, s2, n)] = 1.0
    return psi


def sample_thermal_n(nbar: float, rng: np.random.Generator) -> int:
    """Draw a phonon number from the geometric distribution with mean nbar."""
    if nbar < 0:
        raise ValueError("nbar must be >= 0")
    if nbar == 0:
        return 0
    p = nbar / (1.0 + nbar)
    # inverse CDF of P(n) = (1-p) p^n
    u = rng.random()
    return int(np.floor(np.log1p(-u) / np.log(p)))


def check_thermal_cutoff(spec: HilbertSpec, nbar: float, tail_tol: float = 1e-3):
    """Raise if the thermal tail above the cutoff exceeds ``tail_tol``."""
    if nbar == 0:
        return
    p = nbar / (1.0 + nbar)
    tail = p ** (spec.fock_cutoff + 1)
    if tail > tail_tol:
        raise CutoffTooSmallError(
            f"P(n > {spec.fock_cutoff}) = {tail:.3g} exceeds {tail_tol:.0e} "
            f"for nbar = {nbar}; raise the Fock cutoff"
        )


def initial_state(spec: HilbertSpec, nbar: float = 0.0,
                  seed: int | np.random.Generator = 0) -> np.ndarray:
    """Prepared state |S S n> with n sampled thermally (nbar = 0 gives |SS0>)."""
    check_thermal_cutoff(spec, nbar)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = sample_thermal_n(nbar, rng)
    return basis_state(spec, 0, 0, n)


def populations(state: np.ndarray) -> tuple[float, float, float]:
    """Bright-ion-number populations (P0, P1, P2) of a normalized state.

    P2 is the two-ion bright weight (|SS>), P1 the one-bright subspace
    (|SD>, |DS>), and P0 the dark weight (|DD>).
    """
    blocks = np.abs(np.asarray(state).reshape(4, -1)) ** 2
    w = blocks.sum(axis=1)
    return float(w[3]), float(w[1] + w[2]), float(w[0])


def spin_density(state: np.ndarray) -> np.ndarray:
    """Reduced 4x4 spin density matrix (mode traced out)."""
    v = np.asarray(state).reshape(4, -1)
    return v @ v.conj().T


def overlap_fidelity(state: np.ndarray, target_spin_state: np.ndarray) -> float:
    """<target| rho_spin |target> for a pure full state and a 4-d spin target."""
    t = np.asarray(target_spin_state, dtype=complex)
    nrm = np.linalg.norm(t)
    if nrm == 0:
        raise ValueError("target spin state must be nonzero")
    t = t / nrm
    rho = spin_density(state)
    val = float(np.real(t.conj() @ rho @ t))
    return min(max(val, 0.0), 1.0)
