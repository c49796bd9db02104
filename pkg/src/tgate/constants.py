"""Physical constants (SI) used across the package.

All internal quantities are SI: positions in meters, times in seconds,
frequencies as angular frequencies (rad/s).  Config files and CLI output
use human units (um, us, kHz) and convert at the boundary.
"""

import math

ELEMENTARY_CHARGE = 1.602176634e-19  # C
EPSILON_0 = 8.8541878128e-12  # F/m
ATOMIC_MASS = 1.66053906660e-27  # kg

# 40Ca+ (neutral-atom mass; the missing electron is negligible here)
CA40_MASS = 39.962590850 * ATOMIC_MASS

TWO_PI = 2.0 * math.pi


def ion_spacing(omega_com: float, mass: float = CA40_MASS) -> float:
    """Equilibrium separation of two ions in a common harmonic well.

    Coulomb repulsion balances the restoring force at
    d = (e^2 / (2 pi eps0 m w^2))^(1/3).
    """
    if omega_com <= 0:
        raise ValueError("omega_com must be positive")
    d3 = ELEMENTARY_CHARGE**2 / (TWO_PI * EPSILON_0 * mass * omega_com**2)
    return d3 ** (1.0 / 3.0)
