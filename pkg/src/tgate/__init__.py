"""Transport-enabled Molmer-Sorensen gate simulator."""

__version__ = "0.1.0"

from .qcore import BELL_TARGET, DEFAULT_FOCK_CUTOFF, build_space  # noqa: F401
from .dynamics import GateParams, NoiseModel  # noqa: F401
from .envelopes import EnvelopeSet  # noqa: F401
