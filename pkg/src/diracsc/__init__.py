"""Semiclassical spin-orbit dynamics for the Dirac and Pauli equations.

Classical flows of the relativistic and nonrelativistic Hamiltonians with
jointly transported SU(2) spin, periodic orbits, regularised trace formulae,
semiclassical kernels and the nonrelativistic and strong-coupling limits.
"""
__version__ = "0.1.0"

from ._backend import BACKEND, get_backend  # noqa: E402
from .dynamics import Tolerances, Trajectory, connect, flow, morse_index, vanvleck  # noqa: E402
from .errors import DiracSCError  # noqa: E402
from .fields import FieldConfig, ParticleParams, eval_fields, pauli_symbols, symbol_dirac  # noqa: E402
from .orbits import PeriodicOrbit, find_periodic, orbit_amplitude  # noqa: E402
from .spin import bmt, eta_phase, transport_spin  # noqa: E402

__all__ = [
    "__version__", "BACKEND", "get_backend", "Tolerances", "Trajectory", "connect",
    "flow", "morse_index", "vanvleck", "DiracSCError", "FieldConfig", "ParticleParams",
    "eval_fields", "pauli_symbols", "symbol_dirac", "PeriodicOrbit", "find_periodic",
    "orbit_amplitude", "bmt", "eta_phase", "transport_spin",
]
