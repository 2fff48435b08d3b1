"""Torque harmonics of a permanent-magnet synchronous machine under dynamic rotor
eccentricity, with Monte Carlo and polynomial-chaos uncertainty quantification."""
from __future__ import annotations

__version__ = "0.1.0"

from .config import MachineSpec, annulus_machine, default_machine, load_machine  # noqa: E402
from .geometry import EccentricityState, apply_eccentricity, build_mesh  # noqa: E402
from .simulation import MachineModel  # noqa: E402

__all__ = ["EccentricityState", "MachineModel", "MachineSpec", "annulus_machine", "apply_eccentricity",
           "build_mesh", "default_machine", "load_machine"]
