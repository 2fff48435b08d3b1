"""Machine description and config-file loading.

A machine is described by a TOML file with the sections ``geometry``,
``magnets``, ``slots``, ``materials``, ``drive`` and ``mesh``.  Every field is
validated on load; errors name the offending field as ``section.key``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

MU0 = 4e-7 * math.pi
N_PHASES = 3


class ConfigError(ValueError):
    """Invalid machine or run configuration."""


@dataclass(frozen=True)
class MeshSettings:
    cells_per_slot_pitch: int = 6
    slotless_angular_cells: int = 96
    layers_rotor_yoke: int = 3
    layers_magnet: int = 2
    layers_rotor_gap: int = 8
    layers_stator_gap: int = 2
    layers_slot: int = 4
    layers_stator_yoke: int = 2


@dataclass(frozen=True)
class MachineSpec:
    """Parametric cross-section, materials, winding and drive of the machine.

    Radii are measured from the stator centre.  ``rotor_radius`` is the outer
    surface of the magnets; the magnets sit on an iron yoke that extends down
    to ``shaft_radius`` where the vector potential is fixed to zero.
    """

    shaft_radius: float = 0.025
    rotor_radius: float = 0.044
    stator_inner_radius: float = 0.045
    stator_outer_radius: float = 0.065
    axial_length: float = 0.010
    interface_fraction: float = 0.8

    pole_arc_fraction: float = 11.0 / 12.0
    magnet_thickness: float = 0.004
    remanent_flux_density: float = 1.1
    recoil_permeability: float = 1.05

    slots_per_pole_per_phase: int = 2
    opening_fraction: float = 1.0 / 3.0
    slot_depth: float = 0.010
    coil_pitch: int = 5
    turns_per_coil_side: int = 10

    relative_permeability: float = 500.0

    pole_pairs: int = 6
    phase_current_amplitude: float = 13.57
    current_angle: float = -1.789
    electrical_angular_frequency: float = 100.0 * math.pi
    dc_phase_resistance: float = 0.5

    mesh: MeshSettings = field(default_factory=MeshSettings)

    def __post_init__(self) -> None:
        validate(self)

    # derived quantities -------------------------------------------------
    @property
    def airgap(self) -> float:
        """Mean mechanical airgap width."""
        return self.stator_inner_radius - self.rotor_radius

    @property
    def interface_radius(self) -> float:
        return self.rotor_radius + self.interface_fraction * self.airgap

    @property
    def magnet_inner_radius(self) -> float:
        return self.rotor_radius - self.magnet_thickness

    @property
    def slot_bottom_radius(self) -> float:
        return self.stator_inner_radius + self.slot_depth

    @property
    def slot_count(self) -> int:
        return self.slots_per_pole_per_phase * N_PHASES * 2 * self.pole_pairs

    @property
    def has_magnets(self) -> bool:
        return self.pole_arc_fraction > 0 and self.magnet_thickness > 0

    @property
    def mechanical_angular_frequency(self) -> float:
        return self.electrical_angular_frequency / self.pole_pairs

    def replace(self, **changes: Any) -> "MachineSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Short stable hash of every field, used to tag output files."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS: dict[str, tuple[str, ...]] = {
    "geometry": ("shaft_radius", "rotor_radius", "stator_inner_radius",
                 "stator_outer_radius", "axial_length", "interface_fraction"),
    "magnets": ("pole_arc_fraction", "magnet_thickness",
                "remanent_flux_density", "recoil_permeability"),
    "slots": ("slots_per_pole_per_phase", "opening_fraction", "slot_depth",
              "coil_pitch", "turns_per_coil_side"),
    "materials": ("relative_permeability",),
    "drive": ("pole_pairs", "phase_current_amplitude", "current_angle",
              "electrical_angular_frequency", "dc_phase_resistance"),
}
_SECTION_OF = {key: sec for sec, keys in _SECTIONS.items() for key in keys}
_INT_FIELDS = {"slots_per_pole_per_phase", "coil_pitch", "turns_per_coil_side",
               "pole_pairs"}


def _where(name: str) -> str:
    return f"{_SECTION_OF.get(name, 'mesh')}.{name}"


def validate(spec: MachineSpec) -> None:
    """Raise :class:`ConfigError` if the machine is geometrically inconsistent."""
    for f in dataclasses.fields(spec):
        if f.name == "mesh":
            continue
        value = getattr(spec, f.name)
        if f.name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{_where(f.name)}: expected an integer, got {value!r}")
        elif isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{_where(f.name)}: expected a finite number, got {value!r}")

    if not 0 < spec.shaft_radius:
        raise ConfigError("geometry.shaft_radius: must be positive")
    if not (spec.rotor_radius < spec.stator_inner_radius < spec.stator_outer_radius):
        raise ConfigError(
            "geometry: radii must satisfy rotor_radius < stator_inner_radius < stator_outer_radius")
    if not spec.shaft_radius < spec.rotor_radius:
        raise ConfigError("geometry.shaft_radius: must be smaller than rotor_radius")
    if spec.axial_length <= 0:
        raise ConfigError("geometry.axial_length: must be positive")
    if not 0 < spec.interface_fraction < 1:
        raise ConfigError("geometry.interface_fraction: must lie strictly between 0 and 1")
    if spec.relative_permeability < 1:
        raise ConfigError("materials.relative_permeability: must be >= 1")
    if spec.recoil_permeability < 1:
        raise ConfigError("magnets.recoil_permeability: must be >= 1")
    if not 0 <= spec.pole_arc_fraction <= 1:
        raise ConfigError("magnets.pole_arc_fraction: must lie in [0, 1]")
    if spec.magnet_thickness < 0 or spec.rotor_radius - spec.magnet_thickness <= spec.shaft_radius:
        raise ConfigError("magnets.magnet_thickness: magnets must fit between shaft and rotor surface")
    if spec.pole_pairs < 1:
        raise ConfigError("drive.pole_pairs: must be >= 1")
    if spec.slots_per_pole_per_phase < 0:
        raise ConfigError("slots.slots_per_pole_per_phase: must be >= 0")
    if spec.slots_per_pole_per_phase > 0:
        if not 0 < spec.opening_fraction < 1:
            raise ConfigError("slots.opening_fraction: must lie strictly between 0 and 1")
        if spec.slot_depth <= 0 or spec.stator_inner_radius + spec.slot_depth >= spec.stator_outer_radius:
            raise ConfigError("slots.slot_depth: slots must end inside the stator yoke")
        if not 1 <= spec.coil_pitch <= spec.slot_count:
            raise ConfigError("slots.coil_pitch: must lie in [1, slot count]")
        if spec.turns_per_coil_side < 1:
            raise ConfigError("slots.turns_per_coil_side: must be >= 1")
    if spec.electrical_angular_frequency <= 0:
        raise ConfigError("drive.electrical_angular_frequency: must be positive")
    if spec.dc_phase_resistance < 0:
        raise ConfigError("drive.dc_phase_resistance: must be >= 0")

    m = spec.mesh
    for f in dataclasses.fields(m):
        value = getattr(m, f.name)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(f"mesh.{f.name}: expected a positive integer, got {value!r}")
    if m.layers_slot % 2:
        raise ConfigError("mesh.layers_slot: must be even (two coil layers per slot)")
    if m.slotless_angular_cells % 3:
        raise ConfigError("mesh.slotless_angular_cells: must be divisible by 3")
    if spec.slots_per_pole_per_phase > 0 and (spec.slot_count * m.cells_per_slot_pitch) % 3:
        raise ConfigError("mesh.cells_per_slot_pitch: interface node count must be divisible by 3")


def machine_from_dict(data: dict[str, Any]) -> MachineSpec:
    """Build a :class:`MachineSpec` from the nested mapping of a config file."""
    known = set(_SECTIONS) | {"mesh"}
    for section in data:
        if section not in known:
            raise ConfigError(f"{section}: unknown section")
    flat: dict[str, Any] = {}
    for section, keys in _SECTIONS.items():
        values = data.get(section, {})
        if not isinstance(values, dict):
            raise ConfigError(f"{section}: expected a table")
        for key, value in values.items():
            if key not in keys:
                raise ConfigError(f"{section}.{key}: unknown field")
            flat[key] = value
    mesh_values = data.get("mesh", {})
    mesh_fields = {f.name for f in dataclasses.fields(MeshSettings)}
    for key in mesh_values:
        if key not in mesh_fields:
            raise ConfigError(f"mesh.{key}: unknown field")
    return MachineSpec(mesh=MeshSettings(**mesh_values), **flat)


def load_machine(path: str | Path) -> MachineSpec:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read machine config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return machine_from_dict(data)


def default_machine() -> MachineSpec:
    """The checked-in default machine."""
    text = resources.files("pmsm_uq").joinpath("data/default_machine.toml").read_text()
    return machine_from_dict(tomllib.loads(text))


def annulus_machine(inner_radius: float = 0.01, outer_radius: float = 0.04) -> MachineSpec:
    """Slotless, magnetless machine used as a coaxial-annulus test problem.

    The meshed annulus spans ``inner_radius`` to ``outer_radius``; the
    interface contour sits in the middle of the (nominal) airgap.
    """
    span = outer_radius - inner_radius
    return MachineSpec(
        shaft_radius=inner_radius,
        rotor_radius=inner_radius + 0.4 * span,
        stator_inner_radius=inner_radius + 0.6 * span,
        stator_outer_radius=outer_radius,
        axial_length=1.0,
        interface_fraction=0.5,
        pole_arc_fraction=0.0,
        magnet_thickness=0.0,
        slots_per_pole_per_phase=0,
        phase_current_amplitude=0.0,
    )
