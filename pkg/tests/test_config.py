from __future__ import annotations

import math

import pytest

from pmsm_uq.config import (ConfigError, MachineSpec, annulus_machine, default_machine, load_machine,
                            machine_from_dict)


def test_default_machine_matches_documented_layout(spec):
    assert spec.slot_count == 72
    assert spec.pole_pairs == 6
    assert spec.axial_length == pytest.approx(0.010)
    assert spec.relative_permeability == 500
    assert spec.airgap == pytest.approx(1e-3)
    assert spec.rotor_radius < spec.interface_radius < spec.stator_inner_radius


def test_hash_is_stable_and_sensitive(spec):
    assert spec.config_hash() == default_machine().config_hash()
    assert spec.replace(dc_phase_resistance=0.6).config_hash() != spec.config_hash()


@pytest.mark.parametrize("changes, field", [
    ({"rotor_radius": 0.05}, "geometry"),
    ({"axial_length": 0.0}, "geometry.axial_length"),
    ({"relative_permeability": 0.5}, "materials.relative_permeability"),
    ({"interface_fraction": 1.0}, "geometry.interface_fraction"),
    ({"pole_pairs": 2.5}, "drive.pole_pairs"),
    ({"electrical_angular_frequency": math.nan}, "drive.electrical_angular_frequency"),
])
def test_invalid_fields_are_named(changes, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        MachineSpec(**changes)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match=r"drive\.bogus"):
        machine_from_dict({"drive": {"bogus": 1}})
    with pytest.raises(ConfigError, match="extra"):
        machine_from_dict({"extra": {}})
    with pytest.raises(ConfigError, match=r"mesh\.layers_slot"):
        machine_from_dict({"mesh": {"layers_slot": 3}})


def test_load_machine_from_file(tmp_path):
    path = tmp_path / "m.toml"
    path.write_text("[drive]\nphase_current_amplitude = 3.0\n")
    spec = load_machine(path)
    assert spec.phase_current_amplitude == 3.0
    assert spec.pole_pairs == 6
    with pytest.raises(ConfigError):
        load_machine(tmp_path / "missing.toml")
    path.write_text("[drive\n")
    with pytest.raises(ConfigError):
        load_machine(path)


def test_annulus_machine_is_degenerate():
    s = annulus_machine()
    assert s.slot_count == 0 and not s.has_magnets
