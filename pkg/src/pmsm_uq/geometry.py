"""Cross-section meshing and the dynamic-eccentricity mesh map.

The machine is meshed on a structured polar grid: every region boundary
(magnet edges, slot sides, coil layers, airgap contour) is snapped to a grid
line, so each triangle lies in exactly one region and the interface contour
carries ``n_theta`` equally spaced nodes on both sides.  The stator and rotor
are separate node sets; the two contour rings coincide geometrically but are
only tied together by the coupling constraints.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import MachineSpec

STATOR_IRON, ROTOR_IRON, MAGNET, AIRGAP_STATOR, AIRGAP_ROTOR, COIL, AIR = range(7)
REGION_NAMES = {
    STATOR_IRON: "stator_iron",
    ROTOR_IRON: "rotor_iron",
    MAGNET: "magnet",
    AIRGAP_STATOR: "airgap_stator",
    AIRGAP_ROTOR: "airgap_rotor",
    COIL: "coil",
    AIR: "air",
}
STATOR, ROTOR = 0, 1


class MeshError(ValueError):
    """Geometry that cannot be meshed."""


class EccentricityError(ValueError):
    """Eccentricity that the mesh map cannot represent."""

    def __init__(self, message: str, triangle: int | None = None):
        super().__init__(message)
        self.triangle = triangle


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DomainMesh:
    """Triangulation of one side (stator or rotor) of the interface contour.

    ``group`` holds the magnet index for magnet triangles and the slot index
    for coil triangles (-1 elsewhere); ``coil_layer`` is 0 for the layer next
    to the airgap and 1 for the slot-bottom layer.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    group: np.ndarray
    coil_layer: np.ndarray
    node_radius: np.ndarray
    ring_radii: np.ndarray
    n_theta: int
    contour: np.ndarray
    dirichlet: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def ring(self, index: int) -> np.ndarray:
        """Node ids of ring ``index`` (counted outwards), in angular order."""
        return np.arange(index * self.n_theta, (index + 1) * self.n_theta)

    def signed_areas(self, nodes: np.ndarray | None = None) -> np.ndarray:
        p = self.nodes if nodes is None else nodes
        t = self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True, eq=False)
class EccentricityState:
    """Rotor displacement ``R0`` (m) in direction ``theta0`` (rad).

    ``R0`` may be negative; a negative displacement is the same state as
    ``|R0|`` in direction ``theta0 + pi``.
    """

    displacement: float
    direction: float
    airgap: float

    def __post_init__(self) -> None:
        if not self.airgap > 0:
            raise EccentricityError("mean airgap must be positive")
        if not math.isfinite(self.displacement) or abs(self.displacement) >= self.airgap:
            raise EccentricityError(
                f"|R0| = {abs(self.displacement):.4g} m must be smaller than the airgap "
                f"{self.airgap:.4g} m")

    @classmethod
    def for_machine(cls, spec: MachineSpec, displacement: float = 0.0,
                    direction: float = 0.0) -> "EccentricityState":
        return cls(float(displacement), float(direction), spec.airgap)

    @classmethod
    def from_eccentricity(cls, spec: MachineSpec, eps: float,
                          direction: float = 0.0) -> "EccentricityState":
        return cls(float(eps) * spec.airgap, float(direction), spec.airgap)

    @property
    def eccentricity(self) -> float:
        return abs(self.displacement) / self.airgap

    @property
    def offset(self) -> np.ndarray:
        return np.array([self.displacement * math.cos(self.direction),
                         self.displacement * math.sin(self.direction)])

    def airgap_width(self, arc: np.ndarray, rotor_angle: float = 0.0) -> np.ndarray:
        """Analytic airgap width along the bore at mechanical rotor angle ``rotor_angle``."""
        alpha = np.asarray(arc) - rotor_angle - self.direction
        return self.airgap * (1.0 - self.displacement / self.airgap * np.cos(alpha))


@dataclass(frozen=True, eq=False)
class CoupledMesh:
    stator: DomainMesh
    rotor: DomainMesh
    rotor_reference_nodes: np.ndarray
    rotor_radius: float
    interface_radius: float
    stator_inner_radius: float
    rotor_surface_ring: int
    stator_bore_ring: int
    refinement: int
    eccentricity: EccentricityState | None = None

    @property
    def n_theta(self) -> int:
        """Number of interface nodes on each side of the contour."""
        return self.stator.n_theta

    @property
    def n_triangles(self) -> int:
        return len(self.stator.triangles) + len(self.rotor.triangles)

    def domain(self, which: int) -> DomainMesh:
        return self.stator if which == STATOR else self.rotor

    def global_arrays(self) -> tuple[np.ndarray, ...]:
        """Concatenated (nodes, node_domain, triangles, region, group, layer, tri_domain)."""
        s, r = self.stator, self.rotor
        nodes = np.vstack([s.nodes, r.nodes])
        node_domain = np.r_[np.zeros(s.n_nodes, int), np.ones(r.n_nodes, int)]
        tris = np.vstack([s.triangles, r.triangles + s.n_nodes])
        region = np.r_[s.region, r.region]
        group = np.r_[s.group, r.group]
        layer = np.r_[s.coil_layer, r.coil_layer]
        tri_domain = np.r_[np.zeros(len(s.triangles), int), np.ones(len(r.triangles), int)]
        return nodes, node_domain, tris, region, group, layer, tri_domain

    def airgap_profile(self, arc: np.ndarray) -> np.ndarray:
        """Measured airgap width along rays from the stator centre at angles ``arc``.

        Both the displaced rotor surface and the stator bore are treated as
        the polygons formed by their mesh nodes.
        """
        arc = np.atleast_1d(np.asarray(arc, dtype=float))
        rotor_surface = self.rotor.nodes[self.rotor.ring(self.rotor_surface_ring)]
        bore = self.stator.nodes[self.stator.ring(self.stator_bore_ring)]
        return _ray_polygon_radius(bore, arc) - _ray_polygon_radius(rotor_surface, arc)


def _ray_polygon_radius(poly: np.ndarray, arc: np.ndarray) -> np.ndarray:
    """Distance from the origin to a star-shaped closed polygon along each ray."""
    ang = np.unwrap(np.arctan2(poly[:, 1], poly[:, 0]))
    start = ang[0]
    rel = np.mod(arc - start, 2 * np.pi)
    ang_rel = ang - start
    closed = np.r_[ang_rel, 2 * np.pi]
    idx = np.clip(np.searchsorted(closed, rel, side="right") - 1, 0, len(poly) - 1)
    p0 = poly[idx]
    p1 = poly[(idx + 1) % len(poly)]
    d = np.column_stack([np.cos(arc), np.sin(arc)])
    e = p1 - p0
    # solve t*d = p0 + s*e for t
    den = d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0]
    return (p0[:, 0] * e[:, 1] - p0[:, 1] * e[:, 0]) / den


# --------------------------------------------------------------------------
# mesh generation
# --------------------------------------------------------------------------

@dataclass
class _Band:
    name: str
    r_in: float
    r_out: float
    layers: int
    regions: list[np.ndarray] = field(default_factory=list)


def angular_cells(spec: MachineSpec, refinement: int) -> int:
    m = spec.mesh
    scale = 2 ** refinement
    if spec.slot_count:
        return spec.slot_count * m.cells_per_slot_pitch * scale
    return m.slotless_angular_cells * scale


def slot_cells(spec: MachineSpec, refinement: int) -> list[np.ndarray]:
    """Angular cell indices covered by each slot."""
    n = angular_cells(spec, refinement)
    per = n // spec.slot_count
    width = min(max(round(spec.opening_fraction * per), 1), per - 1)
    lo = (per - width) // 2
    return [np.arange(q * per + lo, q * per + lo + width) for q in range(spec.slot_count)]


def magnet_cells(spec: MachineSpec, refinement: int) -> list[np.ndarray]:
    """Angular cell indices covered by each magnet (one per pole)."""
    n = angular_cells(spec, refinement)
    poles = 2 * spec.pole_pairs
    if n % poles:
        raise MeshError(f"{n} angular cells cannot be split evenly over {poles} poles")
    per = n // poles
    width = min(round(spec.pole_arc_fraction * per), per)
    if width < 1:
        raise MeshError("magnet arc is narrower than one angular cell")
    lo = (per - width) // 2
    return [np.arange(p * per + lo, p * per + lo + width) for p in range(poles)]


def _rings(bands: list[_Band]) -> np.ndarray:
    radii = [bands[0].r_in]
    for b in bands:
        radii.extend(np.linspace(b.r_in, b.r_out, b.layers + 1)[1:])
    return np.asarray(radii)


def _domain(bands: list[_Band], n_theta: int, contour_ring: int,
            dirichlet_ring: int) -> DomainMesh:
    radii = _rings(bands)
    n_rings = len(radii)
    phi = 2 * np.pi * np.arange(n_theta) / n_theta
    rr, pp = np.meshgrid(radii, phi, indexing="ij")
    nodes = np.column_stack([(rr * np.cos(pp)).ravel(), (rr * np.sin(pp)).ravel()])
    node_radius = np.repeat(radii, n_theta)

    tris, region, group, layer = [], [], [], []
    ring = 0
    j = np.arange(n_theta)
    jn = (j + 1) % n_theta
    for band in bands:
        reg, grp, lay = band.regions
        for k in range(band.layers):
            l = ring + k
            n00 = l * n_theta + j
            n01 = l * n_theta + jn
            n10 = (l + 1) * n_theta + j
            n11 = (l + 1) * n_theta + jn
            # two counter-clockwise triangles per polar cell
            tris.append(np.column_stack([n00, n11, n01]))
            tris.append(np.column_stack([n00, n10, n11]))
            for _ in range(2):
                region.append(reg)
                group.append(grp)
                layer.append(lay[k])
        ring += band.layers
    assert ring == n_rings - 1
    # interleave so the two triangles of a cell are adjacent in the ordering
    tris_a = np.stack(tris).reshape(-1, 2, n_theta, 3).transpose(0, 2, 1, 3).reshape(-1, 3)
    def _flat(parts):
        return np.stack(parts).reshape(-1, 2, n_theta).transpose(0, 2, 1).reshape(-1)
    dom = DomainMesh(
        nodes=_frozen(nodes),
        triangles=_frozen(tris_a.astype(np.int64)),
        region=_frozen(_flat(region).astype(np.int8)),
        group=_frozen(_flat(group).astype(np.int32)),
        coil_layer=_frozen(_flat(layer).astype(np.int8)),
        node_radius=_frozen(node_radius),
        ring_radii=_frozen(radii),
        n_theta=n_theta,
        contour=_frozen(np.arange(contour_ring * n_theta, (contour_ring + 1) * n_theta)),
        dirichlet=_frozen(np.arange(dirichlet_ring * n_theta, (dirichlet_ring + 1) * n_theta)),
    )
    areas = dom.signed_areas()
    if np.any(areas <= 0):
        bad = int(np.argmin(areas))
        raise MeshError(f"degenerate triangle {bad} (area {areas[bad]:.3g})")
    return dom


def _band_regions(band: _Band, n_theta: int, base: int,
                  overrides: list[tuple[np.ndarray, int, int]] | None = None,
                  coil_layers: bool = False) -> None:
    reg = np.full(n_theta, base, dtype=np.int8)
    grp = np.full(n_theta, -1, dtype=np.int32)
    for cells, tag, index in overrides or []:
        reg[cells] = tag
        grp[cells] = index
    in_coil = reg == COIL
    lay = []
    for k in range(band.layers):
        row = np.full(n_theta, -1, dtype=np.int8)
        if coil_layers:
            row[in_coil] = 0 if k < band.layers // 2 else 1
        lay.append(row)
    band.regions = [reg, grp, lay]


def build_mesh(spec: MachineSpec, refinement: int = 0) -> CoupledMesh:
    """Mesh the cross-section at the given refinement level.

    Each refinement level doubles the angular and the radial resolution.
    The interface node count is a multiple of the slot count and of 3.
    """
    if refinement < 0:
        raise MeshError("refinement must be >= 0")
    m = spec.mesh
    s = 2 ** refinement
    n = angular_cells(spec, refinement)
    if n % 3:
        raise MeshError(f"interface node count {n} is not divisible by 3")
    r_c = spec.interface_radius

    rotor_bands: list[_Band] = []
    if spec.has_magnets:
        yoke = _Band("rotor_yoke", spec.shaft_radius, spec.magnet_inner_radius, m.layers_rotor_yoke * s)
        mag = _Band("magnet", spec.magnet_inner_radius, spec.rotor_radius, m.layers_magnet * s)
        _band_regions(yoke, n, ROTOR_IRON)
        _band_regions(mag, n, AIR, [(c, MAGNET, p) for p, c in enumerate(magnet_cells(spec, refinement))])
        rotor_bands += [yoke, mag]
    else:
        yoke = _Band("rotor_yoke", spec.shaft_radius, spec.rotor_radius,
                     (m.layers_rotor_yoke + m.layers_magnet) * s)
        _band_regions(yoke, n, ROTOR_IRON)
        rotor_bands.append(yoke)
    gap_r = _Band("rotor_gap", spec.rotor_radius, r_c, m.layers_rotor_gap * s)
    _band_regions(gap_r, n, AIRGAP_ROTOR)
    rotor_bands.append(gap_r)

    gap_s = _Band("stator_gap", r_c, spec.stator_inner_radius, m.layers_stator_gap * s)
    _band_regions(gap_s, n, AIRGAP_STATOR)
    stator_bands = [gap_s]
    if spec.slot_count:
        slot = _Band("slots", spec.stator_inner_radius, spec.slot_bottom_radius, m.layers_slot * s)
        _band_regions(slot, n, STATOR_IRON,
                      [(c, COIL, q) for q, c in enumerate(slot_cells(spec, refinement))],
                      coil_layers=True)
        yoke_s = _Band("stator_yoke", spec.slot_bottom_radius, spec.stator_outer_radius,
                       m.layers_stator_yoke * s)
        _band_regions(yoke_s, n, STATOR_IRON)
        stator_bands += [slot, yoke_s]
    else:
        yoke_s = _Band("stator_yoke", spec.stator_inner_radius, spec.stator_outer_radius,
                       (m.layers_slot + m.layers_stator_yoke) * s)
        _band_regions(yoke_s, n, STATOR_IRON)
        stator_bands.append(yoke_s)

    n_rotor_rings = sum(b.layers for b in rotor_bands) + 1
    n_stator_rings = sum(b.layers for b in stator_bands) + 1
    rotor = _domain(rotor_bands, n, contour_ring=n_rotor_rings - 1, dirichlet_ring=0)
    stator = _domain(stator_bands, n, contour_ring=0, dirichlet_ring=n_stator_rings - 1)
    return CoupledMesh(
        stator=stator,
        rotor=rotor,
        rotor_reference_nodes=rotor.nodes,
        rotor_radius=spec.rotor_radius,
        interface_radius=r_c,
        stator_inner_radius=spec.stator_inner_radius,
        rotor_surface_ring=n_rotor_rings - 1 - gap_r.layers,
        stator_bore_ring=gap_s.layers,
        refinement=refinement,
    )


# --------------------------------------------------------------------------
# eccentricity
# --------------------------------------------------------------------------

def eccentricity_weights(mesh: CoupledMesh) -> np.ndarray:
    """Fraction of the rotor displacement applied to every rotor node.

    1 inside the rotor body, falling linearly with radius to 0 at the
    interface contour.
    """
    r = mesh.rotor.node_radius
    w = (mesh.interface_radius - r) / (mesh.interface_radius - mesh.rotor_radius)
    return np.clip(w, 0.0, 1.0)


def apply_eccentricity(mesh: CoupledMesh, ecc: EccentricityState) -> CoupledMesh:
    """Map the nominal mesh onto a rotor displaced by ``ecc``, without remeshing.

    The rotor body is translated rigidly, the rotor-side airgap band is
    stretched, and the contour and the whole stator stay in place.  Raises
    :class:`EccentricityError` naming the first inverted rotor triangle.
    """
    if ecc.displacement == 0.0:
        return dataclasses.replace(mesh, eccentricity=ecc)
    offset = ecc.offset
    w = eccentricity_weights(mesh)
    nodes = mesh.rotor_reference_nodes + w[:, None] * offset[None, :]
    areas = mesh.rotor.signed_areas(nodes)
    if np.any(areas <= 0):
        bad = int(np.flatnonzero(areas <= 0)[0])
        raise EccentricityError(
            f"eccentricity {ecc.eccentricity:.3f} inverts rotor triangle {bad}", triangle=bad)
    rotor = dataclasses.replace(mesh.rotor, nodes=_frozen(nodes))
    return dataclasses.replace(mesh, rotor=rotor, eccentricity=ecc)


def max_displacement(mesh: CoupledMesh) -> float:
    """Largest |R0| the rotor-side airgap band can absorb."""
    return mesh.interface_radius - mesh.rotor_radius


# --------------------------------------------------------------------------
# plain-text export
# --------------------------------------------------------------------------

def write_mesh(mesh: CoupledMesh, path: str | Path) -> None:
    """Write node and triangle tables.

    Layout::

        # pmsm_uq mesh v1
        nodes <N>
        <id> <x> <y> <domain>            (domain 0 = stator, 1 = rotor)
        triangles <T>
        <id> <n0> <n1> <n2> <region> <group> <layer> <domain>
    """
    nodes, node_domain, tris, region, group, layer, tri_domain = mesh.global_arrays()
    with open(path, "w") as fh:
        fh.write("# pmsm_uq mesh v1\n")
        fh.write("# regions: " + " ".join(f"{k}={v}" for k, v in REGION_NAMES.items()) + "\n")
        fh.write(f"nodes {len(nodes)}\n")
        for i, ((x, y), d) in enumerate(zip(nodes, node_domain)):
            fh.write(f"{i} {float(x)!r} {float(y)!r} {d}\n")
        fh.write(f"triangles {len(tris)}\n")
        for i in range(len(tris)):
            a, b, c = tris[i]
            fh.write(f"{i} {a} {b} {c} {region[i]} {group[i]} {layer[i]} {tri_domain[i]}\n")


def read_mesh_tables(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read back ``(nodes, triangles)`` tables written by :func:`write_mesh`."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    n_nodes = int(lines[0].split()[1])
    node_rows = np.array([ln.split() for ln in lines[1:1 + n_nodes]], dtype=float)
    tri_head = 1 + n_nodes
    n_tris = int(lines[tri_head].split()[1])
    tri_rows = np.array([ln.split() for ln in lines[tri_head + 1:tri_head + 1 + n_tris]], dtype=np.int64)
    return node_rows[:, 1:4], tri_rows[:, 1:8]
