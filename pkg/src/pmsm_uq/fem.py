"""Linear-triangle magnetostatic assembly.

Degrees of freedom are ``a_i = A_z(x_i) * l_z`` (Weber), i.e. the shape
functions are ``N_i / l_z e_z``.  With that scaling the stiffness carries a
factor ``nu / l_z``, current sources are plain ampere-turns per node and the
flux linkage of a phase is ``X_str.T @ a``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .config import MU0, N_PHASES, MachineSpec
from .geometry import (AIR, AIRGAP_ROTOR, AIRGAP_STATOR, COIL, MAGNET, ROTOR,
                       ROTOR_IRON, STATOR, STATOR_IRON, CoupledMesh, DomainMesh,
                       angular_cells, magnet_cells)


class AssemblyError(ValueError):
    pass


def gradient_coefficients(nodes: np.ndarray, triangles: np.ndarray):
    """Return ``(b, c, area2)`` with ``grad N_i = (b_i, c_i) / area2``."""
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    b = np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 1] - p0[:, 1], p0[:, 1] - p1[:, 1]])
    c = np.column_stack([p2[:, 0] - p1[:, 0], p0[:, 0] - p2[:, 0], p1[:, 0] - p0[:, 0]])
    area2 = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    return b, c, area2


def element_stiffness(points: np.ndarray, nu: float = 1.0, axial_length: float = 1.0) -> np.ndarray:
    """3x3 stiffness of a single triangle."""
    b, c, area2 = gradient_coefficients(np.asarray(points, float), np.array([[0, 1, 2]]))
    if area2[0] <= 0:
        raise AssemblyError("triangle 0 has non-positive area")
    return nu / axial_length * (np.outer(b[0], b[0]) + np.outer(c[0], c[0])) / (2 * area2[0])


def _canonical_sum(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, n: int) -> sp.csr_matrix:
    """Sum duplicate COO entries in an order that does not depend on input order."""
    order = np.lexsort((vals, cols, rows))
    r, c, v = rows[order], cols[order], vals[order]
    if len(r) == 0:
        return sp.csr_matrix((n, n))
    new = np.r_[True, (r[1:] != r[:-1]) | (c[1:] != c[:-1])]
    starts = np.flatnonzero(new)
    summed = np.add.reduceat(v, starts)
    return sp.csr_matrix((summed, (r[starts], c[starts])), shape=(n, n))


def assemble_stiffness(nodes: np.ndarray, triangles: np.ndarray, nu: np.ndarray | float,
                       axial_length: float) -> sp.csr_matrix:
    """Assemble ``K_ij = nu / l_z * int grad N_i . grad N_j`` over all triangles."""
    b, c, area2 = gradient_coefficients(nodes, triangles)
    if np.any(area2 <= 0):
        bad = int(np.flatnonzero(area2 <= 0)[0])
        raise AssemblyError(f"triangle {bad} has non-positive area")
    nu = np.broadcast_to(np.asarray(nu, float), (len(triangles),))
    if np.any(nu <= 0):
        raise AssemblyError("reluctivity must be positive")
    scale = nu / axial_length / (2 * area2)
    local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) * scale[:, None, None]
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return _canonical_sum(rows, cols, local.ravel(), len(nodes))


def reluctivity(spec: MachineSpec, region: np.ndarray) -> np.ndarray:
    nu = np.full(len(region), 1.0 / MU0)
    iron = (region == STATOR_IRON) | (region == ROTOR_IRON)
    nu[iron] = 1.0 / (MU0 * spec.relative_permeability)
    nu[region == MAGNET] = 1.0 / (MU0 * spec.recoil_permeability)
    return nu


# --------------------------------------------------------------------------
# sources
# --------------------------------------------------------------------------

# 60-degree phase belts along the bore: A+, C-, B+, A-, C+, B-
_BELTS = ((0, 1), (2, -1), (1, 1), (0, -1), (2, 1), (1, -1))


def winding_layout(spec: MachineSpec) -> tuple[np.ndarray, np.ndarray]:
    """Double-layer integer-slot layout.

    Returns ``(phase, sign)`` arrays of shape ``(slots, 2)``; column 0 is the
    layer next to the airgap.  A coil starting in the top layer of slot ``q``
    returns in the bottom layer of slot ``q + coil_pitch``.
    """
    q_total = spec.slot_count
    if q_total == 0:
        return np.zeros((0, 2), int), np.zeros((0, 2), int)
    spp = spec.slots_per_pole_per_phase
    if q_total != spp * N_PHASES * 2 * spec.pole_pairs:
        raise AssemblyError("winding layout does not match the slot count")
    phase = np.zeros((q_total, 2), int)
    sign = np.zeros((q_total, 2), int)
    for q in range(q_total):
        ph, sg = _BELTS[(q // spp) % 6]
        phase[q, 0], sign[q, 0] = ph, sg
        back = (q + spec.coil_pitch) % q_total
        phase[back, 1], sign[back, 1] = ph, -sg
    return phase, sign


def winding_matrix(spec: MachineSpec, dom: DomainMesh,
                   layout: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Winding function ``X_str`` (nodes x phases).

    Each coil side carries ``turns_per_coil_side`` conductors spread uniformly
    over its area, so ``X[:, k] @ 1`` over one coil side is +-turns.
    """
    phase, sign = winding_layout(spec) if layout is None else layout
    X = np.zeros((dom.n_nodes, N_PHASES))
    coil = np.flatnonzero(dom.region == COIL)
    if len(coil) == 0:
        return X
    slots = dom.group[coil]
    layers = dom.coil_layer[coil]
    if slots.max() >= len(phase):
        raise AssemblyError("mesh has more slots than the winding layout")
    _, _, area2 = gradient_coefficients(dom.nodes, dom.triangles[coil])
    area = area2 / 2
    side = slots * 2 + layers
    side_area = np.bincount(side, weights=area, minlength=2 * len(phase))
    density = spec.turns_per_coil_side / side_area[side]
    ph = phase[slots, layers]
    sg = sign[slots, layers]
    contrib = (sg * density * area / 3)
    for k in range(3):
        np.add.at(X, (dom.triangles[coil, k], ph), contrib)
    return X


def phase_currents(spec: MachineSpec, t: np.ndarray | float) -> np.ndarray:
    """Balanced three-phase currents, shape ``(len(t), 3)``."""
    t = np.atleast_1d(np.asarray(t, float))
    offsets = np.array([0.0, -2 * np.pi / 3, -4 * np.pi / 3])
    arg = spec.electrical_angular_frequency * t[:, None] + offsets[None, :] + spec.current_angle
    return spec.phase_current_amplitude * np.cos(arg)


def assemble_current_source(spec: MachineSpec, dom: DomainMesh, currents: np.ndarray,
                            layout: tuple[np.ndarray, np.ndarray] | None = None):
    """Return ``(j_src, X_str)`` for the phase currents ``currents`` (length 3)."""
    currents = np.asarray(currents, float)
    if currents.shape != (N_PHASES,):
        raise AssemblyError("expected one current per phase")
    X = winding_matrix(spec, dom, layout)
    return X @ currents, X


def magnet_orientations(spec: MachineSpec, refinement: int) -> np.ndarray:
    """Parallel magnetisation direction of every magnet, alternating N/S."""
    cells = magnet_cells(spec, refinement)
    n_theta = angular_cells(spec, refinement)
    dirs = np.zeros((len(cells), 2))
    for p, c in enumerate(cells):
        centre = (c[0] + c[-1] + 1) / 2 * 2 * np.pi / n_theta
        dirs[p] = (-1) ** p * np.array([np.cos(centre), np.sin(centre)])
    return dirs


def magnet_remanence(dom: DomainMesh, orientations: np.ndarray, b_rem: float) -> np.ndarray:
    """Per-triangle remanence vectors (T x 2); zero outside magnets."""
    mag = np.flatnonzero(dom.region == MAGNET)
    out = np.zeros((len(dom.triangles), 2))
    if len(mag) == 0:
        return out
    idx = dom.group[mag]
    orientations = np.asarray(orientations, float)
    if idx.max() >= len(orientations):
        raise AssemblyError(f"magnet {idx.max()} has no orientation")
    out[mag] = b_rem * orientations[idx]
    return out


def assemble_magnet_source(nodes: np.ndarray, triangles: np.ndarray, b_rem: np.ndarray,
                           nu: np.ndarray | float) -> np.ndarray:
    """``j_pm,i = int nu B_rem . curl N_i`` with ``curl N = (dN/dy, -dN/dx)``."""
    b, c, area2 = gradient_coefficients(nodes, triangles)
    nu = np.broadcast_to(np.asarray(nu, float), (len(triangles),))
    bx = b_rem[:, 0] * nu
    by = b_rem[:, 1] * nu
    local = 0.5 * (bx[:, None] * c - by[:, None] * b)
    out = np.zeros(len(nodes))
    for k in range(3):
        np.add.at(out, triangles[:, k], local[:, k])
    return out


# --------------------------------------------------------------------------
# per-domain systems
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DomainSystem:
    """Assembled system of one domain.

    ``K`` is the full (unconstrained) stiffness; ``free`` lists the DoFs left
    after Dirichlet elimination.  ``X`` maps phase currents to node sources
    (stator only, zero columns otherwise) and ``j_pm`` is the magnet source.
    """

    mesh: DomainMesh
    K: sp.csr_matrix
    nu: np.ndarray
    X: np.ndarray
    j_pm: np.ndarray
    free: np.ndarray
    axial_length: float

    @property
    def K_free(self) -> sp.csr_matrix:
        return self.K[self.free][:, self.free].tocsr()

    def source(self, currents: np.ndarray | None = None) -> np.ndarray:
        f = self.j_pm.copy()
        if currents is not None:
            f += self.X @ np.asarray(currents, float)
        return f


def domain_system(spec: MachineSpec, mesh: CoupledMesh, which: int,
                  nu: np.ndarray | None = None, dirichlet: bool = True,
                  extra_source: np.ndarray | None = None) -> DomainSystem:
    """Assemble stiffness and sources of the stator (``which=0``) or rotor (``1``)."""
    dom = mesh.domain(which)
    nu = reluctivity(spec, dom.region) if nu is None else np.broadcast_to(nu, (len(dom.triangles),))
    K = assemble_stiffness(dom.nodes, dom.triangles, nu, spec.axial_length)
    if which == STATOR:
        X = winding_matrix(spec, dom)
        j_pm = np.zeros(dom.n_nodes)
    else:
        X = np.zeros((dom.n_nodes, N_PHASES))
        if spec.has_magnets and spec.remanent_flux_density != 0:
            brem = magnet_remanence(dom, magnet_orientations(spec, mesh.refinement),
                                    spec.remanent_flux_density)
            j_pm = assemble_magnet_source(dom.nodes, dom.triangles, brem, nu)
        else:
            j_pm = np.zeros(dom.n_nodes)
    if extra_source is not None:
        j_pm = j_pm + extra_source
    fixed = dom.dirichlet if dirichlet else np.zeros(0, int)
    free = np.setdiff1d(np.arange(dom.n_nodes), fixed)
    return DomainSystem(dom, K, np.asarray(nu), X, j_pm, free, spec.axial_length)


def write_matrix(K: sp.spmatrix, path: str | Path) -> None:
    """Export a sparse matrix in Matrix Market coordinate text format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(K), precision=17)


__all__ = [
    "AIR", "AIRGAP_ROTOR", "AIRGAP_STATOR", "AssemblyError", "DomainSystem", "ROTOR",
    "STATOR", "assemble_current_source", "assemble_magnet_source", "assemble_stiffness",
    "domain_system", "element_stiffness", "magnet_orientations", "magnet_remanence",
    "phase_currents", "reluctivity", "winding_layout", "winding_matrix", "write_matrix",
]
