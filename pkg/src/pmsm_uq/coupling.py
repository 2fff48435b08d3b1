"""Moving-band coupling of the stator and rotor meshes.

The rotor mesh turns rigidly by ``NODES_PER_STEP`` contour nodes between time
steps, so contour nodes always coincide and continuity of ``A_z`` reduces to
node-to-node constraints ``P_s.T a_s + P_r.T a_r = 0`` enforced by Lagrange
multipliers.  :func:`solve_step` solves the full saddle-point system directly.
:func:`run_period` produces the same solution through static condensation:
each domain is reduced once to a dense Schur complement on its contour nodes,
after which every step is a small dense SPD solve.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import MachineSpec
from .fem import DomainSystem, phase_currents
from .geometry import CoupledMesh

NODES_PER_STEP = 3


class CouplingError(RuntimeError):
    """Singular coupled system or inconsistent interface."""


@dataclass(frozen=True, eq=False)
class InterfaceCoupling:
    """Projectors for one rotor position.

    Constraint ``k`` ties rotor contour node ``k`` to stator contour node
    ``(k + shift) % n``.  ``P_s`` has +1 and ``P_r`` has -1 entries.
    """

    P_s: sp.csr_matrix
    P_r: sp.csr_matrix
    step: int
    shift: int
    n_interface: int
    nodes_per_step: int = NODES_PER_STEP

    @property
    def steps_per_revolution(self) -> int:
        return self.n_interface // self.nodes_per_step

    def matching(self) -> np.ndarray:
        """Stator contour position matched to each rotor contour position."""
        return (np.arange(self.n_interface) + self.shift) % self.n_interface


def build_projectors(mesh: CoupledMesh, step: int, nodes_per_step: int = NODES_PER_STEP) -> InterfaceCoupling:
    sc, rc = mesh.stator.contour, mesh.rotor.contour
    if len(sc) != len(rc):
        raise CouplingError(f"contour node counts differ: stator {len(sc)}, rotor {len(rc)}")
    n = len(sc)
    if n % nodes_per_step:
        raise CouplingError(f"{n} contour nodes cannot be stepped by {nodes_per_step}")
    shift = (nodes_per_step * step) % n
    k = np.arange(n)
    P_s = sp.csr_matrix((np.ones(n), (sc[(k + shift) % n], k)), shape=(mesh.stator.n_nodes, n))
    P_r = sp.csr_matrix((-np.ones(n), (rc[k], k)), shape=(mesh.rotor.n_nodes, n))
    return InterfaceCoupling(P_s, P_r, step, shift, n, nodes_per_step)


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Full DoF vectors of both domains (Wb) and the interface multipliers."""

    a_s: np.ndarray
    a_r: np.ndarray
    lam: np.ndarray
    time: float
    rotor_angle: float
    step: int = 0

    def constraint_residual(self, coupling: InterfaceCoupling) -> float:
        r = coupling.P_s.T @ self.a_s + coupling.P_r.T @ self.a_r
        return float(np.max(np.abs(r))) if len(r) else 0.0


def saddle_matrix(stator: DomainSystem, rotor: DomainSystem, coupling: InterfaceCoupling) -> sp.csc_matrix:
    """Block matrix ``[[K_s, 0, P_s], [0, K_r, P_r], [P_s.T, P_r.T, 0]]`` on free DoFs."""
    Ks = stator.K_free
    Kr = rotor.K_free
    Ps = coupling.P_s[stator.free]
    Pr = coupling.P_r[rotor.free]
    return sp.bmat([[Ks, None, Ps], [None, Kr, Pr], [Ps.T, Pr.T, None]], format="csc")


def solve_step(stator: DomainSystem, rotor: DomainSystem, coupling: InterfaceCoupling,
               currents: np.ndarray | None = None, time: float = 0.0,
               rotor_angle: float | None = None, tol: float = 1e-10) -> FieldSolution:
    """Assemble and solve the coupled saddle-point system for one rotor position."""
    n_s, n_r = len(stator.free), len(rotor.free)
    A = saddle_matrix(stator, rotor, coupling)
    rhs = np.r_[stator.source(currents)[stator.free], rotor.source()[rotor.free],
                np.zeros(coupling.n_interface)]
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise CouplingError(f"coupled system is singular at step {coupling.step}: {exc}") from exc
    sol = lu.solve(rhs)
    # two sweeps of iterative refinement recover the digits lost to the
    # wide spread of reluctivities between iron and air
    for _ in range(2):
        sol += lu.solve(rhs - A @ sol)
    if not np.all(np.isfinite(sol)):
        raise CouplingError(f"coupled system is singular at step {coupling.step}")
    res = np.linalg.norm(A @ sol - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > tol * scale:
        raise CouplingError(f"step {coupling.step}: relative residual {res / scale:.2e} exceeds {tol:.0e}")
    a_s = np.zeros(stator.mesh.n_nodes)
    a_r = np.zeros(rotor.mesh.n_nodes)
    a_s[stator.free] = sol[:n_s]
    a_r[rotor.free] = sol[n_s:n_s + n_r]
    if rotor_angle is None:
        rotor_angle = 2 * np.pi * coupling.shift / coupling.n_interface
    return FieldSolution(a_s, a_r, sol[n_s + n_r:], time, rotor_angle, coupling.step)


# --------------------------------------------------------------------------
# static condensation
# --------------------------------------------------------------------------

class CondensedDomain:
    """One domain reduced to its contour DoFs.

    For loads ``F`` (nodes x k) the interior solution is
    ``a_I = U c - E x`` with ``U = K_II^-1 F_I``, ``E = K_II^-1 K_IG``, and the
    contour unknowns see ``S x = G c`` with ``S = K_GG - K_GI E`` and
    ``G = F_G - K_GI U``.  ``energy_const = F_I.T U`` gives the load part of
    ``a.T K a = c.T F_I.T U c + x.T S x``.
    """

    def __init__(self, system: DomainSystem, loads: np.ndarray, chunk: int = 256):
        self.system = system
        dom = system.mesh
        contour = dom.contour
        is_free = np.zeros(dom.n_nodes, bool)
        is_free[system.free] = True
        is_free[contour] = False
        self.interior = np.flatnonzero(is_free)
        self.contour = contour
        K = system.K.tocsr()
        K_II = K[self.interior][:, self.interior].tocsc()
        self.K_IG = K[self.interior][:, contour].tocsc()
        K_GG = K[contour][:, contour].toarray()
        self.lu = spla.splu(K_II)
        n = len(contour)
        S = np.empty((n, n))
        K_GI = self.K_IG.T.tocsr()
        for start in range(0, n, chunk):
            cols = slice(start, min(start + chunk, n))
            E = self.lu.solve(self.K_IG[:, cols].toarray())
            S[:, cols] = K_GG[:, cols] - K_GI @ E
        self.S = 0.5 * (S + S.T)
        loads = np.asarray(loads, float).reshape(dom.n_nodes, -1)
        self.loads = loads
        self.U = self.lu.solve(loads[self.interior])
        self.G = loads[contour] - K_GI @ self.U
        self.energy_const = loads[self.interior].T @ self.U

    def interior_solution(self, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Full DoF vector for load coefficients ``coeffs`` and contour values ``x``."""
        a = np.zeros(self.system.mesh.n_nodes)
        rhs = self.loads[self.interior] @ coeffs - self.K_IG @ x
        a[self.interior] = self.lu.solve(rhs)
        a[self.contour] = x
        return a


def condense_stator(stator: DomainSystem) -> CondensedDomain:
    return CondensedDomain(stator, stator.X)


def condense_rotor(rotor: DomainSystem) -> CondensedDomain:
    return CondensedDomain(rotor, rotor.j_pm[:, None])


@dataclass(frozen=True, eq=False)
class PeriodSolution:
    """Interface values and derived per-step quantities over one simulated span.

    ``x[k]`` holds the contour potentials indexed by stator contour position.
    ``flux_linkage`` is ``X_str.T a`` per phase, ``energy`` the stored
    magnetic energy ``1/2 a.T K a - a.T j_pm`` (up to a rotation-invariant
    constant).
    """

    spec: MachineSpec
    mesh: CoupledMesh
    stator: CondensedDomain
    rotor: CondensedDomain
    times: np.ndarray
    rotor_angles: np.ndarray
    shifts: np.ndarray
    currents: np.ndarray
    x: np.ndarray
    flux_linkage: np.ndarray
    energy: np.ndarray
    span: str

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def time_step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_steps > 1 else 0.0

    @property
    def period(self) -> float:
        return self.time_step * self.n_steps

    def field(self, k: int) -> FieldSolution:
        """Reconstruct the full field solution of step ``k``."""
        x = self.x[k]
        y = np.roll(x, -int(self.shifts[k]))
        a_s = self.stator.interior_solution(self.currents[k], x)
        a_r = self.rotor.interior_solution(np.ones(1), y)
        sys_r = self.rotor.system
        rc = sys_r.mesh.contour
        lam = (sys_r.K @ a_r)[rc] - sys_r.j_pm[rc]
        return FieldSolution(a_s, a_r, lam, float(self.times[k]), float(self.rotor_angles[k]), k)

    def dump(self, directory: str | Path) -> None:
        """Write every step as ``step_XXXX.npz`` (arrays a_s, a_r, lam, time, rotor_angle)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for k in range(self.n_steps):
            f = self.field(k)
            np.savez(directory / f"step_{k:04d}.npz", a_s=f.a_s, a_r=f.a_r, lam=f.lam,
                     time=f.time, rotor_angle=f.rotor_angle)


def steps_per_span(mesh: CoupledMesh, spec: MachineSpec, span: str) -> int:
    per_rev = mesh.n_theta // NODES_PER_STEP
    if span == "mechanical":
        return per_rev
    if span == "electrical":
        if per_rev % spec.pole_pairs:
            raise CouplingError("an electrical period is not an integer number of steps")
        return per_rev // spec.pole_pairs
    raise ValueError(f"unknown span {span!r}")


def run_period(spec: MachineSpec, mesh: CoupledMesh, stator: CondensedDomain | None = None,
               rotor: CondensedDomain | None = None, span: str = "mechanical",
               locked: bool = False, n_steps: int | None = None) -> PeriodSolution:
    """Step the rotor through one mechanical (default) or electrical period.

    The rotor advances ``NODES_PER_STEP`` contour nodes per step and the phase
    currents are evaluated at the matching time ``t = angle / omega_m``.
    ``locked=True`` keeps rotor and currents frozen at ``t = 0``.
    """
    from .fem import domain_system  # local import keeps module import order simple

    if stator is None:
        stator = condense_stator(domain_system(spec, mesh, 0))
    if rotor is None:
        rotor = condense_rotor(domain_system(spec, mesh, 1))
    n = mesh.n_theta
    if n % NODES_PER_STEP:
        raise CouplingError(f"{n} contour nodes cannot be stepped by {NODES_PER_STEP}")
    steps = steps_per_span(mesh, spec, span) if n_steps is None else n_steps
    d_angle = NODES_PER_STEP * 2 * np.pi / n
    omega_m = spec.mechanical_angular_frequency
    k = np.arange(steps)
    angles = k * d_angle
    times = angles / omega_m
    if locked:
        shifts = np.zeros(steps, dtype=np.int64)
        currents = np.repeat(phase_currents(spec, 0.0), steps, axis=0)
        angles = np.zeros(steps)
    else:
        shifts = (NODES_PER_STEP * k) % n
        currents = phase_currents(spec, times)

    S_s, S_r = stator.S, rotor.S
    g_r = rotor.G[:, 0]
    x = np.empty((steps, n))
    energy = np.empty(steps)
    const_r = -0.5 * rotor.energy_const[0, 0]
    for i in range(steps):
        s = int(shifts[i])
        A = S_s + np.roll(S_r, (s, s), axis=(0, 1))
        b = stator.G @ currents[i] + np.roll(g_r, s)
        try:
            cf = sla.cho_factor(A, overwrite_a=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise CouplingError(f"interface system not positive definite at step {i}") from exc
        xi = sla.cho_solve(cf, b, check_finite=False)
        x[i] = xi
        y = np.roll(xi, -s)
        c = currents[i]
        w_s = 0.5 * (c @ stator.energy_const @ c + xi @ S_s @ xi)
        w_r = 0.5 * (y @ S_r @ y) - y @ g_r + const_r
        energy[i] = w_s + w_r
    flux = currents @ stator.energy_const.T + x @ stator.G
    return PeriodSolution(spec, mesh, stator, rotor, times, angles, shifts, currents, x,
                          flux, energy, span)


def monolithic_system(stator: DomainSystem, rotor: DomainSystem, coupling: InterfaceCoupling):
    """Single-mesh reference: identify matched contour nodes and assemble one matrix.

    Returns ``(K, f, stator_map, rotor_map, free)`` where the maps give the
    merged DoF index of every stator / rotor node.
    """
    n_s, n_r = stator.mesh.n_nodes, rotor.mesh.n_nodes
    stator_map = np.arange(n_s)
    rotor_map = n_s + np.arange(n_r)
    rc = rotor.mesh.contour
    sc = stator.mesh.contour
    rotor_map[rc] = sc[coupling.matching()]
    # compress numbering after removing the rotor contour duplicates
    keep = np.ones(n_s + n_r, bool)
    keep[n_s + rc] = False
    new_index = np.cumsum(keep) - 1
    rotor_map = new_index[rotor_map]
    n = int(keep.sum())
    R_s = sp.csr_matrix((np.ones(n_s), (stator_map, np.arange(n_s))), shape=(n, n_s))
    R_r = sp.csr_matrix((np.ones(n_r), (rotor_map, np.arange(n_r))), shape=(n, n_r))
    K = (R_s @ stator.K @ R_s.T + R_r @ rotor.K @ R_r.T).tocsr()
    fixed = np.r_[stator_map[np.setdiff1d(np.arange(n_s), stator.free)],
                  rotor_map[np.setdiff1d(np.arange(n_r), rotor.free)]]
    free = np.setdiff1d(np.arange(n), fixed)
    return K, R_s, R_r, free


def solve_monolithic(stator: DomainSystem, rotor: DomainSystem, coupling: InterfaceCoupling,
                     currents: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Solve the merged single-mesh problem; returns nodal values on (stator, rotor)."""
    K, R_s, R_r, free = monolithic_system(stator, rotor, coupling)
    f = R_s @ stator.source(currents) + R_r @ rotor.source()
    a = np.zeros(K.shape[0])
    a[free] = spla.spsolve(K[free][:, free].tocsc(), f[free])
    return R_s.T @ a, R_r.T @ a


__all__ = [
    "CondensedDomain", "CouplingError", "FieldSolution", "InterfaceCoupling", "NODES_PER_STEP",
    "PeriodSolution", "build_projectors", "condense_rotor", "condense_stator", "run_period",
    "saddle_matrix", "solve_monolithic", "solve_step", "steps_per_span",
]
