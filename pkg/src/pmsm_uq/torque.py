"""Torque from the energy balance, its spectrum, and a Maxwell-stress check.

Instantaneous torque follows from ``omega_m * tau = P_e - P_l - dW/dt`` with
``P_e = u.i``, ``P_l = i.R.i`` and ``u = R i + d(X_str.T a)/dt``.  Time
derivatives are central differences on the uniform step grid, wrapped
periodically when the trace covers a full period of the motion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import MU0
from .coupling import PeriodSolution
from .fem import gradient_coefficients
from .geometry import AIRGAP_ROTOR, AIRGAP_STATOR, CoupledMesh, DomainMesh


class TorqueError(ValueError):
    pass


def time_derivative(y: np.ndarray, dt: float, periodic: bool = True) -> np.ndarray:
    """Second-order central difference along axis 0."""
    y = np.asarray(y, float)
    if len(y) < 2:
        raise TorqueError("need at least two time steps for a derivative")
    if periodic:
        return (np.roll(y, -1, axis=0) - np.roll(y, 1, axis=0)) / (2 * dt)
    return np.gradient(y, dt, axis=0, edge_order=2 if len(y) > 2 else 1)


def _resistance(R, n_phases: int) -> np.ndarray:
    R = np.asarray(R, float)
    return R * np.eye(n_phases) if R.ndim == 0 else R


def stranded_voltage(flux_linkage: np.ndarray, currents: np.ndarray, resistance, dt: float,
                     periodic: bool = True) -> np.ndarray:
    """Phase voltages ``u = R i + d psi / dt`` with ``psi = X_str.T a``."""
    flux_linkage = np.asarray(flux_linkage, float)
    currents = np.asarray(currents, float)
    if flux_linkage.shape != currents.shape:
        raise TorqueError(f"flux linkage {flux_linkage.shape} and currents {currents.shape} differ in shape")
    R = _resistance(resistance, currents.shape[1])
    return currents @ R.T + time_derivative(flux_linkage, dt, periodic)


def powers(voltages: np.ndarray, currents: np.ndarray, resistance) -> tuple[np.ndarray, np.ndarray]:
    """Electrical input power ``u.i`` and ohmic loss ``i.R.i`` per step."""
    voltages = np.asarray(voltages, float)
    currents = np.asarray(currents, float)
    if voltages.shape != currents.shape:
        raise TorqueError("voltage and current traces differ in shape")
    R = _resistance(resistance, currents.shape[1])
    p_e = np.einsum("ij,ij->i", voltages, currents)
    p_l = np.einsum("ij,jk,ik->i", currents, R, currents)
    return p_e, p_l


def mean_torque(p_e: np.ndarray, p_l: np.ndarray, omega_m: float, periods: float = 1.0) -> float:
    """Time-averaged torque ``mean(P_e - P_l) / omega_m``.

    ``periods`` is the number of electrical periods the samples cover; the
    uniform-grid average is only the period average for whole periods.
    """
    if abs(periods - round(periods)) > 1e-9 or round(periods) < 1:
        raise TorqueError(f"trace covers {periods:.6g} periods, expected a whole number")
    p_e = np.asarray(p_e, float)
    p_l = np.asarray(p_l, float)
    if p_e.shape != p_l.shape:
        raise TorqueError("power traces differ in length")
    return float(np.mean(p_e - p_l) / omega_m)


def instantaneous_torque(p_e: np.ndarray, p_l: np.ndarray, energy: np.ndarray, dt: float,
                         omega_m: float, periodic: bool = True) -> np.ndarray:
    p_e, p_l, energy = (np.asarray(v, float) for v in (p_e, p_l, energy))
    if not (p_e.shape == p_l.shape == energy.shape):
        raise TorqueError("power and energy traces differ in length")
    return (p_e - p_l - time_derivative(energy, dt, periodic)) / omega_m


@dataclass(frozen=True, eq=False)
class TorqueTrace:
    times: np.ndarray
    torque: np.ndarray
    p_e: np.ndarray
    p_l: np.ndarray
    energy: np.ndarray
    voltages: np.ndarray
    currents: np.ndarray
    omega_m: float
    omega_e: float
    periodic: bool

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def electrical_periods(self) -> float:
        return len(self.times) * self.dt * self.omega_e / (2 * math.pi)

    @property
    def energy_rate(self) -> np.ndarray:
        return time_derivative(self.energy, self.dt, self.periodic)

    def mean_torque(self) -> float:
        return mean_torque(self.p_e, self.p_l, self.omega_m, self.electrical_periods)


def torque_trace(period: PeriodSolution) -> TorqueTrace:
    """Energy-balance torque trace of a simulated span."""
    spec = period.spec
    ecc = period.mesh.eccentricity
    nominal = ecc is None or ecc.displacement == 0.0
    periodic = period.span == "mechanical" or nominal
    dt = period.time_step
    u = stranded_voltage(period.flux_linkage, period.currents, spec.dc_phase_resistance, dt, periodic)
    p_e, p_l = powers(u, period.currents, spec.dc_phase_resistance)
    omega_m = spec.mechanical_angular_frequency
    tau = instantaneous_torque(p_e, p_l, period.energy, dt, omega_m, periodic)
    return TorqueTrace(period.times, tau, p_e, p_l, period.energy, u, period.currents,
                       omega_m, spec.electrical_angular_frequency, periodic)


# --------------------------------------------------------------------------
# spectrum
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Spectrum:
    """Single-sided harmonic amplitudes of a periodic signal.

    ``amplitudes[i]`` is the amplitude of harmonic ``i`` of the sampled span
    (``amplitudes[0]`` is the mean).  A Nyquist bin, when present, is stored
    unscaled.  ``thd`` is the plain sum of harmonics ``1..n_harmonics``
    divided by the mean.
    """

    amplitudes: np.ndarray
    n_harmonics: int
    thd: float

    @property
    def mean(self) -> float:
        return float(self.amplitudes[0])

    def harmonic(self, i: int) -> float:
        return float(self.amplitudes[i])


def spectrum_and_thd(signal: np.ndarray, n: int | None = None) -> Spectrum:
    """Harmonic amplitudes and THD ``sum(tau_1..tau_n) / tau_0``.

    By default ``n`` includes every harmonic strictly below Nyquist.
    """
    signal = np.asarray(signal, float)
    N = len(signal)
    if N < 2:
        raise TorqueError("need at least two samples")
    X = np.fft.rfft(signal)
    amp = np.abs(X) / N
    below = (N - 1) // 2
    amp[1:below + 1] *= 2
    amp[0] = X[0].real / N
    n_max = len(amp) - 1
    n = below if n is None else int(n)
    if not 0 <= n <= n_max:
        raise TorqueError(f"harmonic count must lie in [0, {n_max}]")
    if amp[0] == 0:
        raise TorqueError("THD undefined for a zero mean")
    thd = float(np.sum(amp[1:n + 1]) / amp[0])
    return Spectrum(amp, n, thd)


def cogging_order(slot_count: int, pole_pairs: int) -> int:
    """Cogging harmonic per mechanical revolution: lcm(slots, poles)."""
    return math.lcm(slot_count, 2 * pole_pairs)


# --------------------------------------------------------------------------
# Maxwell stress tensor
# --------------------------------------------------------------------------

def _locate(dom: DomainMesh, band_tris: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle (from ``band_tris``) of every point, plus barycentrics."""
    n = dom.n_theta
    cell_layers = np.unique(band_tris // (2 * n))
    phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
    j0 = np.floor(phi / (2 * np.pi / n)).astype(np.int64)
    cand = []
    for dj in (-1, 0, 1):
        j = (j0 + dj) % n
        for layer in cell_layers:
            for kind in (0, 1):
                cand.append((layer * n + j) * 2 + kind)
    cand = np.stack(cand, axis=1)
    tri = dom.triangles[cand]
    p = dom.nodes
    x0, x1, x2 = p[tri[..., 0]], p[tri[..., 1]], p[tri[..., 2]]
    det = (x1[..., 0] - x0[..., 0]) * (x2[..., 1] - x0[..., 1]) - (x2[..., 0] - x0[..., 0]) * (x1[..., 1] - x0[..., 1])
    q = pts[:, None, :] - x0
    l1 = (q[..., 0] * (x2[..., 1] - x0[..., 1]) - (x2[..., 0] - x0[..., 0]) * q[..., 1]) / det
    l2 = ((x1[..., 0] - x0[..., 0]) * q[..., 1] - q[..., 0] * (x1[..., 1] - x0[..., 1])) / det
    lmin = np.minimum(np.minimum(l1, l2), 1 - l1 - l2)
    best = np.argmax(lmin, axis=1)
    if np.any(lmin[np.arange(len(pts)), best] < -1e-9):
        raise TorqueError("contour leaves the airgap band")
    return cand[np.arange(len(pts)), best], best


def _flux_density(dom: DomainMesh, a: np.ndarray, tris: np.ndarray, axial_length: float) -> np.ndarray:
    b, c, area2 = gradient_coefficients(dom.nodes, dom.triangles[tris])
    az = a[dom.triangles[tris]] / axial_length
    dAdx = np.sum(az * b, axis=1) / area2
    dAdy = np.sum(az * c, axis=1) / area2
    return np.column_stack([dAdy, -dAdx])


def maxwell_stress_torque(period: PeriodSolution, step: int, radius: float,
                          n_samples: int | None = None) -> float:
    """Torque ``l_z r^2 / mu0 * closed-integral(B_r B_phi dphi)`` on a circle in the airgap.

    The circle must lie inside the stator-side or the rotor-side airgap band.
    """
    mesh: CoupledMesh = period.mesh
    if mesh.interface_radius < radius < mesh.stator_inner_radius:
        dom, tag, rotor_side = mesh.stator, AIRGAP_STATOR, False
    elif mesh.rotor_radius < radius < mesh.interface_radius:
        dom, tag, rotor_side = mesh.rotor, AIRGAP_ROTOR, True
    else:
        raise TorqueError(f"contour radius {radius:.6g} m is not inside the airgap")
    if rotor_side and mesh.eccentricity is not None and mesh.eccentricity.displacement != 0:
        # the displaced rotor band may not contain the full circle
        ecc = mesh.eccentricity
        if radius - mesh.rotor_radius <= abs(ecc.displacement):
            raise TorqueError("contour intersects the displaced rotor")
    n_samples = n_samples or 8 * mesh.n_theta
    phi = 2 * np.pi * (np.arange(n_samples) + 0.5) / n_samples
    field = period.field(step)
    if rotor_side:
        local = phi - field.rotor_angle
        a = field.a_r
    else:
        local = phi
        a = field.a_s
    pts = radius * np.column_stack([np.cos(local), np.sin(local)])
    band = np.flatnonzero(dom.region == tag)
    tris, _ = _locate(dom, band, pts)
    B = _flux_density(dom, a, tris, period.spec.axial_length)
    br = B[:, 0] * np.cos(local) + B[:, 1] * np.sin(local)
    bphi = -B[:, 0] * np.sin(local) + B[:, 1] * np.cos(local)
    return float(period.spec.axial_length * radius ** 2 / MU0 * np.sum(br * bphi) * 2 * np.pi / n_samples)


def _band_torque(dom: DomainMesh, a: np.ndarray, tag: int, r_in: float, r_out: float,
                 axial_length: float) -> float:
    tris = np.flatnonzero(dom.region == tag)
    B = _flux_density(dom, a, tris, axial_length)
    corners = dom.nodes[dom.triangles[tris]]
    _, _, area2 = gradient_coefficients(dom.nodes, dom.triangles[tris])
    # edge-midpoint rule, exact for the quadratic integrand of a constant B
    integrand = np.zeros(len(tris))
    for i, j in ((0, 1), (1, 2), (2, 0)):
        q = 0.5 * (corners[:, i] + corners[:, j])
        x, y = q[:, 0], q[:, 1]
        r = np.hypot(x, y)
        integrand += (x * B[:, 0] + y * B[:, 1]) * (-y * B[:, 0] + x * B[:, 1]) / r / 3
    return float(axial_length / (MU0 * (r_out - r_in)) * np.sum(integrand * area2 / 2))


def band_maxwell_torque(period: PeriodSolution, step: int) -> float:
    """Maxwell-stress torque averaged over the radii of an airgap band.

    Averaging the contour integral over every radius of the band (Arkkio's
    form) removes most of the dependence on where a single contour cuts the
    elements.  The rotor-side band is used for the centred rotor; a displaced
    rotor deforms that band, so the undeformed stator-side band is used then.
    """
    mesh: CoupledMesh = period.mesh
    field = period.field(step)
    lz = period.spec.axial_length
    ecc = mesh.eccentricity
    if ecc is None or ecc.displacement == 0.0:
        return _band_torque(mesh.rotor, field.a_r, AIRGAP_ROTOR, mesh.rotor_radius,
                            mesh.interface_radius, lz)
    return _band_torque(mesh.stator, field.a_s, AIRGAP_STATOR, mesh.interface_radius,
                        mesh.stator_inner_radius, lz)


def maxwell_stress_trace(period: PeriodSolution, radius: float | None = None,
                         n_samples: int | None = None) -> np.ndarray:
    """Maxwell torque at every step; band-averaged when ``radius`` is None."""
    if radius is None:
        return np.array([band_maxwell_torque(period, k) for k in range(period.n_steps)])
    return np.array([maxwell_stress_torque(period, k, radius, n_samples) for k in range(period.n_steps)])
