from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmsm_uq.torque import (TorqueError, band_maxwell_torque, cogging_order, instantaneous_torque,
                            maxwell_stress_torque, maxwell_stress_trace, mean_torque, powers,
                            spectrum_and_thd, stranded_voltage, time_derivative)


def test_central_difference_of_sinusoid():
    n = 64
    t = np.arange(n) / n
    dt = 1 / n
    d = time_derivative(np.sin(2 * np.pi * t), dt)
    exact = 2 * np.pi * np.cos(2 * np.pi * t)
    # second-order error: (2 pi)^3 dt^2 / 6
    assert np.abs(d - exact).max() < (2 * np.pi) ** 3 * dt ** 2 / 6 * 1.01
    with pytest.raises(TorqueError):
        time_derivative(np.ones(1), dt)


def test_resistive_load_power_and_zero_torque():
    n = 36
    t = np.arange(n) / n
    i = np.column_stack([np.cos(2 * np.pi * t - k * 2 * np.pi / 3) for k in range(3)])
    u = stranded_voltage(np.zeros_like(i), i, 0.5, 1 / n)
    p_e, p_l = powers(u, i, 0.5)
    np.testing.assert_allclose(p_e, p_l)
    np.testing.assert_allclose(p_l, 0.5 * 1.5, rtol=1e-12)
    assert mean_torque(p_e, p_l, 10.0) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(TorqueError):
        stranded_voltage(np.zeros((n, 2)), i, 0.5, 1 / n)


def test_mean_torque_requires_whole_periods():
    p = np.full(10, 6.0)
    assert mean_torque(p, np.full(10, 2.0), 2.0, periods=3) == pytest.approx(2.0)
    with pytest.raises(TorqueError):
        mean_torque(p, p, 1.0, periods=1.5)
    with pytest.raises(TorqueError):
        mean_torque(p, p[:5], 1.0)
    with pytest.raises(TorqueError):
        instantaneous_torque(p, p, p[:3], 0.1, 1.0)


def test_spectrum_examples():
    n = 64
    t = np.arange(n) / n
    s = spectrum_and_thd(4 + 0.4 * np.cos(2 * np.pi * 3 * t))
    assert s.mean == pytest.approx(4.0)
    assert s.harmonic(3) == pytest.approx(0.4)
    assert s.thd == pytest.approx(0.1)
    s = spectrum_and_thd(4 + 0.3 * np.sin(2 * np.pi * t) + 0.4 * np.cos(2 * np.pi * 5 * t + 1))
    # amplitude sum, not root-sum-square
    assert s.thd == pytest.approx(0.175)
    assert spectrum_and_thd(4 + 0.4 * np.cos(2 * np.pi * 5 * t), n=4).thd == pytest.approx(0.0, abs=1e-15)


def test_spectrum_errors():
    with pytest.raises(TorqueError):
        spectrum_and_thd(np.array([1.0, -1.0, 1.0, -1.0]))
    with pytest.raises(TorqueError):
        spectrum_and_thd(np.ones(8), n=9)
    with pytest.raises(TorqueError):
        spectrum_and_thd(np.ones(1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=5, max_size=5), st.integers(11, 40))
def test_spectrum_parseval(coeffs, n):
    t = np.arange(n) / n
    signal = 3.0 + sum(c * np.cos(2 * np.pi * (k + 1) * t + k) for k, c in enumerate(coeffs))
    s = spectrum_and_thd(signal)
    power = s.mean ** 2 + 0.5 * np.sum(s.amplitudes[1:(n - 1) // 2 + 1] ** 2)
    assert power == pytest.approx(np.mean(signal ** 2), rel=1e-10)


def test_cogging_order():
    assert cogging_order(72, 6) == 72
    assert cogging_order(36, 4) == 72
    assert cogging_order(12, 5) == 60


def test_energy_balance_closes_on_machine(coarse_nominal, spec):
    tr = coarse_nominal.trace
    residual = tr.p_e - tr.p_l - tr.energy_rate - tr.torque * tr.omega_m
    assert np.abs(residual).max() < 1e-9 * np.abs(tr.p_e).max()
    assert tr.electrical_periods == pytest.approx(spec.pole_pairs)
    assert tr.mean_torque() == pytest.approx(np.mean(tr.torque), rel=1e-9)


def test_band_maxwell_close_to_energy_balance(coarse_nominal):
    band = maxwell_stress_trace(coarse_nominal.period)
    assert np.mean(band) == pytest.approx(coarse_nominal.mean_torque, rel=0.05)


def test_maxwell_zero_without_sources(spec):
    from pmsm_uq.coupling import run_period
    from pmsm_uq.geometry import build_mesh
    s = spec.replace(remanent_flux_density=0.0, phase_current_amplitude=0.0)
    period = run_period(s, build_mesh(s, 0), n_steps=2)
    assert band_maxwell_torque(period, 0) == 0.0
    assert maxwell_stress_torque(period, 0, 0.5 * (s.rotor_radius + s.interface_radius)) == 0.0


def test_maxwell_contour_must_be_in_airgap(coarse_nominal, spec):
    with pytest.raises(TorqueError):
        maxwell_stress_torque(coarse_nominal.period, 0, 0.9 * spec.rotor_radius)
    with pytest.raises(TorqueError):
        maxwell_stress_torque(coarse_nominal.period, 0, 1.01 * spec.stator_inner_radius)


def test_single_contour_depends_on_radius(coarse_nominal, spec):
    # single contours cut the elements differently: their mean torques scatter
    # far more than the discretisation error of the band average
    period = coarse_nominal.period
    steps = range(0, period.n_steps, 6)
    radii = np.linspace(spec.rotor_radius, spec.interface_radius, 5)[1:-1]
    means = [np.mean([maxwell_stress_torque(period, k, r) for k in steps]) for r in radii]
    spread = (max(means) - min(means)) / coarse_nominal.mean_torque
    band = np.mean(maxwell_stress_trace(period)) / coarse_nominal.mean_torque - 1
    assert spread > 2 * abs(band)
