from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmsm_uq.uq import (DEFAULT_SIGMA_R0, FunctionEvaluator, RandomInputModel, UqError, UqResult,
                        compare_methods, gpc_estimate, hermite_rule, legendre_rule, mc_estimate,
                        mc_points, saltelli_design, saltelli_indices, sobol_sensitivity, tensor_grid)


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_rules_match_numpy(n):
    x, w = hermite_rule(n)
    xr, wr = np.polynomial.hermite_e.hermegauss(n)
    np.testing.assert_allclose(x, xr, atol=1e-12)
    np.testing.assert_allclose(w, wr / wr.sum(), atol=1e-12)
    x, w = legendre_rule(n)
    xr, wr = np.polynomial.legendre.leggauss(n)
    np.testing.assert_allclose(x, xr, atol=1e-12)
    np.testing.assert_allclose(w, wr / 2, atol=1e-12)
    with pytest.raises(UqError):
        hermite_rule(0)


@pytest.mark.parametrize("n", [1, 3, 5])
def test_rules_exact_to_degree(n):
    x, w = hermite_rule(n)
    for k in range(2 * n):
        # standard normal moments: (k-1)!! for even k
        exact = 0.0 if k % 2 else float(np.prod(np.arange(k - 1, 0, -2)))
        assert w @ x ** k == pytest.approx(exact, rel=1e-12, abs=1e-14 * (w @ np.abs(x) ** k))
    x, w = legendre_rule(n)
    for k in range(2 * n):
        exact = 0.0 if k % 2 else 1.0 / (k + 1)
        assert w @ x ** k == pytest.approx(exact, rel=1e-12, abs=1e-13)


def test_tensor_grid_maps_inputs():
    model = RandomInputModel(sigma_r0=2.0, theta_low=1.0, theta_high=3.0)
    pts, w = tensor_grid(model, (3, 4))
    assert pts.shape == (12, 2) and w.sum() == pytest.approx(1.0)
    assert w @ pts[:, 0] ** 2 == pytest.approx(4.0)
    assert w @ pts[:, 1] == pytest.approx(2.0)
    assert np.all((pts[:, 1] > 1) & (pts[:, 1] < 3))
    with pytest.raises(UqError):
        tensor_grid(RandomInputModel(sigma_r0=1.0, r0_bound=1.0), 5)


def test_single_node_gpc_is_nominal_evaluation():
    model = RandomInputModel()
    res = gpc_estimate(model, FunctionEvaluator(lambda r, t: 3.0 + r + t), 1).results["f"]
    assert res.mean == pytest.approx(3.0 + math.pi / 2)
    assert res.variance == 0.0 and res.n_evaluations == 1


def test_gpc_exact_for_low_degree_polynomials():
    model = RandomInputModel(sigma_r0=0.5)
    ev = FunctionEvaluator(lambda r, t: (r ** 2, t, r * t ** 2), ("a", "b", "c"))
    res = gpc_estimate(model, ev, 5).results
    assert res["a"].mean == pytest.approx(0.25, rel=1e-12)
    assert res["a"].variance == pytest.approx(2 * 0.5 ** 4, rel=1e-12)
    assert res["b"].mean == pytest.approx(math.pi / 2, rel=1e-12)
    assert res["b"].variance == pytest.approx(math.pi ** 2 / 12, rel=1e-12)
    assert res["c"].mean == pytest.approx(0.0, abs=1e-12)


def test_gpc_failed_node_aborts():
    ev = FunctionEvaluator(lambda r, t: 1 / 0)
    with pytest.raises(UqError, match="collocation node 0"):
        gpc_estimate(RandomInputModel(), ev, 2)


def test_mc_constant_output_has_zero_variance():
    res = mc_estimate(RandomInputModel(), FunctionEvaluator(lambda r, t: 7.0), 50, 1).results["f"]
    assert res.mean == 7.0 and res.variance == 0.0 and res.mc_error == 0.0
    with pytest.raises(UqError):
        mc_estimate(RandomInputModel(), FunctionEvaluator(lambda r, t: 7.0), 1, 1)


def test_mc_second_moment_of_r0():
    model = RandomInputModel()
    n = 3200
    res = mc_estimate(model, FunctionEvaluator(lambda r, t: r * r), n, 2024).results["f"]
    s2 = model.sigma_r0 ** 2
    assert abs(res.mean - s2) < 3 * s2 * math.sqrt(2 / n)
    assert res.mc_error == pytest.approx(math.sqrt(res.variance / n))


def test_mc_theta_moments():
    res = mc_estimate(RandomInputModel(), FunctionEvaluator(lambda r, t: t), 3200, 5).results["f"]
    assert res.mean == pytest.approx(math.pi / 2, abs=3 * res.mc_error)
    assert res.variance == pytest.approx(math.pi ** 2 / 12, rel=0.1)


def test_mc_is_deterministic_and_nested():
    model = RandomInputModel()
    a, _ = mc_points(model, 100, 9)
    b, _ = mc_points(model, 200, 9)
    c, _ = mc_points(model, 100, 10)
    assert np.array_equal(a, b[:100])
    assert not np.array_equal(a, c)


def test_mc_redraws_failed_samples():
    calls = []

    def flaky(r, t):
        calls.append((r, t))
        if len(calls) in (3, 8):
            raise RuntimeError("solver failure")
        return r

    s = mc_estimate(RandomInputModel(), FunctionEvaluator(flaky), 100, 3)
    assert s.results["f"].n_failed == 2
    assert np.all(np.isfinite(s.values))
    ref, _ = mc_points(RandomInputModel(), 100, 3)
    changed = np.flatnonzero(np.any(s.points != ref, axis=1))
    assert list(changed) == [2, 7]


def test_mc_aborts_above_failure_limit():
    ev = FunctionEvaluator(lambda r, t: math.nan if t < 0.3 else r)
    with pytest.raises(UqError, match="5%"):
        mc_estimate(RandomInputModel(), ev, 100, 0)


def test_truncation_rejects_and_counts():
    model = RandomInputModel(sigma_r0=1.0, r0_bound=0.5)
    pts, rejected = mc_points(model, 500, 4)
    assert np.all(np.abs(pts[:, 0]) < 0.5)
    assert rejected > 500  # P(|Z| < 0.5) is about 0.38
    u = np.array([[1e-12, 0.5], [1 - 1e-12, 0.5]])
    assert np.all(np.abs(model.from_unit(u)[:, 0]) < 0.5)


def test_model_validation():
    with pytest.raises(UqError):
        RandomInputModel(sigma_r0=0.0)
    with pytest.raises(UqError):
        RandomInputModel(theta_low=1.0, theta_high=1.0)
    assert RandomInputModel().theta_variance == pytest.approx(math.pi ** 2 / 12)
    assert DEFAULT_SIGMA_R0 == pytest.approx(0.4e-3 / 3)


def test_saltelli_design_layout():
    model = RandomInputModel()
    pts = saltelli_design(model, 16, 0)
    A, B, ab_r, ab_t = np.split(pts, 4)
    assert np.array_equal(ab_r[:, 0], B[:, 0]) and np.array_equal(ab_r[:, 1], A[:, 1])
    assert np.array_equal(ab_t[:, 1], B[:, 1]) and np.array_equal(ab_t[:, 0], A[:, 0])
    assert np.array_equal(pts, saltelli_design(model, 16, 0))
    with pytest.raises(UqError):
        saltelli_design(model, 1, 0)


def test_sobol_indices_of_linear_function():
    model = RandomInputModel(sigma_r0=1.0)
    out, _, _ = sobol_sensitivity(model, FunctionEvaluator(lambda r, t: r + t), 512, 11)
    exact = 1 / (1 + math.pi ** 2 / 12)
    s = out["f"]
    np.testing.assert_allclose(s.first_order, [exact, 1 - exact], atol=0.02)
    np.testing.assert_allclose(s.total, [exact, 1 - exact], atol=0.02)


def test_sobol_indices_single_input_dominates():
    model = RandomInputModel()
    out, _, _ = sobol_sensitivity(model, FunctionEvaluator(lambda r, t: 4.0 + 1e3 * r ** 2), 64, 2)
    s = out["f"]
    assert s.first_order[0] == pytest.approx(1.0)
    assert s.first_order[1] == pytest.approx(0.0, abs=1e-12)
    assert s.total[1] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10))
def test_sobol_invariant_to_affine_output_change(shift, scale):
    model = RandomInputModel(sigma_r0=1.0)
    pts = saltelli_design(model, 32, 1)
    y = np.sin(pts[:, 0]) + 0.3 * pts[:, 1] ** 2
    a = saltelli_indices(y, 32)
    b = saltelli_indices(shift + scale * y, 32)
    np.testing.assert_allclose(b.first_order, a.first_order, atol=1e-9)
    np.testing.assert_allclose(b.total, a.total, atol=1e-9)


def test_sobol_zero_variance_and_layout_errors():
    with pytest.raises(UqError, match="zero output variance"):
        saltelli_indices(np.ones(64), 16)
    with pytest.raises(UqError):
        saltelli_indices(np.ones(60), 16)


def test_compare_methods():
    mc = UqResult("tau0", "MC", 4.0, 0.04, 400, mc_error=0.01)
    assert compare_methods(mc, UqResult("tau0", "gPC", 4.02, 0.05, 25)).means_agree
    c = compare_methods(mc, UqResult("tau0", "gPC", 4.05, 0.05, 25))
    assert not c.means_agree and c.mean_difference == pytest.approx(0.05)
    assert c.variance_ratio == pytest.approx(0.8)
    with pytest.raises(UqError):
        compare_methods(mc, UqResult("thd", "gPC", 4.0, 0.0, 25))
