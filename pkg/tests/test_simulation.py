from __future__ import annotations

import math

import numpy as np
import pytest

from pmsm_uq.geometry import EccentricityError
from pmsm_uq.simulation import SampleCache, SampleEvaluator, SimulationError

POINTS = np.array([[0.0, 0.0], [2e-4, 0.7], [-1e-4, 2.5]])


def test_nominal_result(coarse_nominal, spec):
    assert coarse_nominal.period.n_steps * 3 == coarse_nominal.period.mesh.n_theta
    assert 3.0 < coarse_nominal.mean_torque < 5.0
    assert 0 < coarse_nominal.thd < 0.1
    assert coarse_nominal.spectrum.mean == pytest.approx(coarse_nominal.mean_torque, rel=1e-12)


def test_displacement_bound(coarse_model, spec):
    assert coarse_model.r0_bound < spec.airgap
    with pytest.raises(EccentricityError):
        coarse_model.simulate(coarse_model.r0_bound, 0.0)


def test_opposite_direction_equals_negative_displacement(coarse_model):
    a = coarse_model.evaluate(-2e-4, 0.4)
    b = coarse_model.evaluate(2e-4, 0.4 + math.pi)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_direction_does_not_change_period_statistics(coarse_model, spec):
    # rotating the eccentricity direction by a slot pitch is a relabelling of the stator
    a = coarse_model.evaluate(3e-4, 0.2)
    b = coarse_model.evaluate(3e-4, 0.2 + 2 * math.pi / spec.slot_count)
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_parallel_matches_serial(coarse_model):
    serial = SampleEvaluator(coarse_model, jobs=1)(POINTS)
    parallel = SampleEvaluator(coarse_model, jobs=2)(POINTS)
    assert np.array_equal(serial, parallel)


def test_failed_sample_is_nan_not_crash(coarse_model):
    events = []
    out = SampleEvaluator(coarse_model, progress=events.append)(np.array([[5e-3, 0.0]]))
    assert np.all(np.isnan(out))
    assert events[0]["event"] == "failure" and "EccentricityError" in events[0]["error"]


def test_cache_resume(coarse_model, tmp_path):
    path = tmp_path / "cache" / "samples.jsonl"
    tag = {"config_hash": "abc", "refinement": 0}
    first = SampleEvaluator(coarse_model, cache=SampleCache(path, tag))(POINTS[:2])
    with path.open("a") as fh:
        fh.write('{"r0": 0.1, "the')  # interrupted write
    events = []
    cache = SampleCache(path, tag, resume=True)
    assert len(cache.entries) == 2
    again = SampleEvaluator(coarse_model, cache=cache, progress=events.append)(POINTS)
    assert np.array_equal(again[:2], first)
    assert len(events) == 1  # only the new point was simulated
    with pytest.raises(SimulationError):
        SampleCache(path, {"config_hash": "other"}, resume=True)
    fresh = SampleCache(path, tag, resume=False)
    assert not fresh.entries
