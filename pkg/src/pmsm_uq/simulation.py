"""Period simulations of one machine, single or batched over eccentricity samples.

:class:`MachineModel` meshes the machine once and condenses the stator once;
only the rotor (whose airgap band is deformed by the displacement) is
re-condensed per sample.  :class:`SampleEvaluator` adapts a model to the
batch-evaluator interface of :mod:`pmsm_uq.uq`, with an optional on-disk
cache and a process pool.
"""
from __future__ import annotations

import json
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .config import MachineSpec
from .coupling import CondensedDomain, CouplingError, PeriodSolution, condense_rotor, condense_stator, run_period
from .fem import domain_system
from .geometry import (CoupledMesh, EccentricityError, EccentricityState, apply_eccentricity,
                       build_mesh, max_displacement)
from .torque import Spectrum, TorqueTrace, spectrum_and_thd, torque_trace

log = logging.getLogger(__name__)

QUANTITIES = ("tau0", "thd")
# fraction of the rotor-side band thickness a displacement may use
BAND_SAFETY = 0.99


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SimulationResult:
    eccentricity: EccentricityState
    period: PeriodSolution
    trace: TorqueTrace
    spectrum: Spectrum

    @property
    def mean_torque(self) -> float:
        return self.trace.mean_torque()

    @property
    def thd(self) -> float:
        return self.spectrum.thd


class MachineModel:
    """A meshed machine at one refinement level, ready for repeated period runs."""

    def __init__(self, spec: MachineSpec, refinement: int = 0, n_harmonics: int | None = None):
        self.spec = spec
        self.refinement = refinement
        self.n_harmonics = n_harmonics
        self.mesh: CoupledMesh = build_mesh(spec, refinement)
        self._stator: CondensedDomain | None = None

    @property
    def stator(self) -> CondensedDomain:
        if self._stator is None:
            self._stator = condense_stator(domain_system(self.spec, self.mesh, 0))
        return self._stator

    @property
    def r0_bound(self) -> float:
        """Largest displacement magnitude the mesh map accepts (exclusive)."""
        return BAND_SAFETY * min(max_displacement(self.mesh), self.spec.airgap)

    def simulate(self, displacement: float = 0.0, direction: float = 0.0) -> SimulationResult:
        """One mechanical revolution at the given rotor displacement."""
        ecc = EccentricityState.for_machine(self.spec, displacement, direction)
        if abs(displacement) >= self.r0_bound:
            raise EccentricityError(
                f"|R0| = {abs(displacement):.4g} m exceeds the mesh-safe bound {self.r0_bound:.4g} m")
        mesh = apply_eccentricity(self.mesh, ecc)
        rotor = condense_rotor(domain_system(self.spec, mesh, 1))
        period = run_period(self.spec, mesh, stator=self.stator, rotor=rotor, span="mechanical")
        trace = torque_trace(period)
        spectrum = spectrum_and_thd(trace.torque, self.n_harmonics)
        return SimulationResult(ecc, period, trace, spectrum)

    def evaluate(self, displacement: float, direction: float) -> tuple[float, float]:
        """Mean torque and THD for one ``(R0, theta0)`` sample."""
        result = self.simulate(displacement, direction)
        return result.mean_torque, result.thd


# --------------------------------------------------------------------------
# cache
# --------------------------------------------------------------------------

class SampleCache:
    """Append-only JSONL store of evaluated samples keyed by the exact ``(R0, theta0)``.

    The first line records the configuration hash, refinement and harmonic
    cutoff; a cache written for a different setup is refused.
    """

    def __init__(self, path: str | Path, tag: dict, resume: bool = False):
        self.path = Path(path)
        self.tag = tag
        self.entries: dict[tuple[float, float], tuple[float, ...]] = {}
        if resume and self.path.exists():
            self._load()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w") as fh:
                fh.write(json.dumps({"cache": tag}, sort_keys=True) + "\n")

    def _load(self) -> None:
        with self.path.open() as fh:
            lines = fh.read().splitlines()
        if not lines or json.loads(lines[0]).get("cache") != self.tag:
            raise SimulationError(f"{self.path} was written for a different configuration; "
                                  "remove it or run without --resume")
        for line in lines[1:]:
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:  # a run killed mid-write leaves a partial line
                log.warning("ignoring truncated cache line in %s", self.path)
                continue
            values = tuple(math.nan if v is None else float(v) for v in rec["values"])
            self.entries[(float(rec["r0"]), float(rec["theta0"]))] = values
        log.info("resumed %d cached samples from %s", len(self.entries), self.path)

    def get(self, r0: float, theta0: float):
        return self.entries.get((r0, theta0))

    def put(self, r0: float, theta0: float, values, error: str | None = None) -> None:
        values = tuple(float(v) for v in values)
        self.entries[(r0, theta0)] = values
        rec = {"r0": r0, "theta0": theta0,
               "values": [None if math.isnan(v) else v for v in values]}
        if error:
            rec["error"] = error
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec) + "\n")


# --------------------------------------------------------------------------
# pooled evaluation
# --------------------------------------------------------------------------

_WORKER_MODEL: MachineModel | None = None


def _worker_init(model: MachineModel) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = model
    threadpool_limits(1)


def _evaluate_one(point: tuple[float, float]) -> tuple[tuple[float, float], str | None, float]:
    start = time.perf_counter()
    r0, th = point
    try:
        with threadpool_limits(1):
            values = _WORKER_MODEL.evaluate(r0, th)
        error = None
    except (EccentricityError, CouplingError, np.linalg.LinAlgError, ValueError) as exc:
        values, error = (math.nan, math.nan), f"{type(exc).__name__}: {exc}"
    return values, error, time.perf_counter() - start


class SampleEvaluator:
    """Batch evaluator of ``(tau0, thd)`` over ``(R0, theta0)`` points.

    Results are independent of ``jobs``: every sample is a self-contained
    deterministic computation with single-threaded linear algebra.
    """

    names = QUANTITIES

    def __init__(self, model: MachineModel, jobs: int = 1, cache: SampleCache | None = None,
                 progress: Callable[[dict], None] | None = None):
        self.model = model
        self.jobs = max(1, int(jobs))
        self.cache = cache
        self.progress = progress
        self._done = 0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, float))
        out = np.empty((len(points), len(self.names)))
        todo: dict[tuple[float, float], list[int]] = {}
        for i, (r0, th) in enumerate(points):
            key = (float(r0), float(th))
            hit = self.cache.get(*key) if self.cache else None
            if hit is not None:
                out[i] = hit
            else:
                todo.setdefault(key, []).append(i)
        keys = list(todo)
        if keys:
            self.model.stator  # condense once before forking so workers share it
            for key, (values, error, elapsed) in zip(keys, self._map(keys)):
                out[todo[key]] = values
                if self.cache:
                    self.cache.put(*key, values, error)
                self._done += 1
                if self.progress:
                    rec = {"event": "sample", "r0": key[0], "theta0": key[1],
                           "tau0": values[0], "thd": values[1], "seconds": round(elapsed, 3),
                           "done": self._done}
                    if error:
                        rec["event"], rec["error"] = "failure", error
                    self.progress(rec)
        return out

    def _map(self, keys):
        global _WORKER_MODEL
        if self.jobs == 1 or len(keys) == 1:
            _WORKER_MODEL = self.model
            yield from map(_evaluate_one, keys)
            return
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(self.jobs, mp_context=ctx, initializer=_worker_init,
                                 initargs=(self.model,)) as pool:
            yield from pool.map(_evaluate_one, keys, chunksize=1)
