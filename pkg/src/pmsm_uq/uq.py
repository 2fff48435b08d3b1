"""Uncertainty propagation for the rotor displacement ``R0`` and direction ``theta0``.

``R0`` is a zero-mean normal variable and ``theta0`` is uniform on an
interval.  The module provides Monte Carlo estimation, tensor Gauss
collocation (probabilists' Hermite nodes for ``R0``, Legendre nodes for
``theta0``) and Saltelli pick-freeze sensitivity indices.

Simulators are *batch evaluators*: callables taking an ``(n, 2)`` array of
``(R0, theta0)`` points and returning an ``(n, q)`` array of outputs, with a
row of NaN for a failed evaluation.  :class:`FunctionEvaluator` wraps a plain
Python function.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import linalg, special
from scipy.stats import qmc

log = logging.getLogger(__name__)

DEFAULT_SIGMA_R0 = 0.4e-3 / 3
MAX_FAILURE_RATE = 0.05


class UqError(RuntimeError):
    pass


class Evaluator(Protocol):
    names: tuple[str, ...]

    def __call__(self, points: np.ndarray) -> np.ndarray: ...


class FunctionEvaluator:
    """Batch evaluator around ``func(r0, theta0)`` returning a scalar or a sequence."""

    def __init__(self, func: Callable[[float, float], float | Sequence[float]],
                 names: Sequence[str] = ("f",)):
        self.func = func
        self.names = tuple(names)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, float))
        out = np.empty((len(points), len(self.names)))
        for i, (r0, th) in enumerate(points):
            try:
                out[i] = self.func(float(r0), float(th))
            except Exception as exc:  # a failed sample is data, not a crash
                log.warning("evaluation failed at R0=%r theta0=%r: %s", r0, th, exc)
                out[i] = np.nan
        return out


# --------------------------------------------------------------------------
# input model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomInputModel:
    """Independent ``R0 ~ N(0, sigma^2)`` and ``theta0 ~ U(theta_low, theta_high)``.

    ``r0_bound`` truncates the normal: Monte Carlo rejects and redraws
    samples with ``|R0| >= r0_bound``, and collocation refuses nodes beyond it.
    """

    sigma_r0: float = DEFAULT_SIGMA_R0
    theta_low: float = 0.0
    theta_high: float = math.pi
    r0_bound: float = math.inf

    def __post_init__(self) -> None:
        if not self.sigma_r0 > 0:
            raise UqError("sigma_r0 must be positive")
        if not self.theta_high > self.theta_low:
            raise UqError("theta0 interval is empty")
        if not self.r0_bound > 0:
            raise UqError("r0_bound must be positive")

    def candidates(self, seed: int, index: int):
        """Endless stream of ``(R0, theta0, rejected)`` for sample ``index``.

        Every sample owns a generator seeded by ``(seed, index)``, so the
        sample set does not depend on evaluation order or worker count.
        """
        rng = np.random.default_rng([seed, index])
        rejected = 0
        while True:
            r0 = rng.normal(0.0, self.sigma_r0)
            th = rng.uniform(self.theta_low, self.theta_high)
            if abs(r0) >= self.r0_bound:
                rejected += 1
                continue
            yield r0, th, rejected
            rejected = 0

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        """Map points of the unit square to ``(R0, theta0)`` by inverse CDFs."""
        u = np.asarray(u, float)
        if math.isfinite(self.r0_bound):
            lo = special.ndtr(-self.r0_bound / self.sigma_r0)
            u0 = lo + (1 - 2 * lo) * u[:, 0]
        else:
            u0 = u[:, 0]
        r0 = self.sigma_r0 * special.ndtri(u0)
        th = self.theta_low + (self.theta_high - self.theta_low) * u[:, 1]
        return np.column_stack([r0, th])

    @property
    def theta_variance(self) -> float:
        return (self.theta_high - self.theta_low) ** 2 / 12


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UqResult:
    """Moments and sensitivities of one output quantity."""

    quantity: str
    method: str
    mean: float
    variance: float
    n_evaluations: int
    mc_error: float = math.nan
    first_order: tuple[float, float] = (math.nan, math.nan)
    total: tuple[float, float] = (math.nan, math.nan)
    n_rejected: int = 0
    n_failed: int = 0

    @property
    def std(self) -> float:
        return math.sqrt(max(self.variance, 0.0))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Evaluated points with their estimator weights."""

    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]
    results: dict[str, UqResult] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def _check_values(values: np.ndarray, n: int, names: Sequence[str]) -> np.ndarray:
    values = np.asarray(values, float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape != (n, len(names)):
        raise UqError(f"evaluator returned shape {values.shape}, expected {(n, len(names))}")
    return values


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------

def mc_points(model: RandomInputModel, n: int, seed: int) -> tuple[np.ndarray, int]:
    """First candidate of every sample plus the total truncation rejections."""
    pts = np.empty((n, 2))
    rejected = 0
    for j in range(n):
        r0, th, rej = next(model.candidates(seed, j))
        pts[j] = r0, th
        rejected += rej
    return pts, rejected


def mc_estimate(model: RandomInputModel, evaluate: Evaluator, n: int, seed: int) -> SampleSet:
    """Plain Monte Carlo with equal weights and the ``1/(N-1)`` variance.

    A sample whose evaluation fails is redrawn from its own stream; the run
    aborts once more than 5 % of all attempted evaluations have failed.
    """
    if n < 2:
        raise UqError("Monte Carlo needs at least two samples")
    names = tuple(evaluate.names)
    streams = [model.candidates(seed, j) for j in range(n)]
    pts = np.empty((n, 2))
    rejected = 0
    for j, s in enumerate(streams):
        r0, th, rej = next(s)
        pts[j] = r0, th
        rejected += rej
    values = _check_values(evaluate(pts), n, names)
    attempts, failed = n, 0
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    while len(bad):
        failed += len(bad)
        if failed > MAX_FAILURE_RATE * attempts:
            raise UqError(f"{failed} of {attempts} evaluations failed (limit 5%); "
                          f"first failing sample id {int(bad[0])}")
        log.warning("redrawing %d failed samples", len(bad))
        for j in bad:
            r0, th, rej = next(streams[j])
            pts[j] = r0, th
            rejected += rej
        attempts += len(bad)
        values[bad] = _check_values(evaluate(pts[bad]), len(bad), names)
        bad = bad[~np.all(np.isfinite(values[bad]), axis=1)]
    if rejected:
        log.info("rejected %d draws beyond |R0| = %g", rejected, model.r0_bound)
    weights = np.full(n, 1.0 / n)
    results = {}
    for k, name in enumerate(names):
        y = values[:, k]
        var = float(np.var(y, ddof=1))
        results[name] = UqResult(name, "MC", float(np.mean(y)), var, n,
                                 mc_error=math.sqrt(var / n), n_rejected=rejected, n_failed=failed)
    return SampleSet(pts, weights, values, names, results)


# --------------------------------------------------------------------------
# Gauss collocation
# --------------------------------------------------------------------------

def golub_welsch(alpha: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights from a three-term recurrence.

    ``alpha`` are the diagonal recurrence coefficients, ``beta[1:]`` the
    squared off-diagonal ones (``beta[0]`` is unused).
    """
    alpha = np.asarray(alpha, float)
    n = len(alpha)
    off = np.sqrt(np.asarray(beta, float)[1:n])
    nodes, vecs = linalg.eigh_tridiagonal(alpha, off)
    weights = vecs[0] ** 2
    return nodes, weights / weights.sum()


def hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the standard normal (probabilists' Hermite)."""
    if n < 1:
        raise UqError("need at least one node")
    return golub_welsch(np.zeros(n), np.arange(n, dtype=float))


def legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the uniform distribution on (-1, 1)."""
    if n < 1:
        raise UqError("need at least one node")
    k = np.arange(n, dtype=float)
    return golub_welsch(np.zeros(n), k ** 2 / (4 * k ** 2 - 1))


def tensor_grid(model: RandomInputModel, nodes_per_dim: int | tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Tensor product of the ``R0`` and ``theta0`` rules; rows are ``(R0, theta0)``."""
    n_r, n_t = (nodes_per_dim, nodes_per_dim) if isinstance(nodes_per_dim, int) else nodes_per_dim
    xr, wr = hermite_rule(n_r)
    xt, wt = legendre_rule(n_t)
    r0 = model.sigma_r0 * xr
    th = model.theta_low + (model.theta_high - model.theta_low) * (xt + 1) / 2
    if np.any(np.abs(r0) >= model.r0_bound):
        raise UqError(f"Hermite node |R0| = {np.max(np.abs(r0)):.4g} m reaches the bound "
                      f"{model.r0_bound:.4g} m; reduce sigma_r0 or the node count")
    R, T = np.meshgrid(r0, th, indexing="ij")
    W = np.outer(wr, wt)
    return np.column_stack([R.ravel(), T.ravel()]), W.ravel()


def gpc_estimate(model: RandomInputModel, evaluate: Evaluator,
                 nodes_per_dim: int | tuple[int, int] = 5) -> SampleSet:
    """Mean and variance by tensor Gauss collocation."""
    pts, w = tensor_grid(model, nodes_per_dim)
    names = tuple(evaluate.names)
    values = _check_values(evaluate(pts), len(pts), names)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(values), axis=1))[0])
        raise UqError(f"collocation node {bad} at R0={pts[bad, 0]!r}, theta0={pts[bad, 1]!r} failed")
    results = {}
    for k, name in enumerate(names):
        y = values[:, k]
        mu = float(w @ y)
        var = float(w @ (y - mu) ** 2)
        results[name] = UqResult(name, "gPC", mu, var, len(pts))
    return SampleSet(pts, w, values, names, results)


# --------------------------------------------------------------------------
# sensitivity
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SobolIndices:
    """First-order and total indices for ``(R0, theta0)``.

    ``first_order`` holds the reported estimate, ``direct`` the plain
    Saltelli estimate for both inputs (see :func:`saltelli_indices`).
    """

    quantity: str
    first_order: np.ndarray
    total: np.ndarray
    direct: np.ndarray
    variance: float
    n_base: int

    def clipped(self, tol: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
        return (np.clip(self.first_order, -tol, 1 + tol), np.clip(self.total, -tol, 1 + tol))


def saltelli_design(model: RandomInputModel, n_base: int, seed: int) -> np.ndarray:
    """Stacked ``[A; B; AB_R0; AB_theta0]`` points from a scrambled Sobol sequence.

    ``AB_i`` is ``A`` with column ``i`` taken from ``B``.
    """
    if n_base < 2:
        raise UqError("n_base must be at least 2")
    sampler = qmc.Sobol(d=4, scramble=True, seed=np.random.default_rng([seed, 0x5A17]))
    m = math.log2(n_base)
    u = sampler.random_base2(int(m)) if m == int(m) else sampler.random(n_base)
    A = model.from_unit(u[:, :2])
    B = model.from_unit(u[:, 2:])
    blocks = [A, B]
    for i in range(2):
        AB = A.copy()
        AB[:, i] = B[:, i]
        blocks.append(AB)
    return np.vstack(blocks)


def saltelli_indices(values: np.ndarray, n_base: int, name: str = "f") -> SobolIndices:
    """Sensitivity indices of two inputs from the outputs of :func:`saltelli_design`.

    Totals use Jansen's estimator ``mean((f_A - f_ABi)^2) / 2V``.  The direct
    first-order estimator ``mean(f_B (f_ABi - f_A)) / V`` is precise for small
    indices but noisy near one.  With two inputs the first-order index of one
    input is exactly one minus the total index of the other, and that
    complement is precise when the other input matters little.  Each input
    therefore gets the complement form when the other input has the smaller
    total index, and the direct form otherwise.
    """
    y = np.asarray(values, float)
    if y.shape != (4 * n_base,):
        raise UqError("design outputs do not match the Saltelli layout")
    # centring on the pooled mean keeps a large output offset out of the products
    y = y - np.mean(y[:2 * n_base])
    f_A, f_B = y[:n_base], y[n_base:2 * n_base]
    var = float(np.var(np.r_[f_A, f_B], ddof=1))
    if not var > 0:
        raise UqError(f"zero output variance for {name}: sensitivity indices undefined")
    direct, total = np.empty(2), np.empty(2)
    for i in range(2):
        f_AB = y[(2 + i) * n_base:(3 + i) * n_base]
        direct[i] = np.mean(f_B * (f_AB - f_A)) / var
        total[i] = 0.5 * np.mean((f_A - f_AB) ** 2) / var
    first = direct.copy()
    for i in range(2):
        other = 1 - i
        if total[other] < total[i]:
            first[i] = 1.0 - total[other]
    return SobolIndices(name, first, total, direct, var, n_base)


def sobol_sensitivity(model: RandomInputModel, evaluate: Evaluator, n_base: int,
                      seed: int) -> tuple[dict[str, SobolIndices], np.ndarray, np.ndarray]:
    """Sensitivity indices of every output; also returns the design and its outputs."""
    pts = saltelli_design(model, n_base, seed)
    names = tuple(evaluate.names)
    values = _check_values(evaluate(pts), len(pts), names)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(values), axis=1))[0])
        raise UqError(f"sensitivity design point {bad} failed; the pick-freeze design cannot redraw")
    out = {name: saltelli_indices(values[:, k], n_base, name) for k, name in enumerate(names)}
    return out, pts, values


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodComparison:
    quantity: str
    mean_difference: float
    mc_error: float
    k: float
    means_agree: bool
    variance_ratio: float


def compare_methods(mc: UqResult, gpc: UqResult, k: float = 3.0) -> MethodComparison:
    """Check ``|mu_MC - mu_gPC| <= k * eps_MC`` and report the variance ratio."""
    if mc.quantity != gpc.quantity:
        raise UqError(f"cannot compare {mc.quantity!r} with {gpc.quantity!r}")
    diff = abs(mc.mean - gpc.mean)
    ratio = mc.variance / gpc.variance if gpc.variance > 0 else (1.0 if mc.variance == 0 else math.inf)
    return MethodComparison(mc.quantity, diff, mc.mc_error, k, bool(diff <= k * mc.mc_error), ratio)
