"""Command-line front end: nominal runs, eccentricity sweeps and UQ campaigns.

Example::

    pmsm-uq --mode sweep --out runs/sweep
    pmsm-uq --mode uq-mc --seed 1 --jobs 4 --out runs/mc --refinement 0

Every CSV starts with a ``#`` line carrying the machine configuration hash.
Exit status is 0 on success, 2 for configuration errors and 1 for
simulation failures.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, MachineSpec, default_machine, machine_from_dict, tomllib
from .geometry import EccentricityError
from .simulation import MachineModel, SampleCache, SampleEvaluator, SimulationError
from .torque import band_maxwell_torque, cogging_order
from .uq import (RandomInputModel, UqError, UqResult, compare_methods, gpc_estimate, mc_estimate,
                 sobol_sensitivity)

log = logging.getLogger("pmsm_uq")

MODES = ("nominal", "sweep", "uq-mc", "uq-gpc", "sensitivity", "compare")
STOCHASTIC = {"uq-mc", "sensitivity", "compare"}
# nominal runs and sweeps resolve the slot harmonic; UQ campaigns use the coarse mesh
DEFAULT_REFINEMENT = {"nominal": 1, "sweep": 1}
UQ_REFINEMENT = 0


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs besides the machine itself."""

    mode: str
    out: Path
    seed: int | None = None
    jobs: int = 1
    refinement: int = 0
    resume: bool = False
    harmonics: int | None = None
    eps_grid: tuple[float, ...] = (0.0, 0.1, 0.25, 0.5)
    direction: float = 0.0
    n_mc: int = 3200
    nodes_per_dim: int = 5
    n_base: int = 64
    sigma_r0: float = 0.4e-3 / 3
    k: float = 3.0
    plots: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"run.mode: expected one of {', '.join(MODES)}")
        if self.mode in STOCHASTIC and self.seed is None:
            raise ConfigError(f"run.seed: required for mode {self.mode}")
        if self.refinement < 0:
            raise ConfigError("run.refinement: must be >= 0")
        if self.jobs < 1:
            raise ConfigError("run.jobs: must be >= 1")
        if self.n_mc < 2:
            raise ConfigError("run.n_mc: must be >= 2")
        if self.nodes_per_dim < 1:
            raise ConfigError("run.nodes_per_dim: must be >= 1")
        if self.n_base < 2:
            raise ConfigError("run.n_base: must be >= 2")
        if not self.sigma_r0 > 0:
            raise ConfigError("run.sigma_r0: must be positive")
        if not self.eps_grid or any(not 0 <= e < 1 for e in self.eps_grid):
            raise ConfigError("run.eps_grid: eccentricities must lie in [0, 1)")
        if self.harmonics is not None and self.harmonics < 0:
            raise ConfigError("run.harmonics: must be >= 0")


_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"out", "jobs", "resume"}


def load_config(path: str | Path | None) -> tuple[MachineSpec, dict[str, Any]]:
    """Machine plus the optional ``[run]`` table of a config file."""
    if path is None:
        return default_machine(), {}
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    run = data.pop("run", {})
    if not isinstance(run, dict):
        raise ConfigError("run: expected a table")
    for key in run:
        if key not in _RUN_KEYS:
            raise ConfigError(f"run.{key}: unknown field")
    return machine_from_dict(data), run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmsm-uq", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="machine TOML (optionally with a [run] table); default machine if omitted")
    p.add_argument("--mode", choices=MODES, help="analysis to run (default nominal)")
    p.add_argument("--seed", type=int, help="random seed, required for uq-mc, sensitivity and compare")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true", help="reuse cached samples from a previous run in --out")
    p.add_argument("--refinement", type=int, help="mesh refinement level "
                   "(default 1 for nominal and sweep, 0 for the UQ modes)")
    p.add_argument("--harmonics", type=int, help="harmonics in the THD sum (default: all below Nyquist)")
    p.add_argument("--eps", type=float, nargs="+", dest="eps_grid", help="sweep eccentricities (fractions)")
    p.add_argument("--n-mc", type=int, dest="n_mc", help="Monte Carlo sample count")
    p.add_argument("--nodes", type=int, dest="nodes_per_dim", help="gPC nodes per input")
    p.add_argument("--n-base", type=int, dest="n_base", help="Saltelli base sample count")
    p.add_argument("--no-plots", action="store_true", help="skip the figures")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args: argparse.Namespace) -> tuple[MachineSpec, RunConfig]:
    spec, run = load_config(args.config)
    for key in ("mode", "seed", "refinement", "harmonics", "eps_grid", "n_mc", "nodes_per_dim", "n_base"):
        value = getattr(args, key)
        if value is not None:
            run[key] = value
    run.setdefault("mode", "nominal")
    if "eps_grid" in run:
        run["eps_grid"] = tuple(float(e) for e in run["eps_grid"])
    if run.get("refinement") is None:
        run["refinement"] = DEFAULT_REFINEMENT.get(run["mode"], UQ_REFINEMENT)
    try:
        cfg = RunConfig(out=Path(args.out), jobs=args.jobs, resume=args.resume,
                        plots=not args.no_plots, **run)
    except TypeError as exc:
        raise ConfigError(f"run: {exc}") from exc
    cfg.validate()
    return spec, cfg


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


class Outputs:
    """Writes files into the run directory and nowhere else."""

    def __init__(self, spec: MachineSpec, cfg: RunConfig):
        self.spec = spec
        self.cfg = cfg
        self.root = cfg.out
        self.root.mkdir(parents=True, exist_ok=True)
        self.hash = spec.config_hash()
        self.files: list[str] = []
        self._log = (self.root / "log.jsonl").open("a" if cfg.resume else "w")

    def header(self) -> str:
        seed = "" if self.cfg.seed is None else f" seed={self.cfg.seed}"
        return (f"# pmsm_uq {__version__} config_hash={self.hash} mode={self.cfg.mode} "
                f"refinement={self.cfg.refinement}{seed}")

    def csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.root / name
        with path.open("w", newline="") as fh:
            fh.write(self.header() + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(name)
        return path

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def event(self, record: dict) -> None:
        record = {"time": round(time.time(), 3), **record}
        self._log.write(json.dumps(record, default=float) + "\n")
        self._log.flush()

    def manifest(self, extra: dict) -> None:
        cfg = dataclasses.asdict(self.cfg)
        cfg["out"] = "."
        cfg.pop("jobs")
        cfg.pop("resume")
        doc = {"version": __version__, "config_hash": self.hash, "run": cfg,
               "machine": self.spec.to_dict(), **extra, "files": sorted(self.files)}
        with (self.root / "manifest.json").open("w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=float)
            fh.write("\n")

    def close(self) -> None:
        self._log.close()


# --------------------------------------------------------------------------
# modes
# --------------------------------------------------------------------------

def _plots():
    from . import plots  # matplotlib is only imported when figures are requested
    return plots


def run_nominal(model: MachineModel, out: Outputs) -> dict:
    res = model.simulate()
    tr, sp = res.trace, res.spectrum
    out.csv("trace.csv", ["time", "rotor_angle", "torque", "p_e", "p_l", "w_mag"],
            zip(tr.times, res.period.rotor_angles, tr.torque, tr.p_e, tr.p_l, tr.energy))
    out.csv("spectrum.csv", ["harmonic", "amplitude"], enumerate(sp.amplitudes))
    maxwell = float(np.mean([band_maxwell_torque(res.period, k) for k in range(res.period.n_steps)]))
    out.csv("nominal.csv", ["quantity", "value"],
            [("tau0", res.mean_torque), ("thd", sp.thd), ("n_harmonics", sp.n_harmonics),
             ("maxwell_band_torque", maxwell)])
    if out.cfg.plots:
        p = _plots()
        p.plot_trace(tr, out.path("trace.png"))
        p.plot_spectrum({"nominal": sp}, out.path("spectrum.png"))
    log.info("mean torque %.6g N m, THD %.4g %%", res.mean_torque, 100 * sp.thd)
    return {"tau0": res.mean_torque, "thd": sp.thd}


def run_sweep(model: MachineModel, out: Outputs) -> dict:
    cfg = out.cfg
    order = cogging_order(model.spec.slot_count, model.spec.pole_pairs)
    rows, spectra = [], {}
    for eps in cfg.eps_grid:
        res = model.simulate(eps * model.spec.airgap, cfg.direction)
        amp = res.spectrum.harmonic(order) if order < len(res.spectrum.amplitudes) else math.nan
        rows.append((eps, eps * model.spec.airgap, res.mean_torque, res.spectrum.thd, amp))
        spectra[eps] = res.spectrum
        out.event({"event": "sweep", "eps": eps, "tau0": res.mean_torque, "thd": res.spectrum.thd})
    out.csv("sweep.csv", ["eccentricity", "r0", "tau0", "thd", "cogging_amplitude"], rows)
    out.csv("spectra.csv", ["eccentricity", "harmonic", "amplitude"],
            ((eps, h, a) for eps, sp in spectra.items() for h, a in enumerate(sp.amplitudes)))
    if cfg.plots:
        p = _plots()
        p.plot_sweep([r[0] for r in rows], [r[3] for r in rows], out.path("thd_vs_eccentricity.png"))
        p.plot_spectrum({f"{100 * e:g} %": s for e, s in spectra.items()}, out.path("spectra.png"))
    return {"cogging_order": order}


def _summary_rows(results: Iterable[UqResult]):
    for r in results:
        yield (r.quantity, r.method, r.mean, r.std, r.mc_error, r.first_order[0], r.first_order[1],
               r.n_evaluations)


SUMMARY_COLUMNS = ["quantity", "method", "mean", "std", "mc_error", "s_r0", "s_theta0", "n_evaluations"]
SAMPLE_COLUMNS = ["sample_id", "method", "r0", "theta0", "weight", "tau0", "thd"]


def _sample_rows(method: str, sample_set):
    for j, (pt, w, v) in enumerate(zip(sample_set.points, sample_set.weights, sample_set.values)):
        yield (j, method, pt[0], pt[1], w, v[0], v[1])


def _sample_plots(out: Outputs, sample_set, prefix: str) -> None:
    if out.cfg.plots:
        p = _plots()
        p.plot_samples(sample_set.points, sample_set.column("tau0"), "mean torque (N m)",
                       out.path(f"{prefix}_tau0.png"))
        p.plot_samples(sample_set.points, sample_set.column("thd"), "THD", out.path(f"{prefix}_thd.png"))


def run_uq(model: MachineModel, out: Outputs, evaluate: SampleEvaluator) -> dict:
    cfg = out.cfg
    inputs = RandomInputModel(sigma_r0=cfg.sigma_r0, r0_bound=model.r0_bound)
    extra: dict[str, Any] = {"r0_bound": inputs.r0_bound}
    summary: list[UqResult] = []
    sample_rows: list[tuple] = []
    mc = gpc = None
    if cfg.mode in ("uq-mc", "compare"):
        mc = mc_estimate(inputs, evaluate, cfg.n_mc, cfg.seed)
        summary += mc.results.values()
        sample_rows += _sample_rows("MC", mc)
        extra["mc"] = {"n": cfg.n_mc, "rejected": mc.results["tau0"].n_rejected,
                       "failed": mc.results["tau0"].n_failed}
        _sample_plots(out, mc, "mc")
    if cfg.mode in ("uq-gpc", "compare"):
        gpc = gpc_estimate(inputs, evaluate, cfg.nodes_per_dim)
        summary += gpc.results.values()
        sample_rows += _sample_rows("gPC", gpc)
        extra["gpc"] = {"nodes_per_dim": cfg.nodes_per_dim}
        _sample_plots(out, gpc, "gpc")
    if cfg.mode == "sensitivity":
        indices, pts, values = sobol_sensitivity(inputs, evaluate, cfg.n_base, cfg.seed)
        n = cfg.n_base
        blocks = np.repeat(["A", "B", "AB_r0", "AB_theta0"], n)
        sample_rows += [(j, f"Saltelli-{b}", p[0], p[1], math.nan, v[0], v[1])
                        for j, (b, p, v) in enumerate(zip(blocks, pts, values))]
        rows = []
        for k, (name, si) in enumerate(indices.items()):
            base = values[:2 * n, k]
            summary.append(UqResult(name, "Saltelli", float(np.mean(base)), float(np.var(base, ddof=1)),
                                    len(pts), first_order=tuple(si.first_order), total=tuple(si.total)))
            for i, inp in enumerate(("r0", "theta0")):
                rows.append((name, inp, si.first_order[i], si.direct[i], si.total[i]))
        out.csv("sensitivity.csv", ["quantity", "input", "first_order", "first_order_direct", "total"], rows)
        extra["sensitivity"] = {"n_base": n}
    out.csv("samples.csv", SAMPLE_COLUMNS, sample_rows)
    out.csv("summary.csv", SUMMARY_COLUMNS, _summary_rows(summary))
    if mc is not None and gpc is not None:
        comp = [compare_methods(mc.results[q], gpc.results[q], cfg.k) for q in mc.names]
        out.csv("comparison.csv",
                ["quantity", "mean_mc", "mean_gpc", "mean_difference", "mc_error", "k", "agree",
                 "variance_ratio"],
                [(c.quantity, mc.results[c.quantity].mean, gpc.results[c.quantity].mean,
                  c.mean_difference, c.mc_error, c.k, c.means_agree, c.variance_ratio) for c in comp])
        extra["agree"] = {c.quantity: c.means_agree for c in comp}
    for r in summary:
        log.info("%s %s: mean %.6g, std %.3g", r.quantity, r.method, r.mean, r.std)
    return extra


def run(spec: MachineSpec, cfg: RunConfig) -> int:
    out = Outputs(spec, cfg)
    out.event({"event": "start", "mode": cfg.mode, "config_hash": out.hash})
    try:
        model = MachineModel(spec, cfg.refinement, cfg.harmonics)
        if cfg.mode == "nominal":
            extra = run_nominal(model, out)
        elif cfg.mode == "sweep":
            extra = run_sweep(model, out)
        else:
            tag = {"config_hash": out.hash, "refinement": cfg.refinement, "harmonics": cfg.harmonics}
            cache = SampleCache(cfg.out / "cache" / "samples.jsonl", tag, resume=cfg.resume)
            evaluate = SampleEvaluator(model, cfg.jobs, cache, progress=out.event)
            extra = run_uq(model, out, evaluate)
        out.manifest(extra)
        out.event({"event": "done"})
        return 0
    except (UqError, SimulationError, EccentricityError) as exc:
        out.event({"event": "error", "error": str(exc)})
        log.error("%s", exc)
        return 1
    finally:
        out.close()


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec, cfg = resolve(args)
    except ConfigError as exc:
        print(f"pmsm-uq: configuration error: {exc}", file=sys.stderr)
        return 2
    from threadpoolctl import threadpool_limits
    with threadpool_limits(1):
        return run(spec, cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
