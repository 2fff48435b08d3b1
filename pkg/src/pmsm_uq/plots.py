"""Report figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .torque import Spectrum, TorqueTrace  # noqa: E402

# fixed metadata keeps PNG bytes independent of the matplotlib build date
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_trace(trace: TorqueTrace, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    angle = np.degrees(trace.times * trace.omega_m)
    ax.plot(angle, trace.torque, lw=1)
    ax.axhline(trace.mean_torque(), color="k", lw=0.8, ls="--", label="mean")
    ax.set_xlabel("rotor angle (deg)")
    ax.set_ylabel("torque (N m)")
    ax.legend(loc="best")
    return _save(fig, Path(path))


def plot_spectrum(spectra: dict[str, Spectrum], path: str | Path, max_harmonic: int | None = None) -> Path:
    """Harmonic amplitudes (log scale) of one or more traces, excluding the mean."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    n = len(spectra)
    width = 0.8 / max(n, 1)
    for k, (label, sp) in enumerate(spectra.items()):
        amp = sp.amplitudes[1:]
        h = np.arange(1, len(amp) + 1)
        if max_harmonic is not None:
            amp, h = amp[:max_harmonic], h[:max_harmonic]
        ax.bar(h + (k - (n - 1) / 2) * width, np.maximum(amp, 1e-12), width=width, label=label)
    ax.set_yscale("log")
    ax.set_ylim(bottom=1e-6)
    ax.set_xlabel("harmonic per mechanical revolution")
    ax.set_ylabel("amplitude (N m)")
    if n > 1:
        ax.legend(loc="best")
    return _save(fig, Path(path))


def plot_sweep(eccentricity: Sequence[float], thd: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(100 * np.asarray(eccentricity), 100 * np.asarray(thd), "o-")
    ax.set_xlabel("eccentricity (%)")
    ax.set_ylabel("THD (%)")
    return _save(fig, Path(path))


def plot_samples(points: np.ndarray, values: np.ndarray, label: str, path: str | Path) -> Path:
    """Output against ``R0``, coloured by ``theta0``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    sc = ax.scatter(1e3 * points[:, 0], values, c=points[:, 1], s=10, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="theta0 (rad)")
    ax.set_xlabel("R0 (mm)")
    ax.set_ylabel(label)
    return _save(fig, Path(path))
