"""Optional matplotlib renderings of command outputs.

matplotlib is imported lazily so that the library and the delimited outputs
work without it.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: str) -> None:
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None} if path.endswith(".png") else {"Creator": None})
    _pyplot().close(fig)


def density_figure(path: str, x, y, intervals: Sequence[tuple[float, float]] = (), title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, y, lw=1.2)
    for lo, hi in intervals:
        ax.axvspan(lo, hi, color="tab:orange", alpha=0.15)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title(title)
    _save(fig, path)


def edge_figure(path: str, sizes, lambda_max, edge: float, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(sizes, lambda_max, s=10)
    ax.axhline(edge, color="k", lw=0.8, ls="--")
    ax.set_xscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("largest eigenvalue")
    ax.set_title(title)
    _save(fig, path)


def bias_figure(path: str, sizes, deviation, residual, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(sizes, deviation, "o-", label="|E S_N - S|")
    ax.loglog(sizes, residual, "s-", label="|E S_N - S - bias/N|")
    ax.set_xlabel("N")
    ax.legend()
    ax.set_title(title)
    _save(fig, path)


def deviation_figure(path: str, names: Sequence[str], values, tolerance: float) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    pos = np.arange(len(names))
    ax.barh(pos, np.maximum(np.asarray(values, dtype=float), 1e-18))
    ax.set_yticks(pos, names, fontsize=7)
    ax.set_xscale("log")
    ax.axvline(tolerance, color="r", lw=0.8)
    ax.set_xlabel("max deviation")
    fig.tight_layout()
    _save(fig, path)
