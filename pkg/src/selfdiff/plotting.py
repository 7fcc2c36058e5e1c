"""Static SVG figures built from the CSV tables alone."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_KINDS = ("j-curve", "phase-portrait", "mean-overlay", "phase-diagram")

_REQUIRED = {
    "j-curve": {"alpha", "J"},
    "phase-portrait": {"alpha", "sigma"},
    "phase-diagram": {"theta", "cos_theta_m2", "regime"},
}
# any of these column pairs is accepted as a mean trajectory
_MEAN_COLUMNS = (("mean_x", "mean_y"), ("meanmu_1", "meanmu_2"))

_REGIME_COLORS = {"ConvergeToGamma": "#4c72b0", "ConvergeToRandomFixed": "#dd8452", "Circling": "#55a868"}


class PlotError(ValueError):
    pass


def read_table(path) -> dict[str, list[str]]:
    """Columns of a CSV file, skipping '#' header comments."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if len(rows) < 2:
        raise PlotError(f"{path}: no data rows")
    head = rows[0]
    cols = {h: [] for h in head}
    for r in rows[1:]:
        if len(r) != len(head):
            raise PlotError(f"{path}: ragged row {r}")
        for h, v in zip(head, r):
            cols[h].append(v)
    return cols


def _floats(col) -> np.ndarray:
    return np.array([float(v) if v not in ("", "None", "nan") else np.nan for v in col])


def _mean_pair(cols, path):
    for a, b in _MEAN_COLUMNS:
        if a in cols and b in cols:
            return _floats(cols[a]), _floats(cols[b])
    raise PlotError(f"{path}: no mean columns (expected one of {_MEAN_COLUMNS})")


def _save(fig, out) -> Path:
    out = Path(out)
    with plt.rc_context({"svg.hashsalt": "selfdiff", "svg.fonttype": "path"}):
        fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def plot(csv_files, kind: str, out) -> Path:
    """Render ``kind`` from ``csv_files`` into the SVG file ``out``."""
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    csv_files = [Path(p) for p in csv_files]
    if not csv_files:
        raise PlotError("no CSV files given")
    tables = [read_table(p) for p in csv_files]
    need = _REQUIRED.get(kind)
    if need:
        for p, t in zip(csv_files, tables):
            if not need <= set(t):
                raise PlotError(f"{p}: columns {sorted(need - set(t))} missing for plot kind {kind}")
    fig, ax = plt.subplots(figsize=(6, 4.5))

    if kind == "j-curve":
        for p, t in zip(csv_files, tables):
            ax.plot(_floats(t["alpha"]), _floats(t["J"]), label=p.stem)
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.set_xlabel("alpha")
        ax.set_ylabel("J(alpha)")
    elif kind == "phase-portrait":
        for p, t in zip(csv_files, tables):
            a, s = _floats(t["alpha"]), _floats(t["sigma"])
            ax.plot(0.5 * a * np.cos(s), 0.5 * a * np.sin(s), label=p.stem)
        ax.set_aspect("equal")
        ax.set_xlabel("mean x = (alpha/2) cos sigma")
        ax.set_ylabel("mean y = (alpha/2) sin sigma")
    elif kind == "mean-overlay":
        for p, t in zip(csv_files, tables):
            mx, my = _mean_pair(t, p)
            ax.plot(mx, my, lw=0.9, label=p.stem)
        ax.set_aspect("equal")
        ax.set_xlabel("mean x")
        ax.set_ylabel("mean y")
    else:
        t = tables[0]
        theta = _floats(t["theta"])
        for k, (th, reg) in enumerate(zip(theta, t["regime"])):
            lo = theta[k - 1] if k else th
            hi = theta[k + 1] if k + 1 < theta.size else th
            ax.axvspan(0.5 * (lo + th), 0.5 * (th + hi), color=_REGIME_COLORS.get(reg, "0.5"), lw=0)
        ax.plot(theta, _floats(t["cos_theta_m2"]), color="k", lw=1.0, label="cos(theta) m2")
        ax.axhline(-1.0, color="k", ls="--", lw=0.8)
        for reg, c in _REGIME_COLORS.items():
            ax.plot([], [], color=c, lw=6, label=reg)
        ax.set_xlabel("theta")
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    return _save(fig, out)
