"""Render the simulation-study figures from hiergibbs CSV output.

All statistics are consumed from the CSV files (quantile rows included),
never recomputed; the CSV schema of the producing experiment is the only
contract with the sampler package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

QUANTILE_BAND = ("q0.10", "q0.90")
MEDIAN = "q0.50"

#: columns each figure kind requires in its input CSVs
REQUIRED_COLUMNS = {
    "fig1": ("J", "replicate", "max_iat"),
    "fig3": ("J", "replicate", "max_iat"),
    "fig2": ("mu_star", "gamma", "bound_T"),
}


class SchemaError(ValueError):
    """An input CSV does not carry the columns its figure kind needs."""


@dataclass
class FigureSpec:
    kind: str
    input_csv: Sequence[str]
    output_path: str
    log_y: bool = True

    def __post_init__(self):
        if self.kind not in REQUIRED_COLUMNS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if isinstance(self.input_csv, str):
            self.input_csv = (self.input_csv,)
        self.input_csv = tuple(self.input_csv)
        if not self.input_csv:
            raise ValueError("at least one input CSV is required")


@dataclass
class Table:
    path: str
    metadata: str
    columns: tuple
    rows: list = field(default_factory=list)

    def column(self, name):
        return [row.get(name) for row in self.rows]


def read_table(path) -> Table:
    with open(path, newline="") as handle:
        lines = handle.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise SchemaError(f"{path}: missing the '#' metadata line")
    body = list(csv.reader(lines[1:]))
    if not body:
        raise SchemaError(f"{path}: missing the header row")
    columns = tuple(body[0])
    rows = []
    for record in body[1:]:
        parsed = {}
        for key, cell in zip(columns, record):
            if cell == "":
                parsed[key] = None
                continue
            try:
                parsed[key] = float(cell)
            except ValueError:
                parsed[key] = cell
        rows.append(parsed)
    return Table(path=str(path), metadata=lines[0][1:].strip(), columns=columns, rows=rows)


def _check_schema(table: Table, kind: str):
    missing = [c for c in REQUIRED_COLUMNS[kind] if c not in table.columns]
    if missing:
        raise SchemaError(
            f"{table.path}: missing column(s) {', '.join(missing)} required by {kind}"
        )


def _quantile_series(table: Table, marker: str):
    """(J, value) pairs from the summary rows written by the experiment."""
    points = [
        (row["J"], row["max_iat"])
        for row in table.rows
        if row.get("replicate") == marker and row.get("max_iat") is not None
    ]
    points.sort()
    return np.array([p[0] for p in points]), np.array([p[1] for p in points])


def _annotate_empty(ax, table: Table):
    ax.text(0.5, 0.5, f"no data rows in\n{table.path}", ha="center", va="center",
            transform=ax.transAxes, fontsize=9, color="0.35")


def _render_iat_panel(ax, table: Table, log_y: bool):
    js, median = _quantile_series(table, MEDIAN)
    if js.size == 0:
        _annotate_empty(ax, table)
        return
    lo_j, lo = _quantile_series(table, QUANTILE_BAND[0])
    hi_j, hi = _quantile_series(table, QUANTILE_BAND[1])
    if lo_j.size == js.size and hi_j.size == js.size:
        ax.fill_between(js, lo, hi, alpha=0.25, color="tab:blue", linewidth=0,
                        label="0.1–0.9 quantiles")
    ax.plot(js, median, marker="o", color="tab:blue", label="median")
    ax.set_xlabel("number of groups J")
    ax.set_ylabel("max IAT")
    if log_y:
        ax.set_yscale("log")
    ax.set_xscale("log")
    ax.legend(frameon=False, fontsize=8)


def _render_fig2(fig, tables, log_y):
    table = tables[0]
    axes = fig.subplots(1, 2)
    rows = [r for r in table.rows if r.get("mu_star") is not None]
    if not rows:
        for ax in axes:
            _annotate_empty(ax, table)
        return
    rows.sort(key=lambda r: r["mu_star"])
    mu = np.array([r["mu_star"] for r in rows])
    bound = np.array([r["bound_T"] for r in rows])
    axes[0].plot(mu, bound, marker="o", color="tab:red")
    axes[0].set_xlabel(r"population mean $\mu^*$")
    axes[0].set_ylabel("mixing-time upper bound")
    if log_y:
        axes[0].set_yscale("log")

    if "median_max_iat" in table.columns and any(
        r.get("median_max_iat") is not None for r in rows
    ):
        iat = np.array([np.nan if r.get("median_max_iat") is None else r["median_max_iat"]
                        for r in rows])
        axes[1].plot(mu, iat, marker="o", color="tab:blue")
        axes[1].set_ylabel("median max IAT")
        if log_y:
            axes[1].set_yscale("log")
    else:
        # without chain runs the right panel shows the gap itself
        gamma = np.array([r["gamma"] for r in rows])
        axes[1].plot(mu, gamma, marker="o", color="tab:blue")
        axes[1].set_ylabel(r"limiting spectral gap $\gamma$")
    axes[1].set_xlabel(r"population mean $\mu^*$")


def render(spec: FigureSpec) -> str:
    """Render the figure and return the output path.  Deterministic:
    identical inputs produce byte-identical image files."""
    tables = [read_table(path) for path in spec.input_csv]
    for table in tables:
        _check_schema(table, spec.kind)

    if spec.kind == "fig2":
        fig = plt.figure(figsize=(9.0, 3.6))
        _render_fig2(fig, tables, spec.log_y)
    else:
        n = len(tables)
        fig, axes = plt.subplots(1, n, figsize=(4.5 * n, 3.6), squeeze=False)
        for ax, table in zip(axes[0], tables):
            _render_iat_panel(ax, table, spec.log_y)
            ax.set_title(table.path.rsplit("/", 1)[-1], fontsize=9)
    fig.tight_layout()
    try:
        fig.savefig(spec.output_path, dpi=150, metadata={"Software": "render_figures"})
    finally:
        plt.close(fig)
    return spec.output_path
