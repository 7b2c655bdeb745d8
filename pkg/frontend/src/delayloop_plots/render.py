"""Figure assembly from simulator CSV files.

This package never recomputes physics: it parses the exact CSV schema written
by the simulator CLI (`t,P_e,re_coh,im_coh,trace_err,min_eig` for two-level
runs, `t,re_a,im_a,n_phot,trace_err,min_eig` for cavity runs) and draws the
feedback and no-feedback series of each panel into one stacked figure.
"""

import csv
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SCHEMAS = (
    ("t", "P_e", "re_coh", "im_coh", "trace_err", "min_eig"),
    ("t", "re_a", "im_a", "n_phot", "trace_err", "min_eig"),
)
GRID_ATOL = 1e-12


class SchemaError(ValueError):
    """CSV header does not match the simulator schema; names the column."""


@dataclass
class PanelSpec:
    feedback_csv: str
    no_feedback_csv: str
    y_column: str = ""          # empty: first observable column of the schema
    title: str = ""
    tau_marker: float = 0.0     # 0 disables the delay marker


def read_series(path):
    """Parse one simulator CSV; returns (header tuple, dict of float arrays)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        for schema in SCHEMAS:
            if header == schema:
                break
        else:
            for schema in SCHEMAS:
                if header[0] == "t" and len(header) == len(schema):
                    for got, want in zip(header, schema):
                        if got != want:
                            raise SchemaError(
                                f"{path}: unexpected column {got!r} "
                                f"(expected {want!r})")
            raise SchemaError(
                f"{path}: header {','.join(header)} matches no known schema")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.asarray(rows)
    return header, {name: data[:, i] for i, name in enumerate(header)}


def _load_panel(spec):
    header_fb, fb = read_series(spec.feedback_csv)
    header_nf, nf = read_series(spec.no_feedback_csv)
    if header_fb != header_nf:
        raise SchemaError(
            f"{spec.no_feedback_csv}: schema differs from {spec.feedback_csv}")
    if fb["t"].shape != nf["t"].shape or np.max(np.abs(fb["t"] - nf["t"])) > GRID_ATOL:
        raise SchemaError(
            f"{spec.no_feedback_csv}: time grid differs from {spec.feedback_csv}")
    y = spec.y_column or header_fb[1]
    if y not in fb:
        raise SchemaError(f"{spec.feedback_csv}: no column {y!r}")
    return y, fb, nf


def render(panels, out_path):
    """Draw one stacked figure with a feedback and a no-feedback curve per panel."""
    if not panels:
        raise ValueError("no panels given")
    loaded = [_load_panel(spec) for spec in panels]

    fig, axes = plt.subplots(len(panels), 1, figsize=(6.0, 2.2 * len(panels)),
                             sharex=False, squeeze=False)
    for ax, spec, (y, fb, nf) in zip(axes[:, 0], panels, loaded):
        ax.plot(fb["t"], fb[y], color="#d45087", lw=1.6, label="feedback")
        ax.plot(nf["t"], nf[y], color="#2f4b7c", lw=1.4, ls="--",
                label="no feedback")
        if spec.tau_marker > 0:
            ax.axvline(spec.tau_marker, color="0.45", lw=0.9, ls=":")
        ax.set_ylabel(y)
        if spec.title:
            ax.set_title(spec.title, fontsize=10)
        ax.set_xlim(0, fb["t"].max())
    axes[0, 0].legend(loc="upper right", fontsize=8, frameon=False)
    axes[-1, 0].set_xlabel("t (units of 1/gamma)")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
