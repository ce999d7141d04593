# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""CSV tables and SVG plots. Identical inputs give byte-identical files."""

import csv
import logging
import os

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_logger = logging.getLogger(__name__)

SVG_SALT = "bidomain-homogenization"
FIELD_COLUMNS = ("v", "u_B", "u_D", "w", "jump")


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if isinstance(value, np.integer):
        return str(int(value))
    return value


def write_csv(rows, path, header):
    """RFC 4180 quoting, UTF-8, one header row."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    _logger.debug("wrote %s", path)
    return path


def write_svg_plot(series, path, xlabel="", ylabel="", title="", loglog=True):
    """Plot ``series`` = [(label, xs, ys), ...] to a static SVG.

    Non-finite points, and non-positive ones on log axes, are dropped.
    Returns the display coordinates of each drawn polyline.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    cleaned = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        keep = np.isfinite(xs) & np.isfinite(ys)
        if loglog:
            keep &= (xs > 0) & (ys > 0)
        cleaned.append((label, xs[keep], ys[keep]))
    has_data = any(len(xs) for _label, xs, _ys in cleaned)
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        try:
            lines = []
            for label, xs, ys in cleaned:
                (line,) = ax.plot(xs, ys, marker="o", label=label)
                lines.append(line)
            if loglog and has_data:
                ax.set_xscale("log")
                ax.set_yscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            if has_data:
                ax.legend()
            ax.grid(True, which="both", linewidth=0.3)
            fig.canvas.draw()
            display = [
                ax.transData.transform(np.column_stack(line.get_data()))
                if len(line.get_xdata())
                else np.zeros((0, 2))
                for line in lines
            ]
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    _logger.debug("wrote %s", path)
    return display


def micro_header(dim):
    axes = ["x%d" % (i + 1) for i in range(dim)]
    return ["node"] + axes + ["phase"] + list(FIELD_COLUMNS)


def micro_rows(problem, state):
    """One row per domain node; absent values are 0."""
    fields = problem.nodal_fields(state)
    coords = problem.domain.node_coords
    for node in range(problem.domain.n_nodes):
        yield (
            [node]
            + [float(c) for c in coords[node]]
            + [fields["phase"][node]]
            + [float(fields[name][node]) for name in FIELD_COLUMNS]
        )


def macro_header(dim):
    return ["node"] + ["x%d" % (i + 1) for i in range(dim)] + ["field", "value"]


def macro_rows(scheme, state):
    """Long format: one row per (field, node), fields in a fixed order."""
    mesh = scheme.mesh
    values = dict(state.fields)
    values["w"] = state.w
    names = [n for n in ("v", "u", "u_B", "u_D", "jump", "w") if n in values]
    coords = mesh.node_coords
    nodal = {name: scheme.map.to_nodes(values[name]) for name in names}
    for name in names:
        for node in range(mesh.n_nodes):
            point = [float(c) for c in coords[node]]
            yield [node] + point + [name, float(nodal[name][node])]


def sample_name(prefix, time):
    return "%s_t%.6f.csv" % (prefix, time)
