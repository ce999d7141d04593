# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""The commands behind the CLI: tensors, run, converge and kernel."""

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..exceptions import RegimeError, ValidationError
from ..models.fem import CONTINUOUS, DoFMap
from ..models.geometry import box_mesh, tile_domain
from ..models.macro_solver import run_macro
from ..models.micro_solver import local_cell_average, run_micro
from . import reports
from .cache import TensorCache, cached_effective_tensors, dump_tensors, write_atomic

_logger = logging.getLogger(__name__)

TENSOR_FILE = "effective_tensors.txt"


def output_dir(config, out=None):
    directory = out or config.directory
    os.makedirs(directory, exist_ok=True)
    return directory


def cmd_tensors(config, out=None, cache=None, threads=None):
    """Effective tensors of ``config``, written next to the run outputs.

    Returns (tensors, path, hit).
    """
    tensors, hit = cached_effective_tensors(config, TensorCache(cache), threads)
    path = os.path.join(output_dir(config, out), TENSOR_FILE)
    write_atomic(path, dump_tensors(tensors))
    _logger.info("tensors (%s) written to %s", tensors.regime, path)
    return tensors, path, hit


def cmd_kernel(config, out=None, cache=None, threads=None):
    """Dump B(t_k) to kernel.csv and plot its entries against t."""
    if config.regime != "memory":
        raise RegimeError(
            "the memory kernel exists only for ell = 1, got ell = %s"
            % config.interface.ell
        )
    tensors, _path, _hit = cmd_tensors(config, out, cache, threads)
    directory = output_dir(config, out)
    dim = tensors.dim
    pairs = [(h, j) for h in range(dim) for j in range(dim)]
    header = ["t"] + ["B_%d%d" % (h + 1, j + 1) for h, j in pairs]
    times = tensors.kernel_times
    rows = (
        [float(t)] + [float(tensors.B[k, h, j]) for h, j in pairs]
        for k, t in enumerate(times)
    )
    csv_path = reports.write_csv(rows, os.path.join(directory, "kernel.csv"), header)
    series = [
        ("B_%d%d" % (h + 1, j + 1), times, tensors.B[:, h, j])
        for h, j in pairs
        if h <= j
    ]
    svg_path = os.path.join(directory, "kernel.svg")
    reports.write_svg_plot(
        series, svg_path, xlabel="t", ylabel="B(t)", title="memory kernel", loglog=False
    )
    return csv_path, svg_path


@dataclass
class RunReport:
    solver: str
    regime: str
    eps: str = None
    steps: int = 0
    runtime: float = 0.0
    energy: dict = None
    files: list = field(default_factory=list)

    def write(self, path):
        write_atomic(path, json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        return path


def cmd_run(config, solver="micro", out=None, cache=None, threads=None):
    """Integrate the micro problem at the first eps, or the macro limit system."""
    directory = output_dir(config, out)
    data = config.problem_data()
    dt = float(config.dt)
    start = time.monotonic()
    if solver == "micro":
        cell = config.build_cell()
        coeffs = config.build_coefficients(cell)
        coeffs.validate(cell)
        domain = tile_domain(cell, config.eps[0], config.cell.topology)
        trajectory, energy = run_micro(
            domain, coeffs, config.interface, data, dt, **config.solver_options()
        )
        report = RunReport(
            "micro", config.regime, str(config.eps[0]), energy=energy.as_dict()
        )
        for state in trajectory.states:
            path = os.path.join(directory, reports.sample_name("micro", state.time))
            reports.write_csv(
                reports.micro_rows(trajectory.problem, state),
                path,
                reports.micro_header(domain.dim),
            )
            report.files.append(os.path.basename(path))
    elif solver == "macro":
        tensors, _path, _hit = cmd_tensors(config, out, cache, threads)
        mesh = box_mesh(config.dim, config.macro_resolution)
        trajectory = run_macro(
            tensors, data, mesh, dt, config.cell.topology, **config.solver_options()
        )
        report = RunReport("macro", config.regime)
        for state in trajectory.states:
            path = os.path.join(directory, reports.sample_name("macro", state.time))
            reports.write_csv(
                reports.macro_rows(trajectory.scheme, state),
                path,
                reports.macro_header(mesh.dim),
            )
            report.files.append(os.path.basename(path))
    else:
        raise ValidationError("solver must be micro or macro, got %r" % (solver,))
    report.steps = int(round(float(config.horizon) / dt))
    report.runtime = time.monotonic() - start
    report.write(os.path.join(directory, "%s_report.json" % solver))
    _logger.info(
        "%s run finished in %.2fs, %d samples",
        solver,
        report.runtime,
        len(report.files),
    )
    return report


@dataclass
class ConvergenceRow:
    eps: Fraction
    v_error: float
    u_error: float
    jump: float
    jump_vanishing: float
    energy_constant: float


@dataclass
class ConvergenceTable:
    """Errors of the cell-averaged micro solution against the limit, per eps."""

    regime: str
    ell: float
    rows: list = field(default_factory=list)
    closed_form_error: float = None

    COLUMNS = ("v_error", "u_error", "jump", "jump_vanishing")

    def column(self, name):
        return [getattr(row, name) for row in self.rows]

    def rates(self, name):
        """log2 of consecutive error ratios; None where undefined."""
        values = self.column(name)
        rates = [None]
        for before, after in zip(values, values[1:]):
            if before > 0 and after > 0:
                rates.append(math.log2(before / after))
            else:
                rates.append(None)
        return rates

    def header(self):
        names = ["eps"]
        for name in self.COLUMNS:
            names += [name, "%s_rate" % name]
        return names + ["energy_constant"]

    def table_rows(self):
        rates = {name: self.rates(name) for name in self.COLUMNS}
        for index, row in enumerate(self.rows):
            cells = [str(row.eps)]
            for name in self.COLUMNS:
                rate = rates[name][index]
                cells += [getattr(row, name), "" if rate is None else rate]
            yield cells + [row.energy_constant]


def check_halving(eps_values):
    eps_values = [Fraction(e) for e in eps_values]
    if len(eps_values) < 3:
        raise ValidationError("a convergence study needs at least 3 eps values")
    for before, after in zip(eps_values, eps_values[1:]):
        if after * 2 != before:
            raise ValidationError(
                "eps values must halve: %s is not followed by %s" % (before, before / 2)
            )
    return eps_values


def macro_mesh_resolution(macro_resolution, k_max):
    return k_max * math.ceil(macro_resolution / k_max)


def _time_l2(errors, dt):
    return math.sqrt(dt * sum(errors[1:]))


def _squared_cell_error(micro, macro, k, dim):
    diff = micro - macro
    diff = np.where(np.isfinite(diff), diff, 0.0)
    return float(np.sum(diff * diff)) / k ** dim


def _macro_u(fields):
    return fields["u"] if "u" in fields else fields["u_B"]


def cmd_converge(config, out=None, cache=None, threads=None):
    """Micro runs for every eps against one macro run, compared on cell averages."""
    eps_values = check_halving(config.eps)
    threads = threads or config.threads
    directory = output_dir(config, out)
    data = config.problem_data()
    dt = float(config.dt)
    ell = float(config.interface.ell)
    ks = [e.denominator for e in eps_values]
    tensors, _path, _hit = cmd_tensors(config, out, cache, threads)
    mesh = box_mesh(config.dim, macro_mesh_resolution(config.macro_resolution, max(ks)))
    macro_map = DoFMap(mesh, CONTINUOUS, dirichlet=True)

    macro_averages = {k: [] for k in ks}
    closed = {"error": 0.0}
    relaxed = config.regime == "tridomain" and config.cell.topology == "disconnected"
    profile = (
        tensors.interface_average(data.s0, macro_map.dof_coords)
        if relaxed
        else None
    )

    def macro_observer(state, n):
        v, u = state.fields["v"], _macro_u(state.fields)
        for k in ks:
            macro_averages[k].append(
                (
                    local_cell_average(v, mesh, macro_map, k=k),
                    local_cell_average(u, mesh, macro_map, k=k),
                )
            )
        if relaxed:
            decay = math.exp(-tensors.beta * state.time / tensors.alpha)
            gap = state.fields["u_D"] - state.fields["u_B"] + decay * profile
            closed["error"] = max(closed["error"], float(np.abs(gap).max(initial=0.0)))

    run_macro(
        tensors,
        data,
        mesh,
        dt,
        config.cell.topology,
        observer=macro_observer,
        **config.solver_options()
    )

    cell = config.build_cell()
    coeffs = config.build_coefficients(cell)
    coeffs.validate(cell)

    def micro_member(eps):
        domain = tile_domain(cell, eps, config.cell.topology)
        k = domain.k
        v_errors, u_errors = [], []

        def observer(state, n):
            problem = state.problem
            v_avg = local_cell_average(state.v, domain, problem.v_map)
            u_avg = local_cell_average(state.u, domain, problem.u_map, field_index=0)
            v_macro, u_macro = macro_averages[k][n]
            v_errors.append(_squared_cell_error(v_avg, v_macro, k, domain.dim))
            u_errors.append(_squared_cell_error(u_avg, u_macro, k, domain.dim))

        _trajectory, energy = run_micro(
            domain,
            coeffs,
            config.interface,
            data,
            dt,
            observer=observer,
            **config.solver_options()
        )
        jump = math.sqrt(energy.int_jump)
        return ConvergenceRow(
            eps=eps,
            v_error=_time_l2(v_errors, dt),
            u_error=_time_l2(u_errors, dt),
            jump=jump,
            jump_vanishing=jump / math.sqrt(float(eps)),
            energy_constant=energy.constant,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(micro_member, eps_values))

    table = ConvergenceTable(config.regime, ell, rows)
    if relaxed:
        table.closed_form_error = closed["error"]
        _logger.info("closed-form jump relaxation error %.3e", table.closed_form_error)
    reports.write_csv(
        table.table_rows(), os.path.join(directory, "convergence.csv"), table.header()
    )
    eps_axis = [float(row.eps) for row in rows]
    series = [
        ("v error", eps_axis, table.column("v_error")),
        ("u error", eps_axis, table.column("u_error")),
    ]
    if ell > -1:
        series.append(("scaled jump", eps_axis, table.column("jump_vanishing")))
    reports.write_svg_plot(
        series,
        os.path.join(directory, "convergence.svg"),
        xlabel="eps",
        ylabel="L2(0,T; L2) error",
        title="micro to macro convergence (%s)" % config.regime,
    )
    for row in rows:
        _logger.info(
            "eps=%s v_error=%.4e u_error=%.4e jump=%.4e",
            row.eps,
            row.v_error,
            row.u_error,
            row.jump_vanishing,
        )
    return table
