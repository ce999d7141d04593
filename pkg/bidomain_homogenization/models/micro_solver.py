# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Time stepping of the microscopic problem on the tiled domain.

Semi-implicit scheme: the gating variable is advanced first, the ionic
current is explicit, and (v, u) solve one symmetric system per step in
which the interface law enters through an eps^-ell (alpha/dt + beta)
interface mass.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import sparse

from ..exceptions import (
    DataError,
    EnergyBlowUpError,
    UnstableTimeStep,
    ValidationError,
)
from .expressions import Expression, constant, spatial_variables
from .fem import (
    CONTINUOUS,
    SPLIT,
    DoFMap,
    LinearSolver,
    assemble_mass,
    assemble_stiffness,
    injection_operator,
    jump_operator,
    merge_operator,
)
from .geometry import INT, OUT

_logger = logging.getLogger(__name__)

BLOW_UP_FACTOR = 1e6


def time_index(t, dt, what="time"):
    """Integer n with n dt == t, or ValidationError."""
    n = int(round(float(t) / float(dt)))
    if n < 0 or abs(n * float(dt) - float(t)) > 1e-9 * max(1.0, abs(float(t))):
        raise ValidationError("%s %s is not a multiple of dt = %s" % (what, t, dt))
    return n


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Sources, initial data and interface datum.

    ``f1``/``f2`` are expressions of (x1..x_dim, t), ``v0`` of x, and
    ``s0`` of (x1..x_dim, y1..y_dim): the micro jump is
    eps^((ell+1)/2) s0(x, x/eps) and the limit datum is s0 itself.
    """

    ionic: object
    f1: Expression
    f2: Expression
    v0: Expression
    w_in: float = 0.5
    s0: Expression = None
    s0_bound: float = None
    horizon: float = 1.0
    sample_times: tuple = ()

    @classmethod
    def zero(cls, dim, ionic, **overrides):
        x = spatial_variables(dim)
        values = {
            "f1": constant(0, x + ("t",)),
            "f2": constant(0, x + ("t",)),
            "v0": constant(0, x),
            "s0": constant(0, x + spatial_variables(dim, "y")),
        }
        values.update(overrides)
        return cls(ionic=ionic, **values)

    def __post_init__(self):
        if not 0.0 <= float(self.w_in) <= 1.0:
            raise DataError("w_in must lie in [0, 1], got %s" % self.w_in)
        if not float(self.horizon) > 0:
            raise DataError("horizon must be positive")
        for t in self.sample_times:
            if not 0 <= float(t) <= float(self.horizon):
                raise DataError("sample time %s outside [0, horizon]" % t)

    @property
    def samples(self):
        return tuple(self.sample_times) or (self.horizon,)

    def source_pair(self, coords, t):
        return self.f1.at_points(coords, t=t), self.f2.at_points(coords, t=t)

    def scaled_jump(self, domain, nodes, ell):
        """eps^((ell+1)/2) s0(x, x/eps) at the given domain nodes."""
        if self.s0 is None or self.s0.is_zero or not len(nodes):
            return np.zeros(len(nodes))
        coords = domain.node_coords[nodes]
        n = domain.cell.cells_per_side
        index = np.rint(coords / domain.h).astype(np.int64)
        local = (index % n) / n
        eps = float(domain.eps)
        factor = eps ** ((float(ell) + 1.0) / 2.0)
        return factor * self.s0.at_points(np.hstack([coords, local]))


@dataclass(frozen=True, eq=False)
class MicroState:
    time: float
    v: np.ndarray
    u: np.ndarray
    w: np.ndarray
    jump: np.ndarray
    problem: "MicroProblem" = field(repr=False, default=None)


@dataclass
class EnergyReport:
    sup_v: float = 0.0
    grad_sum: float = 0.0
    grad_v: float = 0.0
    grad_u_out: float = 0.0
    grad_u_int: float = 0.0
    sup_jump: float = 0.0
    int_jump: float = 0.0
    data_norm: float = 0.0

    @property
    def lhs(self):
        return (
            self.sup_v
            + self.grad_sum
            + self.grad_u_out
            + self.grad_u_int
            + self.sup_jump
            + self.int_jump
        )

    @property
    def constant(self):
        return self.lhs / (self.data_norm + 1.0)

    def as_dict(self):
        values = dict(self.__dict__)
        values["lhs"] = self.lhs
        values["constant"] = self.constant
        return values


@dataclass(eq=False)
class MicroTrajectory:
    problem: "MicroProblem"
    states: list = field(default_factory=list)
    dt: float = None

    @property
    def times(self):
        return [s.time for s in self.states]


class MicroProblem:
    """Operators of the eps-problem on one tiled domain.

    v lives on the E_out nodes, u on the split layout (two unknowns per
    interface node). Dirichlet nodes of the outer box are eliminated.
    """

    def __init__(
        self,
        domain,
        coeffs,
        iface,
        data,
        tol=1e-10,
        method="auto",
        flux_free=False,
    ):
        self.domain = domain
        self.coeffs = coeffs
        self.iface = iface
        self.data = data
        self.tol = tol
        self.method = method
        self.flux_free = flux_free
        self.v_map = DoFMap(domain, ((OUT,),), dirichlet=True)
        self.u_map = DoFMap(domain, SPLIT, dirichlet=True)
        self.c_map = DoFMap(domain, CONTINUOUS, dirichlet=True)
        sigma_int, sigma_both = coeffs.on_domain(domain)
        self.Ki = assemble_stiffness(domain, self.v_map, sigma_int, (OUT,)).matrix
        self.Ks = assemble_stiffness(domain, self.u_map, sigma_both).matrix
        self.M = assemble_mass(domain, self.v_map).matrix
        self.P = injection_operator(self.u_map, self.v_map)
        self.E = merge_operator(self.u_map, self.c_map)
        self.jump = jump_operator(domain, self.u_map)
        self.scale = iface.interface_scale(domain.eps)
        self._solvers = {}

    @property
    def nv(self):
        return self.v_map.size

    @cached_property
    def v_coords(self):
        return self.v_map.dof_coords

    @cached_property
    def u_block(self):
        """P Ki P^T + Ks: the u-u block without the interface term."""
        return (self.P @ self.Ki @ self.P.T + self.Ks).tocsr()

    def sources(self, t):
        """Loads (M f1, P M (f1 - f2)) at time t."""
        f1, f2 = self.data.source_pair(self.v_coords, t)
        return self.M @ f1, self.P @ (self.M @ (f1 - f2))

    def constrained(self, jump_values):
        """q with Jq = jump: the D-side offset of a field with prescribed jump."""
        q = np.zeros(self.u_map.size)
        q[self.jump.d_dofs] = -jump_values
        return q

    def _solver(self, key, build):
        if key not in self._solvers:
            self._solvers[key] = LinearSolver(
                build(), tol=self.tol, method=self.method
            ).prepare()
        return self._solvers[key]

    def initial_state(self):
        data = self.data
        v = data.v0.at_points(self.v_coords)
        w = np.full(self.nv, float(data.w_in))
        jump0 = data.scaled_jump(self.domain, self.jump.nodes, self.iface.ell)
        bound = self.scale * self.jump.norm2(jump0)
        if data.s0_bound is not None and bound > float(data.s0_bound) * (1 + 1e-12):
            raise DataError(
                "initial jump violates eps^-ell |s0|^2 <= %s: got %.6g"
                % (data.s0_bound, bound)
            )
        _logger.debug("eps = %s: eps^-ell |s0|^2 = %.6g", self.domain.eps, bound)
        _load_v, load_u = self.sources(0.0)
        q = self.constrained(jump0)
        solver = self._solver(
            "init", lambda: (self.E.T @ self.u_block @ self.E).tocsr()
        )
        rhs = self.E.T @ (load_u - self.P @ (self.Ki @ v) - self.u_block @ q)
        z, _report = solver.solve(rhs)
        u = self.E @ z + q
        return MicroState(0.0, v, u, w, jump0, self)

    def _coupled_matrix(self, dt):
        c = self.scale * (self.iface.alpha / dt + self.iface.beta)
        return sparse.bmat(
            [
                [self.M / dt + self.Ki, self.Ki @ self.P.T],
                [self.P @ self.Ki, self.u_block + self.jump.mass(c)],
            ]
        ).tocsr()

    def _flux_free_matrix(self, dt):
        return sparse.bmat(
            [
                [self.M / dt + self.Ki, self.Ki @ self.P.T @ self.E],
                [self.E.T @ self.P @ self.Ki, self.E.T @ self.u_block @ self.E],
            ]
        ).tocsr()

    def step(self, state, dt):
        ionic = self.data.ionic
        t = state.time + dt
        w = ionic.step_gating(state.w, state.v, dt)
        current = ionic.ionic_current(state.v, w)
        load_v, load_u = self.sources(t)
        rhs_v = self.M @ (state.v / dt - current) + load_v
        alpha, beta = self.iface.alpha, self.iface.beta
        if self.flux_free:
            jump = state.jump * alpha / (alpha + beta * dt)
            q = self.constrained(jump)
            solver = self._solver(("free", dt), lambda: self._flux_free_matrix(dt))
            rhs = np.concatenate(
                [
                    rhs_v - self.Ki @ (self.P.T @ q),
                    self.E.T @ (load_u - self.u_block @ q),
                ]
            )
            x, _report = solver.solve(rhs)
            v = x[: self.nv]
            u = self.E @ x[self.nv :] + q
        else:
            solver = self._solver(("coupled", dt), lambda: self._coupled_matrix(dt))
            rhs_u = load_u + self.scale * (alpha / dt) * self.jump.load(state.jump)
            x, _report = solver.solve(np.concatenate([rhs_v, rhs_u]))
            v = x[: self.nv]
            u = x[self.nv :]
            jump = self.jump(u)
        return MicroState(t, v, u, w, jump, self)

    # diagnostics

    @cached_property
    def _laplacians(self):
        return (
            assemble_stiffness(self.domain, self.v_map, 1.0, (OUT,)).matrix,
            assemble_stiffness(self.domain, self.u_map, 1.0, (OUT,)).matrix,
            assemble_stiffness(self.domain, self.u_map, 1.0, (INT,)).matrix,
        )

    @cached_property
    def _domain_mass(self):
        return assemble_mass(self.domain, self.c_map).matrix

    def data_norm(self, dt, steps):
        """sum dt |f1|^2 + |f2|^2 over Omega plus |v0|^2 and eps^-ell |s0|^2."""
        data = self.data
        coords = self.c_map.dof_coords
        M = self._domain_mass
        total = 0.0
        for n in range(1, steps + 1):
            f1, f2 = data.source_pair(coords, n * dt)
            total += dt * float(f1 @ (M @ f1) + f2 @ (M @ f2))
        v0 = data.v0.at_points(coords)
        total += float(v0 @ (M @ v0))
        jump0 = data.scaled_jump(self.domain, self.jump.nodes, self.iface.ell)
        return total + self.scale * self.jump.norm2(jump0)

    def accumulate(self, report, state, dt):
        Lv, Lb, Ld = self._laplacians
        v = state.v
        total = v + self.P.T @ state.u
        report.sup_v = max(report.sup_v, float(v @ (self.M @ v)))
        jump2 = self.scale * self.jump.norm2(state.jump)
        report.sup_jump = max(report.sup_jump, jump2)
        if dt:
            report.grad_sum += dt * float(total @ (Lv @ total))
            report.grad_v += dt * float(v @ (Lv @ v))
            report.grad_u_out += dt * float(state.u @ (Lb @ state.u))
            report.grad_u_int += dt * float(state.u @ (Ld @ state.u))
            report.int_jump += dt * jump2

    def nodal_fields(self, state):
        """Per-node arrays (phase, v, u_B, u_D, w, jump) for reporting."""
        grid = self.domain
        v = self.v_map.to_nodes(state.v)
        w = self.v_map.to_nodes(state.w)
        u_b = self.u_map.to_nodes(state.u, 0)
        u_d = self.u_map.to_nodes(state.u, 1)
        jump = np.zeros(grid.n_nodes)
        jump[self.jump.nodes] = state.jump
        phase = np.full(grid.n_nodes, "out", dtype=object)
        phase[grid.phase_nodes((INT,))] = "int"
        phase[self.jump.nodes] = "interface"
        return {"phase": phase, "v": v, "u_B": u_b, "u_D": u_d, "w": w, "jump": jump}


def init_micro(domain, coeffs, iface, data, **options):
    return MicroProblem(domain, coeffs, iface, data, **options).initial_state()


def step_micro(state, dt):
    if not dt > 0:
        raise ValidationError("dt must be positive")
    return state.problem.step(state, dt)


def check_time_step(ionic, dt):
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if dt > ionic.stable_dt * (1 + 1e-12):
        raise UnstableTimeStep(
            "dt = %g exceeds the stability bound dt <= 1/(2 C_I) = %g (C_I = %g)"
            % (dt, ionic.stable_dt, ionic.lipschitz)
        )


def run_micro(
    domain,
    coeffs,
    iface,
    data,
    dt,
    observer=None,
    tol=1e-10,
    method="auto",
    flux_free=False,
):
    """Integrate to the horizon; returns (MicroTrajectory, EnergyReport).

    ``observer(state, n)`` is called after every step (and at n = 0).
    """
    dt = float(dt)
    check_time_step(data.ionic, dt)
    steps = time_index(data.horizon, dt, "horizon")
    samples = {time_index(t, dt, "sample time") for t in data.samples}
    problem = MicroProblem(
        domain, coeffs, iface, data, tol=tol, method=method, flux_free=flux_free
    )
    state = problem.initial_state()
    trajectory = MicroTrajectory(problem, dt=dt)
    report = EnergyReport(data_norm=problem.data_norm(dt, steps))
    problem.accumulate(report, state, 0.0)
    if observer:
        observer(state, 0)
    if 0 in samples:
        trajectory.states.append(state)
    for n in range(1, steps + 1):
        state = problem.step(state, dt)
        if not (np.all(state.w >= 0) and np.all(state.w <= 1)):
            raise ValidationError("gating left [0, 1] at t = %g" % state.time)
        problem.accumulate(report, state, dt)
        if report.lhs > BLOW_UP_FACTOR * (report.data_norm + 1.0):
            raise EnergyBlowUpError(
                "energy %.3e exceeds %.0e x (data norms + 1) = %.3e at t = %g"
                % (
                    report.lhs,
                    BLOW_UP_FACTOR,
                    BLOW_UP_FACTOR * (report.data_norm + 1.0),
                    state.time,
                )
            )
        if observer:
            observer(state, n)
        if n in samples:
            trajectory.states.append(replace(state, time=n * dt))
    _logger.info(
        "micro run eps=%s: %d steps, energy constant %.4g",
        domain.eps,
        steps,
        report.constant,
    )
    return trajectory, report


def local_cell_average(values, grid, dofmap, k=None, field_index=0, phases=None):
    """Average of one field over each of the k^dim macro cells.

    Q1 element means are vertex means; only elements of ``phases``
    (default: the phases of the field) contribute, and each macro cell is
    normalized by its own selected volume.
    """
    k = k or grid.k
    n = grid.cells_per_side
    if n % k:
        raise ValidationError(
            "grid resolution %d is not a multiple of k = %d" % (n, k)
        )
    phases = dofmap.fields[field_index] if phases is None else phases
    nodal = dofmap.to_nodes(np.asarray(values, dtype=float), field_index)
    means = nodal[grid.element_nodes].mean(axis=1)
    selected = np.isin(grid.labels, list(phases))
    macro = grid.element_index // (n // k)
    size = k**grid.dim
    cells = np.ravel_multi_index(tuple(macro.T), (k,) * grid.dim)
    sums = np.bincount(cells[selected], weights=means[selected], minlength=size)
    counts = np.bincount(cells[selected], minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
