# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Homogenized single-scale systems on a one-phase Q1 box mesh.

Every scheme is backward Euler in v with a quasi-static u; the memory
system adds a trapezoid convolution whose current-time term is implicit.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np
from scipy import sparse

from ..exceptions import RegimeError, ValidationError
from .expressions import spatial_variables
from .fem import CONTINUOUS, DoFMap, LinearSolver, assemble_mass, assemble_stiffness
from .micro_solver import check_time_step, time_index

_logger = logging.getLogger(__name__)


class KernelConvolution:
    """Trapezoid quadrature of int_0^t B(t - s) g(s) ds on a uniform history.

    B is linear between its nodes and 0 past the last one; the first
    evaluation past the horizon logs a warning and records the tail ratio
    |B(t_K)| / |B(0)|.
    """

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.times) != len(self.values):
            raise ValidationError("kernel times and values differ in length")
        self.horizon = float(self.times[-1]) if len(self.times) else 0.0
        self.tail = None
        self._flat = self.values.reshape(len(self.values), -1)

    @classmethod
    def from_tensors(cls, tensors):
        if tensors.B is None:
            raise RegimeError("memory regime needs the kernel B(t_k)")
        return cls(tensors.kernel_times, tensors.B)

    @property
    def dim(self):
        return self.values.shape[1]

    def at(self, t):
        t = float(t)
        if t > self.horizon * (1 + 1e-12) + 1e-15:
            if self.tail is None:
                first = float(np.abs(self.values[0]).max())
                last = float(np.abs(self.values[-1]).max())
                self.tail = last / first if first > 0 else 0.0
                _logger.warning(
                    "t = %g beyond the kernel horizon %g: kernel truncated "
                    "(tail ratio %.3e)",
                    t,
                    self.horizon,
                    self.tail,
                )
            return np.zeros((self.dim, self.dim))
        if len(self.times) == 1:
            return self.values[0].copy()
        column = [np.interp(t, self.times, c) for c in self._flat.T]
        return np.array(column).reshape(self.dim, self.dim)

    @staticmethod
    def weights(n, dt):
        """Trapezoid weights of the nodes 0..n."""
        w = np.full(n + 1, float(dt))
        if n == 0:
            return np.zeros(1)
        w[0] = w[-1] = 0.5 * dt
        return w

    def convolve(self, history, t, dt):
        """int_0^t B(t - s) g(s) ds from g sampled at 0, dt, ..., t."""
        n = time_index(t, dt)
        history = np.asarray(history, dtype=float)
        if len(history) < n + 1:
            raise ValidationError(
                "history covers %d steps, %d needed" % (len(history) - 1, n)
            )
        weights = self.weights(n, dt)
        total = np.zeros(history.shape[1:])
        for m in range(n + 1):
            if weights[m]:
                kernel = self.at((n - m) * dt)
                total += weights[m] * np.einsum("ij,...j->...i", kernel, history[m])
        return total


def convolve(kernel, history, t, dt):
    return kernel.convolve(history, t, dt)


@dataclass(frozen=True, eq=False)
class MacroState:
    time: float
    fields: dict
    w: np.ndarray


@dataclass(eq=False)
class MacroTrajectory:
    scheme: object
    states: list = field(default_factory=list)
    dt: float = None


def relabel_potentials(state):
    """Potential form of a macro state.

    (u^B, u^D) = (v + u, u) for two fields, and
    (u^B_1, u^B_2, u^D) = (v + u^B, u^B, u^D) for three.
    """
    f = state.fields
    if "u" in f:
        return {"u_B": f["v"] + f["u"], "u_D": f["u"].copy()}
    return {"u_B1": f["v"] + f["u_B"], "u_B2": f["u_B"].copy(), "u_D": f["u_D"].copy()}


class MacroScheme:
    """Shared mesh operators: Dirichlet Q1 map, mass and tensor stiffness."""

    def __init__(self, tensors, data, mesh, dt, tol=1e-10, method="auto"):
        self.tensors = tensors
        self.data = data
        self.mesh = mesh
        self.dt = float(dt)
        self.tol = tol
        self.method = method
        self.map = DoFMap(mesh, CONTINUOUS, dirichlet=True)
        self.M = assemble_mass(mesh, self.map).matrix
        self.coords = self.map.dof_coords
        self.pairs = list(combinations_with_replacement(range(mesh.dim), 2))
        self.last = None

    @cached_property
    def basis(self):
        """S_kl for k <= l, assembled with (e_k e_l^T + e_l e_k^T)/2."""
        matrices = []
        for k, l in self.pairs:
            unit = np.zeros((self.mesh.dim, self.mesh.dim))
            unit[k, l] += 0.5
            unit[l, k] += 0.5
            matrices.append(assemble_stiffness(self.mesh, self.map, unit).matrix)
        return matrices

    def coefficients(self, A):
        A = np.asarray(A, dtype=float)
        return np.array(
            [A[k, k] if k == l else A[k, l] + A[l, k] for k, l in self.pairs]
        )

    def stiffness(self, A):
        total = sparse.csr_matrix((self.map.size, self.map.size))
        for c, S in zip(self.coefficients(A), self.basis):
            if c:
                total = total + c * S
        return total.tocsr()

    def solver(self, matrix):
        return LinearSolver(matrix, tol=self.tol, method=self.method).prepare()

    def sources(self, t):
        f1, f2 = self.data.source_pair(self.coords, t)
        return self.M @ f1, self.M @ (f1 - f2)

    def gating(self, v, w):
        ionic = self.data.ionic
        w = ionic.step_gating(w, v, self.dt)
        return w, self.M @ ionic.ionic_current(v, w)

    def initial_v(self):
        w = np.full(self.map.size, float(self.data.w_in))
        return self.data.v0.at_points(self.coords), w


class BidomainScheme(MacroScheme):
    """v, u with Atilde = A2 (+ memory kernel); optional pointwise jump relaxation.

    With ``relax_jump`` the scheme also carries [u] obeying
    alpha d_t [u] + beta [u] = 0 and reports u_B = u, u_D = u - [u].
    """

    def __init__(
        self, tensors, data, mesh, dt, A2, kernel=None, relax_jump=False, **options
    ):
        super().__init__(tensors, data, mesh, dt, **options)
        self.kernel = kernel
        self.relax_jump = relax_jump
        self.K1 = self.stiffness(tensors.A1)
        self.K2 = self.stiffness(A2)
        dt = self.dt
        B0 = kernel.at(0.0) if kernel is not None else None
        self.KB0 = self.stiffness(B0) if B0 is not None else None
        u_block = self.K1 + self.K2
        if self.KB0 is not None:
            u_block = u_block + 0.5 * dt * self.KB0
        self.system = self.solver(
            sparse.bmat([[self.M / dt + self.K1, self.K1], [self.K1, u_block]]).tocsr()
        )
        window = None
        if kernel is not None and dt > 0:
            window = int(np.ceil(kernel.horizon / dt)) + 2
        self.history = deque(maxlen=window)

    def _products(self, u):
        return np.array([S @ u for S in self.basis])

    def memory(self, n):
        """sum_{m<n} w_m B(t_n - t_m) grad u_m, as a load vector."""
        if self.kernel is None or not self.history:
            return np.zeros(self.map.size)
        dt = self.dt
        total = np.zeros(self.map.size)
        for m, products in self.history:
            weight = 0.5 * dt if m == 0 else dt
            coeffs = self.coefficients(self.kernel.at((n - m) * dt))
            if np.any(coeffs):
                total += weight * (coeffs @ products)
        return total

    def initial_state(self):
        v, w = self.initial_v()
        _load1, load12 = self.sources(0.0)
        u, _report = self.solver(self.K1 + self.K2).solve(load12 - self.K1 @ v)
        if self.kernel is not None:
            self.history.append((0, self._products(u)))
        fields = {"v": v, "u": u}
        if self.relax_jump:
            self.jump_values = np.zeros(self.map.size)
            if self.data.s0 is not None:
                self.jump_values = self.tensors.interface_average(
                    self.data.s0, self.coords
                )
            fields = self._tridomain_fields(v, u, self.jump_values)
        return MacroState(0.0, fields, w)

    def _tridomain_fields(self, v, u, jump):
        return {"v": v, "u_B": u, "u_D": u - jump, "jump": jump.copy()}

    def step(self, state, n):
        dt = self.dt
        f = state.fields
        v_old = f["v"]
        w, ionic_load = self.gating(v_old, state.w)
        load1, load12 = self.sources(n * dt)
        history = self.memory(n)
        rhs = np.concatenate(
            [self.M @ (v_old / dt) + load1 - ionic_load, load12 - history]
        )
        x, _report = self.system.solve(rhs)
        size = self.map.size
        v, u = x[:size], x[size:]
        self.last = {
            "ionic": ionic_load,
            "load1": load1,
            "load12": load12,
            "history": history,
        }
        if self.kernel is not None:
            self.history.append((n, self._products(u)))
        if self.relax_jump:
            alpha, beta = self.tensors.alpha, self.tensors.beta
            self.jump_values = self.jump_values * alpha / (alpha + beta * dt)
            return MacroState(n * dt, self._tridomain_fields(v, u, self.jump_values), w)
        return MacroState(n * dt, {"v": v, "u": u}, w)

    def potential_residual(self, previous, state):
        """Residuals of the system rewritten in (u^B, u^D) for the last step."""
        if self.relax_jump or self.last is None:
            raise ValidationError("potential residual needs a bidomain step")
        dt = self.dt
        now = relabel_potentials(state)
        before = relabel_potentials(previous)
        ub, ud = now["u_B"], now["u_D"]
        r1 = (
            self.M @ ((ub - ud) - (before["u_B"] - before["u_D"])) / dt
            + self.K1 @ ub
            + self.last["ionic"]
            - self.last["load1"]
        )
        r2 = self.K1 @ ub + self.K2 @ ud + self.last["history"] - self.last["load12"]
        if self.KB0 is not None:
            r2 = r2 + 0.5 * dt * (self.KB0 @ ud)
        return float(np.abs(r1).max(initial=0.0)), float(np.abs(r2).max(initial=0.0))


class TridomainScheme(MacroScheme):
    """Connected inclusions: v, u_B, u_D with the a d_t[u] + b[u] relaxation.

    a = alpha |Gamma| / |Y_out| and b = beta |Gamma| / |Y_out|. The discrete
    system is the sum and negation of the last two equations, so it is
    symmetric.
    """

    def __init__(self, tensors, data, mesh, dt, **options):
        super().__init__(tensors, data, mesh, dt, **options)
        ratio = tensors.interface_area / tensors.volume_out
        self.a = tensors.alpha * ratio
        self.b = tensors.beta * ratio
        self.K1 = self.stiffness(tensors.A1)
        self.K2B = self.stiffness(tensors.A2_B)
        self.K2D = self.stiffness(tensors.A2_D)
        dt = self.dt
        c = self.a / dt + self.b
        M = self.M
        self.system = self.solver(
            sparse.bmat(
                [
                    [M / dt + self.K1, self.K1, None],
                    [self.K1, self.K1 + self.K2B + c * M, -c * M],
                    [None, -c * M, self.K2D + c * M],
                ]
            ).tocsr()
        )

    def initial_state(self):
        v, w = self.initial_v()
        jump = np.zeros(self.map.size)
        if self.data.s0 is not None:
            jump = self.tensors.interface_average(self.data.s0, self.coords)
        _load1, load12 = self.sources(0.0)
        A = self.K1 + self.K2B + self.K2D
        u_b, _report = self.solver(A).solve(load12 - self.K1 @ v + self.K2D @ jump)
        return MacroState(
            0.0, {"v": v, "u_B": u_b, "u_D": u_b - jump, "jump": jump}, w
        )

    def step(self, state, n):
        dt = self.dt
        f = state.fields
        w, ionic_load = self.gating(f["v"], state.w)
        load1, load12 = self.sources(n * dt)
        relax = (self.a / dt) * (self.M @ f["jump"])
        rhs = np.concatenate(
            [self.M @ (f["v"] / dt) + load1 - ionic_load, load12 + relax, -relax]
        )
        x, _report = self.system.solve(rhs)
        size = self.map.size
        v, u_b, u_d = x[:size], x[size : 2 * size], x[2 * size :]
        self.last = {
            "ionic": ionic_load,
            "load1": load1,
            "load12": load12,
            "jump": f["jump"],
        }
        return MacroState(
            n * dt, {"v": v, "u_B": u_b, "u_D": u_d, "jump": u_b - u_d}, w
        )

    def energy(self, state):
        """1/2 |v|_M^2 + a/2 |[u]|_M^2."""
        v, jump = state.fields["v"], state.fields["jump"]
        jump_energy = self.a * float(jump @ (self.M @ jump))
        return 0.5 * float(v @ (self.M @ v)) + 0.5 * jump_energy

    def potential_residual(self, previous, state):
        """Residuals of the (u^B_1, u^B_2, u^D) system for the last step."""
        if self.last is None:
            raise ValidationError("potential residual needs a completed step")
        dt = self.dt
        now = relabel_potentials(state)
        before = relabel_potentials(previous)
        u1, u2, ud = now["u_B1"], now["u_B2"], now["u_D"]
        r1 = (
            self.M @ ((u1 - u2) - (before["u_B1"] - before["u_B2"])) / dt
            + self.K1 @ u1
            + self.last["ionic"]
            - self.last["load1"]
        )
        r2 = self.K1 @ u1 + self.K2B @ u2 + self.K2D @ ud - self.last["load12"]
        r3 = (
            self.a * (self.M @ ((u2 - ud) - self.last["jump"])) / dt
            + self.b * (self.M @ (u2 - ud))
            - self.K2D @ ud
        )
        return tuple(float(np.abs(r).max(initial=0.0)) for r in (r1, r2, r3))


def _march(scheme, data, dt, observer=None):
    check_time_step(data.ionic, dt)
    steps = time_index(data.horizon, dt, "horizon")
    samples = {time_index(t, dt, "sample time") for t in data.samples}
    state = scheme.initial_state()
    trajectory = MacroTrajectory(scheme, dt=dt)
    if observer:
        observer(state, 0)
    if 0 in samples:
        trajectory.states.append(state)
    for n in range(1, steps + 1):
        state = scheme.step(state, n)
        if observer:
            observer(state, n)
        if n in samples:
            trajectory.states.append(state)
    _logger.info(
        "macro run (%s): %d steps on a %d^%d mesh",
        scheme.tensors.regime,
        steps,
        scheme.mesh.cells_per_side,
        scheme.mesh.dim,
    )
    return trajectory


def _require(tensors, *names):
    missing = [n for n in names if getattr(tensors, n) is None]
    if missing:
        raise RegimeError(
            "regime %s needs tensors %s" % (tensors.regime, ", ".join(missing))
        )


def run_macro_ell1(tensors, data, mesh, dt, observer=None, **options):
    """Memory bidomain system; the cell-flux source vanishes for x-independent s1."""
    _require(tensors, "A1", "A2")
    kernel = KernelConvolution.from_tensors(tensors)
    s0 = data.s0
    spatial = spatial_variables(mesh.dim)
    if s0 is not None and not s0.is_zero and s0.depends_on(*spatial):
        raise RegimeError(
            "an x-dependent s1 needs the macro gradient of the cell flux table, "
            "which is not supported"
        )
    scheme = BidomainScheme(
        tensors, data, mesh, dt, tensors.A2, kernel=kernel, **options
    )
    return _march(scheme, data, float(dt), observer)


def run_macro_mid(tensors, data, mesh, dt, observer=None, **options):
    _require(tensors, "A1", "A2_B", "A2_D")
    scheme = BidomainScheme(tensors, data, mesh, dt, tensors.A2_tilde, **options)
    return _march(scheme, data, float(dt), observer)


def run_macro_perfect(tensors, data, mesh, dt, observer=None, **options):
    _require(tensors, "A1", "A2")
    scheme = BidomainScheme(tensors, data, mesh, dt, tensors.A2, **options)
    return _march(scheme, data, float(dt), observer)


def run_macro_minus1(tensors, data, mesh, dt, topology, observer=None, **options):
    _require(tensors, "A1", "A2_B", "A2_D")
    scale = max(float(np.abs(tensors.A2_B).max()), 1e-300)
    detached = float(np.abs(tensors.A2_D).max()) <= 1e-8 * scale
    if topology == "disconnected":
        if not detached:
            raise RegimeError("disconnected topology but A2_D does not vanish")
        scheme = BidomainScheme(
            tensors, data, mesh, dt, tensors.A2_B, relax_jump=True, **options
        )
    elif topology == "connected":
        if not tensors.interface_area:
            raise RegimeError("connected tridomain needs a nonempty interface")
        scheme = TridomainScheme(tensors, data, mesh, dt, **options)
    else:
        raise RegimeError("unknown topology %r" % (topology,))
    return _march(scheme, data, float(dt), observer)


def run_macro(
    tensors, data, mesh, dt, topology="disconnected", observer=None, **options
):
    regime = tensors.regime
    if regime == "memory":
        return run_macro_ell1(tensors, data, mesh, dt, observer, **options)
    if regime == "standard":
        return run_macro_mid(tensors, data, mesh, dt, observer, **options)
    if regime == "perfect":
        return run_macro_perfect(tensors, data, mesh, dt, observer, **options)
    if regime == "tridomain":
        return run_macro_minus1(tensors, data, mesh, dt, topology, observer, **options)
    raise RegimeError("unknown regime %r" % (regime,))
