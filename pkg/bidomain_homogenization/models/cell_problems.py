# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Unit-cell corrector problems and the effective tensors built from them."""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..exceptions import CellProblemError, CoefficientError, RegimeError
from .fem import (
    CONTINUOUS,
    SPLIT,
    DoFMap,
    LinearSolver,
    _element_tensor,
    assemble_stiffness,
    check_compatible,
    gradient_loads,
    jump_operator,
    merge_operator,
    neumann_pins,
    project_zero_mean,
)
from .expressions import spatial_variables
from .geometry import INT, OUT

_logger = logging.getLogger(__name__)

REGIMES = ("tridomain", "standard", "memory", "perfect")
DEFAULT_KERNEL_STEPS = 80
DUAL_TOLERANCE = 1e-9

REQUIRED_TENSORS = {
    "memory": ("A1", "A2", "B"),
    "standard": ("A1", "A2_B", "A2_D"),
    "tridomain": ("A1", "A2_B", "A2_D"),
    "perfect": ("A1", "A2"),
}


def _digest(*arrays):
    sha = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        sha.update(str(array.shape).encode())
        sha.update(array.tobytes())
    return sha.hexdigest()


@dataclass(frozen=True)
class InterfaceParams:
    alpha: float = 1.0
    beta: float = 1.0
    ell: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise CoefficientError("alpha and beta must be strictly positive")
        if self.ell < -1:
            raise RegimeError("ℓ ≥ −1 required, got ℓ = %s" % self.ell)

    @property
    def regime(self):
        if self.ell == -1:
            return "tridomain"
        if self.ell < 1:
            return "standard"
        if self.ell == 1:
            return "memory"
        return "perfect"

    def interface_scale(self, eps):
        return float(eps) ** (-float(self.ell))

    @property
    def default_dt_kernel(self):
        return self.alpha / (10.0 * self.beta)


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Conductivities per unit-cell element, each of shape (n^dim, dim, dim)."""

    sigma_int: np.ndarray
    sigma_out: np.ndarray
    sigma_dis: np.ndarray

    @classmethod
    def build(cls, cell, sigma_int=1.0, sigma_out=1.0, sigma_dis=1.0):
        return cls(
            np.array(_element_tensor(cell, sigma_int)),
            np.array(_element_tensor(cell, sigma_out)),
            np.array(_element_tensor(cell, sigma_dis)),
        )

    def _active(self, cell):
        out = cell.labels == OUT
        return (
            ("sigma_int", self.sigma_int[out]),
            ("sigma_out", self.sigma_out[out]),
            ("sigma_dis", self.sigma_dis[~out]),
        )

    def validate(self, cell, seed=0):
        """Symmetry and uniform ellipticity on every cell that uses the tensor."""
        rng = np.random.default_rng(seed)
        for name, sigma in self._active(cell):
            if not len(sigma):
                continue
            scale = max(float(np.abs(sigma).max()), 1e-300)
            if np.abs(sigma - sigma.transpose(0, 2, 1)).max() > 1e-12 * scale:
                raise CoefficientError("%s is not symmetric" % name)
            if not np.all(np.isfinite(sigma)):
                raise CoefficientError("%s has non-finite entries" % name)
            directions = rng.standard_normal((8, sigma.shape[1]))
            quad = np.einsum("pi,eij,pj->ep", directions, sigma, directions)
            if quad.min() <= 0 or np.linalg.eigvalsh(sigma).min() <= 0:
                raise CoefficientError("%s is not positive definite" % name)
        return self

    def ellipticity_bounds(self, cell):
        low, high = np.inf, 0.0
        for _name, sigma in self._active(cell):
            if len(sigma):
                eig = np.linalg.eigvalsh(sigma)
                low = min(low, float(eig.min()))
                high = max(high, float(eig.max()))
        return low, high

    def both(self, labels):
        """sigma_out on E_out cells and sigma_dis on E_int cells."""
        out = (np.asarray(labels) == OUT)[:, None, None]
        return np.where(out, self.sigma_out, self.sigma_dis)

    def on_domain(self, domain):
        """(sigma_int, sigma_both) as element fields of a tiled domain."""
        index = domain.cell_element()
        sigma_int = self.sigma_int[index]
        out = (domain.labels == OUT)[:, None, None]
        sigma_both = np.where(out, self.sigma_out[index], self.sigma_dis[index])
        return sigma_int, sigma_both

    @property
    def digest(self):
        return _digest(self.sigma_int, self.sigma_out, self.sigma_dis)


@dataclass(eq=False)
class CellCorrectors:
    problems: "CellProblems"
    zeta: np.ndarray = None
    chi0: np.ndarray = None
    chi0_B: np.ndarray = None
    chi0_D: np.ndarray = None
    chi1: np.ndarray = None
    t_s1: np.ndarray = None
    dt_kernel: float = None


@dataclass(eq=False)
class EffectiveTensors:
    regime: str
    A1: np.ndarray
    A2: np.ndarray = None
    A2_B: np.ndarray = None
    A2_D: np.ndarray = None
    B: np.ndarray = None
    F_cellflux: np.ndarray = None
    dt_kernel: float = None
    alpha: float = 1.0
    beta: float = 1.0
    volume_out: float = 1.0
    interface_area: float = 0.0
    gamma_points: np.ndarray = None
    gamma_weights: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.A1.shape[0]

    @property
    def kernel_steps(self):
        return 0 if self.B is None else len(self.B) - 1

    @property
    def kernel_times(self):
        if self.B is None:
            return np.zeros(0)
        return self.dt_kernel * np.arange(len(self.B))

    @property
    def A2_tilde(self):
        return self.A2_B + self.A2_D

    def interface_average(self, expression, x_coords):
        """(1/|Gamma|) int_Gamma s(x, y) dsigma(y) at each row of ``x_coords``."""
        x_coords = np.atleast_2d(x_coords)
        if self.gamma_weights is None or not len(self.gamma_weights):
            return np.zeros(len(x_coords))
        total = float(self.gamma_weights.sum())
        rows = len(x_coords)
        count = len(self.gamma_weights)
        points = np.hstack(
            [
                np.repeat(x_coords, count, axis=0),
                np.tile(self.gamma_points, (rows, 1)),
            ]
        )
        values = expression.at_points(points).reshape(rows, count)
        return values @ self.gamma_weights / total


class CellProblems:
    """Discrete corrector problems on one unit cell.

    Holds the DoF layouts, stiffness matrices and loads shared by every
    corrector family, so each matrix is assembled and factorized once.
    """

    def __init__(self, cell, coeffs, iface=None, tol=1e-10, method="auto", threads=1):
        self.cell = cell
        self.coeffs = coeffs
        self.iface = iface or InterfaceParams()
        self.tol = tol
        self.method = method
        self.threads = max(1, int(threads))
        self.out_map = DoFMap(cell, ((OUT,),))
        self.int_map = DoFMap(cell, ((INT,),))
        self.cont_map = DoFMap(cell, CONTINUOUS)
        self.split_map = DoFMap(cell, SPLIT)
        self.sigma_both = coeffs.both(cell.labels)
        self.volume_out = float(cell.volume_out)

    def _map(self, func, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(executor.map(func, items))

    def _neumann_family(self, dofmap, sigma, phases, region):
        """Solve K x^j = b^j for every direction j, zero mean over ``region``."""
        dim = self.cell.dim
        if not dofmap.size:
            return None
        K = assemble_stiffness(self.cell, dofmap, sigma, phases)
        b = gradient_loads(self.cell, dofmap, sigma, phases)
        pins, labels = neumann_pins(K)
        check_compatible(b, labels)
        solver = LinearSolver(K, tol=self.tol, method=self.method, pinned=pins)
        solver.prepare()

        def solve(j):
            x, _report = solver.solve(b[:, j])
            return project_zero_mean(x, self.cell, dofmap, region)

        return np.array(self._map(solve, range(dim)))

    def solve_zeta(self):
        return self._neumann_family(
            self.out_map, self.coeffs.sigma_int, (OUT,), "Y_out"
        )

    def solve_chi0(self):
        return self._neumann_family(self.cont_map, self.sigma_both, None, "Y")

    def solve_chi0_neumann(self):
        chi_B = self._neumann_family(
            self.out_map, self.coeffs.sigma_out, (OUT,), "Y_out"
        )
        chi_D = self._neumann_family(
            self.int_map, self.coeffs.sigma_dis, (INT,), "Y_int"
        )
        if chi_D is None:
            _logger.debug("Y_int is empty, A2_D = 0")
        return chi_B, chi_D

    @cached_property
    def split_stiffness(self):
        return assemble_stiffness(self.cell, self.split_map, self.sigma_both).matrix

    @cached_property
    def split_loads(self):
        return gradient_loads(self.cell, self.split_map, self.sigma_both)

    @cached_property
    def merge(self):
        return merge_operator(self.split_map, self.cont_map)

    @cached_property
    def jump(self):
        return jump_operator(self.cell, self.split_map)

    def chi0_residuals(self, chi0):
        """Split-layout residuals b^j - K E chi0^j, supported on the interface."""
        return self.split_loads.T - (self.split_stiffness @ (self.merge @ chi0.T)).T

    def interface_flux(self, chi0):
        """Weak sigma_out grad(chi0^j - y^j) . nu, per interface node."""
        residual = self.chi0_residuals(chi0)
        return residual[:, self.jump.b_dofs]

    @cached_property
    def _extension_solver(self):
        A = (self.merge.T @ self.split_stiffness @ self.merge).tocsr()
        pins, labels = neumann_pins(A)
        return LinearSolver(A, tol=self.tol, method=self.method, pinned=pins).prepare()

    def harmonic_extension(self, jump_values):
        """The field with prescribed jump that is sigma-harmonic in both phases."""
        q = np.zeros(self.split_map.size)
        q[self.jump.d_dofs] = -np.asarray(jump_values, dtype=float)
        rhs = -(self.merge.T @ (self.split_stiffness @ q))
        z, _report = self._extension_solver.solve(rhs)
        chi = self.merge @ z + q
        return project_zero_mean(chi, self.cell, self.split_map, "Y")

    def _step_solver(self, dt_kernel):
        alpha, beta = self.iface.alpha, self.iface.beta
        A = self.split_stiffness + self.jump.mass(alpha / dt_kernel + beta)
        pins, _labels = neumann_pins(A)
        return LinearSolver(A, tol=self.tol, method=self.method, pinned=pins).prepare()

    def evolve(self, jump0, dt_kernel, steps, solver=None):
        """Backward-Euler history of the interface relaxation, (steps+1, size)."""
        alpha = self.iface.alpha
        history = np.empty((steps + 1, self.split_map.size))
        history[0] = self.harmonic_extension(jump0)
        if steps and solver is None:
            solver = self._step_solver(dt_kernel)
        for k in range(steps):
            rhs = (alpha / dt_kernel) * self.jump.load(self.jump(history[k]))
            x, _report = solver.solve(rhs)
            history[k + 1] = project_zero_mean(x, self.cell, self.split_map, "Y")
        return history

    def initial_jumps(self, chi0):
        """[chi1^j](0) = sigma_out grad(chi0^j - y^j) . nu / alpha."""
        if not self.jump.size:
            return np.zeros((self.cell.dim, 0))
        flux = self.interface_flux(chi0)
        return flux / (self.iface.alpha * self.jump.weights[None, :])

    def solve_chi1(self, chi0, dt_kernel, steps):
        if steps < 0:
            raise CellProblemError("kernel_steps must be >= 0")
        jumps = self.initial_jumps(chi0)
        self._extension_solver
        solver = self._step_solver(dt_kernel) if steps else None
        series = self._map(
            lambda j: self.evolve(jumps[j], dt_kernel, steps, solver),
            range(self.cell.dim),
        )
        # (steps+1, dim, size)
        return np.stack(series, axis=1)

    def solve_T_s1(self, s1, dt_kernel, steps):
        """T(s1): alpha [T](0) = s1 at the interface nodes, then the same relaxation."""
        s1 = np.broadcast_to(np.asarray(s1, dtype=float), (self.jump.size,))
        return self.evolve(s1 / self.iface.alpha, dt_kernel, steps)

    def interface_nodes(self):
        """Unit-cell coordinates and lumped weights of the interface nodes."""
        return self.cell.node_coords[self.jump.nodes], self.jump.weights.copy()

    # tensors

    def _phase_integral(self, sigma, phases):
        mask = np.isin(self.cell.labels, list(phases))
        return self.cell.h ** self.cell.dim * sigma[mask].sum(axis=0)

    def _dual_forms(self, name, dofmap, sigma, phases, chi):
        """Flux form and energy form of (1/|Y_out|) int sigma grad(y - chi)."""
        integral = self._phase_integral(sigma, phases)
        K = assemble_stiffness(self.cell, dofmap, sigma, phases).matrix
        b = gradient_loads(self.cell, dofmap, sigma, phases)
        bx = b.T @ chi.T
        flux = (integral - bx) / self.volume_out
        energy = (integral - bx - bx.T + chi @ (K @ chi.T)) / self.volume_out
        scale = max(float(np.abs(flux).max()), 1e-300)
        discrepancy = float(np.abs(flux - energy).max()) / scale
        if discrepancy > DUAL_TOLERANCE:
            _logger.warning(
                "%s: flux and energy forms differ by %.2e (relative)",
                name,
                discrepancy,
            )
        return flux, discrepancy

    def kernel_from_chi1(self, chi1):
        """B(t_k) = -(1/|Y_out|) int_Y sigma grad chi1(t_k), shape (K+1, dim, dim)."""
        # B[k, h, j] = -b^h . chi1^j(t_k) / |Y_out|
        return -np.einsum("ah,kja->khj", self.split_loads, chi1) / self.volume_out

    def kernel_reciprocal(self, chi1):
        """-(alpha/|Y_out|) int_Gamma [chi1^h](0) [chi1^j](t_k)."""
        steps, dim, size = chi1.shape
        flat = self.jump.matrix @ chi1.reshape(-1, size).T
        jumps = flat.T.reshape(steps, dim, self.jump.size)
        weighted = jumps[0] * self.jump.weights[None, :]
        return (
            -self.iface.alpha
            * np.einsum("hm,kjm->khj", weighted, jumps)
            / self.volume_out
        )


def solve_zeta(cell, coeffs, **options):
    return CellProblems(cell, coeffs, **options).solve_zeta()


def solve_chi0(cell, coeffs, **options):
    return CellProblems(cell, coeffs, **options).solve_chi0()


def solve_chi0_neumann(cell, coeffs, **options):
    return CellProblems(cell, coeffs, **options).solve_chi0_neumann()


def solve_chi1(
    cell, coeffs, iface, dt_kernel=None, steps=DEFAULT_KERNEL_STEPS, **options
):
    problems = CellProblems(cell, coeffs, iface, **options)
    dt_kernel = dt_kernel or iface.default_dt_kernel
    return problems.solve_chi1(problems.solve_chi0(), dt_kernel, steps)


def solve_T_s1(
    cell, coeffs, iface, s1, dt_kernel=None, steps=DEFAULT_KERNEL_STEPS, **options
):
    problems = CellProblems(cell, coeffs, iface, **options)
    dt_kernel = dt_kernel or iface.default_dt_kernel
    return problems.solve_T_s1(s1, dt_kernel, steps)


def solve_correctors(
    problems, regime, dt_kernel=None, steps=DEFAULT_KERNEL_STEPS, s1=None
):
    """Every corrector the given regime needs."""
    if regime not in REGIMES:
        raise RegimeError("unknown regime %r" % (regime,))
    correctors = CellCorrectors(problems, zeta=problems.solve_zeta())
    if regime in ("memory", "perfect"):
        correctors.chi0 = problems.solve_chi0()
    if regime == "memory":
        dt_kernel = dt_kernel or problems.iface.default_dt_kernel
        correctors.dt_kernel = dt_kernel
        correctors.chi1 = problems.solve_chi1(correctors.chi0, dt_kernel, steps)
        if s1 is not None and np.any(np.asarray(s1) != 0):
            correctors.t_s1 = problems.solve_T_s1(s1, dt_kernel, steps)
    if regime in ("standard", "tridomain"):
        correctors.chi0_B, correctors.chi0_D = problems.solve_chi0_neumann()
    return correctors


def compute_effective(cell, correctors, regime):
    problems = correctors.problems
    if problems.cell is not cell:
        raise CellProblemError("correctors were computed on a different cell")
    needed = {
        "memory": ("zeta", "chi0", "chi1"),
        "perfect": ("zeta", "chi0"),
        "standard": ("zeta", "chi0_B"),
        "tridomain": ("zeta", "chi0_B"),
    }.get(regime)
    if needed is None:
        raise RegimeError("unknown regime %r" % (regime,))
    missing = [name for name in needed if getattr(correctors, name) is None]
    if missing:
        raise CellProblemError(
            "regime %s needs correctors %s" % (regime, ", ".join(missing))
        )
    coeffs = problems.coeffs
    metadata = {"discrepancy": {}}
    A1, metadata["discrepancy"]["A1"] = problems._dual_forms(
        "A1", problems.out_map, coeffs.sigma_int, (OUT,), correctors.zeta
    )
    tensors = EffectiveTensors(
        regime=regime,
        A1=A1,
        alpha=float(problems.iface.alpha),
        beta=float(problems.iface.beta),
        volume_out=problems.volume_out,
        interface_area=float(cell.interface_area),
        metadata=metadata,
    )
    tensors.gamma_points, tensors.gamma_weights = problems.interface_nodes()
    if correctors.chi0 is not None:
        tensors.A2, metadata["discrepancy"]["A2"] = problems._dual_forms(
            "A2", problems.cont_map, problems.sigma_both, (OUT, INT), correctors.chi0
        )
    if correctors.chi0_B is not None:
        tensors.A2_B, metadata["discrepancy"]["A2_B"] = problems._dual_forms(
            "A2_B", problems.out_map, coeffs.sigma_out, (OUT,), correctors.chi0_B
        )
        if correctors.chi0_D is None:
            tensors.A2_D = np.zeros_like(A1)
        else:
            tensors.A2_D, metadata["discrepancy"]["A2_D"] = problems._dual_forms(
                "A2_D", problems.int_map, coeffs.sigma_dis, (INT,), correctors.chi0_D
            )
    if correctors.chi1 is not None:
        tensors.B = problems.kernel_from_chi1(correctors.chi1)
        tensors.dt_kernel = correctors.dt_kernel
        reciprocal = problems.kernel_reciprocal(correctors.chi1)
        scale = max(float(np.abs(tensors.B[0]).max()), 1e-300)
        mismatch = float(np.abs(tensors.B - reciprocal).max())
        metadata["kernel_reciprocity"] = mismatch / scale
        metadata["kernel_asymmetry"] = (
            float(np.abs(tensors.B - tensors.B.transpose(0, 2, 1)).max()) / scale
        )
        norms = np.abs(tensors.B).max(axis=(1, 2))
        metadata["kernel_tail"] = float(norms[-1] / norms[0]) if norms[0] > 0 else 0.0
        tensors.F_cellflux = np.zeros((len(tensors.B), cell.dim))
        if correctors.t_s1 is not None:
            tensors.F_cellflux = correctors.t_s1 @ problems.split_loads
    for name in REQUIRED_TENSORS[regime]:
        if getattr(tensors, name) is None:
            raise CellProblemError("regime %s is missing tensor %s" % (regime, name))
    return tensors


def cell_interface_datum(problems, profile):
    """Nodal s1 on the cell interface for an x-independent s(x, y), else None."""
    if profile is None or profile.is_zero:
        return None
    dim = problems.cell.dim
    if profile.depends_on(*spatial_variables(dim)):
        _logger.warning(
            "s1 depends on x: the macroscopic source F needs a macro gradient "
            "of the cell flux table and is not assembled"
        )
        return None
    coords, _weights = problems.interface_nodes()
    return profile.at_points(np.hstack([np.zeros_like(coords), coords]))


def effective_tensors(
    cell,
    coeffs,
    iface,
    dt_kernel=None,
    kernel_steps=DEFAULT_KERNEL_STEPS,
    s1_profile=None,
    tol=1e-10,
    method="auto",
    threads=1,
):
    """Solve the cell problems of the regime of ``iface`` and assemble its tensors."""
    coeffs.validate(cell)
    problems = CellProblems(
        cell, coeffs, iface, tol=tol, method=method, threads=threads
    )
    regime = iface.regime
    s1 = cell_interface_datum(problems, s1_profile) if regime == "memory" else None
    correctors = solve_correctors(problems, regime, dt_kernel, kernel_steps, s1)
    tensors = compute_effective(cell, correctors, regime)
    c0, c1 = coeffs.ellipticity_bounds(cell)
    tensors.metadata.update(
        {
            "geometry": _digest(cell.labels, np.array([cell.dim, cell.cells_per_side])),
            "coefficients": coeffs.digest,
            "alpha": float(iface.alpha),
            "beta": float(iface.beta),
            "ell": float(iface.ell),
            "kernel_steps": kernel_steps if regime == "memory" else 0,
            "ellipticity": [c0, c1],
        }
    )
    _logger.info(
        "effective tensors (%s): A1 diag %s",
        regime,
        np.array2string(np.diag(tensors.A1), precision=6),
    )
    return tensors
