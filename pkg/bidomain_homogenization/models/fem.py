# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Q1 assembly on PhaseGrid meshes and the linear solvers built on it.

Interface nodes of a split DoF layout carry one unknown per phase, so the
jump [u] = u_B - u_D is just a signed difference of two entries.
"""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.sparse.csgraph import connected_components

from ..exceptions import (
    CoefficientError,
    IncompatibleDataError,
    LinearSolveError,
    ValidationError,
)
from .geometry import INT, OUT, interface_quadrature, vertex_offsets

_logger = logging.getLogger(__name__)

SPLIT = ((OUT,), (INT,))
CONTINUOUS = ((OUT, INT),)
DIRECT_LIMIT = 4000
SOLVER_METHODS = ("auto", "direct", "cg")


@lru_cache(maxsize=None)
def reference_element(dim):
    """Q1 reference integrals on the unit cube, exact with 2-point Gauss.

    Returns (G, M, D): G[k, l, a, b] = int d_k phi_a d_l phi_b,
    M[a, b] = int phi_a phi_b and D[k, a] = int d_k phi_a.
    """
    g = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    points = np.array(np.meshgrid(*([g] * dim), indexing="ij")).reshape(dim, -1).T
    weight = 0.5 ** dim
    offsets = vertex_offsets(dim)
    # factors[q, a, k]: 1D hat of vertex a along axis k at point q
    factors = np.where(offsets[None], points[:, None, :], 1.0 - points[:, None, :])
    slopes = np.where(offsets == 1, 1.0, -1.0)
    phi = factors.prod(axis=2)
    dphi = np.empty(phi.shape + (dim,))
    for k in range(dim):
        others = np.delete(factors, k, axis=2).prod(axis=2)
        dphi[..., k] = slopes[None, :, k] * others
    G = weight * np.einsum("qak,qbl->klab", dphi, dphi)
    M = weight * np.einsum("qa,qb->ab", phi, phi)
    D = weight * dphi.sum(axis=0).T
    return G, M, D


@dataclass(frozen=True, eq=False)
class SparseOperator:
    matrix: sparse.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self):
        return self.matrix.toarray()


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    residual: float
    method: str


class DoFMap:
    """Numbering of the unknowns of a grid grouped into fields.

    Each field is a tuple of phase labels sharing one unknown per node; a
    node touched by two fields (an interface node of a split layout) gets
    one index in each. Dirichlet nodes are eliminated, not stored.
    """

    def __init__(self, grid, fields=CONTINUOUS, dirichlet=False):
        self.grid = grid
        self.fields = tuple(tuple(f) for f in fields)
        self.dirichlet = dirichlet
        node_dofs = np.full((len(self.fields), grid.n_nodes), -1, dtype=np.int64)
        next_dof = 0
        for f, phases in enumerate(self.fields):
            touched = np.zeros(grid.n_nodes, dtype=bool)
            touched[grid.phase_nodes(phases)] = True
            if dirichlet:
                touched[grid.boundary_nodes] = False
            count = int(touched.sum())
            node_dofs[f, touched] = np.arange(next_dof, next_dof + count)
            next_dof += count
        self.node_dofs = node_dofs
        self.size = next_dof

    def field_of_label(self, label):
        for f, phases in enumerate(self.fields):
            if label in phases:
                return f
        return -1

    @cached_property
    def element_field(self):
        lookup = np.array([self.field_of_label(lab) for lab in (OUT, INT)])
        return lookup[self.grid.labels]

    @cached_property
    def element_dofs(self):
        ef = self.element_field
        dofs = np.full(self.grid.element_nodes.shape, -1, dtype=np.int64)
        active = ef >= 0
        nodes = self.grid.element_nodes[active]
        dofs[active] = self.node_dofs[ef[active][:, None], nodes]
        return dofs

    @cached_property
    def _dof_table(self):
        nodes = np.empty(self.size, dtype=np.int64)
        fields = np.empty(self.size, dtype=np.int64)
        for f in range(len(self.fields)):
            present = np.flatnonzero(self.node_dofs[f] >= 0)
            nodes[self.node_dofs[f, present]] = present
            fields[self.node_dofs[f, present]] = f
        return nodes, fields

    @property
    def dof_nodes(self):
        return self._dof_table[0]

    @property
    def dof_fields(self):
        return self._dof_table[1]

    @property
    def dof_coords(self):
        return self.grid.node_coords[self.dof_nodes]

    def field_dofs(self, f):
        return self.node_dofs[f][self.node_dofs[f] >= 0]

    def to_nodes(self, values, f=0):
        """Scatter field ``f`` of a DoF vector onto all grid nodes (0 elsewhere)."""
        out = np.zeros(self.grid.n_nodes)
        present = self.node_dofs[f] >= 0
        out[present] = values[self.node_dofs[f, present]]
        return out

    def from_nodes(self, nodal, f=0):
        values = np.zeros(self.size)
        present = self.node_dofs[f] >= 0
        values[self.node_dofs[f, present]] = nodal[present]
        return values


def _element_tensor(grid, sigma):
    sigma = np.asarray(sigma, dtype=float)
    dim = grid.dim
    if sigma.ndim == 0:
        sigma = sigma * np.eye(dim)
    if sigma.ndim == 2:
        sigma = np.broadcast_to(sigma, (grid.n_elements, dim, dim))
    if sigma.shape != (grid.n_elements, dim, dim):
        raise CoefficientError(
            "coefficient field has shape %s, expected %s"
            % (sigma.shape, (grid.n_elements, dim, dim))
        )
    return sigma


def _check_symmetric(sigma):
    scale = max(float(np.abs(sigma).max(initial=0.0)), 1e-300)
    if np.abs(sigma - sigma.transpose(0, 2, 1)).max(initial=0.0) > 1e-14 * scale:
        raise CoefficientError("conductivity tensor is not symmetric")


def _assemble(dofmap, local, mask):
    """Sum per-element matrices local[e] of the masked elements into CSR."""
    dofs = dofmap.element_dofs
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0) & mask[:, None, None]
    matrix = sparse.coo_matrix(
        (local[keep], (rows[keep], cols[keep])), shape=(dofmap.size, dofmap.size)
    )
    return matrix.tocsr()


def _phase_mask(grid, dofmap, phases):
    mask = dofmap.element_field >= 0
    if phases is not None:
        mask &= np.isin(grid.labels, list(phases))
    return mask


def assemble_stiffness(grid, dofmap, sigma, phases=None):
    """int sigma grad u . grad v over the elements of ``phases`` (default all)."""
    sigma = _element_tensor(grid, sigma)
    _check_symmetric(sigma)
    G, _, _ = reference_element(grid.dim)
    local = grid.h ** (grid.dim - 2) * np.einsum("ekl,klab->eab", sigma, G)
    mask = _phase_mask(grid, dofmap, phases)
    return SparseOperator(_assemble(dofmap, local, mask), symmetric=True)


def assemble_mass(grid, dofmap, phases=None):
    _, M, _ = reference_element(grid.dim)
    mask = _phase_mask(grid, dofmap, phases)
    local = np.broadcast_to(grid.h ** grid.dim * M, (grid.n_elements,) + M.shape)
    return SparseOperator(_assemble(dofmap, local, mask), symmetric=True)


def gradient_loads(grid, dofmap, sigma, phases=None):
    """Columns b^j with b^j_a = int sigma e_j . grad phi_a, shape (size, dim)."""
    sigma = _element_tensor(grid, sigma)
    _, _, D = reference_element(grid.dim)
    mask = _phase_mask(grid, dofmap, phases)
    local = grid.h ** (grid.dim - 1) * np.einsum("ekj,ka->eaj", sigma, D)
    local = local * mask[:, None, None]
    dofs = dofmap.element_dofs
    loads = np.zeros((dofmap.size, grid.dim))
    active = dofs >= 0
    for j in range(grid.dim):
        loads[:, j] = np.bincount(
            dofs[active], weights=local[..., j][active], minlength=dofmap.size
        )
    return loads


def region_integral_weights(grid, dofmap, phases=None):
    """w with w . u = int u over the selected elements, exact for Q1."""
    mask = _phase_mask(grid, dofmap, phases)
    dofs = dofmap.element_dofs
    share = grid.h ** grid.dim / 2 ** grid.dim
    weights = np.broadcast_to((mask * share)[:, None], dofs.shape)
    active = dofs >= 0
    return np.bincount(dofs[active], weights=weights[active], minlength=dofmap.size)


def merge_operator(split_map, continuous_map):
    """E mapping continuous unknowns onto every field of a split layout."""
    rows, cols = [], []
    for f in range(len(split_map.fields)):
        present = (split_map.node_dofs[f] >= 0) & (continuous_map.node_dofs[0] >= 0)
        rows.append(split_map.node_dofs[f, present])
        cols.append(continuous_map.node_dofs[0, present])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)),
        shape=(split_map.size, continuous_map.size),
    ).tocsr()


def injection_operator(target_map, source_map, target_field=0, source_field=0):
    """P copying one field of ``source_map`` into one field of ``target_map``."""
    present = (target_map.node_dofs[target_field] >= 0) & (
        source_map.node_dofs[source_field] >= 0
    )
    rows = target_map.node_dofs[target_field, present]
    cols = source_map.node_dofs[source_field, present]
    return sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(target_map.size, source_map.size)
    ).tocsr()


@dataclass(frozen=True, eq=False)
class JumpOperator:
    """[u] = u_B - u_D at the interface nodes owning both unknowns."""

    matrix: sparse.csr_matrix
    weights: np.ndarray
    nodes: np.ndarray
    b_dofs: np.ndarray
    d_dofs: np.ndarray

    @property
    def size(self):
        return len(self.nodes)

    def __call__(self, u):
        return self.matrix @ u

    def mass(self, scale=1.0):
        if not self.size:
            return sparse.csr_matrix((self.matrix.shape[1], self.matrix.shape[1]))
        return self.matrix.T @ sparse.diags(scale * self.weights) @ self.matrix

    def load(self, values):
        """J^T W values: the interface load of a nodal jump datum."""
        return self.matrix.T @ (self.weights * values)

    def norm2(self, values):
        return float(np.dot(self.weights, values * values))


def jump_operator(grid, dofmap):
    if len(dofmap.fields) < 2:
        return JumpOperator(
            sparse.csr_matrix((0, dofmap.size)),
            np.zeros(0),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
    quad = interface_quadrature(grid)
    b_dofs = dofmap.node_dofs[0, quad.nodes]
    d_dofs = dofmap.node_dofs[1, quad.nodes]
    both = (b_dofs >= 0) & (d_dofs >= 0)
    nodes = quad.nodes[both]
    b_dofs = b_dofs[both]
    d_dofs = d_dofs[both]
    count = len(nodes)
    rows = np.concatenate([np.arange(count), np.arange(count)])
    cols = np.concatenate([b_dofs, d_dofs])
    data = np.concatenate([np.ones(count), -np.ones(count)])
    matrix = sparse.coo_matrix((data, (rows, cols)), shape=(count, dofmap.size))
    return JumpOperator(matrix.tocsr(), quad.node_weights[both], nodes, b_dofs, d_dofs)


def assemble_interface_mass(grid, dofmap):
    """M_Gamma with x^T M_Gamma y = int_Gamma [x][y], lumped on facet vertices."""
    jump = jump_operator(grid, dofmap)
    return SparseOperator(jump.mass().tocsr(), symmetric=True)


def _as_matrix(A):
    if isinstance(A, SparseOperator):
        return A.matrix
    return A


def component_labels(A):
    """Connected components of the sparsity graph of A."""
    A = sparse.csr_matrix(_as_matrix(A))
    pattern = sparse.csr_matrix(
        (np.ones(A.nnz), A.indices, A.indptr), shape=A.shape
    )
    count, labels = connected_components(pattern, directed=False)
    return count, labels


def neumann_pins(A):
    """First DoF of every connected component of A."""
    count, labels = component_labels(A)
    _, first = np.unique(labels, return_index=True)
    return first, labels


def check_compatible(b, labels, rtol=1e-10):
    """Component sums of a pure-Neumann load must vanish."""
    b = np.asarray(b, dtype=float)
    scale = float(np.linalg.norm(b))
    if b.ndim == 1:
        b = b[:, None]
    sums = np.zeros((int(labels.max(initial=-1)) + 1, b.shape[1]))
    np.add.at(sums, labels, b)
    worst = float(np.abs(sums).max(initial=0.0))
    if worst > rtol * scale and worst > 0.0:
        raise IncompatibleDataError(
            "incompatible Neumann data: component sum %.3e exceeds %.1e * |b| = %.3e"
            % (worst, rtol, rtol * scale)
        )


class LinearSolver:
    """Solves with one SPD matrix many times.

    ``pinned`` DoFs are held at zero (rows and columns removed), which is
    how pure-Neumann systems are made definite. The direct factorization
    is computed once.
    """

    def __init__(self, A, tol=1e-10, method="auto", pinned=None):
        if method not in SOLVER_METHODS:
            raise ValidationError("unknown linear solver %r" % (method,))
        A = sparse.csr_matrix(_as_matrix(A))
        self.size = A.shape[0]
        self.tol = tol
        keep = np.ones(self.size, dtype=bool)
        if pinned is not None and len(pinned):
            keep[np.asarray(pinned)] = False
        self.free = np.flatnonzero(keep)
        self.matrix = A[self.free][:, self.free].tocsr()
        if method == "auto":
            method = "direct" if len(self.free) <= DIRECT_LIMIT else "cg"
        self.method = method
        self._factor = None
        self._precond = None

    def prepare(self):
        """Build the factorization or preconditioner before concurrent solves."""
        if self.method == "direct":
            self._factorized()
        else:
            self._jacobi()
        return self

    def _factorized(self):
        if self._factor is None:
            self._factor = splinalg.factorized(self.matrix.tocsc())
        return self._factor

    def _jacobi(self):
        if self._precond is None:
            diag = self.matrix.diagonal()
            if np.any(diag <= 0):
                raise LinearSolveError("matrix has a non-positive diagonal entry")
            inv = 1.0 / diag
            n = len(diag)
            self._precond = splinalg.LinearOperator(
                (n, n), matvec=lambda x: inv * x, dtype=float
            )
        return self._precond

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = np.zeros(self.size)
        rhs = b[self.free]
        norm = float(np.linalg.norm(rhs))
        if not len(self.free) or norm == 0.0:
            return x, LinearSolveReport(0, 0.0, self.method)
        if self.method == "direct":
            y = self._factorized()(rhs)
            iterations = 1
        else:
            y, iterations = self._cg(rhs, norm)
        residual = float(np.linalg.norm(rhs - self.matrix @ y)) / norm
        report = LinearSolveReport(iterations, residual, self.method)
        if not np.all(np.isfinite(y)) or residual > self.tol:
            raise LinearSolveError(
                "%s solve reached relative residual %.3e > %.1e"
                % (self.method, residual, self.tol),
                report,
            )
        _logger.debug(
            "%s solve: n=%d iterations=%d residual=%.2e",
            self.method,
            len(self.free),
            iterations,
            residual,
        )
        x[self.free] = y
        return x, report

    def _cg(self, rhs, norm):
        cap = int(50 * np.sqrt(len(rhs))) + 1
        counter = {"it": 0}

        def count(_):
            counter["it"] += 1

        y = np.zeros(len(rhs))
        for _restart in range(3):
            y, info = splinalg.cg(
                self.matrix,
                rhs,
                x0=y,
                rtol=0.5 * self.tol,
                atol=0.0,
                maxiter=cap,
                M=self._jacobi(),
                callback=count,
            )
            residual = float(np.linalg.norm(rhs - self.matrix @ y)) / norm
            if residual <= self.tol:
                break
            _logger.debug("cg restart after info=%s residual=%.2e", info, residual)
        return y, counter["it"]


def solve_spd(A, b, tol=1e-10, method="auto"):
    return LinearSolver(A, tol=tol, method=method).solve(b)


def solve_neumann(A, b, tol=1e-10, method="auto"):
    """Pure-Neumann solve: pin one DoF per component after a compatibility check."""
    pins, labels = neumann_pins(A)
    check_compatible(b, labels)
    return LinearSolver(A, tol=tol, method=method, pinned=pins).solve(b)


REGIONS = {"Y": (OUT, INT), "Y_out": (OUT,), "Y_int": (INT,)}


def region_mean(values, grid, dofmap, region="Y"):
    phases = REGIONS[region]
    measure = sum(float(grid.measure(p)) for p in phases)
    if measure <= 0.0:
        raise ValidationError("region %s is empty" % region)
    weights = region_integral_weights(grid, dofmap, phases)
    return float(np.dot(weights, values)) / measure


def project_zero_mean(values, grid, dofmap, region="Y"):
    """Subtract the region mean (consistent Q1 integral) from every entry."""
    if region not in REGIONS:
        raise ValidationError("unknown region %r" % (region,))
    return np.asarray(values, dtype=float) - region_mean(values, grid, dofmap, region)
