# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Structured Q1 grids of the periodic cell Y and of the tiled domain.

Phase label 0 is E_out (the bidomain phase B), label 1 is E_int (the
diffusive inclusion D). Every interface facet separates one cell of each
phase and carries the unit normal pointing into E_out.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from ..exceptions import GeometryError

_logger = logging.getLogger(__name__)

OUT = 0
INT = 1
PHASES = {"out": OUT, "int": INT}
TOPOLOGIES = ("disconnected", "connected")


def _fraction(value):
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise GeometryError("%r is not a rational number" % (value,))


def vertex_offsets(dim):
    """Offsets of the 2^dim element vertices; bit k of the index is axis k."""
    local = np.arange(2 ** dim)
    return (local[:, None] >> np.arange(dim)[None, :]) & 1


@dataclass(frozen=True)
class Inclusion:
    """Shape of E_int inside the unit cell.

    ``box`` is the open box lower < y < upper. ``tube`` is the union over
    the axes a of the sets {lower_b < y_b < upper_b for every b != a},
    i.e. three axis-parallel tubes crossing the cell.
    """

    kind: str = "none"
    lower: tuple = ()
    upper: tuple = ()

    @classmethod
    def parse(cls, text, dim):
        words = str(text).split()
        if not words:
            raise GeometryError("empty inclusion descriptor")
        kind = words[0].lower()
        values = [_fraction(w) for w in words[1:]]
        if kind == "none":
            if values:
                raise GeometryError("inclusion 'none' takes no coordinates")
            return cls()
        if kind == "box":
            if len(values) != 2 * dim:
                raise GeometryError(
                    "box inclusion needs %d coordinates, got %d"
                    % (2 * dim, len(values))
                )
            return cls("box", tuple(values[:dim]), tuple(values[dim:]))
        if kind == "tube":
            if len(values) != 2:
                raise GeometryError("tube inclusion needs 'tube LOW HIGH'")
            return cls("tube", (values[0],) * dim, (values[1],) * dim)
        raise GeometryError("unknown inclusion kind %r" % kind)

    def __str__(self):
        if self.kind == "none":
            return "none"
        if self.kind == "tube":
            return "tube %s %s" % (self.lower[0], self.upper[0])
        return " ".join(["box"] + [str(v) for v in self.lower + self.upper])

    def labels(self, dim, n):
        """Phase label of every grid cell, shape (n,)*dim."""
        labels = np.zeros((n,) * dim, dtype=np.int8)
        if self.kind == "none":
            return labels
        inside = []
        for axis in range(dim):
            lo = int(self.lower[axis] * n)
            hi = int(self.upper[axis] * n)
            mask = np.zeros(n, dtype=bool)
            mask[lo:hi] = True
            shape = [1] * dim
            shape[axis] = n
            inside.append(mask.reshape(shape))
        if self.kind == "box":
            mask = np.ones((n,) * dim, dtype=bool)
            for m in inside:
                mask = mask & m
        else:
            mask = np.zeros((n,) * dim, dtype=bool)
            for axis in range(dim):
                tube = np.ones((n,) * dim, dtype=bool)
                for other in range(dim):
                    if other != axis:
                        tube = tube & inside[other]
                mask = mask | tube
        labels[mask] = INT
        return labels


@dataclass(frozen=True)
class CellSpec:
    dim: int = 2
    resolution: int = 8
    topology: str = "disconnected"
    inclusion: Inclusion = field(default_factory=Inclusion)

    def validate(self):
        if self.dim not in (2, 3):
            raise GeometryError("dim must be 2 or 3, got %r" % (self.dim,))
        n = self.resolution
        if n < 2 or n & (n - 1):
            raise GeometryError("resolution must be a power of two >= 2, got %r" % n)
        if self.topology not in TOPOLOGIES:
            raise GeometryError("unknown topology %r" % (self.topology,))
        if self.topology == "connected" and self.dim != 3:
            raise GeometryError(
                "connected topology requires dim = 3: two periodic-connected "
                "phases cannot both percolate in a 2D cell"
            )
        inc = self.inclusion
        for value in inc.lower + inc.upper:
            if (value * n).denominator != 1:
                raise GeometryError(
                    "inclusion coordinate %s is not aligned to the 1/%d grid"
                    % (value, n)
                )
        for lo, hi in zip(inc.lower, inc.upper):
            if not lo < hi:
                raise GeometryError("inclusion bounds must satisfy lower < upper")
        if self.topology == "disconnected":
            if inc.kind == "tube":
                raise GeometryError("tube inclusions need connected topology")
            if inc.kind == "box" and not all(
                0 < lo and hi < 1 for lo, hi in zip(inc.lower, inc.upper)
            ):
                raise GeometryError(
                    "disconnected inclusion must lie strictly inside the cell"
                )
        else:
            if inc.kind != "tube":
                raise GeometryError("connected topology needs a tube inclusion")
            if not all(0 < lo and hi < 1 for lo, hi in zip(inc.lower, inc.upper)):
                raise GeometryError("tube bounds must lie strictly inside (0, 1)")
        return self


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Uniform grid of the unit box with one phase label per cell.

    Periodic grids identify opposite faces (node indices taken modulo the
    resolution); non-periodic grids carry the boundary nodes.
    """

    dim: int
    cells_per_side: int
    periodic: bool
    labels: np.ndarray

    @property
    def h(self):
        return 1.0 / self.cells_per_side

    @property
    def n_elements(self):
        return self.cells_per_side ** self.dim

    @property
    def nodes_per_side(self):
        return self.cells_per_side + (0 if self.periodic else 1)

    @property
    def n_nodes(self):
        return self.nodes_per_side ** self.dim

    @cached_property
    def element_index(self):
        n = self.cells_per_side
        return np.indices((n,) * self.dim).reshape(self.dim, -1).T

    @cached_property
    def element_nodes(self):
        corners = self.element_index[:, None, :] + vertex_offsets(self.dim)[None]
        if self.periodic:
            corners = corners % self.cells_per_side
        shape = (self.nodes_per_side,) * self.dim
        return np.ravel_multi_index(
            tuple(corners[..., k] for k in range(self.dim)), shape
        )

    @cached_property
    def node_coords(self):
        shape = (self.nodes_per_side,) * self.dim
        index = np.indices(shape).reshape(self.dim, -1).T
        return index * self.h

    @cached_property
    def element_centers(self):
        return (self.element_index + 0.5) * self.h

    @cached_property
    def boundary_nodes(self):
        if self.periodic:
            return np.zeros(0, dtype=np.int64)
        shape = (self.nodes_per_side,) * self.dim
        index = np.indices(shape).reshape(self.dim, -1).T
        on_boundary = np.any((index == 0) | (index == self.cells_per_side), axis=1)
        return np.flatnonzero(on_boundary)

    def phase_elements(self, phases):
        return np.flatnonzero(np.isin(self.labels, list(phases)))

    def phase_nodes(self, phases):
        elements = self.phase_elements(phases)
        return np.unique(self.element_nodes[elements].ravel())

    @cached_property
    def facets(self):
        return _find_facets(self)

    @property
    def n_facets(self):
        return len(self.facets["axis"])

    def measure(self, phase):
        count = int(np.count_nonzero(self.labels == phase))
        return Fraction(count, self.n_elements)

    @property
    def interface_measure(self):
        return Fraction(self.n_facets, self.cells_per_side ** (self.dim - 1))

    def phase_components(self, phase):
        """Face-connected components of one phase (periodic if the grid is)."""
        elements = np.flatnonzero(self.labels == phase)
        if not len(elements):
            return 0, np.zeros(0, dtype=np.int64)
        n = self.cells_per_side
        grid = self.labels.reshape((n,) * self.dim)
        rows, cols = [], []
        for axis in range(self.dim):
            upper = self.element_index.copy()
            upper[:, axis] += 1
            valid = np.ones(self.n_elements, dtype=bool)
            if self.periodic:
                upper[:, axis] %= n
            else:
                valid = upper[:, axis] < n
            lower = np.flatnonzero(valid)
            upper_flat = np.ravel_multi_index(
                tuple(upper[valid][:, k] for k in range(self.dim)), grid.shape
            )
            same = (self.labels[lower] == phase) & (self.labels[upper_flat] == phase)
            rows.append(lower[same])
            cols.append(upper_flat[same])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        graph = sparse.coo_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(self.n_elements, self.n_elements),
        ).tocsr()
        _, comp = connected_components(graph, directed=False)
        _, relabeled = np.unique(comp[elements], return_inverse=True)
        return int(relabeled.max()) + 1, relabeled


def _find_facets(grid):
    n = grid.cells_per_side
    dim = grid.dim
    offsets = vertex_offsets(dim)
    shape = (n,) * dim
    cells_int, cells_out, axes, signs, nodes = [], [], [], [], []
    for axis in range(dim):
        upper = grid.element_index.copy()
        upper[:, axis] += 1
        if grid.periodic:
            upper[:, axis] %= n
            valid = np.ones(grid.n_elements, dtype=bool)
        else:
            valid = upper[:, axis] < n
        lower = np.flatnonzero(valid)
        upper_flat = np.ravel_multi_index(
            tuple(upper[valid][:, k] for k in range(dim)), shape
        )
        differ = grid.labels[lower] != grid.labels[upper_flat]
        lower = lower[differ]
        upper_flat = upper_flat[differ]
        int_below = grid.labels[lower] == INT
        cells_int.append(np.where(int_below, lower, upper_flat))
        cells_out.append(np.where(int_below, upper_flat, lower))
        axes.append(np.full(len(lower), axis, dtype=np.int64))
        signs.append(np.where(int_below, 1, -1))
        face_vertices = np.flatnonzero(offsets[:, axis] == 1)
        nodes.append(grid.element_nodes[lower][:, face_vertices])
    axis = np.concatenate(axes)
    sign = np.concatenate(signs)
    normal = np.zeros((len(axis), dim))
    normal[np.arange(len(axis)), axis] = sign
    return {
        "cell_int": np.concatenate(cells_int),
        "cell_out": np.concatenate(cells_out),
        "axis": axis,
        "normal": normal,
        "area": np.full(len(axis), grid.h ** (dim - 1)),
        "nodes": np.concatenate(nodes).reshape(len(axis), 2 ** (dim - 1)),
    }


@dataclass(frozen=True, eq=False)
class CellGeometry(PhaseGrid):
    spec: CellSpec = None

    @property
    def volume_int(self):
        return self.measure(INT)

    @property
    def volume_out(self):
        return self.measure(OUT)

    @property
    def interface_area(self):
        return self.interface_measure


@dataclass(frozen=True, eq=False)
class DomainGeometry(PhaseGrid):
    """The box Omega tiled by 1/eps copies of the cell."""

    cell: CellGeometry = None
    eps: Fraction = None
    topology: str = "disconnected"

    @property
    def k(self):
        return self.eps.denominator

    @cached_property
    def macro_cell_of_element(self):
        n = self.cell.cells_per_side
        macro = self.element_index // n
        return np.ravel_multi_index(
            tuple(macro[:, a] for a in range(self.dim)), (self.k,) * self.dim
        )

    @cached_property
    def inclusion_cells(self):
        """Macro cells carrying at least one E_int element."""
        carriers = self.macro_cell_of_element[self.labels == INT]
        return np.unique(carriers)

    def cell_element(self):
        """Index of the unit-cell element each domain element is a copy of."""
        n = self.cell.cells_per_side
        local = self.element_index % n
        return np.ravel_multi_index(
            tuple(local[:, a] for a in range(self.dim)), (n,) * self.dim
        )


def build_unit_cell(spec):
    spec.validate()
    n, dim = spec.resolution, spec.dim
    labels = spec.inclusion.labels(dim, n).ravel()
    geom = CellGeometry(
        dim=dim, cells_per_side=n, periodic=True, labels=labels, spec=spec
    )
    count_out, _ = geom.phase_components(OUT)
    if count_out != 1:
        raise GeometryError("E_out must be connected, found %d pieces" % count_out)
    if spec.topology == "connected":
        count_int, _ = geom.phase_components(INT)
        if count_int != 1 or not _percolates(geom, INT):
            raise GeometryError("E_int does not percolate through the cell")
        if not _percolates(geom, OUT):
            raise GeometryError("E_out does not percolate through the cell")
    _logger.debug(
        "unit cell dim=%d n=%d |Y_int|=%s |Gamma|=%s",
        dim,
        n,
        geom.volume_int,
        geom.interface_area,
    )
    return geom


def _percolates(geom, phase):
    grid = geom.labels.reshape((geom.cells_per_side,) * geom.dim)
    for axis in range(geom.dim):
        first = np.take(grid, 0, axis=axis) == phase
        last = np.take(grid, -1, axis=axis) == phase
        if not np.any(first & last):
            return False
    return True


def tile_domain(cell, eps, topology=None):
    topology = topology or cell.spec.topology
    eps = Fraction(eps)
    if eps <= 0 or eps.numerator != 1:
        raise GeometryError("eps must be 1/k for a positive integer k, got %s" % eps)
    k = eps.denominator
    if topology == "disconnected" and k < 3:
        raise GeometryError("no interior cells: k = %d < 3" % k)
    dim = cell.dim
    n = cell.cells_per_side
    big = np.tile(cell.labels.reshape((n,) * dim), (k,) * dim)
    if topology == "disconnected":
        macro = np.indices((k * n,) * dim) // n
        touching = np.any((macro == 0) | (macro == k - 1), axis=0)
        big[touching] = OUT
    domain = DomainGeometry(
        dim=dim,
        cells_per_side=k * n,
        periodic=False,
        labels=big.ravel(),
        cell=cell,
        eps=eps,
        topology=topology,
    )
    _logger.debug(
        "tiled domain k=%d: %d elements, %d interface facets",
        k,
        domain.n_elements,
        domain.n_facets,
    )
    return domain


def box_mesh(dim, cells_per_side):
    """One-phase Dirichlet mesh of the unit box for the macroscopic systems."""
    if cells_per_side < 1:
        raise GeometryError("macro resolution must be positive")
    return PhaseGrid(
        dim=dim,
        cells_per_side=cells_per_side,
        periodic=False,
        labels=np.zeros(cells_per_side ** dim, dtype=np.int8),
    )


@dataclass(frozen=True, eq=False)
class InterfaceQuadrature:
    """Facet weights plus their lumping onto facet vertices."""

    facet_weights: np.ndarray
    nodes: np.ndarray
    node_weights: np.ndarray

    @property
    def total(self):
        return float(self.facet_weights.sum())


def interface_quadrature(geom):
    facets = geom.facets
    weights = facets["area"]
    if not len(weights):
        empty = np.zeros(0)
        return InterfaceQuadrature(empty, np.zeros(0, dtype=np.int64), empty)
    share = np.repeat(weights / facets["nodes"].shape[1], facets["nodes"].shape[1])
    lumped = np.bincount(
        facets["nodes"].ravel(), weights=share, minlength=geom.n_nodes
    )
    nodes = np.unique(facets["nodes"])
    return InterfaceQuadrature(weights.copy(), nodes, lumped[nodes])
