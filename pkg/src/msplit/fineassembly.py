"""Bilinear (Q1) finite element assembly on the fine grid.

The permeability is sampled once per fine cell at the cell center and treated
as constant there. Stiffness uses the exact integrals of the bilinear shape
functions; mass and load use 2x2 Gauss quadrature, which is exact for the mass
matrix. Homogeneous Dirichlet conditions are imposed by eliminating boundary
rows and columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .grid import GridPair

__all__ = [
    "Permeability",
    "FineSystem",
    "assemble",
    "load",
    "norms",
    "interpolate",
    "local_matrices",
    "read_grid_file",
    "write_grid_file",
    "read_field",
    "write_field",
]

# element matrices for local node order (0,0), (1,0), (0,1), (1,1)
_MASS_UNIT = np.array([
    [4.0, 2.0, 2.0, 1.0],
    [2.0, 4.0, 1.0, 2.0],
    [2.0, 1.0, 4.0, 2.0],
    [1.0, 2.0, 2.0, 4.0],
]) / 36.0
_STIFF_X = np.array([
    [2.0, -2.0, 1.0, -1.0],
    [-2.0, 2.0, -1.0, 1.0],
    [1.0, -1.0, 2.0, -2.0],
    [-1.0, 1.0, -2.0, 2.0],
]) / 6.0
_STIFF_Y = np.array([
    [2.0, 1.0, -2.0, -1.0],
    [1.0, 2.0, -1.0, -2.0],
    [-2.0, -1.0, 2.0, 1.0],
    [-1.0, -2.0, 1.0, 2.0],
]) / 6.0

# 2x2 Gauss points on the unit interval and Q1 shape values at the tensor points
_G0 = 0.5 * (1.0 - 1.0 / np.sqrt(3.0))
_G1 = 0.5 * (1.0 + 1.0 / np.sqrt(3.0))
_GPTS = np.array([(_G0, _G0), (_G1, _G0), (_G0, _G1), (_G1, _G1)])
_SHAPE_AT_GP = np.array([
    [(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t] for s, t in _GPTS
])  # (4 gauss points, 4 shape functions)


@dataclass
class Permeability:
    """Scalar permeability field evaluated at fine-cell centers.

    ``evaluate`` must accept numpy arrays of x and y coordinates. ``tag``
    records where the field came from (analytic formula or raster file).
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    tag: str = "analytic"

    @classmethod
    def constant(cls, value: float) -> "Permeability":
        if value <= 0.0:
            raise ValueError("permeability must be positive")
        return cls(evaluate=lambda x, y: np.full_like(np.asarray(x, float), value),
                   tag="analytic")

    @classmethod
    def from_callable(cls, func, tag: str = "analytic") -> "Permeability":
        return cls(evaluate=lambda x, y: np.asarray(func(x, y), dtype=float), tag=tag)

    @classmethod
    def from_raster(cls, path) -> "Permeability":
        """Nearest-neighbor sampler over a raster file (top row is y = max)."""
        values = read_grid_file(path)
        if np.any(values <= 0.0) or not np.all(np.isfinite(values)):
            raise ValueError(f"raster {path} contains non-positive or non-finite entries")
        rows, cols = values.shape

        def sample(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            col = np.clip((x * cols).astype(int), 0, cols - 1)
            row = np.clip(((1.0 - y) * rows).astype(int), 0, rows - 1)
            return values[row, col]

        return cls(evaluate=sample, tag="raster")

    def cell_values(self, g: GridPair) -> np.ndarray:
        """Permeability at each fine-cell center, shape (ny_fine, nx_fine)."""
        cx = (np.arange(g.nx_fine) + 0.5) * g.hx
        cy = (np.arange(g.ny_fine) + 0.5) * g.hy
        gx, gy = np.meshgrid(cx, cy)
        vals = np.asarray(self.evaluate(gx, gy), dtype=float)
        bad = ~(np.isfinite(vals) & (vals > 0.0))
        if np.any(bad):
            iy, ix = np.argwhere(bad)[0]
            raise ValueError(
                f"permeability is not positive at fine cell ({ix}, {iy}), "
                f"value {vals[iy, ix]!r}")
        return vals


def _cell_node_ids(g: GridPair, cells: np.ndarray) -> np.ndarray:
    """Global fine node ids of each cell's corners, shape (n_cells, 4)."""
    cxf = cells % g.nx_fine
    cyf = cells // g.nx_fine
    n00 = cyf * (g.nx_fine + 1) + cxf
    return np.stack([n00, n00 + 1, n00 + g.nx_fine + 1, n00 + g.nx_fine + 2], axis=1)


def _assemble_from_cells(g, cells, coef, unit, n_rows, renumber=None):
    """Sum coef[c] * unit over cells into a CSR matrix of size n_rows."""
    nodes4 = _cell_node_ids(g, cells)
    if renumber is not None:
        nodes4 = renumber(nodes4)
    vals = coef[:, None, None] * unit[None, :, :]
    rows = np.broadcast_to(nodes4[:, :, None], vals.shape)
    cols = np.broadcast_to(nodes4[:, None, :], vals.shape)
    mat = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                        shape=(n_rows, n_rows)).tocsr()
    return (mat + mat.T) * 0.5  # exact symmetry regardless of summation order


def _mass_stiff_units(g: GridPair):
    mass_unit = g.hx * g.hy * _MASS_UNIT
    stiff_unit = (g.hy / g.hx) * _STIFF_X + (g.hx / g.hy) * _STIFF_Y
    return mass_unit, stiff_unit


def local_matrices(g: GridPair, kappa_cells: np.ndarray, cells: np.ndarray,
                   nodes: np.ndarray, mass_weight_cells: Optional[np.ndarray] = None):
    """Mass and stiffness over a subset of fine cells, indexed by ``nodes``.

    ``nodes`` must be sorted, unique, and cover every corner of ``cells``.
    ``mass_weight_cells`` optionally replaces the unit mass density with a
    cellwise-constant weight (flat array over all fine cells).
    """
    cells = np.asarray(cells, dtype=np.int64)
    kflat = np.asarray(kappa_cells, dtype=float).ravel()
    mass_unit, stiff_unit = _mass_stiff_units(g)

    def renumber(nodes4):
        local = np.searchsorted(nodes, nodes4)
        if np.any(local >= len(nodes)) or np.any(nodes[local] != nodes4):
            raise ValueError("node list does not cover the requested cells")
        return local

    n = len(nodes)
    if mass_weight_cells is None:
        mass_coef = np.ones(len(cells))
    else:
        mass_coef = np.asarray(mass_weight_cells, dtype=float).ravel()[cells]
    mass = _assemble_from_cells(g, cells, mass_coef, mass_unit, n, renumber)
    stiff = _assemble_from_cells(g, cells, kflat[cells], stiff_unit, n, renumber)
    return mass, stiff


@dataclass
class FineSystem:
    """Assembled fine-grid operators with Dirichlet rows eliminated.

    ``mass`` and ``stiffness`` act on interior fine nodes in the grid's node
    order; the ``*_full`` variants keep all nodes and no boundary conditions,
    which the local multiscale constructions slice into.
    """

    grid: GridPair
    kappa_cells: np.ndarray
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass_full: sp.csr_matrix
    stiffness_full: sp.csr_matrix
    source: Optional[Callable] = None
    initial: Optional[Callable] = None

    @property
    def n_dof(self) -> int:
        return self.grid.n_interior_fine

    def load(self, t: float = 0.0) -> np.ndarray:
        return load(self.grid, self.source, t)

    def initial_vector(self) -> np.ndarray:
        if self.initial is None:
            return np.zeros(self.n_dof)
        return interpolate(self.grid, self.initial)

    def norms(self, v: np.ndarray) -> tuple[float, float]:
        return norms(self, v)


def assemble(g: GridPair, kappa: Permeability, source=None, initial=None) -> FineSystem:
    """Assemble fine mass and stiffness for a permeability field.

    ``source`` is an optional space-time forcing f(t, x, y) and ``initial`` an
    optional initial profile u0(x, y); both are carried along for the
    projection onto the coarse space.
    """
    kappa_cells = kappa.cell_values(g)
    cells = np.arange(g.n_fine_cells, dtype=np.int64)
    mass_unit, stiff_unit = _mass_stiff_units(g)
    n = g.n_fine_nodes
    mass_full = _assemble_from_cells(g, cells, np.ones(len(cells)), mass_unit, n)
    stiff_full = _assemble_from_cells(g, cells, kappa_cells.ravel(), stiff_unit, n)
    keep = g.interior_fine_ids
    mass = mass_full[keep][:, keep].tocsr()
    stiff = stiff_full[keep][:, keep].tocsr()
    return FineSystem(grid=g, kappa_cells=kappa_cells, mass=mass, stiffness=stiff,
                      mass_full=mass_full, stiffness_full=stiff_full,
                      source=source, initial=initial)


def load(g: GridPair, source, t: float = 0.0) -> np.ndarray:
    """Consistent load vector over interior fine nodes via 2x2 Gauss points."""
    if source is None:
        return np.zeros(g.n_interior_fine)
    cells = np.arange(g.n_fine_cells, dtype=np.int64)
    nodes4 = _cell_node_ids(g, cells)
    cxf = (cells % g.nx_fine) * g.hx
    cyf = (cells // g.nx_fine) * g.hy
    full = np.zeros(g.n_fine_nodes)
    wt = 0.25 * g.hx * g.hy
    for (s, tq), shape in zip(_GPTS, _SHAPE_AT_GP):
        fx = cxf + s * g.hx
        fy = cyf + tq * g.hy
        fv = np.asarray(source(t, fx, fy), dtype=float)
        np.add.at(full, nodes4, wt * fv[:, None] * shape[None, :])
    return full[g.interior_fine_ids]


def interpolate(g: GridPair, func) -> np.ndarray:
    """Nodal interpolant of u(x, y) on interior fine nodes."""
    x, y = g.fine_coords
    keep = g.interior_fine_ids
    return np.asarray(func(x[keep], y[keep]), dtype=float)


def norms(fs: FineSystem, v: np.ndarray) -> tuple[float, float]:
    """(L2 norm, energy norm) of an interior fine-grid vector."""
    v = np.asarray(v, dtype=float)
    if v.shape != (fs.n_dof,):
        raise ValueError(f"expected vector of length {fs.n_dof}, got {v.shape}")
    l2 = float(np.sqrt(max(v @ (fs.mass @ v), 0.0)))
    energy = float(np.sqrt(max(v @ (fs.stiffness @ v), 0.0)))
    return l2, energy


# --- grid-shaped text files (permeability rasters and field dumps) ---

def read_grid_file(path) -> np.ndarray:
    """Read a whitespace-separated grid file: 'rows cols' then row-major reals.

    The first file row corresponds to the largest y coordinate.
    """
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: expected 'rows cols' header, got {header!r}")
        try:
            rows, cols = int(header[0]), int(header[1])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed header {header!r}") from exc
        if rows < 1 or cols < 1:
            raise ValueError(f"{path}: non-positive grid dimensions {rows} x {cols}")
        body = fh.read().split()
    if len(body) != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {len(body)}")
    try:
        values = np.array([float(tok) for tok in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry in body") from exc
    return values.reshape(rows, cols)


def write_grid_file(path, array: np.ndarray) -> None:
    """Write a 2d array in the grid file format (first row is y = max)."""
    array = np.asarray(array, dtype=float)
    if array.ndim != 2:
        raise ValueError("grid files hold 2d arrays")
    with open(path, "w") as fh:
        fh.write(f"{array.shape[0]} {array.shape[1]}\n")
        for row in array:
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def write_field(path, g: GridPair, interior_values: np.ndarray) -> None:
    """Dump an interior fine-grid vector as a nodal field file.

    Boundary nodes are written as zeros; rows are ordered from y = max down,
    matching the raster convention.
    """
    full = np.zeros(g.n_fine_nodes)
    full[g.interior_fine_ids] = interior_values
    shaped = full.reshape(g.ny_fine + 1, g.nx_fine + 1)
    write_grid_file(path, shaped[::-1, :])


def read_field(path, g: GridPair) -> np.ndarray:
    """Read a nodal field file back into an interior fine-grid vector."""
    shaped = read_grid_file(path)
    expected = (g.ny_fine + 1, g.nx_fine + 1)
    if shaped.shape != expected:
        raise ValueError(f"{path}: field shape {shaped.shape} does not match grid {expected}")
    full = shaped[::-1, :].ravel()
    return full[g.interior_fine_ids]
