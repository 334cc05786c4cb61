"""Uniform 1D partitions, degree-1 finite element spaces and their tensor products.

All spaces live on the unit interval. Degrees of freedom of a C0 space are the
mesh nodes minus the constrained endpoints; a DG space carries two nodal
functions per cell (left node first). Tensor product coefficients are stored
time-major: ``flat = time_index * dim(space) + space_index``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

LEFT = "left"
RIGHT = "right"
_ENDPOINTS = (LEFT, RIGHT)


class Continuity(str, Enum):
    C0 = "C0"
    DG = "DG"


@dataclass(frozen=True)
class Partition1D:
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ValueError(f"n_cells must be a positive integer, got {self.n_cells!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_cells + 1)

    def cell(self, i: int) -> tuple[float, float]:
        return i * self.h, (i + 1) * self.h

    def locate(self, points) -> np.ndarray:
        """Cell index of each point; interface points go to the cell on their left."""
        x = np.asarray(points, dtype=float)
        idx = np.ceil(x * self.n_cells).astype(int) - 1
        return np.clip(idx, 0, self.n_cells - 1)


def make_uniform_partition(n: int) -> Partition1D:
    return Partition1D(n)


@dataclass(frozen=True)
class FESpace1D:
    partition: Partition1D
    continuity: Continuity = Continuity.C0
    essential_bc: frozenset = field(default_factory=frozenset)
    degree: int = 1

    def __post_init__(self):
        object.__setattr__(self, "continuity", Continuity(self.continuity))
        object.__setattr__(self, "essential_bc", frozenset(self.essential_bc))
        if self.degree != 1:
            raise ValueError("only degree 1 is supported")
        bad = set(self.essential_bc) - set(_ENDPOINTS)
        if bad:
            raise ValueError(f"unknown boundary labels {sorted(bad)}")
        if self.continuity is Continuity.DG and self.essential_bc:
            raise ValueError("DG spaces carry no essential boundary conditions")

    @property
    def n_cells(self) -> int:
        return self.partition.n_cells

    @property
    def dim(self) -> int:
        if self.continuity is Continuity.DG:
            return 2 * self.n_cells
        return self.n_cells + 1 - len(self.essential_bc)

    @property
    def free_nodes(self) -> np.ndarray:
        """Mesh node index of each C0 degree of freedom."""
        first = 1 if LEFT in self.essential_bc else 0
        last = self.n_cells - 1 if RIGHT in self.essential_bc else self.n_cells
        return np.arange(first, last + 1)

    def cell_dofs(self) -> np.ndarray:
        """(n_cells, 2) array of global dof indices of the left/right local
        functions; constrained local functions get -1."""
        cells = np.arange(self.n_cells)
        if self.continuity is Continuity.DG:
            return np.stack([2 * cells, 2 * cells + 1], axis=1)
        node_to_dof = -np.ones(self.n_cells + 1, dtype=int)
        node_to_dof[self.free_nodes] = np.arange(self.dim)
        return np.stack([node_to_dof[cells], node_to_dof[cells + 1]], axis=1)

    def with_bc(self, essential_bc) -> "FESpace1D":
        return FESpace1D(self.partition, self.continuity, frozenset(essential_bc))

    def refined(self, factor: int) -> "FESpace1D":
        return FESpace1D(Partition1D(self.n_cells * factor), self.continuity, self.essential_bc)


def c0_space(n: int, bc=()) -> FESpace1D:
    return FESpace1D(Partition1D(n), Continuity.C0, frozenset(bc))


def dg_space(n: int) -> FESpace1D:
    return FESpace1D(Partition1D(n), Continuity.DG)


def tabulate(space: FESpace1D, points, derivative: bool = False) -> sp.csr_matrix:
    """Sparse (n_points, dim) matrix of basis function values (or derivatives).

    Points on a cell interface use the cell on their left.
    """
    x = np.asarray(points, dtype=float).ravel()
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("points must lie in [0, 1]")
    part = space.partition
    cells = part.locate(x)
    h = part.h
    s = (x - cells * h) / h
    if derivative:
        local = np.stack([np.full_like(s, -1.0 / h), np.full_like(s, 1.0 / h)], axis=1)
    else:
        local = np.stack([1.0 - s, s], axis=1)
    dofs = space.cell_dofs()[cells]
    rows = np.repeat(np.arange(x.size), 2)
    cols = dofs.ravel()
    vals = local.ravel()
    keep = cols >= 0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(x.size, space.dim))


def evaluate(space: FESpace1D, coeffs, points) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.dim,):
        raise ValueError(f"expected {space.dim} coefficients, got shape {coeffs.shape}")
    return tabulate(space, points) @ coeffs


def trace_vector(space: FESpace1D, endpoint: str) -> np.ndarray:
    """Coefficient functional v with v @ c = value of the FE function at the endpoint
    (one-sided from inside the domain for DG)."""
    if endpoint not in _ENDPOINTS:
        raise ValueError(f"endpoint must be 'left' or 'right', got {endpoint!r}")
    v = np.zeros(space.dim)
    if space.continuity is Continuity.DG:
        v[0 if endpoint == LEFT else space.dim - 1] = 1.0
    elif endpoint not in space.essential_bc:
        v[0 if endpoint == LEFT else space.dim - 1] = 1.0
    return v


def interpolate(space: FESpace1D, f) -> np.ndarray:
    """Nodal interpolant coefficients of a callable (constrained nodes dropped)."""
    if space.continuity is Continuity.DG:
        part = space.partition
        left = f(part.nodes[:-1])
        right = f(part.nodes[1:])
        return np.stack([left, right], axis=1).ravel()
    return np.asarray(f(space.partition.nodes[space.free_nodes]), dtype=float)


@dataclass(frozen=True)
class TensorSpace:
    time: FESpace1D
    space: FESpace1D

    @property
    def dim(self) -> int:
        return self.time.dim * self.space.dim

    @property
    def shape(self) -> tuple[int, int]:
        return self.time.dim, self.space.dim

    def flat_index(self, time_index, space_index):
        return np.asarray(time_index) * self.space.dim + np.asarray(space_index)

    def split_index(self, flat):
        return np.divmod(np.asarray(flat), self.space.dim)

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of f(t, x) (C0 factors only)."""
        if Continuity.DG in (self.time.continuity, self.space.continuity):
            raise ValueError("tensor interpolation needs C0 factors")
        t = self.time.partition.nodes[self.time.free_nodes]
        x = self.space.partition.nodes[self.space.free_nodes]
        T, X = np.meshgrid(t, x, indexing="ij")
        return np.asarray(f(T, X), dtype=float).ravel()

    def evaluate_grid(self, coeffs, t_points, x_points) -> np.ndarray:
        """Values on the tensor grid t_points x x_points, shape (len(t), len(x))."""
        W = np.asarray(coeffs, dtype=float).reshape(self.shape)
        Pt = tabulate(self.time, t_points)
        Px = tabulate(self.space, x_points)
        return np.asarray(Pt @ (Px @ W.T).T)


def dim(space) -> int:
    return space.dim
