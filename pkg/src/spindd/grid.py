"""Uniform cell-centred mesh on an interval with Dirichlet traces.

Cells have width ``h``; the ``n_cells + 1`` faces sit at ``0, h, ..., L``.
Interior faces connect two cell centres a distance ``h`` apart, the two
boundary faces connect the outermost centres to the boundary point at
distance ``h/2``.  Face quantities are integrated with these distances as
weights, so the weights sum to the domain length.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Grid1D:
    n_cells: int
    length: float = 1.0

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValidationError(f"n_cells must be an integer >= 2, got {self.n_cells}")
        if not self.length > 0:
            raise ValidationError(f"length must be positive, got {self.length}")

    @property
    def h(self) -> float:
        return self.length / self.n_cells

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.h

    @cached_property
    def faces(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.h

    @cached_property
    def face_spacing(self) -> np.ndarray:
        """Distance between the two nodes each face connects."""
        dx = np.full(self.n_cells + 1, self.h)
        dx[0] = dx[-1] = 0.5 * self.h
        return dx

    def cell_integral(self, q) -> float:
        return float(self.h * np.sum(q))

    def face_integral(self, q) -> float:
        return float(np.sum(self.face_spacing * q))

    def face_differences(self, values, left, right) -> np.ndarray:
        """``f_R - f_L`` on every face, boundary faces using the traces."""
        ext = np.concatenate(([left], np.asarray(values, dtype=float), [right]))
        return np.diff(ext)

    def face_gradient(self, values, left, right) -> np.ndarray:
        return self.face_differences(values, left, right) / self.face_spacing

    def check_cells(self, values, name="field") -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.shape[0] != self.n_cells:
            raise ValidationError(
                f"{name} has {arr.shape[0]} entries, grid has {self.n_cells} cells"
            )
        return arr


@dataclass
class CellField:
    """One value per cell plus the two Dirichlet traces."""

    grid: Grid1D
    values: np.ndarray
    bc_left: float = 0.0
    bc_right: float = 0.0

    def __post_init__(self):
        self.values = self.grid.check_cells(self.values, "CellField.values")

    @classmethod
    def from_function(cls, grid, fn, bc_left=None, bc_right=None):
        left = fn(0.0) if bc_left is None else bc_left
        right = fn(grid.length) if bc_right is None else bc_right
        return cls(grid, fn(grid.cell_centers), float(left), float(right))

    def face_gradient(self) -> np.ndarray:
        return self.grid.face_gradient(self.values, self.bc_left, self.bc_right)

    def __sub__(self, other: "CellField") -> "CellField":
        return CellField(self.grid, self.values - other.values,
                         self.bc_left - other.bc_left, self.bc_right - other.bc_right)

    def scaled(self, c: float) -> "CellField":
        return CellField(self.grid, c * self.values, c * self.bc_left, c * self.bc_right)


def l2_norm(f: CellField) -> float:
    return float(np.sqrt(f.grid.h * np.sum(f.values**2)))


def h1_seminorm(f: CellField) -> float:
    grad = f.face_gradient()
    return float(np.sqrt(f.grid.face_integral(grad**2)))


def h1_norm(f: CellField) -> float:
    return float(np.hypot(l2_norm(f), h1_seminorm(f)))
