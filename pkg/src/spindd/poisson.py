"""Scaled Poisson equation ``-lambda^2 V'' = n0 - g`` with Dirichlet data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import ParameterError, ValidationError
from .grid import CellField, Grid1D


@dataclass
class PoissonProblem:
    grid: Grid1D
    lambda2: float
    rhs: np.ndarray
    v_left: float = 0.0
    v_right: float = 0.0

    def __post_init__(self):
        if not self.lambda2 > 0:
            raise ParameterError(f"lambda2 must be positive, got {self.lambda2}")
        self.rhs = self.grid.check_cells(self.rhs, "Poisson rhs")


def stiffness_bands(grid: Grid1D, lambda2: float):
    """Tridiagonal ``-lambda^2 d^2/dx^2`` per unit cell volume.

    Returns ``(ab, c)`` with ``ab`` in ``solve_banded((1, 1), ...)`` layout and
    ``c`` the face conductances; ``c[0]`` and ``c[-1]`` couple to the traces.
    """
    c = lambda2 / (grid.h * grid.face_spacing)
    n = grid.n_cells
    ab = np.zeros((3, n))
    ab[0, 1:] = -c[1:-1]
    ab[1, :] = c[:-1] + c[1:]
    ab[2, :-1] = -c[1:-1]
    return ab, c


def apply_stiffness(grid: Grid1D, lambda2: float, V, v_left, v_right) -> np.ndarray:
    flux = lambda2 * grid.face_gradient(V, v_left, v_right)
    return -(flux[1:] - flux[:-1]) / grid.h


def solve(prob: PoissonProblem) -> CellField:
    ab, c = stiffness_bands(prob.grid, prob.lambda2)
    b = prob.rhs.copy()
    b[0] += c[0] * prob.v_left
    b[-1] += c[-1] * prob.v_right
    V = solve_banded((1, 1), ab, b, check_finite=False)
    return CellField(prob.grid, V, prob.v_left, prob.v_right)


def residual(prob: PoissonProblem, V: CellField) -> float:
    """Max cell-integrated residual ``h |(-lambda^2 V'' - rhs)_i|``."""
    r = apply_stiffness(prob.grid, prob.lambda2, V.values, prob.v_left, prob.v_right) - prob.rhs
    return float(prob.grid.h * np.max(np.abs(r)))


def solve_potential(grid: Grid1D, lambda2: float, n0, g, v_left, v_right) -> CellField:
    """Convenience wrapper: potential generated by charge ``n0`` against doping ``g``."""
    n0 = np.asarray(n0, dtype=float)
    if n0.shape != (grid.n_cells,):
        raise ValidationError(f"density has shape {n0.shape}, expected ({grid.n_cells},)")
    return solve(PoissonProblem(grid, lambda2, n0 - g, v_left, v_right))


def grad_faces(V: CellField) -> np.ndarray:
    return V.face_gradient()
