"""Stationary spin-free drift-diffusion-Poisson solver.

Gummel iteration in the Slotboom variable ``u = n exp(V)``: for fixed ``V``
the zero-divergence current condition is a symmetric elliptic problem for
``u`` whose face conductances are the SG weights; for fixed ``u`` the Poisson
equation ``-lambda^2 V'' = u exp(-V) - g`` is solved by Newton's method.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import poisson
from .errors import ConvergenceError, ValidationError
from .grid import CellField, Grid1D
from .model import BoundaryData, ScaledParams
from .transport import bernoulli, sg_operator

log = logging.getLogger(__name__)


@dataclass
class SteadyState:
    grid: Grid1D
    n_inf: CellField
    v_inf: CellField
    iterations: int = 0
    history: list = field(default_factory=list)
    continuity_residual: float = 0.0
    poisson_residual: float = 0.0

    @property
    def phi_inf(self) -> CellField:
        return CellField(self.grid, np.log(self.n_inf.values) + self.v_inf.values,
                         math.log(self.n_inf.bc_left) + self.v_inf.bc_left,
                         math.log(self.n_inf.bc_right) + self.v_inf.bc_right)

    @property
    def grad_phi_inf_max(self) -> float:
        return grad_phi_inf_sup(self)

    @property
    def m_inf(self) -> float:
        return float(min(self.n_inf.values.min(), self.n_inf.bc_left, self.n_inf.bc_right))

    @property
    def M_inf(self) -> float:
        return float(max(self.n_inf.values.max(), self.n_inf.bc_left, self.n_inf.bc_right))


def _slotboom_solve(grid, V: CellField, u_left, u_right):
    dV = grid.face_differences(V.values, V.bc_left, V.bc_right)
    v_lo = np.concatenate(([V.bc_left], V.values))
    # B(dV) exp(-V_L) == B(-dV) exp(-V_R): a harmonic-type face average of exp(-V)
    c = bernoulli(dV) * np.exp(-v_lo) / grid.face_spacing
    n = grid.n_cells
    ab = np.zeros((3, n))
    ab[0, 1:] = -c[1:-1]
    ab[1] = c[:-1] + c[1:]
    ab[2, :-1] = -c[1:-1]
    b = np.zeros(n)
    b[0] = c[0] * u_left
    b[-1] = c[-1] * u_right
    return solve_banded((1, 1), ab, b, check_finite=False)


def _nonlinear_poisson(grid, lambda2, u, g, V: CellField, tol=1e-15, max_iter=60):
    ab0, cf = poisson.stiffness_bands(grid, lambda2)
    Vc = V.values.copy()
    for _ in range(max_iter):
        n = u * np.exp(-Vc)
        F = poisson.apply_stiffness(grid, lambda2, Vc, V.bc_left, V.bc_right) - (n - g)
        ab = ab0.copy()
        ab[1] += n
        dV = solve_banded((1, 1), ab, -F, check_finite=False)
        # damp large Newton steps; the exponential nonlinearity overshoots far from the root
        big = np.max(np.abs(dV))
        if big > 1.0:
            dV *= 1.0 / big
        Vc += dV
        if big <= tol * (1.0 + np.max(np.abs(Vc))):
            break
    return CellField(grid, Vc, V.bc_left, V.bc_right)


def continuity_residual(grid, n: CellField, V: CellField) -> float:
    """Max cell-wise net SG flux ``|F_{i+1/2} - F_{i-1/2}|`` of ``n`` in potential ``V``."""
    lower, diag, upper, sl, sr = sg_operator(grid, V)
    x = n.values
    r = diag * x
    r[1:] += lower[1:] * x[:-1]
    r[:-1] += upper[:-1] * x[1:]
    r[0] -= sl * n.bc_left
    r[-1] -= sr * n.bc_right
    return float(grid.h * np.max(np.abs(r)))


def solve_stationary(grid: Grid1D, params: ScaledParams, bc: BoundaryData,
                     tol=1e-12, max_iter=500, residual_tol=1e-10) -> SteadyState:
    g = params.doping_on(grid.n_cells)
    if bc.n_inf <= 0:
        raise ValidationError("boundary density must be positive")
    u_left = bc.n_left * math.exp(bc.v_left)
    u_right = bc.n_right * math.exp(bc.v_right)

    x = grid.cell_centers / grid.length
    phi_lin = bc.phi_left + (bc.phi_right - bc.phi_left) * x
    n_guess = np.where(g > 0, g, bc.n_inf)
    V = CellField(grid, phi_lin - np.log(n_guess), bc.v_left, bc.v_right)
    n = n_guess
    history = []
    for it in range(1, max_iter + 1):
        u = _slotboom_solve(grid, V, u_left, u_right)
        if np.any(u <= 0):
            raise ConvergenceError("Slotboom variable lost positivity", history)
        V_new = _nonlinear_poisson(grid, params.lambda2, u, g, V)
        n_new = u * np.exp(-V_new.values)
        change = max(np.max(np.abs(V_new.values - V.values)) / (1.0 + np.max(np.abs(V.values))),
                     np.max(np.abs(n_new - n)) / np.max(np.abs(n_new)))
        history.append(float(change))
        V, n = V_new, n_new
        if change <= tol:
            break
        # round-off plateau: stop and let the residual check decide
        if (it > 3 and change <= 1e3 * tol
                and min(history[-3:]) >= 0.5 * min(history[:-3])):
            break
    else:
        raise ConvergenceError(f"stationary Gummel iteration stalled after {max_iter} "
                               f"iterations (last change {history[-1]:.3e})", history)

    n_field = CellField(grid, n, bc.n_left, bc.n_right)
    r_cont = continuity_residual(grid, n_field, V)
    prob = poisson.PoissonProblem(grid, params.lambda2, n - g, bc.v_left, bc.v_right)
    r_pois = poisson.residual(prob, V)
    if r_cont > residual_tol or r_pois > residual_tol:
        raise ConvergenceError(f"stationary residuals too large: continuity {r_cont:.3e}, "
                               f"Poisson {r_pois:.3e}", history)
    log.debug("stationary solve: %d iterations, residuals %.2e / %.2e", it, r_cont, r_pois)
    return SteadyState(grid, n_field, V, it, history, r_cont, r_pois)


def grad_phi_inf_sup(state: SteadyState) -> float:
    """Sup over faces of the electrochemical-potential gradient."""
    return float(np.max(np.abs(state.phi_inf.face_gradient())))


def sg_face_fluxes(grid, n: CellField, V: CellField) -> np.ndarray:
    from .transport import sg_weights
    wR, wL = sg_weights(grid, V)
    ext = np.concatenate(([n.bc_left], n.values, [n.bc_right]))
    return wR * ext[1:] - wL * ext[:-1]
