"""Implicit Euler / Scharfetter-Gummel time stepping.

Production steppers work on the decomposed unknowns: the spin-up/down pair
``(n_plus, n_minus)``, coupled through relaxation and the self-consistent
potential, and the transverse spin ``n_perp``, which is linear once the
potential is known.  ``step_matrix_oracle`` integrates the original
four-component cross-diffusion system on small grids for cross-checking.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import poisson
from .errors import StepFailure, ValidationError
from .grid import CellField, Grid1D
from .model import (PAULI_SCALE, BoundaryData, ScaledParams, SpinState,
                    cross_diffusion_matrix, project_perp)

log = logging.getLogger(__name__)

SERIES_CUTOFF = 1e-4
ORACLE_MAX_CELLS = 64
_EPS = np.finfo(float).eps


def bernoulli(x):
    """``B(x) = x / (exp(x) - 1)`` with ``B(0) = 1``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < SERIES_CUTOFF
    xs = x[small]
    out[small] = 1.0 - xs / 2.0 + xs * xs / 12.0
    xl = x[~small]
    with np.errstate(over="ignore"):
        out[~small] = xl / np.expm1(xl)
    return out if out.ndim else float(out)


def sg_flux(n_left, n_right, dV, d_coef, h):
    """Exponentially fitted flux ``d (B(-dV) n_R - B(dV) n_L) / h``.

    Approximates ``d (n' + n V')`` across a face with ``dV = V_R - V_L``; it
    vanishes exactly on ``n ~ exp(-V)``.
    """
    return d_coef / h * (bernoulli(-dV) * n_right - bernoulli(dV) * n_left)


@dataclass(frozen=True)
class SolverOptions:
    gummel_tol: float = 1e-10
    max_iter: int = 200
    dt_min: float = 1e-8


@dataclass
class StepReport:
    gummel_iterations: int
    newton_residual: float
    dt_used: float
    nperp_potential: str = "updated"
    converged: bool = True


def sg_weights(grid: Grid1D, V: CellField):
    """Per-face weights ``(w_R, w_L)`` so the unit-coefficient flux is ``w_R n_R - w_L n_L``."""
    dV = grid.face_differences(V.values, V.bc_left, V.bc_right)
    dx = grid.face_spacing
    return bernoulli(-dV) / dx, bernoulli(dV) / dx


def sg_operator(grid: Grid1D, V: CellField, reflecting=False):
    """Tridiagonal form of ``-div`` of the unit SG flux.

    Returns ``lower, diag, upper, src_left, src_right``: row ``i`` reads
    ``lower[i] n[i-1] + diag[i] n[i] + upper[i] n[i+1]``, and the Dirichlet
    traces enter the right-hand side as ``src_left * n_L`` (cell 0) and
    ``src_right * n_R`` (last cell).
    """
    wR, wL = sg_weights(grid, V)
    if reflecting:
        wR = wR.copy()
        wL = wL.copy()
        wR[0] = wL[0] = wR[-1] = wL[-1] = 0.0
    h = grid.h
    diag = (wL[1:] + wR[:-1]) / h
    upper = -wR[1:] / h
    lower = -wL[:-1] / h
    return lower, diag, upper, wL[0] / h, wR[-1] / h


def _band_add(ab, u, rows, offset, values):
    ab[u - offset, rows + offset] += values


def _check_positive(arrays, report, what="density"):
    for a in arrays:
        if np.any(~np.isfinite(a)) or np.any(a < 0):
            i = int(np.nanargmin(np.where(np.isfinite(a), a, -np.inf)))
            raise StepFailure(f"negative or non-finite {what} in cell {i}", report)


def _gummel(grid, params, bc, V0: CellField, transport_solve, charge, dt, options, old):
    """Fixed-point alternation between a linear transport solve and Poisson.

    ``transport_solve(V) -> tuple of arrays``; ``charge(arrays) -> n0``;
    ``old`` holds the fields at the start of the step.  Convergence: the
    change between successive iterates is at most ``gummel_tol`` times the
    size of the time-step update, or at the round-off floor.
    """
    g = params.doping_on(grid.n_cells)
    V = V0
    start = np.concatenate([np.ravel(f) for f in old])
    prev = None
    delta = math.inf
    for it in range(1, options.max_iter + 1):
        report = StepReport(it, delta, dt, converged=False)
        fields = transport_solve(V)
        _check_positive([charge(fields)], report)
        V = poisson.solve_potential(grid, params.lambda2, charge(fields), g,
                                    bc.v_left, bc.v_right)
        stacked = np.concatenate([np.ravel(f) for f in fields])
        if prev is None:
            prev = stacked
            continue
        delta = float(np.max(np.abs(stacked - prev)))
        scale = float(np.max(np.abs(stacked)))
        step_size = float(np.max(np.abs(stacked - start)))
        prev = stacked
        if delta <= options.gummel_tol * step_size or delta <= 64 * _EPS * scale:
            return fields, V, StepReport(it, delta, dt)
    raise StepFailure(f"Gummel iteration did not converge in {options.max_iter} iterations "
                      f"(last update change {delta:.3e})", StepReport(options.max_iter, delta, dt,
                                                                     converged=False))


def _npm_solver(grid, state, params, bc, dt, reflecting):
    n = grid.n_cells
    r = 0.5 * dt * params.relax_rate
    dp, dm = params.d_plus, params.d_minus
    rows_p = 2 * np.arange(n)
    rows_m = rows_p + 1
    nd = 0.5

    def solve(V):
        lower, diag, upper, sl, sr = sg_operator(grid, V, reflecting)
        ab = np.zeros((5, 2 * n))
        for rows, d in ((rows_p, dp), (rows_m, dm)):
            _band_add(ab, 2, rows, 0, 1.0 + dt * d * diag + r)
            _band_add(ab, 2, rows[1:], -2, dt * d * lower[1:])
            _band_add(ab, 2, rows[:-1], 2, dt * d * upper[:-1])
        _band_add(ab, 2, rows_p, 1, -r)
        _band_add(ab, 2, rows_m, -1, -r)
        b = np.empty(2 * n)
        b[rows_p] = state.n_plus
        b[rows_m] = state.n_minus
        if not reflecting:
            for rows, d in ((rows_p, dp), (rows_m, dm)):
                b[rows[0]] += dt * d * sl * nd * bc.n_left
                b[rows[-1]] += dt * d * sr * nd * bc.n_right
        x = solve_banded((2, 2), ab, b, check_finite=False)
        return x[rows_p], x[rows_m]

    return solve


def step_npm(grid: Grid1D, state: SpinState, V_old: CellField, params: ScaledParams,
             bc: BoundaryData, dt: float, options: SolverOptions = SolverOptions(),
             reflecting: bool = False):
    """One implicit Euler step of the spin-up/down pair.

    Returns ``(n_plus, n_minus, V, report)`` with ``V`` the potential
    consistent with the new charge.  ``reflecting=True`` replaces the
    Dirichlet density data by zero-flux faces (the potential keeps its
    Dirichlet data).
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    solve = _npm_solver(grid, state, params, bc, dt, reflecting)
    (n_plus, n_minus), V, report = _gummel(grid, params, bc, V_old, solve,
                                           lambda f: f[0] + f[1], dt, options,
                                           (state.n_plus, state.n_minus))
    _check_positive([n_plus, n_minus], report)
    return n_plus, n_minus, V, report


def _cross_matrix(mu):
    m1, m2, m3 = mu
    return np.array([[0.0, -m3, m2], [m3, 0.0, -m1], [-m2, m1, 0.0]])


def precession_block(params: ScaledParams, dt: float) -> np.ndarray:
    """Cell-local implicit block for ``dn/dt = 2 gamma n x mu - n / tau``."""
    K = _cross_matrix(params.mu)
    return (1.0 + dt * params.relax_rate) * np.eye(3) + 2.0 * params.gamma * dt * K


def step_nperp(grid: Grid1D, n_perp, V: CellField, params: ScaledParams, dt: float,
               with_transport: bool = True) -> np.ndarray:
    """One implicit Euler step of the transverse spin with zero boundary data.

    Precession and relaxation enter through a 3x3 block per cell; with
    ``with_transport=False`` only these blocks are solved (cellwise ODE).
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    n = grid.n_cells
    n_perp = np.asarray(n_perp, dtype=float)
    if not np.any(n_perp):
        return np.zeros_like(n_perp)
    block = precession_block(params, dt)
    ab = np.zeros((7, 3 * n))
    cells = np.arange(n)
    for a in range(3):
        for c in range(3):
            if block[a, c] != 0.0:
                _band_add(ab, 3, 3 * cells + a, c - a, block[a, c])
    if with_transport:
        lower, diag, upper, _, _ = sg_operator(grid, V)
        d = params.d_perp
        for a in range(3):
            rows = 3 * cells + a
            _band_add(ab, 3, rows, 0, dt * d * diag)
            _band_add(ab, 3, rows[1:], -3, dt * d * lower[1:])
            _band_add(ab, 3, rows[:-1], 3, dt * d * upper[:-1])
    x = solve_banded((3, 3), ab, n_perp.reshape(-1), check_finite=False)
    if not np.all(np.isfinite(x)):
        raise StepFailure("transverse spin solve produced non-finite values")
    return project_perp(x.reshape(n, 3), params.mu)


def step_spinless(grid: Grid1D, n0, V_old: CellField, params: ScaledParams, bc: BoundaryData,
                  dt: float, d_coef: float, options: SolverOptions = SolverOptions()):
    """Implicit Euler step of the spin-free drift-diffusion-Poisson system."""
    n0 = np.asarray(n0, dtype=float)

    def solve(V):
        lower, diag, upper, sl, sr = sg_operator(grid, V)
        ab = np.zeros((3, grid.n_cells))
        ab[0, 1:] = dt * d_coef * upper[:-1]
        ab[1] = 1.0 + dt * d_coef * diag
        ab[2, :-1] = dt * d_coef * lower[1:]
        b = n0.copy()
        b[0] += dt * d_coef * sl * bc.n_left
        b[-1] += dt * d_coef * sr * bc.n_right
        return (solve_banded((1, 1), ab, b, check_finite=False),)

    (n_new,), V, report = _gummel(grid, params, bc, V_old, solve, lambda f: f[0], dt, options,
                                  (n0,))
    return n_new, V, report


def oracle_flux_matrix(params: ScaledParams) -> np.ndarray:
    """Four-component face-flux matrix on ``(n0, nvec)`` built from the eigenbasis.

    The symmetric diffusion matrix is diagonalised once; fluxes are formed
    per eigen-component and mapped back, so each eigen-direction carries its
    own scalar SG flux.
    """
    A = cross_diffusion_matrix(params)
    lam, Q = np.linalg.eigh(A)
    to_eig = Q.T @ PAULI_SCALE
    return np.linalg.solve(to_eig, np.diag(lam) @ to_eig)


def step_matrix_oracle(grid: Grid1D, n0, nvec, V_old: CellField, params: ScaledParams,
                       bc: BoundaryData, dt: float, options: SolverOptions = SolverOptions()):
    """Implicit Euler step of the undecomposed four-component system (small grids only).

    Returns ``(n0, nvec, V, report)``.
    """
    n = grid.n_cells
    if n > ORACLE_MAX_CELLS:
        raise ValidationError(f"matrix oracle limited to {ORACLE_MAX_CELLS} cells, got {n}")
    u_old = np.column_stack([np.asarray(n0, float), np.asarray(nvec, float).reshape(n, 3)])
    T = oracle_flux_matrix(params)
    R = np.zeros((4, 4))
    R[1:, 1:] = params.relax_rate * np.eye(3) + 2.0 * params.gamma * _cross_matrix(params.mu)
    u_left = np.array([bc.n_left, 0.0, 0.0, 0.0])
    u_right = np.array([bc.n_right, 0.0, 0.0, 0.0])

    def solve(V):
        lower, diag, upper, sl, sr = sg_operator(grid, V)
        M = np.zeros((4 * n, 4 * n))
        for i in range(n):
            blk = slice(4 * i, 4 * i + 4)
            M[blk, blk] = np.eye(4) + dt * diag[i] * T + dt * R
            if i > 0:
                M[blk, 4 * (i - 1):4 * i] = dt * lower[i] * T
            if i < n - 1:
                M[blk, 4 * (i + 1):4 * (i + 2)] = dt * upper[i] * T
        b = u_old.copy()
        b[0] += dt * sl * (T @ u_left)
        b[-1] += dt * sr * (T @ u_right)
        u = np.linalg.solve(M, b.reshape(-1)).reshape(n, 4)
        return (u[:, 0], u[:, 1:])

    (n0_new, nvec_new), V, report = _gummel(grid, params, bc, V_old, solve,
                                            lambda f: f[0], dt, options,
                                            (n0, nvec))
    return n0_new, nvec_new, V, report


Observer = Callable[[float, SpinState, CellField, "StepReport | None"], None]


@dataclass
class TransientResult:
    state: SpinState
    potential: CellField
    t: float
    n_steps: int
    reports: list = field(default_factory=list)
    series: object = None


def initial_potential(grid, state: SpinState, params, bc) -> CellField:
    return poisson.solve_potential(grid, params.lambda2, state.n0,
                                   params.doping_on(grid.n_cells), bc.v_left, bc.v_right)


def _advance(grid, state, V, params, bc, dt, options, reflecting):
    n_plus, n_minus, V_new, report = step_npm(grid, state, V, params, bc, dt, options,
                                              reflecting=reflecting)
    n_perp = step_nperp(grid, state.n_perp, V_new, params, dt)
    return SpinState(n_plus, n_minus, n_perp), V_new, report


def run_transient(grid: Grid1D, initial: SpinState, params: ScaledParams, bc: BoundaryData,
                  t_end: float, dt: float, observers: Sequence[Observer] = (),
                  options: SolverOptions = SolverOptions(), steady=None,
                  record_every: int = 1, reflecting: bool = False) -> TransientResult:
    """Advance the decomposed system to ``t_end`` with fixed ``dt``.

    Each step solves the spin-up/down pair with its Gummel loop and then the
    transverse spin with the potential from that loop.  A failed step is
    retried once as two half steps.  When ``steady`` is given an
    :class:`~spindd.diagnostics.EnergyRecorder` is attached and returned as
    ``result.series``.  Observers are called at ``t = 0`` and every
    ``record_every`` steps (and always at the final time).
    """
    from .diagnostics import EnergyRecorder
    from .params import check_tau_condition

    if np.any(initial.n_plus <= 0) or np.any(initial.n_minus <= 0):
        raise ValidationError("initial spin-up/down densities must be positive")
    if not dt > 0 or t_end < 0:
        raise ValidationError(f"need dt > 0 and t_end >= 0, got dt={dt}, t_end={t_end}")
    if params.doping_sup() > 0 and not check_tau_condition(params).satisfied:
        log.warning("relaxation time %.3g exceeds the transverse-decay threshold", params.tau)

    observers = list(observers)
    recorder = None
    if steady is not None:
        recorder = EnergyRecorder(grid, params, bc, steady, initial)
        observers.insert(0, recorder)

    state = initial.copy()
    state.n_perp = project_perp(state.n_perp, params.mu)
    V = initial_potential(grid, state, params, bc)
    for obs in observers:
        obs(0.0, state, V, None)

    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    reports = []
    t = 0.0
    for k in range(1, n_steps + 1):
        t_next = min(k * dt, t_end)
        h_step = t_next - t
        try:
            state_new, V_new, report = _advance(grid, state, V, params, bc, h_step,
                                                options, reflecting)
        except StepFailure as exc:
            half = 0.5 * h_step
            if half < options.dt_min:
                raise
            log.info("step at t=%.6g failed (%s); retrying with dt=%.3g", t, exc, half)
            mid, V_mid, _ = _advance(grid, state, V, params, bc, half, options, reflecting)
            state_new, V_new, report = _advance(grid, mid, V_mid, params, bc, half,
                                                options, reflecting)
            report.dt_used = half
        state, V, t = state_new, V_new, t_next
        reports.append(report)
        if k % record_every == 0 or k == n_steps:
            for obs in observers:
                obs(t, state, V, report)

    return TransientResult(state, V, t, n_steps, reports,
                           recorder.series if recorder is not None else None)
