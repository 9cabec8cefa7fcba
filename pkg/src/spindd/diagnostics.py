"""Free energy, dissipation, bound monitors and decay-rate estimation.

Everything here is evaluated on the discrete state with the same quadrature
as the steppers: cell sums for densities, face sums (weighted by the face
spacing) for gradients.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FitError
from .grid import CellField, Grid1D, h1_norm
from .model import BoundaryData, ScaledParams, SpinState

LOG_FLOOR = 1e-300
_SERIES_EPS = 1e-2

ENERGY_CSV_COLUMNS = ("t", "H", "dissipation", "relax_dissipation", "min_np", "min_nm",
                      "max_n0", "nperp_l2", "l2_np_err", "l2_nm_err", "h1_v_err")


def _xlogx_defect(eps):
    """``(1 + e) log(1 + e) - e`` without cancellation for small ``e``."""
    eps = np.asarray(eps, dtype=float)
    out = np.empty_like(eps)
    small = np.abs(eps) < _SERIES_EPS
    e = eps[small]
    # sum_{k>=2} (-1)^k e^k / (k (k - 1))
    acc = np.zeros_like(e)
    power = e * e
    for k in range(2, 12):
        acc += (-1) ** k * power / (k * (k - 1))
        power = power * e
    out[small] = acc
    e = eps[~small]
    out[~small] = (1.0 + e) * np.log1p(e) - e
    return np.maximum(out, 0.0)


def relative_entropy_density(y, z):
    """``y log(y / z) - y + z`` for positive ``y``, ``z``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return z * _xlogx_defect((y - z) / z)


def _check_positive(name, values):
    values = np.asarray(values)
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        raise DomainError(f"{name} must be positive; cell {bad[0]} holds {values[bad[0]]!r}")


def relative_free_energy(grid: Grid1D, state: SpinState, V: CellField, steady,
                         lambda2: float) -> float:
    _check_positive("n_plus", state.n_plus)
    _check_positive("n_minus", state.n_minus)
    half = 0.5 * steady.n_inf.values
    _check_positive("n_inf", half)
    entropy = grid.cell_integral(relative_entropy_density(state.n_plus, half)
                                 + relative_entropy_density(state.n_minus, half))
    dW = (V - steady.v_inf).face_gradient()
    return entropy + 0.5 * lambda2 * grid.face_integral(dW**2)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def dissipation(grid: Grid1D, state: SpinState, V: CellField, steady,
                params: ScaledParams | None = None) -> float:
    """Face quadrature of ``n_pm |grad(phi_pm - phi_inf)|^2`` summed over both spins.

    Face densities are harmonic means of the neighbouring values (boundary
    faces use the trace ``n_D / 2``).
    """
    _check_positive("n_plus", state.n_plus)
    _check_positive("n_minus", state.n_minus)
    phi_inf = steady.phi_inf
    total = 0.0
    for dens in (state.n_plus, state.n_minus):
        nl = 0.5 * steady.n_inf.bc_left
        nr = 0.5 * steady.n_inf.bc_right
        rel = np.log(dens) + V.values - phi_inf.values
        rel_l = math.log(nl) + V.bc_left - phi_inf.bc_left
        rel_r = math.log(nr) + V.bc_right - phi_inf.bc_right
        grad = grid.face_gradient(rel, rel_l, rel_r)
        ext = np.concatenate(([nl], dens, [nr]))
        total += grid.face_integral(_harmonic(ext[:-1], ext[1:]) * grad**2)
    return total


def relax_dissipation(grid: Grid1D, state: SpinState) -> float:
    return grid.cell_integral((np.sqrt(state.n_plus) - np.sqrt(state.n_minus)) ** 2)


def drift_defect(grid: Grid1D, state: SpinState, steady) -> float:
    """``int ((n_+ - n_inf/2)^2 + (n_- - n_inf/2)^2) |grad phi_inf|^2``."""
    g2 = steady.phi_inf.face_gradient() ** 2
    g2_cells = 0.5 * (g2[:-1] + g2[1:])
    half = 0.5 * steady.n_inf.values
    return grid.cell_integral(((state.n_plus - half) ** 2 + (state.n_minus - half) ** 2) * g2_cells)


@dataclass(frozen=True)
class BoundsReport:
    M: float
    m_observed: float
    max_n0: float
    upper_ok: bool


def upper_bound_constant(bc: BoundaryData, g, initial: SpinState) -> float:
    """``max(sup n_D, sup n0(0), sup g)``."""
    return float(max(bc.n_sup, np.max(initial.n0), np.max(g)))


def bounds_monitor(state: SpinState, bc: BoundaryData, g, initial: SpinState,
                   slack: float = 1e-8) -> BoundsReport:
    M = upper_bound_constant(bc, g, initial)
    max_n0 = float(np.max(state.n0))
    m_obs = float(min(state.n_plus.min(), state.n_minus.min()))
    return BoundsReport(M, m_obs, max_n0, max_n0 <= M + slack)


@dataclass(frozen=True)
class SandwichResult:
    lower_ok: bool
    upper_ok: bool
    pairing_ok: bool
    H: float
    lower: float
    upper: float
    c_h: float
    c_upper: float


def sandwich_check(grid: Grid1D, state: SpinState, V: CellField, steady,
                           lambda2: float, M: float | None = None,
                           m: float | None = None, rtol: float = 1e-12) -> SandwichResult:
    """Two-sided bound of the free energy by L2 distances, with explicit constants.

    Lower: ``H >= sum |n_pm - n_inf/2|^2 / (2 max(M, M_inf/2))``.
    Upper: ``H <= max(1/(2 C1), lambda^2/2) (sum |n_pm - n_inf/2|^2 + |grad(V - V_inf)|^2)``
    with ``C1 = min(m, m_inf/2)``.  ``pairing_ok`` checks the intermediate
    estimate ``sum int (n_pm - n_inf/2)(phi_pm - phi_inf + log 2)
    >= C2 sum |n_pm - n_inf/2|^2 + lambda^2 |grad(V - V_inf)|^2`` with
    ``C2 = (sqrt(M) + sqrt(M_inf/2))^{-2} / 4``.

    ``M`` and ``m`` are the upper/lower bounds of the spin densities; both are
    required (pass the monitored values).
    """
    if M is None or m is None:
        raise ConfigError("sandwich check needs the density bounds M and m")
    half = 0.5 * steady.n_inf.values
    M_inf, m_inf = steady.M_inf, steady.m_inf
    H = relative_free_energy(grid, state, V, steady, lambda2)
    dp = state.n_plus - half
    dm = state.n_minus - half
    l2sq = grid.cell_integral(dp**2 + dm**2)
    dW = (V - steady.v_inf).face_gradient()
    field_sq = grid.face_integral(dW**2)

    c_h = 1.0 / (2.0 * max(M, 0.5 * M_inf))
    c1 = min(m, 0.5 * m_inf)
    c_up = max(1.0 / (2.0 * c1), 0.5 * lambda2)
    lower = c_h * l2sq
    upper = c_up * (l2sq + field_sq)
    tol = rtol * max(H, 1e-300)

    c2 = 0.25 / (math.sqrt(M) + math.sqrt(0.5 * M_inf)) ** 2
    phi_rel = (dp * (np.log(state.n_plus) - np.log(half))
               + dm * (np.log(state.n_minus) - np.log(half)))
    pairing = grid.cell_integral(phi_rel) + grid.cell_integral(
        (state.n0 - steady.n_inf.values) * (V.values - steady.v_inf.values))
    pairing_rhs = c2 * l2sq + lambda2 * field_sq
    return SandwichResult(bool(H >= lower - tol), bool(H <= upper + tol),
                          bool(pairing >= pairing_rhs * (1 - 1e-10) - 1e-300),
                          H, lower, upper, c_h, c_up)


class EnergySeries:
    """Column store of time-stamped diagnostics."""

    COLUMNS = ("t", "H", "dissipation", "relax_dissipation", "drift_defect",
               "min_np", "max_np", "min_nm", "max_nm", "max_n0", "nperp_l2", "nperp_max",
               "l2_np_err", "l2_nm_err", "h1_v_err", "upper_ok", "sandwich_lower_ok",
               "sandwich_upper_ok", "sandwich_pairing_ok")

    def __init__(self):
        self._data = {c: [] for c in self.COLUMNS}

    def append(self, **record):
        if self._data["t"] and record["t"] <= self._data["t"][-1]:
            raise ValueError("EnergySeries times must be strictly increasing")
        for c in self.COLUMNS:
            self._data[c].append(record[c])

    def __len__(self):
        return len(self._data["t"])

    def __getitem__(self, column) -> np.ndarray:
        return np.asarray(self._data[column])

    @classmethod
    def from_arrays(cls, t, **columns):
        s = cls()
        s._data = {c: [] for c in cls.COLUMNS}
        s._data["t"] = list(np.asarray(t, dtype=float))
        for name, values in columns.items():
            s._data[name] = list(np.asarray(values))
        return s

    def to_csv(self, path, columns=ENERGY_CSV_COLUMNS):
        write_csv(path, columns, [self[c] for c in columns])


def format_float(x) -> str:
    return f"{float(x):.16e}"


def write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([format_float(v) for v in row])


class EnergyRecorder:
    """Observer that appends one diagnostics record per call."""

    def __init__(self, grid: Grid1D, params: ScaledParams, bc: BoundaryData, steady,
                 initial: SpinState):
        self.grid = grid
        self.params = params
        self.bc = bc
        self.steady = steady
        self.g = params.doping_on(grid.n_cells)
        self.M = upper_bound_constant(bc, self.g, initial)
        self.m_running = math.inf
        self.initial = initial.copy()
        self.series = EnergySeries()
        self.bounds = []

    def __call__(self, t, state: SpinState, V: CellField, report=None):
        grid, steady = self.grid, self.steady
        half = CellField(grid, 0.5 * steady.n_inf.values)
        bounds = bounds_monitor(state, self.bc, self.g, self.initial)
        self.m_running = min(self.m_running, bounds.m_observed)
        sw = sandwich_check(grid, state, V, steady, self.params.lambda2,
                                    M=self.M, m=bounds.m_observed)
        nperp_abs = np.linalg.norm(state.n_perp, axis=1)
        self.series.append(
            t=t,
            H=sw.H,
            dissipation=dissipation(grid, state, V, steady),
            relax_dissipation=relax_dissipation(grid, state),
            drift_defect=drift_defect(grid, state, steady),
            min_np=float(state.n_plus.min()), max_np=float(state.n_plus.max()),
            min_nm=float(state.n_minus.min()), max_nm=float(state.n_minus.max()),
            max_n0=bounds.max_n0,
            nperp_l2=float(math.sqrt(grid.h * np.sum(nperp_abs**2))),
            nperp_max=float(nperp_abs.max(initial=0.0)),
            l2_np_err=float(math.sqrt(grid.h * np.sum((state.n_plus - half.values) ** 2))),
            l2_nm_err=float(math.sqrt(grid.h * np.sum((state.n_minus - half.values) ** 2))),
            h1_v_err=h1_norm(V - steady.v_inf),
            upper_ok=bounds.upper_ok,
            sandwich_lower_ok=sw.lower_ok,
            sandwich_upper_ok=sw.upper_ok,
            sandwich_pairing_ok=sw.pairing_ok,
        )
        self.bounds.append(bounds)


@dataclass(frozen=True)
class DecayFit:
    kappa_est: float
    r_squared: float
    window: tuple
    slope: float = 0.0
    intercept: float = 0.0
    n_points: int = 0


def default_window(t) -> tuple:
    t = np.asarray(t, dtype=float)
    t0, t1 = float(t[0]), float(t[-1])
    return (t0 + 0.4 * (t1 - t0), t1)


def fit_decay_rate(series: EnergySeries, quantity: str = "H", window=None,
                   min_points: int = 10) -> DecayFit:
    """Least-squares exponential rate of ``quantity`` over ``window``.

    For ``H`` the fitted slope of ``log H`` is halved (``H ~ exp(-2 kappa t)``);
    for norm-like quantities the rate is minus the slope.
    """
    t = series["t"]
    y = series[quantity].astype(float)
    window = default_window(t) if window is None else tuple(window)
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if sel.sum() < min_points:
        raise FitError(f"only {int(sel.sum())} records in window {window}; need {min_points}")
    ts, ys = t[sel], y[sel]
    if np.any(~(ys > LOG_FLOOR)):
        raise FitError(f"{quantity} is not positive throughout {window}; decay stalled or hit "
                       "the floor, shrink the window")
    logs = np.log(ys)
    slope, intercept = np.polyfit(ts, logs, 1)
    resid = logs - (slope * ts + intercept)
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    kappa = -slope / 2.0 if quantity == "H" else -slope
    return DecayFit(max(kappa, 0.0), r2, window, float(slope), float(intercept), int(sel.sum()))


def free_energy_inequality_residuals(series: EnergySeries, params: ScaledParams) -> np.ndarray:
    """Per-step residual of the discrete free-energy inequality.

    ``(H_k - H_{k-1})/dt + D_+/2 diss_k + relax_k/(8 tau) - D_-/2 drift_k``;
    nonpositive values mean the inequality holds at step ``k``.
    """
    t, H = series["t"], series["H"]
    dt = np.diff(t)
    relax = params.relax_rate / 8.0
    return (np.diff(H) / dt + 0.5 * params.d_plus * series["dissipation"][1:]
            + relax * series["relax_dissipation"][1:]
            - 0.5 * params.d_minus * series["drift_defect"][1:])
