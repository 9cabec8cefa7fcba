"""Density-matrix algebra and the decomposed spin state.

A Hermitian 2x2 density matrix is written ``N = n0/2 * s0 + nvec . s`` with
the standard Pauli matrices.  Relative to the precession direction ``mu`` the
spin-vector splits into the spin-up/down densities
``n_pm = n0/2 +- nvec . mu`` and the transverse part
``n_perp = nvec - (nvec . mu) mu``.  In these variables the transport
equations lose their cross-diffusion; all time stepping works on them.

Complex arithmetic is confined to this module and only used to cross-check
the real formulations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ValidationError

SIGMA0 = np.eye(2, dtype=complex)
SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

UNIT_TOL = 1e-12
PERP_TOL = 1e-10


def _unit(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float).reshape(3)
    norm = np.linalg.norm(mu)
    if norm == 0.0 or not np.isfinite(norm):
        raise ParameterError(f"precession vector must be nonzero and finite, got {mu}")
    return mu / norm


@dataclass(frozen=True, eq=False)
class ScaledParams:
    """Dimensionless model constants.

    ``mu`` is normalised on construction.  ``tau`` may be ``math.inf`` to
    switch spin-flip relaxation off.  ``doping`` is either a scalar or one
    value per cell.
    """

    gamma: float
    tau: float
    diff: float
    lambda2: float
    p: float
    mu: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    doping: float | np.ndarray = 1.0

    def __post_init__(self):
        if not (0.0 <= self.p < 1.0):
            raise ParameterError(f"spin polarization p must lie in [0, 1), got {self.p}")
        for name in ("tau", "diff", "lambda2"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gamma < 0:
            raise ParameterError(f"gamma must be nonnegative, got {self.gamma}")
        object.__setattr__(self, "mu", _unit(self.mu))
        if np.ndim(self.doping) == 0:
            object.__setattr__(self, "doping", float(self.doping))
        else:
            object.__setattr__(self, "doping", np.asarray(self.doping, dtype=float))

    @property
    def eta(self) -> float:
        return math.sqrt(1.0 - self.p**2)

    @property
    def d_plus(self) -> float:
        return self.diff / (1.0 + self.p)

    @property
    def d_minus(self) -> float:
        return self.diff / (1.0 - self.p)

    @property
    def d_perp(self) -> float:
        return self.diff / self.eta

    @property
    def relax_rate(self) -> float:
        return 0.0 if math.isinf(self.tau) else 1.0 / self.tau

    def doping_on(self, n_cells: int) -> np.ndarray:
        g = np.broadcast_to(np.asarray(self.doping, dtype=float), (n_cells,))
        return np.array(g)

    def doping_sup(self) -> float:
        return float(np.max(np.abs(self.doping)))

    def replace(self, **changes) -> "ScaledParams":
        kw = dict(gamma=self.gamma, tau=self.tau, diff=self.diff, lambda2=self.lambda2,
                  p=self.p, mu=self.mu, doping=self.doping)
        kw.update(changes)
        return ScaledParams(**kw)


@dataclass
class SpinState:
    """Cell fields ``n_plus``, ``n_minus`` (shape ``(n,)``) and ``n_perp`` (``(n, 3)``)."""

    n_plus: np.ndarray
    n_minus: np.ndarray
    n_perp: np.ndarray

    def __post_init__(self):
        self.n_plus = np.asarray(self.n_plus, dtype=float)
        self.n_minus = np.asarray(self.n_minus, dtype=float)
        self.n_perp = np.asarray(self.n_perp, dtype=float)
        n = self.n_plus.shape[0]
        if self.n_minus.shape != (n,) or self.n_plus.shape != (n,):
            raise ValidationError("n_plus and n_minus must be 1-d arrays of equal length")
        if self.n_perp.shape != (n, 3):
            raise ValidationError(f"n_perp must have shape ({n}, 3), got {self.n_perp.shape}")

    @property
    def n0(self) -> np.ndarray:
        return self.n_plus + self.n_minus

    def copy(self) -> "SpinState":
        return SpinState(self.n_plus.copy(), self.n_minus.copy(), self.n_perp.copy())

    def validate(self, mu, tol=PERP_TOL):
        if np.any(self.n_plus < 0) or np.any(self.n_minus < 0):
            i = int(np.argmin(np.minimum(self.n_plus, self.n_minus)))
            raise ValidationError(f"negative spin density in cell {i}")
        dots = self.n_perp @ _unit(mu)
        if np.max(np.abs(dots), initial=0.0) > tol:
            i = int(np.argmax(np.abs(dots)))
            raise ValidationError(f"n_perp not perpendicular to mu in cell {i}: {dots[i]:.3e}")
        return self


def reconstruct(n0, nvec) -> np.ndarray:
    """Density matrices ``n0/2 s0 + nvec . s`` with shape ``(n, 2, 2)``."""
    n0 = np.atleast_1d(np.asarray(n0, dtype=float))
    nvec = np.asarray(nvec, dtype=float).reshape(-1, 3)
    return 0.5 * n0[:, None, None] * SIGMA0 + np.einsum("ci,ijk->cjk", nvec, SIGMA)


def decompose(N, tol=UNIT_TOL):
    """Split Hermitian matrices into charge ``n0 = tr N`` and ``n_i = tr(s_i N)/2``."""
    N = np.asarray(N, dtype=complex)
    if N.ndim == 2:
        N = N[None]
    if N.shape[1:] != (2, 2):
        raise ValidationError(f"expected (n, 2, 2) matrices, got {N.shape}")
    defect = np.max(np.abs(N - np.conj(np.swapaxes(N, 1, 2))), axis=(1, 2))
    if np.any(defect > tol * np.maximum(1.0, np.max(np.abs(N), axis=(1, 2)))):
        worst = int(np.argmax(defect))
        raise ValidationError(f"matrix in cell {worst} is not Hermitian (defect {defect[worst]:.3e})")
    n0 = np.real(np.trace(N, axis1=1, axis2=2))
    nvec = 0.5 * np.real(np.einsum("ijk,ckj->ci", SIGMA, N))
    return n0, nvec


def to_spin_state(n0, nvec, mu) -> SpinState:
    mu = _unit(mu)
    n0 = np.atleast_1d(np.asarray(n0, dtype=float))
    nvec = np.asarray(nvec, dtype=float).reshape(-1, 3)
    par = nvec @ mu
    perp = nvec - np.outer(par, mu)
    return SpinState(0.5 * n0 + par, 0.5 * n0 - par, perp)


def from_spin_state(s: SpinState, mu):
    mu = _unit(mu)
    n0 = s.n_plus + s.n_minus
    nvec = s.n_perp + 0.5 * np.outer(s.n_plus - s.n_minus, mu)
    return n0, nvec


def project_perp(n_perp, mu) -> np.ndarray:
    mu = _unit(mu)
    return n_perp - np.outer(n_perp @ mu, mu)


def cross_diffusion_matrix(params: ScaledParams | None = None, *, p=None, diff=None, mu=None):
    """Constant symmetric 4x4 diffusion matrix of the four-component system.

    It acts on ``(n0, 2 nvec)``: with ``N = n0/2 s0 + nvec . s`` the current
    ``D P^{-1/2} G P^{-1/2}`` has components ``(j0, 2 jvec)`` equal to this
    matrix applied to ``(g0, 2 gvec)``.  See :func:`four_component_matrix` for
    the form acting on ``(n0, nvec)``.
    """
    if params is not None:
        p = params.p if p is None else p
        diff = params.diff if diff is None else diff
        mu = params.mu if mu is None else mu
    if p is None or not (0.0 <= p < 1.0):
        raise ParameterError(f"spin polarization p must lie in [0, 1), got {p}")
    diff = 1.0 if diff is None else diff
    mu = _unit([0, 0, 1] if mu is None else mu)
    eta = math.sqrt(1.0 - p * p)
    A = np.empty((4, 4))
    A[0, 0] = 1.0
    A[0, 1:] = -p * mu
    A[1:, 0] = -p * mu
    A[1:, 1:] = eta * np.eye(3) + (1.0 - eta) * np.outer(mu, mu)
    return diff / (1.0 - p * p) * A


PAULI_SCALE = np.diag([1.0, 2.0, 2.0, 2.0])


def four_component_matrix(params: ScaledParams) -> np.ndarray:
    """Diffusion matrix acting on ``(n0, nvec)`` directly (not symmetric)."""
    A = cross_diffusion_matrix(params)
    return np.linalg.solve(PAULI_SCALE, A @ PAULI_SCALE)


def polarization_matrix(p, mu) -> np.ndarray:
    """``P = s0 + p mu . s``."""
    mu = _unit(mu)
    return SIGMA0 + p * np.einsum("i,ijk->jk", mu, SIGMA)


def inv_sqrt_polarization(p, mu) -> np.ndarray:
    mu = _unit(mu)
    m_sigma = np.einsum("i,ijk->jk", mu, SIGMA)
    proj_up = 0.5 * (SIGMA0 + m_sigma)
    proj_dn = 0.5 * (SIGMA0 - m_sigma)
    return proj_up / math.sqrt(1.0 + p) + proj_dn / math.sqrt(1.0 - p)


def matrix_current(G, params: ScaledParams) -> np.ndarray:
    """Matrix current ``D P^{-1/2} G P^{-1/2}`` for Hermitian ``G`` (shape ``(n, 2, 2)``)."""
    Q = inv_sqrt_polarization(params.p, params.mu)
    return params.diff * np.einsum("jk,ckl,lm->cjm", Q, np.asarray(G, dtype=complex), Q)


def precession_term(N, params: ScaledParams) -> np.ndarray:
    """``i gamma [N, mu . s]``."""
    m_sigma = np.einsum("i,ijk->jk", params.mu, SIGMA)
    N = np.asarray(N, dtype=complex)
    return 1j * params.gamma * (N @ m_sigma - m_sigma @ N)


def relaxation_term(N, params: ScaledParams) -> np.ndarray:
    """``(tr(N)/2 s0 - N) / tau``."""
    N = np.asarray(N, dtype=complex)
    tr = np.trace(N, axis1=1, axis2=2)
    return params.relax_rate * (0.5 * tr[:, None, None] * SIGMA0 - N)


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet traces ``n_D`` and ``V_D`` at the two ends of the interval.

    Spin-up and spin-down densities take ``n_D / 2`` on the boundary and the
    transverse spin vanishes there.
    """

    n_left: float
    n_right: float
    v_left: float
    v_right: float

    def __post_init__(self):
        if not (self.n_left > 0 and self.n_right > 0):
            raise ParameterError("boundary density n_D must be positive on both ends")

    @classmethod
    def from_phi(cls, n_left, n_right, phi_left, phi_right):
        """Traces from ``n_D`` and the electrochemical potential ``phi_D = log n_D + V_D``."""
        return cls(n_left, n_right, phi_left - math.log(n_left), phi_right - math.log(n_right))

    @classmethod
    def equilibrium(cls, n_d=1.0):
        return cls.from_phi(n_d, n_d, 0.0, 0.0)

    @property
    def phi_left(self) -> float:
        return math.log(self.n_left) + self.v_left

    @property
    def phi_right(self) -> float:
        return math.log(self.n_right) + self.v_right

    @property
    def n_sup(self) -> float:
        return max(self.n_left, self.n_right)

    @property
    def n_inf(self) -> float:
        return min(self.n_left, self.n_right)
