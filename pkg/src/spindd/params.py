"""Physical-to-dimensionless scaling and the relaxation-time smallness check."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .model import ScaledParams


@dataclass(frozen=True)
class PhysicalParams:
    """Device constants in the units used by the GaAs reference table.

    q [As], eps_s [As/(V cm)], mu0 [cm^2/(V s)], U_T [V], g_star [1/cm^3],
    tau0 [s], L [cm].
    """

    q: float
    eps_s: float
    mu0: float
    U_T: float
    g_star: float
    tau0: float
    L: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"physical parameter {name} must be positive, got {value}")

    @property
    def debye_length_sq(self) -> float:
        return self.eps_s * self.U_T / (self.q * self.L**2 * self.g_star)

    @property
    def t_star(self) -> float:
        return self.L**2 / (self.mu0 * self.U_T)


# Lowly doped GaAs at 50 K.
GAAS_50K = PhysicalParams(q=1.6e-19, eps_s=1e-12, mu0=1.5e3, U_T=4.3e-3,
                        g_star=1e15, tau0=1e-12, L=1e-5)


@dataclass(frozen=True)
class TauCondition:
    satisfied: bool
    threshold: float


@dataclass(frozen=True)
class ScaleReport:
    params: ScaledParams
    t_star: float

    def lines(self, g_sup: float | None = None):
        sp = self.params
        g_sup = sp.doping_sup() if g_sup is None else g_sup
        cond = check_tau_condition(sp, g_sup)
        return [
            ("lambda2", sp.lambda2),
            ("t_star", self.t_star),
            ("tau", sp.tau),
            ("eta", sp.eta),
            ("D_plus", sp.d_plus),
            ("D_minus", sp.d_minus),
            ("D_perp", sp.d_perp),
            ("tau_threshold", cond.threshold),
            ("tau_condition", "satisfied" if cond.satisfied else "violated"),
        ]


def scale(phys: PhysicalParams, p: float, gamma: float, D: float = 1.0,
          g_profile=1.0, mu=(0.0, 0.0, 1.0)) -> ScaleReport:
    """Scaled parameters from physical ones.

    ``gamma``, ``D`` and the doping profile are taken as already scaled; only
    the Debye length and the relaxation time carry physical units here.
    """
    if not isinstance(phys, PhysicalParams):
        phys = PhysicalParams(**phys)
    sp = ScaledParams(gamma=gamma, tau=phys.tau0 / phys.t_star, diff=D,
                      lambda2=phys.debye_length_sq, p=p, mu=np.asarray(mu, float),
                      doping=g_profile)
    return ScaleReport(sp, phys.t_star)


def check_tau_condition(sp: ScaledParams, g_sup: float | None = None) -> TauCondition:
    """``tau <= 2 eta lambda^2 / (D |g|_inf)``.

    Under this bound the drift contribution from the doping cannot outweigh
    relaxation in the L2 balance of the transverse spin component.
    """
    g_sup = sp.doping_sup() if g_sup is None else float(g_sup)
    if not g_sup > 0:
        raise ParameterError(f"doping sup-norm must be positive, got {g_sup}")
    threshold = 2.0 * sp.eta * sp.lambda2 / (sp.diff * g_sup)
    return TauCondition(bool(sp.tau <= threshold), threshold)
