"""TOML run configurations and closed profile families.

A config is a TOML file with ``schema_version = 1`` and the sections
``[grid] [model] [physical] [doping] [boundary] [initial] [time] [solver]
[output]``; see the README for every key.  Validation errors are raised as
:class:`ConfigError` naming the offending ``section.field``.
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, SpinDDError
from .grid import Grid1D
from .model import BoundaryData, ScaledParams, SpinState, project_perp
from .params import PhysicalParams, scale
from .transport import SolverOptions

SCHEMA_VERSION = 1

PROFILE_FAMILIES = {
    "constant": ("value",),
    "linear": ("left", "right"),
    "gaussian_bump": ("base", "amplitude", "center", "width"),
    "sine": ("base", "amplitude", "mode"),
    "table": ("file",),
}

_SECTIONS = {
    "grid": {"n_cells", "length"},
    "model": {"gamma", "tau", "D", "p", "mu", "lambda2"},
    "physical": {"q", "eps_s", "mu0", "U_T", "g_star", "tau0", "L"},
    "doping": {"profile"} | {k for keys in PROFILE_FAMILIES.values() for k in keys},
    "boundary": {"n_D", "V_D", "delta", "phi"},
    "initial": {"n0", "n0_relative", "polarization", "perp", "perp_direction"},
    "time": {"dt", "t_end", "dt_min"},
    "solver": {"gummel_tol", "max_iter", "stationary_tol", "stationary_max_iter"},
    "output": {"directory", "record_every"},
}
_REQUIRED = ("grid", "model", "doping", "boundary", "time")


@dataclass(frozen=True)
class Profile:
    """A named closed-form profile on ``[0, L]``."""

    family: str
    args: dict
    where: str = "profile"
    base_dir: Path = Path(".")

    @classmethod
    def parse(cls, entry, where, base_dir=Path(".")):
        if isinstance(entry, (int, float)) and not isinstance(entry, bool):
            return cls("constant", {"value": float(entry)}, where, base_dir)
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected a number or a profile table, got {entry!r}")
        entry = dict(entry)
        family = entry.pop("profile", None)
        if family not in PROFILE_FAMILIES:
            raise ConfigError(f"{where}.profile: unknown family {family!r}; "
                              f"choose one of {sorted(PROFILE_FAMILIES)}")
        need = PROFILE_FAMILIES[family]
        missing = [k for k in need if k not in entry]
        extra = [k for k in entry if k not in need]
        if missing:
            raise ConfigError(f"{where}: profile {family!r} is missing {missing}")
        if extra:
            raise ConfigError(f"{where}: profile {family!r} does not take {extra}")
        args = {}
        for k, v in entry.items():
            if k == "file":
                if not isinstance(v, str):
                    raise ConfigError(f"{where}.file must be a path string")
                args[k] = v
            else:
                args[k] = _number(v, f"{where}.{k}")
        if family == "gaussian_bump" and not args["width"] > 0:
            raise ConfigError(f"{where}.width must be positive")
        return cls(family, args, where, Path(base_dir))

    def __call__(self, x, length=1.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = self.args
        s = x / length
        if self.family == "constant":
            return np.full_like(x, a["value"])
        if self.family == "linear":
            return a["left"] + (a["right"] - a["left"]) * s
        if self.family == "gaussian_bump":
            return a["base"] + a["amplitude"] * np.exp(-(((s - a["center"]) / a["width"]) ** 2))
        if self.family == "sine":
            return a["base"] + a["amplitude"] * np.sin(a["mode"] * np.pi * s)
        return self._table(x)

    def _table(self, x):
        path = Path(self.args["file"])
        if not path.is_absolute():
            path = self.base_dir / path
        try:
            data = np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{self.where}.file: cannot read {path}: {exc}") from exc
        if data.shape[1] != 2 or data.shape[0] < 2 or np.any(np.diff(data[:, 0]) <= 0):
            raise ConfigError(f"{self.where}.file: need two columns with increasing x")
        return np.interp(x, data[:, 0], data[:, 1])


def _number(v, where, positive=False, allow_inf=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    v = float(v)
    if math.isnan(v) or (math.isinf(v) and not allow_inf):
        raise ConfigError(f"{where}: must be finite, got {v}")
    if positive and not v > 0:
        raise ConfigError(f"{where}: must be positive, got {v}")
    return v


def _pair(v, where):
    if isinstance(v, list):
        if len(v) != 2:
            raise ConfigError(f"{where}: expected [left, right]")
        return _number(v[0], where), _number(v[1], where)
    x = _number(v, where)
    return x, x


@dataclass
class RunConfig:
    """Parsed and validated run configuration (raw tables kept for sweeps)."""

    raw: dict
    base_dir: Path = field(default_factory=lambda: Path("."))

    def __post_init__(self):
        self._validate()

    # ---- loading ---------------------------------------------------------------
    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: TOML syntax error: {exc}") from exc
        return cls(raw, path.parent)

    @classmethod
    def from_string(cls, text, base_dir=Path(".")) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML syntax error: {exc}") from exc
        return cls(raw, Path(base_dir))

    def _validate(self):
        raw = self.raw
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
        for key, value in raw.items():
            if key == "schema_version":
                continue
            if key not in _SECTIONS:
                raise ConfigError(f"[{key}]: unknown section")
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}]: must be a table")
            unknown = set(value) - _SECTIONS[key]
            if unknown:
                raise ConfigError(f"[{key}]: unknown field(s) {sorted(unknown)}")
        # scale-only configs need just [physical]; full runs need the rest
        self.has_physical = "physical" in raw
        model = raw.get("model", {})
        if self.has_physical and "lambda2" in model:
            raise ConfigError("[model].lambda2 and [physical] are mutually exclusive")
        if self.has_physical and "tau" in model:
            raise ConfigError("[model].tau conflicts with [physical].tau0; give only one")
        if "model" in raw and not self.has_physical and "lambda2" not in model:
            raise ConfigError("[model].lambda2 is required unless a [physical] section is given")
        # build everything once so errors surface at load time
        if self.has_physical:
            self.physical()
        if "model" in raw:
            self.model_inputs()

    def require(self, *sections):
        for s in sections:
            if s not in self.raw:
                raise ConfigError(f"[{s}]: missing required section")

    def section(self, name) -> dict:
        return self.raw.get(name, {})

    # ---- builders --------------------------------------------------------------
    def grid(self) -> Grid1D:
        self.require("grid")
        g = self.section("grid")
        n = g.get("n_cells")
        if isinstance(n, bool) or not isinstance(n, int) or n < 2:
            raise ConfigError(f"[grid].n_cells: expected an integer >= 2, got {n!r}")
        length = _number(g.get("length", 1.0), "[grid].length", positive=True)
        return Grid1D(n, length)

    def physical(self) -> PhysicalParams:
        self.require("physical")
        ph = self.section("physical")
        vals = {}
        for k in _SECTIONS["physical"]:
            if k not in ph:
                raise ConfigError(f"[physical].{k}: missing")
            vals[k] = _number(ph[k], f"[physical].{k}", positive=True)
        return PhysicalParams(**vals)

    def model_inputs(self) -> dict:
        m = self.section("model")
        out = {
            "gamma": _number(m.get("gamma", 0.0), "[model].gamma"),
            "D": _number(m.get("D", 1.0), "[model].D", positive=True),
            "p": _number(m.get("p", 0.0), "[model].p"),
        }
        if not 0.0 <= out["p"] < 1.0:
            raise ConfigError(f"[model].p: must lie in [0, 1), got {out['p']}")
        if out["gamma"] < 0:
            raise ConfigError("[model].gamma: must be nonnegative")
        mu = m.get("mu", [0.0, 0.0, 1.0])
        if not isinstance(mu, list) or len(mu) != 3:
            raise ConfigError("[model].mu: expected three numbers")
        mu = np.array([_number(v, "[model].mu") for v in mu])
        if not np.linalg.norm(mu) > 0:
            raise ConfigError("[model].mu: must be nonzero")
        out["mu"] = mu / np.linalg.norm(mu)
        if "tau" in m:
            out["tau"] = _number(m["tau"], "[model].tau", positive=True, allow_inf=True)
        elif not self.has_physical:
            out["tau"] = math.inf
        if "lambda2" in m:
            out["lambda2"] = _number(m["lambda2"], "[model].lambda2", positive=True)
        return out

    def doping_profile(self) -> Profile:
        self.require("doping")
        d = self.section("doping")
        if "profile" not in d:
            raise ConfigError("[doping].profile: missing")
        return Profile.parse(d, "[doping]", self.base_dir)

    def params(self, grid: Grid1D | None = None) -> ScaledParams:
        self.require("model")
        grid = self.grid() if grid is None else grid
        mi = self.model_inputs()
        g = self.doping_profile()(grid.cell_centers, grid.length)
        if np.any(g < 0):
            raise ConfigError("[doping]: profile must be nonnegative")
        if self.has_physical:
            return scale(self.physical(), mi["p"], mi["gamma"], mi["D"], g, mi["mu"]).params
        return ScaledParams(gamma=mi["gamma"], tau=mi["tau"], diff=mi["D"],
                            lambda2=mi["lambda2"], p=mi["p"], mu=mi["mu"], doping=g)

    def boundary(self, grid: Grid1D | None = None) -> BoundaryData:
        self.require("boundary")
        grid = self.grid() if grid is None else grid
        b = self.section("boundary")
        if "n_D" not in b:
            raise ConfigError("[boundary].n_D: missing")
        nl, nr = _pair(b["n_D"], "[boundary].n_D")
        if not (nl > 0 and nr > 0):
            raise ConfigError("[boundary].n_D: must be positive")
        if "V_D" in b and ("delta" in b or "phi" in b):
            raise ConfigError("[boundary]: give either V_D or delta/phi, not both")
        if "V_D" in b:
            vl, vr = _pair(b["V_D"], "[boundary].V_D")
            return BoundaryData(nl, nr, vl, vr)
        delta = _number(b.get("delta", 0.0), "[boundary].delta")
        phi = Profile.parse(b.get("phi", {"profile": "linear", "left": 0.0, "right": 1.0}),
                            "[boundary].phi", self.base_dir)
        ends = delta * phi(np.array([0.0, grid.length]), grid.length)
        return BoundaryData.from_phi(nl, nr, float(ends[0]), float(ends[1]))

    def initial_state(self, grid: Grid1D, params: ScaledParams, n_inf=None) -> SpinState:
        """Initial spin state; ``n_inf`` is needed when ``n0_relative`` is set."""
        ini = self.section("initial")
        x, L = grid.cell_centers, grid.length
        n0 = Profile.parse(ini.get("n0", 1.0), "[initial].n0", self.base_dir)(x, L)
        if ini.get("n0_relative", False):
            if n_inf is None:
                raise ConfigError("[initial].n0_relative needs the steady state")
            n0 = n0 * n_inf
        if np.any(n0 <= 0):
            raise ConfigError("[initial].n0: must be positive")
        pol = Profile.parse(ini.get("polarization", 0.0), "[initial].polarization",
                            self.base_dir)(x, L)
        if np.any(np.abs(pol) >= 1):
            raise ConfigError("[initial].polarization: must lie in (-1, 1)")
        perp = np.zeros((grid.n_cells, 3))
        if "perp" in ini:
            amp = Profile.parse(ini["perp"], "[initial].perp", self.base_dir)(x, L)
            direction = ini.get("perp_direction", [1.0, 0.0, 0.0])
            if not isinstance(direction, list) or len(direction) != 3:
                raise ConfigError("[initial].perp_direction: expected three numbers")
            d = project_perp(np.array([[_number(v, "[initial].perp_direction")
                                        for v in direction]]), params.mu)[0]
            if not np.linalg.norm(d) > 1e-12:
                raise ConfigError("[initial].perp_direction: parallel to mu")
            perp = np.outer(amp, d / np.linalg.norm(d))
        par = 0.5 * pol * n0
        return SpinState(0.5 * n0 + par, 0.5 * n0 - par, perp)

    def time(self):
        self.require("time")
        t = self.section("time")
        for k in ("dt", "t_end"):
            if k not in t:
                raise ConfigError(f"[time].{k}: missing")
        dt = _number(t["dt"], "[time].dt", positive=True)
        t_end = _number(t["t_end"], "[time].t_end")
        if t_end < 0:
            raise ConfigError("[time].t_end: must be nonnegative")
        return dt, t_end

    def solver_options(self) -> SolverOptions:
        s = self.section("solver")
        t = self.section("time")
        max_iter = s.get("max_iter", 200)
        if isinstance(max_iter, bool) or not isinstance(max_iter, int) or max_iter < 2:
            raise ConfigError("[solver].max_iter: expected an integer >= 2")
        return SolverOptions(
            gummel_tol=_number(s.get("gummel_tol", 1e-10), "[solver].gummel_tol", positive=True),
            max_iter=max_iter,
            dt_min=_number(t.get("dt_min", 1e-8), "[time].dt_min", positive=True),
        )

    def stationary_options(self) -> dict:
        s = self.section("solver")
        return {"tol": _number(s.get("stationary_tol", 1e-12), "[solver].stationary_tol",
                               positive=True),
                "max_iter": int(s.get("stationary_max_iter", 500))}

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        d = self.section("output").get("directory", "out")
        p = Path(d)
        return p if p.is_absolute() else self.base_dir / p

    def record_every(self) -> int:
        r = self.section("output").get("record_every", 1)
        if isinstance(r, bool) or not isinstance(r, int) or r < 1:
            raise ConfigError("[output].record_every: expected a positive integer")
        return r

    # ---- sweeps ----------------------------------------------------------------
    def with_value(self, param: str, value: float) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if param == "delta":
            b = raw.setdefault("boundary", {})
            if "V_D" in b:
                raise ConfigError("delta sweep needs [boundary].delta, not V_D")
            b["delta"] = value
        elif param == "tau":
            if self.has_physical:
                raise ConfigError("tau sweep needs [model].tau, not [physical]")
            raw.setdefault("model", {})["tau"] = value
        elif param == "p":
            raw.setdefault("model", {})["p"] = value
        else:
            raise ConfigError(f"unknown sweep parameter {param!r}; use delta, tau or p")
        try:
            return RunConfig(raw, self.base_dir)
        except SpinDDError as exc:
            raise ConfigError(f"{param}={value}: {exc}") from exc
