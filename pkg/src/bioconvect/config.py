"""Run configuration: physics parameters, viscosity law, file loading.

Configs live in TOML (or JSON) with a small schema-versioned layout; see
``configs/`` for shipped examples.  Everything funnels into a ``SimConfig``
that the solvers and the CLI consume.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from bioconvect.domain import Domain, DomainSpec

__all__ = [
    "SCHEMA_VERSION",
    "ViscosityModel",
    "ForcingSpec",
    "SurfaceStressSpec",
    "InitialConditionSpec",
    "SimConfig",
    "ConfigError",
    "load_config",
    "config_from_dict",
    "config_to_dict",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration input."""


# ---------------------------------------------------------------------------
# viscosity law
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ViscosityModel:
    """Concentration-dependent viscosity with certified bounds.

    The law must satisfy nu0 <= nu(s) <= nu1 and |nu'(s)| <= nu1_prime for
    every real s.  Two kinds are provided:

    * ``constant``: nu(s) = nu0 (nu1 = nu0, nu1_prime = 0).
    * ``tanh``: nu(s) = nu0 + (nu1 - nu0) * (1 + tanh(slope*(s - center)))/2,
      smooth and strictly inside its bounds, with
      nu1_prime = (nu1 - nu0) * slope / 2.
    """

    nu0: float
    nu1: float = 0.0
    kind: str = "constant"
    slope: float = 1.0
    center: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "tanh"):
            raise ConfigError(f"unknown viscosity kind {self.kind!r}")
        if not (self.nu0 > 0 and math.isfinite(self.nu0)):
            raise ConfigError(f"nu0 must be positive and finite, got {self.nu0}")
        if self.kind == "constant":
            object.__setattr__(self, "nu1", self.nu0)
        else:
            if not (self.nu1 >= self.nu0):
                raise ConfigError(f"nu1 = {self.nu1} must be >= nu0 = {self.nu0}")
            if not (self.slope >= 0 and math.isfinite(self.slope)):
                raise ConfigError(f"slope must be nonnegative and finite, got {self.slope}")

    # -- evaluation --------------------------------------------------------

    def __call__(self, s):
        if self.kind == "constant":
            return np.full_like(np.asarray(s, dtype=float), self.nu0)
        t = np.tanh(self.slope * (np.asarray(s, dtype=float) - self.center))
        return self.nu0 + (self.nu1 - self.nu0) * 0.5 * (1.0 + t)

    def derivative(self, s):
        if self.kind == "constant":
            return np.zeros_like(np.asarray(s, dtype=float))
        t = np.tanh(self.slope * (np.asarray(s, dtype=float) - self.center))
        return (self.nu1 - self.nu0) * 0.5 * self.slope * (1.0 - t * t)

    @property
    def nu1_prime(self) -> float:
        """Certified global bound on |nu'|."""
        if self.kind == "constant":
            return 0.0
        return (self.nu1 - self.nu0) * 0.5 * self.slope

    def validate(self, span: float = 25.0, samples: int = 4001) -> dict:
        """Sampled check of the bound certificates over [center-span, center+span].

        Returns worst-case margins; raises ConfigError if a certificate is
        violated beyond round-off.  The range check also cross-validates
        ``derivative`` against central differences.
        """
        s = np.linspace(self.center - span, self.center + span, samples)
        vals = self(s)
        der = self.derivative(s)
        tol = 1e-12 * max(1.0, self.nu1)
        if np.min(vals) < self.nu0 - tol or np.max(vals) > self.nu1 + tol:
            raise ConfigError("viscosity law leaves its declared [nu0, nu1] range")
        if np.max(np.abs(der)) > self.nu1_prime + tol:
            raise ConfigError("viscosity slope exceeds its declared bound")
        h = 1e-6
        fd = (self(s + h) - self(s - h)) / (2 * h)
        fd_err = float(np.max(np.abs(fd - der)))
        if fd_err > 1e-6 * (1.0 + self.nu1_prime):
            raise ConfigError(f"derivative inconsistent with finite differences (err {fd_err:.3g})")
        return {
            "min_value": float(np.min(vals)),
            "max_value": float(np.max(vals)),
            "max_abs_derivative": float(np.max(np.abs(der))),
            "derivative_fd_error": fd_err,
        }

    def as_dict(self) -> dict:
        d = {"kind": self.kind, "nu0": self.nu0, "nu1": self.nu1}
        if self.kind == "tanh":
            d.update(slope=self.slope, center=self.center)
        return d


# ---------------------------------------------------------------------------
# data terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForcingSpec:
    """Body force on the momentum equation.

    Kinds: ``none``; ``uniform``: constant (fx, fz) given by ``amplitude``
    times the unit vertical direction unless ``horizontal`` is set;
    ``cosine_cell``: f = amplitude * (0, cos(2 pi k x / Lx) * sin(pi z / H)).
    """

    kind: str = "none"
    amplitude: float = 0.0
    mode: int = 1
    horizontal: bool = False

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "cosine_cell"):
            raise ConfigError(f"unknown forcing kind {self.kind!r}")
        if not math.isfinite(self.amplitude):
            raise ConfigError("forcing amplitude must be finite")
        if self.kind == "cosine_cell" and self.mode < 0:
            raise ConfigError("cosine_cell mode must be >= 0")

    def evaluate(self, domain: Domain) -> tuple[np.ndarray, np.ndarray]:
        shape = (domain.Nx, domain.Nz)
        fx = np.zeros(shape)
        fz = np.zeros(shape)
        if self.kind == "uniform":
            if self.horizontal:
                fx[:] = self.amplitude
            else:
                fz[:] = self.amplitude
        elif self.kind == "cosine_cell":
            kap = 2.0 * np.pi * self.mode / domain.Lx
            fz[:] = (self.amplitude
                     * np.cos(kap * domain.x)[:, None]
                     * np.sin(np.pi * domain.z / domain.H)[None, :])
        return fx, fz

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "none":
            d["amplitude"] = self.amplitude
        if self.kind == "cosine_cell":
            d["mode"] = self.mode
        if self.kind == "uniform":
            d["horizontal"] = self.horizontal
        return d


@dataclass(frozen=True)
class SurfaceStressSpec:
    """Tangential stress data on the free surface (relaxed runs only).

    Kinds: ``none``; ``cosine``: b1(x) = amplitude * cos(2 pi k x / Lx).
    """

    kind: str = "none"
    amplitude: float = 0.0
    mode: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "cosine"):
            raise ConfigError(f"unknown surface stress kind {self.kind!r}")
        if not math.isfinite(self.amplitude):
            raise ConfigError("surface stress amplitude must be finite")

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or self.amplitude == 0.0

    def evaluate(self, domain: Domain) -> np.ndarray:
        if self.kind == "cosine":
            kap = 2.0 * np.pi * self.mode / domain.Lx
            return self.amplitude * np.cos(kap * domain.x)
        return np.zeros(domain.Nx)

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "none":
            d.update(amplitude=self.amplitude, mode=self.mode)
        return d


@dataclass(frozen=True)
class InitialConditionSpec:
    """Initial data, expressed in basis coefficients or as seeded noise.

    Kinds: ``zero``; ``random_smooth`` (seeded band-limited fields projected
    onto the bases, scaled to the given amplitudes); ``modes`` (explicit
    coefficient lists, zero-padded to the basis size).
    """

    kind: str = "random_smooth"
    velocity_amplitude: float = 0.1
    concentration_amplitude: float = 0.05
    velocity_modes: tuple = ()
    concentration_modes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zero", "random_smooth", "modes"):
            raise ConfigError(f"unknown initial condition kind {self.kind!r}")
        for a in (self.velocity_amplitude, self.concentration_amplitude):
            if not math.isfinite(a) or a < 0:
                raise ConfigError("initial amplitudes must be finite and nonnegative")
        object.__setattr__(self, "velocity_modes", tuple(float(v) for v in self.velocity_modes))
        object.__setattr__(
            self, "concentration_modes", tuple(float(v) for v in self.concentration_modes)
        )

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "random_smooth":
            d.update(velocity_amplitude=self.velocity_amplitude,
                     concentration_amplitude=self.concentration_amplitude)
        if self.kind == "modes":
            d.update(velocity_modes=list(self.velocity_modes),
                     concentration_modes=list(self.concentration_modes))
        return d


# ---------------------------------------------------------------------------
# top-level configuration
# ---------------------------------------------------------------------------

@dataclass
class SimConfig:
    domain: DomainSpec
    theta: float
    U: float
    alpha: float
    viscosity: ViscosityModel
    n: int = 16
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "weak"
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    surface_stress: SurfaceStressSpec = field(default_factory=SurfaceStressSpec)
    initial: InitialConditionSpec = field(default_factory=InitialConditionSpec)
    save_every: int = 10
    seed: int = 0
    blowup_threshold: float = 1e6
    outdir: str = ""

    def validate(self) -> "SimConfig":
        self.domain.validate()
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ConfigError(f"diffusivity theta must be positive, got {self.theta}")
        if not (self.U >= 0 and math.isfinite(self.U)):
            raise ConfigError(f"swim speed U must be nonnegative, got {self.U}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"total mass alpha must be nonnegative, got {self.alpha}")
        if self.scheme not in ("weak", "strong"):
            raise ConfigError(f"scheme must be 'weak' or 'strong', got {self.scheme!r}")
        if self.scheme == "strong" and not self.surface_stress.is_zero:
            raise ConfigError("the strong formulation requires zero tangential surface stress")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if self.n < 1:
            raise ConfigError(f"mode count n must be >= 1, got {self.n}")
        if self.domain.Nz < 2 * self.n + 2:
            raise ConfigError(
                f"Nz = {self.domain.Nz} too small for n = {self.n} modes (need Nz >= {2 * self.n + 2})"
            )
        if self.save_every < 1:
            raise ConfigError("save_every must be >= 1")
        if not (self.blowup_threshold > 0):
            raise ConfigError("blowup_threshold must be positive")
        self.viscosity.validate()
        return self


def config_to_dict(cfg: SimConfig) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "domain": {"Lx": cfg.domain.Lx, "H": cfg.domain.H,
                   "Nx": cfg.domain.Nx, "Nz": cfg.domain.Nz},
        "physics": {"theta": cfg.theta, "U": cfg.U, "alpha": cfg.alpha},
        "viscosity": cfg.viscosity.as_dict(),
        "forcing": cfg.forcing.as_dict(),
        "surface_stress": cfg.surface_stress.as_dict(),
        "initial": cfg.initial.as_dict(),
        "discretization": {"n": cfg.n, "dt": cfg.dt, "t_end": cfg.t_end,
                           "scheme": cfg.scheme, "save_every": cfg.save_every},
        "run": {"seed": cfg.seed, "blowup_threshold": cfg.blowup_threshold,
                "outdir": cfg.outdir},
    }


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required key {key!r} in [{where}]")
    return table[key]


def config_from_dict(raw: dict) -> SimConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a table")
    schema = raw.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema} (expected {SCHEMA_VERSION})")

    dom_t = raw.get("domain", {})
    spec = DomainSpec(
        Lx=float(_require(dom_t, "Lx", "domain")),
        H=float(_require(dom_t, "H", "domain")),
        Nx=int(_require(dom_t, "Nx", "domain")),
        Nz=int(_require(dom_t, "Nz", "domain")),
    )
    phys = raw.get("physics", {})
    visc_t = dict(raw.get("viscosity", {}))
    kind = visc_t.pop("kind", "constant")
    try:
        visc = ViscosityModel(kind=kind, **visc_t)
    except TypeError as exc:
        raise ConfigError(f"bad viscosity table: {exc}") from exc

    def _spec(table_name: str, cls):
        t = dict(raw.get(table_name, {}))
        try:
            return cls(**t)
        except TypeError as exc:
            raise ConfigError(f"bad [{table_name}] table: {exc}") from exc

    disc = raw.get("discretization", {})
    run = raw.get("run", {})
    cfg = SimConfig(
        domain=spec,
        theta=float(_require(phys, "theta", "physics")),
        U=float(phys.get("U", 0.0)),
        alpha=float(phys.get("alpha", 0.0)),
        viscosity=visc,
        n=int(disc.get("n", 16)),
        dt=float(disc.get("dt", 1e-3)),
        t_end=float(disc.get("t_end", 1.0)),
        scheme=str(disc.get("scheme", "weak")),
        forcing=_spec("forcing", ForcingSpec),
        surface_stress=_spec("surface_stress", SurfaceStressSpec),
        initial=_spec("initial", InitialConditionSpec),
        save_every=int(disc.get("save_every", 10)),
        seed=int(run.get("seed", 0)),
        blowup_threshold=float(run.get("blowup_threshold", 1e6)),
        outdir=str(run.get("outdir", "")),
    )
    return cfg.validate()


def load_config(path: str) -> SimConfig:
    """Load a SimConfig from a TOML (default) or JSON file."""
    if path.endswith(".json"):
        with open(path) as fh:
            raw = json.load(fh)
    else:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    return config_from_dict(raw)
