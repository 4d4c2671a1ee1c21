"""Physical constants, apparatus configuration and the small value types shared
by every other module.

All quantities are SI. The default configuration is the silver-atom
Stern-Gerlach setup used throughout the package.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, NamedTuple

import numpy as np

# CODATA 2018
BOHR_MAGNETON = 9.2740100783e-24  # J/T
HBAR = 1.054571817e-34  # J s

# |cos(theta0)| below this is treated as an exactly equatorial spin; float
# pi/2 cannot represent the tie otherwise.
EQUATOR_SNAP = 4 * np.finfo(float).eps


class PilotSpinError(Exception):
    """Base class for all package errors."""


class ConfigError(PilotSpinError, ValueError):
    pass


class NodeDensityZero(PilotSpinError):
    """The density at the particle position fell below the node floor."""


class StepTooLarge(PilotSpinError):
    pass


class IntegrationFailure(PilotSpinError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


class GridTooSmall(PilotSpinError):
    pass


class GridMismatch(PilotSpinError):
    pass


@dataclass(frozen=True)
class PhysicalConfig:
    """Apparatus constants.

    ``field_sign`` is an extension used for the field-reversal (contextuality)
    experiment: -1 flips the whole magnet field, B -> -B.
    """

    mass: float = 1.8e-25
    v0: float = 500.0
    sigma0: float = 1e-4
    B0: float = 5.0
    Bprime0: float = 1e3
    delta_l: float = 1e-2
    mu: float = BOHR_MAGNETON
    hbar: float = HBAR
    screen_distance: float = 0.2
    field_sign: int = 1

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name == "field_sign":
                continue
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{f.name} must be finite and > 0, got {value!r}")
        if self.field_sign not in (1, -1):
            raise ConfigError(f"field_sign must be +1 or -1, got {self.field_sign!r}")

    @property
    def dt_transit(self) -> float:
        return self.delta_l / self.v0

    @property
    def screen_time(self) -> float:
        """Flight time from magnet exit to the screen."""
        return self.screen_distance / self.v0

    def reversed(self) -> "PhysicalConfig":
        return dataclasses.replace(self, field_sign=-self.field_sign)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DerivedQuantities:
    dt_transit: float
    z_delta: float
    u: float
    t_decoherence: float


def default_config() -> PhysicalConfig:
    return PhysicalConfig()


def derive(config: PhysicalConfig) -> DerivedQuantities:
    """Transit time, exit displacement z_delta, drift speed u and decoherence time.

    z_delta and u carry the field sign; t_decoherence depends only on their
    magnitudes (the separation time does not care which way the beam splits).
    """
    dt = config.dt_transit
    force = config.mu * config.Bprime0
    z_delta = force * dt**2 / (2 * config.mass)
    u = force * dt / config.mass
    if not u > 0:
        raise ConfigError(f"drift speed u must be positive, got {u!r}")
    t_d = (3 * config.sigma0 - z_delta) / u
    if not t_d > 0:
        raise ConfigError(
            f"z_delta={z_delta:.3g} m already exceeds 3*sigma0; decoherence time is not positive"
        )
    s = config.field_sign
    return DerivedQuantities(dt_transit=dt, z_delta=s * z_delta, u=s * u, t_decoherence=t_d)


def load_config(source: str | Path | Mapping[str, Any] | None = None) -> PhysicalConfig:
    """Build a config from a JSON file or mapping; missing keys keep their defaults."""
    if source is None:
        return default_config()
    if isinstance(source, Mapping):
        data = dict(source)
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    known = {f.name for f in dataclasses.fields(PhysicalConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(default_config(), **data)


@dataclass(frozen=True)
class SpinOrientation:
    """Euler angles of a spin direction. Fields may be scalars or numpy arrays."""

    theta: Any
    phi: Any = 0.0
    chi: Any = 0.0

    def __post_init__(self):
        theta = np.clip(self.theta, 0.0, math.pi)
        phi = np.mod(self.phi, 2 * math.pi)
        if np.ndim(theta) == 0:
            theta, phi = float(theta), float(phi)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)


class Position2D(NamedTuple):
    """Transverse position (x, z); y is classical. Components may be arrays."""

    x: Any
    z: Any


class Spinor(NamedTuple):
    """Two complex amplitudes (or arrays of them) on the |+>, |-> basis of sigma_z."""

    plus: Any
    minus: Any

    def density(self):
        return np.abs(self.plus) ** 2 + np.abs(self.minus) ** 2

    def scaled(self, factor) -> "Spinor":
        return Spinor(self.plus * factor, self.minus * factor)


def cos_theta0(theta0):
    """cos(theta0) with exact zeros at the equator and exact +-1 at the poles."""
    c = np.cos(np.asarray(theta0, dtype=float))
    c = np.where(np.abs(c) < EQUATOR_SNAP, 0.0, c)
    return c if c.ndim else float(c)


def spin_anchor(cos0):
    """atanh(cos theta0): the additive constant of every closed-form spin angle.

    +inf for spin up, -inf for spin down.
    """
    with np.errstate(divide="ignore"):
        return np.arctanh(cos0)
