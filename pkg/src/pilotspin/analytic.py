"""Closed-form spinors and densities of the Gaussian Stern-Gerlach model.

Conventions
-----------
* Inside the magnet the plus (minus) packet is pushed by the force
  +F (-F), F = field_sign * mu * B'0, and picks up the Zeeman phase
  -/+ field_sign * mu * B0 * t / hbar, i.e. exactly what exp(-iHt/hbar) gives
  for H = p^2/2m + mu B.sigma with B_z = B0 - B'0 z.
* The in-field and post-field spinors carry the factor i on the minus
  component: (cos(t0/2) e^{i p0/2}, i sin(t0/2) e^{-i p0/2}). At t = 0 this is
  ``e^{i pi/4} * initial_spinor`` with the azimuth shifted by pi/2, see
  :func:`initial_spinor_in_field_convention`.
* Packet spreading is neglected (its effect is ~1e-5 relative at the screen);
  the numerical oracle measures what is left.

Every Gaussian is built in log space so that tails far from the packet
underflow to zero cleanly instead of producing 0 * inf.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import ndtr

from .core import DerivedQuantities, PhysicalConfig, Position2D, SpinOrientation, Spinor, derive

_TIME_SLACK = 1e-12


def _log_norm(sigma0):
    # log of (2 pi sigma0^2)^(-1/2)
    return -0.5 * math.log(2 * math.pi * sigma0**2)


def _packet(x, z, center, sigma0, phase):
    """(2 pi s^2)^(-1/2) exp(-(x^2 + (z-center)^2)/4s^2) e^{i phase}."""
    log_amp = _log_norm(sigma0) - (x**2 + (z - center) ** 2) / (4 * sigma0**2)
    return np.exp(log_amp + 1j * phase)


def gaussian(r, sigma0):
    """The stationary envelope f(r) = (2 pi s^2)^(-1/2) exp(-(x^2+z^2)/4s^2)."""
    x, z = np.asarray(r[0], float), np.asarray(r[1], float)
    return np.exp(_log_norm(sigma0) - (x**2 + z**2) / (4 * sigma0**2))


def _spin_coefficients(spin: SpinOrientation):
    half = 0.5 * np.asarray(spin.theta)
    glob = np.exp(0.5j * np.asarray(spin.chi))
    up = glob * np.cos(half) * np.exp(0.5j * np.asarray(spin.phi))
    down = glob * 1j * np.sin(half) * np.exp(-0.5j * np.asarray(spin.phi))
    return up, down


def initial_spinor(r, spin: SpinOrientation, sigma0: float) -> Spinor:
    """Gaussian spinor at magnet entry, (cos(t/2) e^{ip/2}, sin(t/2) e^{-ip/2}) f(r)."""
    f = gaussian(r, sigma0)
    half = 0.5 * np.asarray(spin.theta)
    glob = np.exp(0.5j * np.asarray(spin.chi))
    phi = np.asarray(spin.phi)
    return Spinor(
        glob * np.cos(half) * np.exp(0.5j * phi) * f,
        glob * np.sin(half) * np.exp(-0.5j * phi) * f,
    )


def initial_spinor_in_field_convention(r, spin: SpinOrientation, sigma0: float) -> Spinor:
    """``initial_spinor`` rewritten in the i-on-the-minus-component convention.

    initial_spinor(theta, phi) == e^{-i pi/4} spinor_in_field(t=0; theta, phi + pi/2).
    """
    shifted = SpinOrientation(spin.theta, np.asarray(spin.phi) + math.pi / 2, spin.chi)
    up, down = _spin_coefficients(shifted)
    f = gaussian(r, sigma0) * np.exp(-0.25j * math.pi)
    return Spinor(up * f, down * f)


def field_envelope(r, t, sign: int, cfg: PhysicalConfig):
    """Inside the magnet: the |+> (sign=+1) or |-> (sign=-1) packet started from f(r)."""
    x, z = np.asarray(r[0], float), np.asarray(r[1], float)
    force = sign * cfg.field_sign * cfg.mu * cfg.Bprime0
    zeeman = sign * cfg.field_sign * cfg.mu * cfg.B0
    center = force * t**2 / (2 * cfg.mass)
    phase = (force * t * z - force**2 * t**3 / (6 * cfg.mass) - zeeman * t) / cfg.hbar
    return _packet(x, z, center, cfg.sigma0, phase)


@dataclass(frozen=True)
class WavePacketPhase:
    linear_coeff: float  # kg m/s; the +-m u momentum
    accumulated: float  # rad


def packet_phase(t, sign: int, cfg: PhysicalConfig, derived: DerivedQuantities | None = None) -> WavePacketPhase:
    """Momentum and accumulated phase of the post-field packet ``sign``.

    The accumulated phase is the magnet-exit value (-m u^2 dt/6 -+ mu B0 dt)/hbar
    plus the free-flight term -m u^2 t / (2 hbar).
    """
    d = derived or derive(cfg)
    m, u = cfg.mass, d.u
    zeeman = sign * cfg.field_sign * cfg.mu * cfg.B0
    acc = (-m * u**2 * d.dt_transit / 6 - zeeman * d.dt_transit - 0.5 * m * u**2 * t) / cfg.hbar
    return WavePacketPhase(linear_coeff=sign * m * u, accumulated=acc)


def f_envelope(r, t, sign: int, cfg: PhysicalConfig, derived: DerivedQuantities | None = None):
    """Post-field packet f^+-(r, t): f(x, z -+ (z_delta + u t)) e^{i(+-m u z/hbar + phase(t))}."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("post-field time must be >= 0")
    d = derived or derive(cfg)
    x, z = np.asarray(r[0], float), np.asarray(r[1], float)
    ph = packet_phase(t, sign, cfg, d)
    center = sign * (d.z_delta + d.u * t)
    return _packet(x, z, center, cfg.sigma0, ph.linear_coeff * z / cfg.hbar + ph.accumulated)


def _check_in_field(t, d: DerivedQuantities):
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > d.dt_transit * (1 + _TIME_SLACK)):
        raise ValueError(f"in-field time must lie in [0, {d.dt_transit:g}] s")


def spinor_in_field(r, t, spin: SpinOrientation, cfg: PhysicalConfig) -> Spinor:
    _check_in_field(t, derive(cfg))
    up, down = _spin_coefficients(spin)
    return Spinor(up * field_envelope(r, t, +1, cfg), down * field_envelope(r, t, -1, cfg))


def spinor_after_field(r, t, spin: SpinOrientation, cfg: PhysicalConfig) -> Spinor:
    """Spinor at time ``t`` after magnet exit."""
    d = derive(cfg)
    up, down = _spin_coefficients(spin)
    return Spinor(up * f_envelope(r, t, +1, cfg, d), down * f_envelope(r, t, -1, cfg, d))


def _gradient(r, psi: Spinor, centers, wavenumbers, sigma0):
    x, z = np.asarray(r[0], float), np.asarray(r[1], float)
    ddx = Spinor(*(-x / (2 * sigma0**2) * c for c in psi))
    ddz = Spinor(
        *(
            (-(z - c0) / (2 * sigma0**2) + 1j * k) * comp
            for comp, c0, k in zip(psi, centers, wavenumbers)
        )
    )
    return ddx, ddz


def spinor_in_field_gradient(r, t, spin: SpinOrientation, cfg: PhysicalConfig):
    """(d/dx, d/dz) of :func:`spinor_in_field`, exact."""
    psi = spinor_in_field(r, t, spin, cfg)
    force = cfg.field_sign * cfg.mu * cfg.Bprime0
    c = force * t**2 / (2 * cfg.mass)
    k = force * t / cfg.hbar
    return _gradient(r, psi, (c, -c), (k, -k), cfg.sigma0)


def spinor_after_field_gradient(r, t, spin: SpinOrientation, cfg: PhysicalConfig):
    """(d/dx, d/dz) of :func:`spinor_after_field`, exact."""
    d = derive(cfg)
    psi = spinor_after_field(r, t, spin, cfg)
    c = d.z_delta + d.u * t
    k = cfg.mass * d.u / cfg.hbar
    return _gradient(r, psi, (c, -c), (k, -k), cfg.sigma0)


def _normal_pdf(z, mean, sigma0):
    return np.exp(-((z - mean) ** 2) / (2 * sigma0**2)) / math.sqrt(2 * math.pi * sigma0**2)


def pure_state_density(z, t, theta0, cfg: PhysicalConfig):
    """x-integrated density after the field for one pure spin state."""
    d = derive(cfg)
    a = d.z_delta + d.u * np.asarray(t)
    c2 = np.cos(0.5 * np.asarray(theta0)) ** 2
    return c2 * _normal_pdf(z, a, cfg.sigma0) + (1 - c2) * _normal_pdf(z, -a, cfg.sigma0)


def sg_mixture_density(z, t, cfg: PhysicalConfig):
    """Two-spot density of the isotropic beam, t after magnet exit."""
    return pure_state_density(z, t, math.pi / 2, cfg)


def sg_mixture_cdf(z, t, cfg: PhysicalConfig, theta0=math.pi / 2):
    """Cumulative of :func:`pure_state_density` (theta0=pi/2 gives the mixture)."""
    d = derive(cfg)
    a = d.z_delta + d.u * np.asarray(t)
    c2 = np.cos(0.5 * np.asarray(theta0)) ** 2
    s = cfg.sigma0
    return c2 * ndtr((z - a) / s) + (1 - c2) * ndtr((z + a) / s)


def eprb_joint_density(zA, zB, t, cfg: PhysicalConfig):
    """Joint (z_A, z_B) density t after A leaves its magnet: B stays put, A splits."""
    return _normal_pdf(zB, 0.0, cfg.sigma0) * sg_mixture_density(zA, t, cfg)


GRID_COLUMNS = ("x", "z", "t", "re_plus", "im_plus", "re_minus", "im_minus", "density")


def evaluate_grid(xs, zs, t, spin: SpinOrientation, cfg: PhysicalConfig, *, in_field: bool = False):
    """Rows of GRID_COLUMNS on the tensor grid xs x zs at one time."""
    X, Z = np.meshgrid(np.asarray(xs, float), np.asarray(zs, float), indexing="ij")
    fn = spinor_in_field if in_field else spinor_after_field
    psi = fn(Position2D(X, Z), t, spin, cfg)
    cols = [
        X.ravel(),
        Z.ravel(),
        np.full(X.size, float(t)),
        psi.plus.real.ravel(),
        psi.plus.imag.ravel(),
        psi.minus.real.ravel(),
        psi.minus.imag.ravel(),
        psi.density().ravel(),
    ]
    return np.column_stack(cols)


def write_rows_csv(path: str | Path, header: Iterable[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([format_number(v) for v in row])


def format_number(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")
