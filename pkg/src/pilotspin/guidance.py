"""Bohmian guidance: velocity and spin fields of a spinor, and the trajectory
integrator for a particle crossing the magnet.

Time origin is magnet entry. Inside the magnet (0 <= t <= dt_transit) and after
it, the spin polar angle along a trajectory has the closed form

    cos(theta) = tanh(E(z, t) + atanh(cos theta0))

with E = F t^2 z / (2 m sigma0^2) in the field and E = (z_delta + u tau) z / sigma0^2
after it (tau = t - dt_transit). The velocity is v_z = (F t / m) cos(theta) in
the field and u cos(theta) after it. Writing the angle through tanh keeps it
accurate when theta is within rounding of 0 or pi, where tan(theta/2) would
overflow.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import analytic
from .core import (
    DerivedQuantities,
    NodeDensityZero,
    PhysicalConfig,
    Position2D,
    SpinOrientation,
    Spinor,
    StepTooLarge,
    cos_theta0,
    derive,
    spin_anchor,
)

DENSITY_FLOOR = 1e-300
FIELD_STEPS = 2000  # default steps across the magnet
FREE_STEPS = 5000  # default steps per decoherence time
# RK4 is stable up to h*L ~ 2.8; we refuse anything past 1 to stay accurate.
STABILITY_LIMIT = 1.0
# the spin-norm checks cost more than the RK4 step itself; they run on every
# 10th step and at every segment end.
SPIN_CHECK_EVERY = 10


class Sign(enum.IntEnum):
    MINUS = -1
    UNDECIDED = 0
    PLUS = 1


class SpinVector(NamedTuple):
    sx: object
    sy: object
    sz: object

    def magnitude(self):
        return np.sqrt(np.square(self.sx) + np.square(self.sy) + np.square(self.sz))


@dataclass(frozen=True)
class ParticleState:
    """Position and spin of one particle; ``theta0`` is the polar angle at magnet entry."""

    t: float
    x: float
    z: float
    y: float
    spin: SpinOrientation
    theta0: float

    def __post_init__(self):
        if not 0.0 <= self.spin.theta <= math.pi:
            raise ValueError(f"theta out of [0, pi]: {self.spin.theta}")


@dataclass
class Trajectory:
    samples: list[ParticleState]
    outcome: Sign
    config: PhysicalConfig
    max_spin_norm_error: float = 0.0

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def z(self) -> np.ndarray:
        return np.array([s.z for s in self.samples])


# ---------------------------------------------------------------------------
# fields of a spinor


def velocity_from_spinor(spinor_value: Spinor, spinor_gradient, mass: float, hbar: float, floor: float = DENSITY_FLOOR):
    """Velocity (v_x, v_z) = hbar/(m rho) Im(Psi^dagger grad Psi).

    ``spinor_gradient`` is a pair (dPsi/dx, dPsi/dz) of Spinors.
    """
    rho = spinor_value.density()
    if np.any(rho < floor):
        raise NodeDensityZero(f"density {np.min(rho):.3g} below floor {floor:g}")
    out = []
    for g in spinor_gradient:
        current = np.conj(spinor_value.plus) * g.plus + np.conj(spinor_value.minus) * g.minus
        out.append(hbar / (mass * rho) * current.imag)
    return np.array(out)


def spin_vector(spinor_value: Spinor, hbar: float, floor: float = DENSITY_FLOOR) -> SpinVector:
    """s = hbar/(2 rho) Psi^dagger sigma Psi.

    With the minus component carrying the factor i this reads
    (hbar/2)(sin t sin p, sin t cos p, cos t).
    """
    a, b = np.asarray(spinor_value.plus), np.asarray(spinor_value.minus)
    rho = np.abs(a) ** 2 + np.abs(b) ** 2
    if np.any(rho < floor):
        raise NodeDensityZero(f"density {np.min(rho):.3g} below floor {floor:g}")
    cross = np.conj(a) * b
    scale = hbar / (2 * rho)
    return SpinVector(scale * 2 * cross.real, scale * 2 * cross.imag, scale * (np.abs(a) ** 2 - np.abs(b) ** 2))


def spin_vector_from_angles(theta, phi, hbar: float) -> SpinVector:
    st = np.sin(theta)
    return SpinVector(0.5 * hbar * st * np.sin(phi), 0.5 * hbar * st * np.cos(phi), 0.5 * hbar * np.cos(theta))


def _theta_from_exponent(e):
    # theta = pi/2 - gd(e), with gd the Gudermannian; exact at e = 0, +-inf
    return math.pi / 2 - 2 * np.arctan(np.tanh(0.5 * e))


def _force(cfg: PhysicalConfig) -> float:
    return cfg.field_sign * cfg.mu * cfg.Bprime0


def field_exponent(z, t, cfg: PhysicalConfig):
    return _force(cfg) * np.square(t) * z / (2 * cfg.mass * cfg.sigma0**2)


def free_exponent(z, tau, cfg: PhysicalConfig, derived: DerivedQuantities | None = None):
    d = derived or derive(cfg)
    return (d.z_delta + d.u * tau) * z / cfg.sigma0**2


def theta_in_field(z, t, theta0, cfg: PhysicalConfig):
    """Polar angle of the spin at height z, time t inside the magnet."""
    return _theta_from_exponent(field_exponent(z, t, cfg) + spin_anchor(cos_theta0(theta0)))


def theta_after_field(z, tau, theta0, cfg: PhysicalConfig):
    """Polar angle at height z, time tau after magnet exit (entry angle theta0)."""
    return _theta_from_exponent(free_exponent(z, tau, cfg) + spin_anchor(cos_theta0(theta0)))


def velocity_in_field(z, t, anchor, cfg: PhysicalConfig):
    """dz/dt inside the magnet; ``anchor`` = atanh(cos theta0)."""
    return _force(cfg) * t / cfg.mass * np.tanh(field_exponent(z, t, cfg) + anchor)


def velocity_after_field(z, tau, anchor, cfg: PhysicalConfig, derived: DerivedQuantities | None = None):
    d = derived or derive(cfg)
    return d.u * np.tanh(free_exponent(z, tau, cfg, d) + anchor)


def velocity_after_field_ratio(z, tau, theta0, cfg: PhysicalConfig):
    """Same field as :func:`velocity_after_field`, in the ratio-of-tanh form
    u (tanh w + cos theta0) / (1 + tanh w cos theta0)."""
    d = derive(cfg)
    th = np.tanh(free_exponent(z, tau, cfg, d))
    c = np.cos(theta0)
    return d.u * (th + c) / (1 + th * c)


# ---------------------------------------------------------------------------
# integration


def lipschitz_bound(cfg: PhysicalConfig, t: float, phase: str) -> float:
    """Upper bound of |d v_z / d z| at time t (absolute) in the given phase."""
    d = derive(cfg)
    if phase == "field":
        f = abs(_force(cfg))
        return f * t / cfg.mass * f * t**2 / (2 * cfg.mass * cfg.sigma0**2)
    tau = t - d.dt_transit
    return abs(d.u) * (abs(d.z_delta) + abs(d.u) * tau) / cfg.sigma0**2


def _rk4(rhs, t, z, h):
    k1 = rhs(t, z)
    k2 = rhs(t + 0.5 * h, z + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, z + 0.5 * h * k2)
    k4 = rhs(t + h, z + h * k3)
    return z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _phase_rhs(phase, anchor, cfg, d):
    if phase == "field":
        return lambda t, z: velocity_in_field(z, t, anchor, cfg)
    return lambda t, z: velocity_after_field(z, t - d.dt_transit, anchor, cfg, d)


def _check_step(cfg, t, dt, phase):
    if dt * lipschitz_bound(cfg, t + dt, phase) > STABILITY_LIMIT:
        raise StepTooLarge(f"dt={dt:.3g} s exceeds the stability bound in the {phase} phase")


def _advance(state: ParticleState, dt: float, cfg: PhysicalConfig, phase: str) -> ParticleState:
    d = derive(cfg)
    anchor = spin_anchor(cos_theta0(state.theta0))
    z = float(_rk4(_phase_rhs(phase, anchor, cfg, d), state.t, state.z, dt))
    t = state.t + dt
    if phase == "field":
        theta = float(theta_in_field(z, t, state.theta0, cfg))
    else:
        theta = float(theta_after_field(z, t - d.dt_transit, state.theta0, cfg))
    spin = SpinOrientation(theta, state.spin.phi, state.spin.chi)
    return ParticleState(t=t, x=state.x, z=z, y=cfg.v0 * t, spin=spin, theta0=state.theta0)


def step_in_field(state: ParticleState, dt: float, cfg: PhysicalConfig) -> ParticleState:
    """One RK4 step inside the magnet."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.t < 0 or state.t + dt > cfg.dt_transit * (1 + 1e-12):
        raise ValueError("step leaves the magnet; split it at the exit time")
    _check_step(cfg, state.t, dt, "field")
    return _advance(state, dt, cfg, "field")


def step_after_field(state: ParticleState, dt: float, cfg: PhysicalConfig) -> ParticleState:
    """One RK4 step after magnet exit."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.t < cfg.dt_transit * (1 - 1e-12):
        raise ValueError("state is still inside the magnet")
    _check_step(cfg, state.t, dt, "free")
    return _advance(state, dt, cfg, "free")


def _segments(t_start, t_end, cfg, d, dt_field, dt_free):
    """(t_a, t_b, n_steps, phase) pieces with breaks at magnet exit and at t_D."""
    t_exit = d.dt_transit
    t_dec = t_exit + d.t_decoherence
    cuts = sorted({t_start, t_end, *(c for c in (t_exit, t_dec) if t_start < c < t_end)})
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        phase = "field" if b <= t_exit else "free"
        h = dt_field if phase == "field" else dt_free
        n = max(1, math.ceil((b - a) / h * (1 - 1e-12)))
        out.append((a, b, n, phase))
    return out


@dataclass
class Propagation:
    """Result of :func:`propagate` for a block of particles."""

    z: np.ndarray  # final heights
    outcome: np.ndarray  # int8 Sign values, 0 when the decision time was not reached
    z_decision: np.ndarray
    max_spin_norm_error: np.ndarray
    n_steps: int
    times: list[float] = field(default_factory=list)


Observer = Callable[[float, np.ndarray, np.ndarray, str], None]


def default_steps(cfg: PhysicalConfig) -> tuple[float, float]:
    d = derive(cfg)
    return d.dt_transit / FIELD_STEPS, d.t_decoherence / FREE_STEPS


def propagate(
    z0,
    theta0,
    cfg: PhysicalConfig,
    t_end: float,
    *,
    x0=None,
    phi0=None,
    t_start: float = 0.0,
    dt_field: float | None = None,
    dt_free: float | None = None,
    observer: Observer | None = None,
    check_spin: bool = True,
) -> Propagation:
    """Integrate a block of trajectories from ``t_start`` to ``t_end`` (absolute times).

    All particles share the time grid, so the block is advanced with array
    arithmetic. ``observer(t, z, theta, phase)`` is called at the start and
    after every step. When ``check_spin`` is set the spin vector is evaluated
    both from the closed-form angle and from the analytic spinor at the
    particle position, every SPIN_CHECK_EVERY steps and at every segment end;
    the worst deviation of |s| from hbar/2 is kept.
    """
    d = derive(cfg)
    z = np.array(z0, dtype=float, copy=True).reshape(-1)
    theta0 = np.broadcast_to(np.asarray(theta0, float), z.shape).copy()
    x = np.zeros_like(z) if x0 is None else np.broadcast_to(np.asarray(x0, float), z.shape)
    phi = np.zeros_like(z) if phi0 is None else np.broadcast_to(np.asarray(phi0, float), z.shape)
    if not t_end > t_start or t_start < 0:
        raise ValueError("need 0 <= t_start < t_end")
    h_field, h_free = default_steps(cfg)
    dt_field = dt_field or h_field
    dt_free = dt_free or h_free
    anchor = spin_anchor(cos_theta0(theta0))
    spin = SpinOrientation(theta0, phi)
    t_exit = d.dt_transit
    t_dec = t_exit + d.t_decoherence
    half_hbar = 0.5 * cfg.hbar

    def theta_at(t, zz, phase):
        e = field_exponent(zz, t, cfg) if phase == "field" else free_exponent(zz, t - t_exit, cfg, d)
        return _theta_from_exponent(e + anchor)

    max_err = np.zeros_like(z)
    up, down = analytic._spin_coefficients(spin)
    sin_phi, cos_phi = np.sin(phi), np.cos(phi)

    def spin_check(t, zz, theta, phase):
        st = np.sin(theta)
        s1 = np.sqrt((st * sin_phi) ** 2 + (st * cos_phi) ** 2 + np.cos(theta) ** 2)
        np.maximum(max_err, np.abs(s1 - 1), out=max_err)
        r = (x, zz)
        if phase == "field":
            tt = min(t, t_exit)
            psi = Spinor(up * analytic.field_envelope(r, tt, +1, cfg), down * analytic.field_envelope(r, tt, -1, cfg))
        else:
            tau = t - t_exit
            psi = Spinor(up * analytic.f_envelope(r, tau, +1, cfg, d), down * analytic.f_envelope(r, tau, -1, cfg, d))
        s2 = spin_vector(psi, cfg.hbar).magnitude()
        np.maximum(max_err, np.abs(s2 / half_hbar - 1), out=max_err)

    outcome = np.zeros(z.shape, dtype=np.int8)
    z_dec = np.full(z.shape, np.nan)
    first_phase = "field" if t_start < t_exit else "free"
    theta = theta_at(t_start, z, first_phase)
    if check_spin:
        spin_check(t_start, z, theta, first_phase)
    if observer is not None:
        observer(t_start, z, theta, first_phase)
    times = [t_start]
    n_total = 0
    for a, b, n, phase in _segments(t_start, t_end, cfg, d, dt_field, dt_free):
        h = (b - a) / n
        # the bound grows with time in both phases; checking the last step covers all
        _check_step(cfg, b - h, h, phase)
        rhs = _phase_rhs(phase, anchor, cfg, d)
        for k in range(n):
            t = a + k * h
            z = _rk4(rhs, t, z, h)
            t_next = b if k == n - 1 else a + (k + 1) * h
            theta = theta_at(t_next, z, phase)
            if check_spin and (k % SPIN_CHECK_EVERY == 0 or k == n - 1):
                spin_check(t_next, z, theta, phase)
            if observer is not None:
                observer(t_next, z, theta, phase)
            times.append(t_next)
        n_total += n
        if b == t_dec:
            c = np.tanh(free_exponent(z, d.t_decoherence, cfg, d) + anchor)
            outcome = np.sign(c).astype(np.int8)
            z_dec = z.copy()
    return Propagation(z=z, outcome=outcome, z_decision=z_dec, max_spin_norm_error=max_err, n_steps=n_total, times=times)


def integrate(initial: ParticleState, t_end: float, cfg: PhysicalConfig, dt_max: float | None = None, *, check_spin: bool = True) -> Trajectory:
    """Trajectory of one particle from ``initial`` to the absolute time ``t_end``.

    The outcome is the sign of cos(theta) at magnet exit + t_D; it stays
    UNDECIDED when ``t_end`` is earlier than that or when the particle sits
    exactly on the unstable equilibrium.
    """
    if dt_max is not None and not dt_max > 0:
        raise ValueError("dt_max must be positive")
    if not t_end > initial.t:
        raise ValueError("t_end must be later than the initial time")
    h_field, h_free = default_steps(cfg)
    if dt_max is not None:
        h_field, h_free = min(h_field, dt_max), min(h_free, dt_max)
    samples: list[ParticleState] = []
    phi, chi = initial.spin.phi, initial.spin.chi
    theta0 = initial.theta0

    def record(t, z, theta, phase):
        samples.append(
            ParticleState(t=t, x=initial.x, z=float(z[0]), y=cfg.v0 * t, spin=SpinOrientation(float(theta[0]), phi, chi), theta0=theta0)
        )

    res = propagate(
        [initial.z], theta0, cfg, t_end, x0=initial.x, phi0=phi, t_start=initial.t,
        dt_field=h_field, dt_free=h_free, observer=record, check_spin=check_spin,
    )
    return Trajectory(samples=samples, outcome=Sign(int(res.outcome[0])), config=cfg, max_spin_norm_error=float(res.max_spin_norm_error[0]))


def entry_state(z0: float, theta0: float, cfg: PhysicalConfig, *, x0: float = 0.0, phi0: float = 0.0) -> ParticleState:
    """Particle at magnet entry with spin angles (theta0, phi0)."""
    return ParticleState(t=0.0, x=x0, z=z0, y=0.0, spin=SpinOrientation(theta0, phi0), theta0=float(theta0))


TRAJECTORY_COLUMNS = ("traj_id", "t", "x", "z", "y", "theta", "phi", "sx", "sy", "sz", "phase_tag")


def trajectory_rows(traj_id: int, samples: Sequence[ParticleState], cfg: PhysicalConfig):
    exit_t = cfg.dt_transit
    for s in samples:
        sv = spin_vector_from_angles(s.spin.theta, s.spin.phi, cfg.hbar)
        tag = "field" if s.t <= exit_t else "free"
        yield (traj_id, s.t, s.x, s.z, s.y, s.spin.theta, s.spin.phi, float(sv.sx), float(sv.sy), float(sv.sz), tag)
