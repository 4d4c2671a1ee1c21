"""Numerical Pauli-equation solver used as an oracle for the closed forms.

Strang splitting: half kinetic step in Fourier space, full pointwise spin-field
step (exact 2x2 Hermitian exponential), half kinetic step. Periodic box.

In the magnet each spin packet picks up momentum m u ~ 1e-25 kg m/s, a carrier
wavelength of a few nanometres, far below any affordable lab-frame grid. By
default each component c is therefore stored in its own co-moving momentum
frame, psi_c = exp(i kappa_c z) phi_c, with d(kappa_c)/dt = F_c / hbar set by
the force the component feels. The grid then only has to resolve the envelope.
In the frame the kinetic operator becomes hbar (q + kappa_c)^2 / 2m and the
potential loses the part hbar kappa_c' z that the frame absorbs; both are
applied exactly. ``frame=False`` runs the same scheme in the lab frame, which
is only usable for toy parameters.

Arrays are laid out as (component, [x,] z).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import analytic
from .core import GridMismatch, GridTooSmall, PhysicalConfig, Position2D, SpinOrientation, Spinor, derive

BOUNDARY_CELLS = 3
BOUNDARY_TOL = 1e-8
SIGNS = np.array([1.0, -1.0])  # sigma_z eigenvalue of each component


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    z_min: float
    z_max: float
    n_z: int
    dt: float
    n_steps: int
    x_min: float | None = None
    x_max: float | None = None
    n_x: int | None = None

    def __post_init__(self):
        if self.n_z < 64 or not _is_pow2(self.n_z):
            raise ValueError("n_z must be a power of two >= 64")
        if not self.z_max > self.z_min:
            raise ValueError("z_max must exceed z_min")
        if not self.dt > 0 or self.n_steps < 1:
            raise ValueError("need dt > 0 and n_steps >= 1")
        if self.n_x is not None:
            if self.x_min is None or self.x_max is None or not self.x_max > self.x_min:
                raise ValueError("x grid needs x_min < x_max")
            if not _is_pow2(self.n_x):
                raise ValueError("n_x must be a power of two")

    @property
    def two_d(self) -> bool:
        return self.n_x is not None

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_z

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def t_total(self) -> float:
        return self.dt * self.n_steps

    def z(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(self.n_z)

    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)

    def coords(self):
        """z (1D) or the (X, Z) mesh (2D)."""
        if not self.two_d:
            return self.z()
        return np.meshgrid(self.x(), self.z(), indexing="ij")

    def cell(self) -> float:
        return self.dz * (self.dx if self.two_d else 1.0)

    def same_space(self, other: "GridSpec") -> bool:
        return (self.z_min, self.z_max, self.n_z, self.x_min, self.x_max, self.n_x) == (
            other.z_min, other.z_max, other.n_z, other.x_min, other.x_max, other.n_x,
        )

    def with_time(self, dt: float, n_steps: int) -> "GridSpec":
        return replace(self, dt=dt, n_steps=n_steps)


def default_grid(cfg: PhysicalConfig, *, half_width: float = 15.0, n_z: int = 4096, n_steps: int = 4000) -> GridSpec:
    """z in [-15 sigma0, 15 sigma0), 4096 points, 4000 steps across the magnet."""
    d = derive(cfg)
    return GridSpec(-half_width * cfg.sigma0, half_width * cfg.sigma0, n_z, d.dt_transit / n_steps, n_steps)


@dataclass(frozen=True)
class FieldSpec:
    """B = (B'0 x, 0, B0 - B'0 z) times the config field sign; ``active=False`` is free flight.
    The x component only exists on 2D grids and can be switched off."""

    B0: float
    Bprime0: float
    active: bool = True
    include_bx: bool = True

    @classmethod
    def from_config(cls, cfg: PhysicalConfig, active: bool = True, include_bx: bool = True) -> "FieldSpec":
        return cls(cfg.B0, cfg.Bprime0, active, include_bx)


@dataclass
class GridSpinor:
    """Spinor samples on a grid. ``values`` holds the frame envelopes phi_c;
    the lab-frame wavefunction is phi_c * exp(i frame_k[c] z)."""

    values: np.ndarray
    grid: GridSpec
    t: float = 0.0
    frame_k: np.ndarray = field(default_factory=lambda: np.zeros(2))
    max_norm_drift: float = 0.0

    @classmethod
    def from_function(cls, fn: Callable, grid: GridSpec, t: float = 0.0) -> "GridSpinor":
        """Sample ``fn(coords) -> Spinor`` (coords as from :meth:`GridSpec.coords`)."""
        s = fn(grid.coords())
        vals = np.array([np.asarray(s.plus, complex), np.asarray(s.minus, complex)])
        return cls(vals, grid, t)

    def lab_values(self) -> np.ndarray:
        if not np.any(self.frame_k):
            return self.values.copy()
        z = self.grid.z()
        ph = np.exp(1j * np.multiply.outer(self.frame_k, z))
        if self.grid.two_d:
            ph = ph[:, None, :]
        return self.values * ph

    def norm(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell())

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=0)


def z_profile(evaluator: Callable, sigma0: float) -> Callable:
    """Turn a 2D evaluator ``(Position2D) -> Spinor`` into a normalized z-only one.

    The closed forms carry a free Gaussian in x, (2 pi sigma0^2)^(-1/4) exp(-x^2/4 sigma0^2);
    sampling at x=0 and dividing that factor out leaves the z-profile.
    """
    scale = (2 * math.pi * sigma0**2) ** 0.25

    def fn(z):
        s = evaluator(Position2D(np.zeros_like(z), z))
        return Spinor(s.plus * scale, s.minus * scale)

    return fn


# ---------------------------------------------------------------------------
# stepping


def _wavenumbers(n: int, d: float) -> np.ndarray:
    return 2 * math.pi * np.fft.fftfreq(n, d)


def _expm_hermitian(a, d, b, tau):
    """exp(-i tau M) for M = [[a, b], [conj(b), d]] with a, d real arrays.

    Returns the four entries (u11, u12, u21, u22).
    """
    m0 = 0.5 * (a + d)
    nz = 0.5 * (a - d)
    bx, by = np.real(b), -np.imag(b)
    nn = np.sqrt(nz**2 + bx**2 + by**2)
    c = np.cos(nn * tau)
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc = np.where(nn > 0, np.sin(nn * tau) / np.where(nn > 0, nn, 1.0), tau)
    g = np.exp(-1j * m0 * tau)
    u11 = g * (c - 1j * sinc * nz)
    u22 = g * (c + 1j * sinc * nz)
    u12 = g * (-1j * sinc * (bx - 1j * by))
    u21 = g * (-1j * sinc * (bx + 1j * by))
    return u11, u12, u21, u22


class _Stepper:
    def __init__(self, grid: GridSpec, field_: FieldSpec, cfg: PhysicalConfig, frame: bool):
        self.grid, self.field, self.cfg, self.frame = grid, field_, cfg, frame
        self.qz = _wavenumbers(grid.n_z, grid.dz)
        self.z = grid.z()
        if grid.two_d:
            qx = _wavenumbers(grid.n_x, grid.dx)
            self.qx2 = (qx**2)[:, None]
            self.qz = self.qz[None, :]
            self.X, self.Z = grid.coords()
        else:
            self.qx2 = 0.0
            self.X, self.Z = None, self.z
        mu = cfg.field_sign * cfg.mu
        if field_.active:
            self.bz = mu * (field_.B0 - field_.Bprime0 * self.Z)  # energy scale of sigma_z
            force = mu * field_.Bprime0  # on the + component
            self.bx = mu * field_.Bprime0 * self.X if (grid.two_d and field_.include_bx) else None
        else:
            self.bz = np.zeros_like(self.Z, dtype=float)
            force = 0.0
            self.bx = None
        self.kdot = SIGNS * force / cfg.hbar if frame else np.zeros(2)

    def kinetic(self, vals, k_start, tau):
        """Exact kinetic propagation over tau while kappa grows linearly."""
        h, m = self.cfg.hbar, self.cfg.mass
        out = np.empty_like(vals)
        for c in range(2):
            km = k_start[c] + 0.5 * self.kdot[c] * tau
            phase = h / (2 * m) * (tau * ((self.qz + km) ** 2 + self.qx2) + self.kdot[c] ** 2 * tau**3 / 12)
            out[c] = np.fft.ifftn(np.exp(-1j * phase) * np.fft.fftn(vals[c]))
        return out

    def potential(self, vals, k_mid, tau):
        h = self.cfg.hbar
        # diagonal energies minus what the frame has absorbed
        a = self.bz + h * self.kdot[0] * self.Z
        d = -self.bz + h * self.kdot[1] * self.Z
        if self.bx is None:
            return np.array([np.exp(-1j * a * tau / h) * vals[0], np.exp(-1j * d * tau / h) * vals[1]])
        b = self.bx * np.exp(1j * (k_mid[1] - k_mid[0]) * self.Z)
        u11, u12, u21, u22 = _expm_hermitian(a, d, b, tau / h)
        return np.array([u11 * vals[0] + u12 * vals[1], u21 * vals[0] + u22 * vals[1]])


def boundary_probability(sp: GridSpinor) -> float:
    dens = sp.density()
    n = BOUNDARY_CELLS
    mask = np.zeros(dens.shape, bool)
    mask[..., :n] = True
    mask[..., -n:] = True
    if sp.grid.two_d:
        mask[:n, :] = True
        mask[-n:, :] = True
    return float(dens[mask].sum() / dens.sum())


def _guard(sp: GridSpinor):
    p = boundary_probability(sp)
    if p > BOUNDARY_TOL:
        raise GridTooSmall(f"probability {p:.3g} within {BOUNDARY_CELLS} cells of the boundary at t={sp.t:.6g} s")


def evolve(
    initial: GridSpinor,
    field_: FieldSpec,
    t_total: float,
    spec: GridSpec,
    cfg: PhysicalConfig,
    *,
    frame: bool = True,
    check_every: int = 100,
) -> GridSpinor:
    """Advance ``initial`` by ``t_total`` = spec.dt * spec.n_steps."""
    if not spec.same_space(initial.grid):
        raise GridMismatch("the run grid and the initial spinor use different spatial grids")
    if not math.isclose(t_total, spec.dt * spec.n_steps, rel_tol=1e-12):
        raise ValueError("t_total must equal dt * n_steps")
    norm0 = initial.norm()
    if abs(norm0 - 1) > 1e-6:
        raise ValueError(f"initial spinor is not normalized (norm {norm0:.9g})")
    vals = initial.values.astype(complex, copy=True)
    k0 = np.asarray(initial.frame_k, float).copy()
    if not frame and np.any(k0):
        vals = initial.lab_values()
        k0 = np.zeros(2)
    st = _Stepper(spec, field_, cfg, frame)
    dt = spec.dt
    drift = initial.max_norm_drift
    cur = GridSpinor(vals, spec, initial.t, k0.copy(), drift)
    _guard(cur)
    for n in range(spec.n_steps):
        # kappa from the elapsed time, not by accumulation
        k_n = k0 + st.kdot * (n * dt)
        k_half = k0 + st.kdot * ((n + 0.5) * dt)
        vals = st.kinetic(vals, k_n, 0.5 * dt)
        vals = st.potential(vals, k_half, dt)
        vals = st.kinetic(vals, k_half, 0.5 * dt)
        if (n + 1) % check_every == 0 or n + 1 == spec.n_steps:
            cur = GridSpinor(vals, spec, initial.t + (n + 1) * dt, k0 + st.kdot * ((n + 1) * dt), drift)
            drift = max(drift, abs(cur.norm() / norm0 - 1))
            _guard(cur)
    return GridSpinor(vals, spec, initial.t + t_total, k0 + st.kdot * t_total, drift)


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class ErrorReport:
    l2: float  # ||numeric - exact|| / ||exact||
    linf: float  # max |numeric - exact| / max |exact|
    l2_plus: float  # per component, same normalization as l2
    l2_minus: float


def compare(numeric: GridSpinor, analytic_evaluator) -> ErrorReport:
    """Error norms of ``numeric`` (lab frame) against a reference.

    The reference is a GridSpinor on the same grid and time, or a callable
    taking the grid coordinates and returning a Spinor.
    """
    if isinstance(analytic_evaluator, GridSpinor):
        ref_sp = analytic_evaluator
        if not ref_sp.grid.same_space(numeric.grid) or not math.isclose(ref_sp.t, numeric.t, rel_tol=1e-12, abs_tol=1e-300):
            raise GridMismatch("reference lives on another grid or time")
        ref = ref_sp.lab_values()
    else:
        s = analytic_evaluator(numeric.grid.coords())
        ref = np.array([np.broadcast_to(np.asarray(s.plus, complex), numeric.values.shape[1:]),
                        np.broadcast_to(np.asarray(s.minus, complex), numeric.values.shape[1:])])
        if ref.shape != numeric.values.shape:
            raise GridMismatch(f"reference shape {ref.shape} != grid shape {numeric.values.shape}")
    num = numeric.lab_values()
    diff2 = np.abs(num - ref) ** 2
    ref_norm = math.sqrt(float(np.sum(np.abs(ref) ** 2)))
    if ref_norm == 0:
        raise ValueError("reference is identically zero")
    per = np.sqrt(diff2.reshape(2, -1).sum(axis=1)) / ref_norm
    return ErrorReport(
        l2=math.sqrt(float(diff2.sum())) / ref_norm,
        linf=float(np.sqrt(diff2.max()) / np.abs(ref).max()),
        l2_plus=float(per[0]),
        l2_minus=float(per[1]),
    )


# ---------------------------------------------------------------------------
# validation suite


@dataclass(frozen=True)
class CaseResult:
    case: str
    l2: float
    linf: float
    norm_drift: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.l2 < self.tolerance and self.norm_drift < 1e-8


VALIDATION_THETAS = (0.0, math.pi / 3, math.pi / 2, 2 * math.pi / 3)
L2_TOLERANCE = 1e-3


def _theta_label(theta0: float) -> str:
    for num, den in ((0, 1), (1, 3), (1, 2), (2, 3), (1, 1), (1, 6), (1, 4)):
        if math.isclose(theta0, math.pi * num / den, abs_tol=1e-12):
            return "0" if num == 0 else ("pi" if den == 1 else f"{'' if num == 1 else num}pi/{den}")
    return f"{theta0:.6g}"


def run_single(theta0: float, cfg: PhysicalConfig, *, n_z: int = 4096, field_steps: int = 4000, free_steps: int = 2000, phi0: float = 0.0):
    """In-field run to magnet exit, then free flight to t_D; both compared with
    the closed forms. Returns (field case, chained free case, free case started
    from the closed-form exit state)."""
    d = derive(cfg)
    spin = SpinOrientation(theta0, phi0)
    g_field = default_grid(cfg, n_z=n_z, n_steps=field_steps)
    g_free = g_field.with_time(d.t_decoherence / free_steps, free_steps)
    label = _theta_label(theta0)
    psi0 = GridSpinor.from_function(z_profile(lambda r: analytic.spinor_in_field(r, 0.0, spin, cfg), cfg.sigma0), g_field)
    at_exit = evolve(psi0, FieldSpec.from_config(cfg), d.dt_transit, g_field, cfg)
    e1 = compare(at_exit, z_profile(lambda r: analytic.spinor_in_field(r, d.dt_transit, spin, cfg), cfg.sigma0))
    after = evolve(at_exit, FieldSpec.from_config(cfg, active=False), d.t_decoherence, g_free, cfg)
    ref_td = z_profile(lambda r: analytic.spinor_after_field(r, d.t_decoherence, spin, cfg), cfg.sigma0)
    e2 = compare(after, ref_td)
    exit_state = GridSpinor.from_function(z_profile(lambda r: analytic.spinor_after_field(r, 0.0, spin, cfg), cfg.sigma0), g_free)
    exit_state = _to_frame(exit_state, SIGNS * cfg.field_sign * cfg.mass * abs(d.u) / cfg.hbar)
    free_only = evolve(exit_state, FieldSpec.from_config(cfg, active=False), d.t_decoherence, g_free, cfg)
    e3 = compare(free_only, ref_td)
    return (
        CaseResult(f"in-field theta0={label}", e1.l2, e1.linf, at_exit.max_norm_drift, L2_TOLERANCE),
        CaseResult(f"field+free theta0={label}", e2.l2, e2.linf, after.max_norm_drift, L2_TOLERANCE),
        CaseResult(f"free from exit theta0={label}", e3.l2, e3.linf, free_only.max_norm_drift, L2_TOLERANCE),
    )


def _to_frame(sp: GridSpinor, k: np.ndarray) -> GridSpinor:
    """Re-express a lab-frame spinor in frames with carrier wavenumbers ``k``."""
    z = sp.grid.z()
    lab = sp.lab_values()
    ph = np.exp(-1j * np.multiply.outer(k, z))
    if sp.grid.two_d:
        ph = ph[:, None, :]
    return GridSpinor(lab * ph, sp.grid, sp.t, np.asarray(k, float).copy(), sp.max_norm_drift)


def run_validation(cfg: PhysicalConfig, thetas=VALIDATION_THETAS, **kw) -> list[CaseResult]:
    out = []
    for th in thetas:
        out.extend(run_single(th, cfg, **kw))
    return out


# ---------------------------------------------------------------------------
# reduced two-body check: A (z_A) in its magnet, B (z_B) free, singlet spin state


@dataclass
class TwoBodyResult:
    zA: np.ndarray
    zB: np.ndarray
    density: np.ndarray  # rho(zA, zB) at t after A's exit
    t_after_exit: float
    norm_drift: float


def two_body_step1(cfg: PhysicalConfig, *, t_after_exit: float | None = None, nA: int = 512, nB: int = 128,
                   halfA: float = 15.0, halfB: float = 8.0, field_steps: int = 100, free_steps: int = 20) -> TwoBodyResult:
    """Evolve f(zA) f(zB)(|+-> - |-+>)/sqrt 2 with A crossing its magnet.

    Components (++, +-, -+, --) on a (zA, zB) grid; each component has its own
    co-moving frame along zA set by A's spin.
    """
    d = derive(cfg)
    t_free = d.t_decoherence if t_after_exit is None else float(t_after_exit)
    s0 = cfg.sigma0
    dzA, dzB = 2 * halfA * s0 / nA, 2 * halfB * s0 / nB
    zA = -halfA * s0 + dzA * np.arange(nA)
    zB = -halfB * s0 + dzB * np.arange(nB)
    ZA, ZB = np.meshgrid(zA, zB, indexing="ij")
    prof = lambda z: (2 * math.pi * s0**2) ** -0.25 * np.exp(-(z**2) / (4 * s0**2))
    ff = prof(ZA) * prof(ZB) / math.sqrt(2)
    vals = np.array([0 * ff, ff, -ff, 0 * ff]).astype(complex)
    sA = np.array([1.0, 1.0, -1.0, -1.0])  # A's sigma_z per component
    qA = _wavenumbers(nA, dzA)[:, None]
    qB = _wavenumbers(nB, dzB)[None, :]
    h, m = cfg.hbar, cfg.mass
    mu = cfg.field_sign * cfg.mu
    cell = dzA * dzB
    norm0 = float(np.sum(np.abs(vals) ** 2) * cell)
    drift = 0.0

    def run(vals, k0, kdot, dt, n, active):
        nonlocal drift
        for j in range(n):
            for half in (0, 1):
                ks = k0 + kdot * ((j + 0.5 * half) * dt)
                tau = 0.5 * dt
                for c in range(4):
                    km = ks[c] + 0.5 * kdot[c] * tau
                    ph = h / (2 * m) * (tau * ((qA + km) ** 2 + qB**2) + kdot[c] ** 2 * tau**3 / 12)
                    vals[c] = np.fft.ifft2(np.exp(-1j * ph) * np.fft.fft2(vals[c]))
                if half == 0 and active:
                    for c in range(4):
                        # A's Zeeman energy minus the part absorbed by the frame: uniform
                        e = sA[c] * mu * (cfg.B0 - cfg.Bprime0 * ZA) + h * kdot[c] * ZA
                        vals[c] = np.exp(-1j * e * dt / h) * vals[c]
            if (j + 1) % 10 == 0 or j + 1 == n:
                drift = max(drift, abs(float(np.sum(np.abs(vals) ** 2) * cell) / norm0 - 1))
        return vals, k0 + kdot * (n * dt)

    kdot = sA * mu * cfg.Bprime0 / h
    vals, k = run(vals, np.zeros(4), kdot, d.dt_transit / field_steps, field_steps, True)
    vals, k = run(vals, k, np.zeros(4), t_free / free_steps, free_steps, False)
    dens = np.sum(np.abs(vals) ** 2, axis=0)
    edge = dens[:BOUNDARY_CELLS].sum() + dens[-BOUNDARY_CELLS:].sum() + dens[:, :BOUNDARY_CELLS].sum() + dens[:, -BOUNDARY_CELLS:].sum()
    if edge / dens.sum() > BOUNDARY_TOL:
        raise GridTooSmall("two-body packet reaches the boundary")
    return TwoBodyResult(zA, zB, dens, t_free, drift)
