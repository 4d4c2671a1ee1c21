"""Two-step EPR-B experiment with the singlet replaced by two one-body spinors.

Step 1: particle A crosses its magnet (along z) exactly like a free particle in
a Stern-Gerlach apparatus, while B sits still and its spin is slaved to A's,
theta_B = pi - theta_A and phi_B = phi_A - pi, at every integrator step.
Step 2: once A is decided at t1 = dt_transit + t_D, B is in a pole state
(|-> if A gave +, |+> if A gave -) and crosses a magnet rotated by delta about
y; that is again a one-body Stern-Gerlach run in the primed frame.

The configuration-space singlet formulas at the end are reference values for
validation only.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytic, guidance, streams
from .core import IntegrationFailure, PhysicalConfig, PilotSpinError, Position2D, SpinOrientation, Spinor, derive
from .guidance import Sign

BLOCK_SIZE = 4096
CI_Z = 3.0
OUTCOME_LABELS = ("++", "+-", "-+", "--")
CHSH_SETTINGS = ((0.0, math.pi / 4), (0.0, 3 * math.pi / 4), (math.pi / 2, math.pi / 4), (math.pi / 2, 3 * math.pi / 4))
CHSH_SIGNS = (1, -1, 1, 1)
CHSH_EXPERIMENT_BASE = 1000


@dataclass(frozen=True)
class PairInitial:
    pair_id: int
    thetaA0: float
    phiA0: float
    z0A: float
    x0A: float
    z0B: float
    x0B: float

    @property
    def thetaB0(self) -> float:
        return math.pi - self.thetaA0

    @property
    def phiB0(self) -> float:
        return (self.phiA0 - math.pi) % (2 * math.pi)


@dataclass(frozen=True)
class PairOutcome:
    a: Sign
    b: Sign
    delta: float
    t_a_decided: float  # from A's magnet entry
    t_b_decided: float


@dataclass
class PairRecord:
    initial: PairInitial
    outcome: PairOutcome
    a_samples: list = field(default_factory=list)  # (t, zA, thetaA, thetaB, phiB, zB)
    b_samples: list = field(default_factory=list)  # (t, z'B, theta'B), t from A's entry


# ---------------------------------------------------------------------------
# closed forms


def singlet_probabilities(delta: float) -> np.ndarray:
    """Joint outcome probabilities in the order (++, +-, -+, --)."""
    s2 = 0.5 * math.sin(delta / 2) ** 2
    c2 = 0.5 * math.cos(delta / 2) ** 2
    return np.array([s2, c2, c2, s2])


def correlation(delta: float) -> float:
    return -math.cos(delta)


def rotated_basis_coefficients(delta: float) -> np.ndarray:
    """Rows give |+_B> and |-_B> on the (|+'_B>, |-'_B>) basis of the rotated magnet."""
    c, s = math.cos(delta / 2), math.sin(delta / 2)
    return np.array([[c, s], [-s, c]])


def _polar_spinor(theta, phi):
    # (cos(t/2), sin(t/2) e^{i p}), the convention of the pair spinors
    return np.cos(0.5 * np.asarray(theta)) + 0j, np.sin(0.5 * np.asarray(theta)) * np.exp(1j * np.asarray(phi))


def antisymmetrized_initial(pair: PairInitial, rA, rB, sigma0: float = 1e-4) -> np.ndarray:
    """Psi_A(r_A) Psi_B(r_B) - Psi_A(r_B; B angles) Psi_B(r_A; A angles) on
    (++, +-, -+, --)."""
    fa = analytic.gaussian(rA, sigma0)
    fb = analytic.gaussian(rB, sigma0)
    a = _polar_spinor(pair.thetaA0, pair.phiA0)
    b = _polar_spinor(pair.thetaB0, pair.phiA0 - math.pi)
    direct = np.array([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
    swapped = np.array([b[0] * a[0], b[0] * a[1], b[1] * a[0], b[1] * a[1]])
    ff = np.asarray(fa * fb)
    return (direct - swapped).reshape((4,) + (1,) * ff.ndim) * ff


def singlet_reference(pair: PairInitial, rA, rB, sigma0: float) -> np.ndarray:
    """-e^{i phi_A} f(r_A) f(r_B) (0, 1, -1, 0)."""
    ff = analytic.gaussian(rA, sigma0) * analytic.gaussian(rB, sigma0)
    pref = -np.exp(1j * pair.phiA0) * ff
    return np.array([0 * pref, pref, -pref, 0 * pref])


def psiA_after_step1(rA, t: float, pair: PairInitial, cfg: PhysicalConfig) -> Spinor:
    """A's spinor t after its magnet: cos(t/2) f+ |+> + sin(t/2) e^{i phi} f- |->."""
    d = derive(cfg)
    up, down = _polar_spinor(pair.thetaA0, pair.phiA0)
    return Spinor(up * analytic.f_envelope(rA, t, +1, cfg, d), down * analytic.f_envelope(rA, t, -1, cfg, d))


def psiA_after_step1_gradient(rA, t: float, pair: PairInitial, cfg: PhysicalConfig):
    d = derive(cfg)
    psi = psiA_after_step1(rA, t, pair, cfg)
    c = d.z_delta + d.u * t
    k = cfg.mass * d.u / cfg.hbar
    return analytic._gradient(rA, psi, (c, -c), (k, -k), cfg.sigma0)


def slave_B_spin(thetaA, phiA) -> SpinOrientation:
    """B's spin direction opposite to A's."""
    return SpinOrientation(math.pi - np.asarray(thetaA), np.asarray(phiA) - math.pi)


def psiB_during_step1(rB, t: float, thetaB, phiB, sigma0: float) -> Spinor:
    """B's spinor while A is measured; the envelope is the stationary f(r_B).

    ``t`` is accepted for symmetry with the other evaluators; nothing in B's
    spinor depends on it except through the slaved angles.
    """
    f = analytic.gaussian(rB, sigma0)
    up, down = _polar_spinor(thetaB, phiB)
    return Spinor(up * f, down * f)


def psiB_during_step1_gradient(rB, t: float, thetaB, phiB, sigma0: float):
    return _stationary_gradient(psiB_during_step1(rB, t, thetaB, phiB, sigma0), rB, sigma0)


def _stationary_gradient(psi: Spinor, rB, sigma0: float):
    # grad f = -r f / (2 sigma0^2) for the real Gaussian envelope
    x, z = np.asarray(rB[0], float), np.asarray(rB[1], float)
    gx = -x / (2 * sigma0**2)
    gz = -z / (2 * sigma0**2)
    return Spinor(psi.plus * gx, psi.minus * gx), Spinor(psi.plus * gz, psi.minus * gz)


def psiB_after_decision(rB, a: int, phiB: float, sigma0: float) -> Spinor:
    """B's pole state once A is decided: f e^{i phi_B} |-> for a=+, f |+> for a=-."""
    f = analytic.gaussian(rB, sigma0)
    if a == Sign.PLUS:
        return Spinor(0 * f + 0j, np.exp(1j * phiB) * f)
    if a == Sign.MINUS:
        return Spinor(f + 0j, 0 * f + 0j)
    raise ValueError("A's outcome is undecided")


def rotate_to_primed(x, z, delta):
    """Coordinates in the frame of a magnet turned by delta about y.

    Inverts x = x' cos d + z' sin d, z = -x' sin d + z' cos d.
    """
    c, s = math.cos(delta), math.sin(delta)
    return x * c - z * s, x * s + z * c


def primed_polar_angle(a, delta):
    """Angle between B's pole spin and the rotated magnet axis.

    a=+ leaves B along -z, at pi - delta from z'; a=- leaves it along +z, at delta.
    """
    d = math.acos(max(-1.0, min(1.0, math.cos(delta))))  # cos only depends on |delta| mod 2pi
    if d == math.pi / 2 or abs(math.cos(delta)) < 4 * np.finfo(float).eps:
        d = math.pi / 2
    return np.where(np.asarray(a) > 0, math.pi - d, d)


def primed_azimuth(a, delta):
    """Azimuth of B's pole spin in the primed frame, in the (sin t sin p, sin t cos p, cos t) layout."""
    nz = -np.sign(np.asarray(a, float))  # B's spin along z
    nx_primed = -nz * math.sin(delta)  # its component on x' = (cos d, -sin d) in (x, z)
    return np.mod(np.arctan2(nx_primed, 0.0), 2 * math.pi)


# ---------------------------------------------------------------------------
# sampling and simulation


def sample_pairs(ids, seed: int, sigma0: float, experiment: int = 0) -> list[PairInitial]:
    ids = list(ids)
    normals, uniforms = streams.standard_draws(seed, streams.EPR, experiment, ids, 4, 2)
    out = []
    for row, pid in enumerate(ids):
        n, u = normals[row], uniforms[row]
        out.append(
            PairInitial(
                pair_id=int(pid),
                thetaA0=math.pi * float(u[0]),
                phiA0=2 * math.pi * float(u[1]),
                z0A=sigma0 * float(n[0]),
                z0B=sigma0 * float(n[1]),
                x0A=sigma0 * float(n[2]),
                x0B=sigma0 * float(n[3]),
            )
        )
    return out


def sample_pair(pair_id: int, seed: int, sigma0: float, experiment: int = 0) -> PairInitial:
    """Draw one pair from its own stream."""
    return sample_pairs([pair_id], seed, sigma0, experiment)[0]


@dataclass
class PairBatch:
    pairs: list[PairInitial]
    a: np.ndarray
    b: np.ndarray
    delta: float
    t_a_decided: float
    t_b_decided: float
    max_opposition_error: float  # max |theta_A + theta_B - pi| over every step
    max_phi_opposition_error: float
    max_b_displacement: float  # max |r_B(t) - r_B(0)| during step 1, m
    max_b_speed: float
    max_spin_norm_error: float  # A, B and B' (step 2), relative to hbar/2
    records: list[PairRecord] | None = None

    def outcomes(self) -> list[PairOutcome]:
        return [
            PairOutcome(Sign(int(a)), Sign(int(b)), self.delta, self.t_a_decided, self.t_b_decided)
            for a, b in zip(self.a, self.b)
        ]


def _step1_block(pairs: list[PairInitial], cfg: PhysicalConfig, record_every: int):
    d = derive(cfg)
    t1 = d.dt_transit + d.t_decoherence
    thetaA0 = np.array([p.thetaA0 for p in pairs])
    phiA0 = np.array([p.phiA0 for p in pairs])
    z0A = np.array([p.z0A for p in pairs])
    x0A = np.array([p.x0A for p in pairs])
    zB = np.array([p.z0B for p in pairs])
    xB = np.array([p.x0B for p in pairs])
    z0B, x0B = zB.copy(), xB.copy()
    half_hbar = 0.5 * cfg.hbar
    diag = {"opp": 0.0, "phi": 0.0, "disp": 0.0, "speed": 0.0, "spin": 0.0}
    rec = [] if record_every else None
    state = {"t": 0.0, "k": 0}

    cache = {}

    def observer(t, zA, thetaA, phase):
        nonlocal zB, xB
        spinB = slave_B_spin(thetaA, phiA0)
        thB, phB = spinB.theta, spinB.phi
        diag["opp"] = max(diag["opp"], float(np.max(np.abs(thetaA + thB - math.pi))))
        if "phi" not in cache or not np.array_equal(cache["phi"], phB):
            # phi_B only changes if phi_A does; the trig below is the costly part
            dphi = np.mod(phB - phiA0 + 2 * math.pi, 2 * math.pi) - math.pi
            diag["phi"] = max(diag["phi"], float(np.max(np.abs(dphi))))
            cache.update(phi=phB, eph=np.exp(1j * phB), sin=np.sin(phB), cos=np.cos(phB))
        rB = (xB, zB)
        f = analytic.gaussian(rB, cfg.sigma0)
        half = 0.5 * thB
        psi = Spinor(np.cos(half) * f + 0j, np.sin(half) * cache["eph"] * f)
        grad = _stationary_gradient(psi, rB, cfg.sigma0)
        v = guidance.velocity_from_spinor(psi, grad, cfg.mass, cfg.hbar)
        dt = t - state["t"]
        xB = xB + v[0] * dt
        zB = zB + v[1] * dt
        diag["speed"] = max(diag["speed"], float(np.max(np.abs(v))))
        diag["disp"] = max(diag["disp"], float(np.max(np.hypot(xB - x0B, zB - z0B))))
        if state["k"] % guidance.SPIN_CHECK_EVERY == 0 or t == t1:
            s_psi = guidance.spin_vector(psi, cfg.hbar).magnitude() / half_hbar
            st = np.sin(thB)
            s_ang = np.sqrt((st * cache["sin"]) ** 2 + (st * cache["cos"]) ** 2 + np.cos(thB) ** 2)
            diag["spin"] = max(diag["spin"], float(np.max(np.abs(s_psi - 1))), float(np.max(np.abs(s_ang - 1))))
        if rec is not None and (state["k"] % record_every == 0 or t == t1):
            rec.append((t, zA.copy(), thetaA.copy(), np.asarray(thB).copy(), np.asarray(phB).copy(), zB.copy()))
        state["t"] = t
        state["k"] += 1

    res = guidance.propagate(z0A, thetaA0, cfg, t1, x0=x0A, phi0=phiA0, observer=observer)
    diag["spin"] = max(diag["spin"], float(res.max_spin_norm_error.max()))
    return res.outcome, xB, zB, diag, rec


def _step2_block(a, xB, zB, delta, cfg: PhysicalConfig, record_every: int):
    d = derive(cfg)
    t_dec = d.dt_transit + d.t_decoherence
    xp, zp = rotate_to_primed(xB, zB, delta)
    theta_p = primed_polar_angle(a, delta)
    phi_p = primed_azimuth(a, delta) * np.ones_like(zp)
    rec = [] if record_every else None
    k = [0]

    def observer(t, z, theta, phase):
        if rec is not None and (k[0] % record_every == 0 or t == t_dec):
            rec.append((t, z.copy(), theta.copy()))
        k[0] += 1

    res = guidance.propagate(zp, theta_p, cfg, t_dec, x0=xp, phi0=phi_p, observer=observer if rec is not None else None)
    return res.outcome, float(res.max_spin_norm_error.max()), rec


def _run_block(args):
    seed, experiment, delta, cfg, start, stop, record_every = args
    pairs = sample_pairs(range(start, stop), seed, cfg.sigma0, experiment)
    try:
        a, xB, zB, diag, rec1 = _step1_block(pairs, cfg, record_every)
        if np.any(a == 0):
            raise IntegrationFailure("particle A undecided", start + int(np.argmax(a == 0)))
        b, spin2, rec2 = _step2_block(a, xB, zB, delta, cfg, record_every)
    except PilotSpinError as exc:
        if isinstance(exc, IntegrationFailure):
            raise
        raise IntegrationFailure(str(exc), start) from exc
    diag["spin"] = max(diag["spin"], spin2)
    return pairs, a, b, diag, rec1, rec2


def _blocks(n):
    return [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]


def run_pairs(n_pairs: int, delta: float, seed: int, cfg: PhysicalConfig, *, experiment: int = 0, jobs: int = 1, record_every: int = 0) -> PairBatch:
    """Simulate pairs 0..n_pairs-1 of one experiment at analyzer angle ``delta``."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    d = derive(cfg)
    t1 = d.dt_transit + d.t_decoherence
    tasks = [(seed, experiment, float(delta), cfg, a, b, record_every) for a, b in _blocks(n_pairs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_block, tasks))
    else:
        parts = [_run_block(t) for t in tasks]
    pairs = [p for part in parts for p in part[0]]
    a = np.concatenate([p[1] for p in parts])
    b = np.concatenate([p[2] for p in parts])
    diags = [p[3] for p in parts]
    batch = PairBatch(
        pairs=pairs,
        a=a,
        b=b,
        delta=float(delta),
        t_a_decided=t1,
        t_b_decided=2 * t1,
        max_opposition_error=max(x["opp"] for x in diags),
        max_phi_opposition_error=max(x["phi"] for x in diags),
        max_b_displacement=max(x["disp"] for x in diags),
        max_b_speed=max(x["speed"] for x in diags),
        max_spin_norm_error=max(x["spin"] for x in diags),
    )
    if record_every:
        batch.records = _records(parts, batch, t1)
    return batch


def _records(parts, batch: PairBatch, t1: float):
    out = []
    outcomes = batch.outcomes()
    i = 0
    for pairs, _a, _b, _diag, rec1, rec2 in parts:
        for j, pair in enumerate(pairs):
            a_s = [(t, float(zA[j]), float(thA[j]), float(thB[j]), float(phB[j]), float(zB[j])) for t, zA, thA, thB, phB, zB in rec1]
            b_s = [(t1 + t, float(z[j]), float(th[j])) for t, z, th in rec2]
            out.append(PairRecord(pair, outcomes[i], a_s, b_s))
            i += 1
    return out


def run_pair(pair: PairInitial, delta: float, cfg: PhysicalConfig) -> PairOutcome:
    """Both steps for one pair."""
    d = derive(cfg)
    t1 = d.dt_transit + d.t_decoherence
    try:
        a, xB, zB, _diag, _ = _step1_block([pair], cfg, 0)
        if a[0] == 0:
            raise IntegrationFailure("particle A undecided", pair.pair_id)
        b, _, _ = _step2_block(a, xB, zB, delta, cfg, 0)
    except IntegrationFailure:
        raise
    except PilotSpinError as exc:
        raise IntegrationFailure(str(exc), pair.pair_id) from exc
    return PairOutcome(Sign(int(a[0])), Sign(int(b[0])), float(delta), t1, 2 * t1)


# ---------------------------------------------------------------------------
# statistics


@dataclass
class CorrelationReport:
    delta: float
    n_pairs: int
    counts: dict  # label -> count, labels in OUTCOME_LABELS
    p_hat: dict
    p_ci: dict
    e_delta: float
    e_sigma: float
    a_plus_rate: float
    b_plus_rate: float

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "n_pairs": self.n_pairs,
            "counts": dict(self.counts),
            "p_hat": dict(self.p_hat),
            "p_ci": {k: list(v) for k, v in self.p_ci.items()},
            "e_delta": self.e_delta,
            "e_sigma": self.e_sigma,
            "e_theory": correlation(self.delta),
            "p_theory": dict(zip(OUTCOME_LABELS, (float(p) for p in singlet_probabilities(self.delta)))),
            "a_plus_rate": self.a_plus_rate,
            "b_plus_rate": self.b_plus_rate,
        }


def _wilson(k, n, z=CI_Z):
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, c - h), min(1.0, c + h))


def report_from_outcomes(a, b, delta: float) -> CorrelationReport:
    a, b = np.asarray(a), np.asarray(b)
    n = len(a)
    counts = {
        "++": int(np.sum((a == 1) & (b == 1))),
        "+-": int(np.sum((a == 1) & (b == -1))),
        "-+": int(np.sum((a == -1) & (b == 1))),
        "--": int(np.sum((a == -1) & (b == -1))),
    }
    p = {k: v / n for k, v in counts.items()}
    e = p["++"] + p["--"] - p["+-"] - p["-+"]
    return CorrelationReport(
        delta=float(delta),
        n_pairs=n,
        counts=counts,
        p_hat=p,
        p_ci={k: _wilson(v, n) for k, v in counts.items()},
        e_delta=e,
        e_sigma=math.sqrt(max(0.0, 1 - e * e) / n),
        a_plus_rate=float(np.mean(a == 1)),
        b_plus_rate=float(np.mean(b == 1)),
    )


def correlation_sweep(deltas, n_pairs: int, seed: int, cfg: PhysicalConfig, *, jobs: int = 1, batches: list | None = None) -> list[CorrelationReport]:
    """One independent experiment per angle (experiment index = position in ``deltas``)."""
    out = []
    for k, delta in enumerate(deltas):
        batch = run_pairs(n_pairs, delta, seed, cfg, experiment=k, jobs=jobs)
        if batches is not None:
            batches.append(batch)
        out.append(report_from_outcomes(batch.a, batch.b, delta))
    return out


@dataclass
class ChshResult:
    s: float
    sigma: float
    reports: list[CorrelationReport]


def chsh(n_pairs: int, seed: int, cfg: PhysicalConfig, *, jobs: int = 1, batches: list | None = None) -> ChshResult:
    """S = E(a,b) - E(a,b') + E(a',b) + E(a',b') over four independent runs,
    analyzers a=0, a'=pi/2, b=pi/4, b'=3pi/4; ideal value -2 sqrt 2."""
    reports = []
    for i, (alpha, beta) in enumerate(CHSH_SETTINGS):
        delta = beta - alpha
        batch = run_pairs(n_pairs, delta, seed, cfg, experiment=CHSH_EXPERIMENT_BASE + i, jobs=jobs)
        if batches is not None:
            batches.append(batch)
        reports.append(report_from_outcomes(batch.a, batch.b, delta))
    s = sum(sign * r.e_delta for sign, r in zip(CHSH_SIGNS, reports))
    sigma = math.sqrt(sum(r.e_sigma**2 for r in reports))
    return ChshResult(s, sigma, reports)


# ---------------------------------------------------------------------------
# configuration-space reference wavefunctions


def configspace_singlet(rA, rB, t_abs: float, cfg: PhysicalConfig) -> np.ndarray:
    """Two-body singlet with A in its magnet, on (++, +-, -+, --).

    ``t_abs`` counts from A's magnet entry; at 0 this is
    f(r_A) f(r_B) (|+-> - |-+>)/sqrt 2. B's envelope is held stationary.
    """
    d = derive(cfg)
    fb = analytic.gaussian(rB, cfg.sigma0)
    if t_abs <= d.dt_transit:
        fp = analytic.field_envelope(rA, t_abs, +1, cfg)
        fm = analytic.field_envelope(rA, t_abs, -1, cfg)
    else:
        fp = analytic.f_envelope(rA, t_abs - d.dt_transit, +1, cfg, d)
        fm = analytic.f_envelope(rA, t_abs - d.dt_transit, -1, cfg, d)
    zero = 0 * fp * fb
    r2 = 1 / math.sqrt(2)
    return np.array([zero, r2 * fb * fp, -r2 * fb * fm, zero])


def configspace_step1(rA, rB, t: float, cfg: PhysicalConfig) -> np.ndarray:
    """Singlet t after A leaves its magnet: f(r_B)(f+ |+-> - f- |-+>)/sqrt 2."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return configspace_singlet(rA, rB, derive(cfg).dt_transit + t, cfg)


def configspace_step2(rA, rBprime, cfg: PhysicalConfig, delta: float) -> np.ndarray:
    """After B's measurement along z', on (+A+'B, +A-'B, -A+'B, -A-'B)."""
    d = derive(cfg)
    td = d.t_decoherence
    fa_p = analytic.f_envelope(rA, td, +1, cfg, d)
    fa_m = analytic.f_envelope(rA, td, -1, cfg, d)
    fb_p = analytic.f_envelope(rBprime, td, +1, cfg, d)
    fb_m = analytic.f_envelope(rBprime, td, -1, cfg, d)
    c, s = math.cos(delta / 2), math.sin(delta / 2)
    r2 = 1 / math.sqrt(2)
    return r2 * np.array([-s * fa_p * fb_p, c * fa_p * fb_m, -c * fa_m * fb_p, -s * fa_m * fb_m])


def configspace_density(amps) -> np.ndarray:
    return np.sum(np.abs(np.asarray(amps)) ** 2, axis=0)


def configspace_spin_vectors(amps, hbar: float):
    """One-particle spin vectors (s_A, s_B) defined from the two-body spinor.

    Uses s_A = (hbar/2) Psi^dagger (sigma (x) 1) Psi / Psi^dagger Psi and the
    same for B. For a singlet both vanish, unlike the one-body spinors whose
    spin always has length hbar/2.
    """
    psi = np.asarray(amps).reshape(2, 2, -1)  # [a, b, points]
    rho = np.sum(np.abs(psi) ** 2, axis=(0, 1))
    sig = (
        np.array([[0, 1], [1, 0]], complex),
        np.array([[0, -1j], [1j, 0]]),
        np.array([[1, 0], [0, -1]], complex),
    )
    sA = [np.real(np.einsum("abp,ac,cbp->p", psi.conj(), s, psi)) for s in sig]
    sB = [np.real(np.einsum("abp,bc,acp->p", psi.conj(), s, psi)) for s in sig]
    shape = np.asarray(amps).shape[1:]
    fa = [(0.5 * hbar * c / rho).reshape(shape) for c in sA]
    fb = [(0.5 * hbar * c / rho).reshape(shape) for c in sB]
    return guidance.SpinVector(*fa), guidance.SpinVector(*fb)


def pair_rows(batch: PairBatch):
    """Rows (pair_id, thetaA0, phiA0, z0A, z0B, a, b, delta)."""
    for p, a, b in zip(batch.pairs, batch.a, batch.b):
        yield (p.pair_id, p.thetaA0, p.phiA0, p.z0A, p.z0B, int(a), int(b), batch.delta)


PAIR_COLUMNS = ("pair_id", "thetaA0", "phiA0", "z0A", "z0B", "a", "b", "delta")
