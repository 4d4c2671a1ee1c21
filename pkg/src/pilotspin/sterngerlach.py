"""Single-particle Stern-Gerlach experiment: outcome predictor, trajectory
ensembles over pure states and mixtures, and screen statistics."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import stats
from scipy.special import ndtri

from . import analytic, guidance, streams
from .core import ConfigError, IntegrationFailure, PhysicalConfig, PilotSpinError, cos_theta0, derive
from .guidance import Sign

BLOCK_SIZE = 4096
HIST_HALF_WIDTH = 10.0  # in sigma0, around z = 0
HIST_BIN = 0.25  # in sigma0
SEPARATRIX_GAP = 1e-3  # in sigma0; draws this close to the threshold are not scored
CI_Z = 3.0


@dataclass(frozen=True)
class PureState:
    theta0: float
    phi0: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta0 <= math.pi:
            raise ConfigError(f"theta0 must lie in [0, pi], got {self.theta0}")


@dataclass(frozen=True)
class IsotropicMixture:
    """Random spin directions. ``measure='uniform-theta'`` draws theta0 uniform
    on [0, pi]; ``'sphere'`` draws cos(theta0) uniform on [-1, 1]."""

    measure: str = "uniform-theta"

    def __post_init__(self):
        if self.measure not in ("uniform-theta", "sphere"):
            raise ConfigError(f"unknown mixture measure {self.measure!r}")


Source = Union[PureState, IsotropicMixture]


@dataclass(frozen=True)
class SGRunSpec:
    n_particles: int
    source: Source
    seed: int = streams.DEFAULT_SEED
    t_final: float | None = None  # after magnet exit; None means the screen time
    experiment: int = 0
    record_every: int = 0  # keep every k-th integrator sample; 0 keeps none

    def __post_init__(self):
        if int(self.n_particles) < 1:
            raise ConfigError("n_particles must be >= 1")

    def resolved_t_final(self, cfg: PhysicalConfig) -> float:
        t = cfg.screen_time if self.t_final is None else float(self.t_final)
        if t < derive(cfg).t_decoherence:
            raise ConfigError(f"t_final={t:g} s is earlier than the decoherence time")
        return t


@dataclass
class SGOutcomeStats:
    n_plus: int
    n_minus: int
    n_undecided: int
    hist_edges: np.ndarray  # m
    hist_counts: np.ndarray
    empirical_p_plus: float
    p_plus_ci: tuple[float, float]
    n_scored: int  # draws away from the separatrix
    n_mismatch: int  # of those, ODE outcome != threshold prediction
    max_spin_norm_error: float
    t_final: float
    impacts: np.ndarray = field(repr=False)  # final z per particle
    outcomes: np.ndarray = field(repr=False)
    z0: np.ndarray = field(repr=False)
    theta0: np.ndarray = field(repr=False)
    trajectories: list | None = field(default=None, repr=False)

    @property
    def n_particles(self) -> int:
        return self.n_plus + self.n_minus + self.n_undecided

    def summary(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "n_plus": self.n_plus,
            "n_minus": self.n_minus,
            "n_undecided": self.n_undecided,
            "empirical_p_plus": self.empirical_p_plus,
            "p_plus_ci": list(self.p_plus_ci),
            "n_scored": self.n_scored,
            "n_mismatch": self.n_mismatch,
            "max_spin_norm_error": self.max_spin_norm_error,
            "t_final": self.t_final,
            "impact_histogram": {
                "edges": [float(e) for e in self.hist_edges],
                "counts": [int(c) for c in self.hist_counts],
            },
        }


def threshold(theta0: float, sigma0: float) -> float:
    """Initial height above which a particle ends with spin +: sigma0 * Phi^-1(sin^2(theta0/2))."""
    if not 0.0 < theta0 < math.pi:
        raise ValueError("threshold is only finite for theta0 strictly between 0 and pi")
    return float(_threshold_array(theta0, sigma0))


def _threshold_array(theta0, sigma0):
    # -inf at theta0 = 0, +inf at pi; exact 0 at the (snapped) equator
    p = np.sin(0.5 * np.asarray(theta0)) ** 2
    p = np.where(cos_theta0(theta0) == 0.0, 0.5, p)
    return sigma0 * ndtri(p)


def predict(z0: float, theta0: float, sigma0: float, field_sign: int = 1) -> Sign:
    """Outcome fixed by the entry height. A reversed field (``field_sign=-1``)
    mirrors the height: the result is that of -z0 in the original magnet."""
    zt = threshold(theta0, sigma0)
    zs = field_sign * z0
    if zs > zt:
        return Sign.PLUS
    if zs < zt:
        return Sign.MINUS
    return Sign.UNDECIDED


def predict_array(z0, theta0, sigma0, field_sign: int = 1):
    zs = field_sign * np.asarray(z0)
    return np.sign(zs - _threshold_array(theta0, sigma0)).astype(np.int8)


def draw_initial(spec: SGRunSpec, cfg: PhysicalConfig, ids):
    """(z0, x0, theta0, phi0) arrays for the given particle ids."""
    normals, uniforms = streams.standard_draws(spec.seed, streams.SG, spec.experiment, ids, 2, 2)
    z0 = cfg.sigma0 * normals[:, 0]
    x0 = cfg.sigma0 * normals[:, 1]
    src = spec.source
    if isinstance(src, PureState):
        theta0 = np.full(len(z0), float(src.theta0))
        phi0 = np.full(len(z0), float(src.phi0))
    else:
        if src.measure == "uniform-theta":
            theta0 = math.pi * uniforms[:, 0]
        else:
            theta0 = np.arccos(1 - 2 * uniforms[:, 0])
        phi0 = 2 * math.pi * uniforms[:, 1]
    return z0, x0, theta0, phi0


def histogram_edges(cfg: PhysicalConfig) -> np.ndarray:
    n = int(round(2 * HIST_HALF_WIDTH / HIST_BIN))
    return cfg.sigma0 * np.linspace(-HIST_HALF_WIDTH, HIST_HALF_WIDTH, n + 1)


def _run_block(args):
    spec, cfg, start, stop = args
    ids = range(start, stop)
    z0, x0, theta0, phi0 = draw_initial(spec, cfg, ids)
    d = derive(cfg)
    t_end = d.dt_transit + spec.resolved_t_final(cfg)
    rec = None
    if spec.record_every:
        rec = []
        counter = [0]

        def observer(t, z, theta, phase):
            if counter[0] % spec.record_every == 0 or t == t_end:
                rec.append((t, z.copy(), theta.copy()))
            counter[0] += 1
    else:
        observer = None
    try:
        res = guidance.propagate(z0, theta0, cfg, t_end, x0=x0, phi0=phi0, observer=observer)
    except PilotSpinError as exc:
        raise IntegrationFailure(str(exc), start) from exc
    bad = ~np.isfinite(res.z)
    if bad.any():
        raise IntegrationFailure("non-finite position", start + int(np.argmax(bad)))
    return z0, x0, theta0, phi0, res.z, res.outcome, res.max_spin_norm_error, rec


def _blocks(n):
    return [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]


def wilson_interval(k: int, n: int, z: float = CI_Z) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, c - h), min(1.0, c + h))


def run_ensemble(spec: SGRunSpec, cfg: PhysicalConfig, *, jobs: int = 1) -> SGOutcomeStats:
    """Simulate ``spec.n_particles`` trajectories and aggregate outcomes.

    Particles are cut into fixed blocks; results are identical for any ``jobs``.
    """
    t_final = spec.resolved_t_final(cfg)
    tasks = [(spec, cfg, a, b) for a, b in _blocks(int(spec.n_particles))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_block, tasks))
    else:
        parts = [_run_block(t) for t in tasks]
    z0, x0, theta0, phi0, zf, out, err = (np.concatenate([p[i] for p in parts]) for i in range(7))
    edges = histogram_edges(cfg)
    counts, _ = np.histogram(zf, bins=edges)
    n_plus = int(np.sum(out == 1))
    n_minus = int(np.sum(out == -1))
    n_und = int(np.sum(out == 0))
    n = len(out)
    pred = predict_array(z0, theta0, cfg.sigma0, cfg.field_sign)
    scored = np.abs(cfg.field_sign * z0 - _threshold_array(theta0, cfg.sigma0)) > SEPARATRIX_GAP * cfg.sigma0
    trajs = None
    if spec.record_every:
        trajs = _collect_trajectories(parts, cfg)
    return SGOutcomeStats(
        n_plus=n_plus,
        n_minus=n_minus,
        n_undecided=n_und,
        hist_edges=edges,
        hist_counts=counts,
        empirical_p_plus=n_plus / n,
        p_plus_ci=wilson_interval(n_plus, n),
        n_scored=int(scored.sum()),
        n_mismatch=int(np.sum(scored & (pred != out))),
        max_spin_norm_error=float(err.max()),
        t_final=t_final,
        impacts=zf,
        outcomes=out,
        z0=z0,
        theta0=theta0,
        trajectories=trajs,
    )


def _collect_trajectories(parts, cfg):
    """List of (traj_id, x0, phi0, theta0, [(t, z, theta), ...]) in id order."""
    out = []
    base = 0
    for z0, x0, theta0, phi0, *_rest, rec in parts:
        for j in range(len(z0)):
            samples = [(t, float(z[j]), float(th[j])) for t, z, th in rec]
            out.append((base + j, float(x0[j]), float(phi0[j]), float(theta0[j]), samples))
        base += len(z0)
    return out


def trajectory_rows(trajectories, cfg: PhysicalConfig):
    """Rows of guidance.TRAJECTORY_COLUMNS for recorded ensemble trajectories."""
    exit_t = cfg.dt_transit
    for traj_id, x0, phi0, _theta0, samples in trajectories:
        for t, z, theta in samples:
            sv = guidance.spin_vector_from_angles(theta, phi0, cfg.hbar)
            tag = "field" if t <= exit_t else "free"
            yield (traj_id, t, x0, z, cfg.v0 * t, theta, phi0, float(sv.sx), float(sv.sy), float(sv.sz), tag)


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float


def chi_square_impacts(impacts, t: float, cfg: PhysicalConfig, theta0: float = math.pi / 2, min_expected: float = 5.0) -> ChiSquareResult:
    """Goodness of fit of impact heights against the analytic two-spot density.

    Expected counts come from exact bin probabilities; the two open tails are
    extra bins and neighbouring bins are merged until each expects >= min_expected.
    """
    impacts = np.asarray(impacts)
    n = len(impacts)
    edges = histogram_edges(cfg)
    full = np.concatenate(([-np.inf], edges, [np.inf]))
    obs, _ = np.histogram(impacts, bins=full)
    cdf = analytic.sg_mixture_cdf(full, t, cfg, theta0)
    exp = n * np.diff(cdf)
    o_m, e_m = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_m.append(o_acc)
            e_m.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        o_m[-1] += o_acc
        e_m[-1] += e_acc
    o_m, e_m = np.array(o_m), np.array(e_m)
    stat = float(np.sum((o_m - e_m) ** 2 / e_m))
    dof = len(o_m) - 1
    return ChiSquareResult(stat, dof, float(stats.chi2.sf(stat, dof)))


def predicted_spots(t: float, cfg: PhysicalConfig) -> tuple[float, float]:
    """Centers of the + and - spots, t after magnet exit."""
    d = derive(cfg)
    c = d.z_delta + d.u * t
    return c, -c
