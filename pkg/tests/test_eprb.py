import math

import numpy as np
import pytest
from scipy import integrate

from pilotspin import analytic, eprb, guidance
from pilotspin.core import IntegrationFailure, NodeDensityZero, Position2D, default_config, derive
from pilotspin.guidance import Sign

CFG = default_config()
D = derive(CFG)
S0 = CFG.sigma0


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    return [
        eprb.PairInitial(i, math.pi * rng.random(), 2 * math.pi * rng.random(), *(S0 * rng.standard_normal(4)))
        for i in range(n)
    ]


def test_singlet_probabilities():
    np.testing.assert_allclose(eprb.singlet_probabilities(0.0), [0, 0.5, 0.5, 0])
    np.testing.assert_allclose(eprb.singlet_probabilities(math.pi), [0.5, 0, 0, 0.5], atol=1e-16)
    np.testing.assert_allclose(eprb.singlet_probabilities(math.pi / 2), [0.25] * 4)
    for d in np.linspace(0, 2 * math.pi, 9):
        p = eprb.singlet_probabilities(d)
        assert p.sum() == pytest.approx(1.0)
        assert p[0] + p[3] - p[1] - p[2] == pytest.approx(eprb.correlation(d), abs=1e-15)


def test_rotated_basis_coefficients():
    np.testing.assert_allclose(eprb.rotated_basis_coefficients(0.0), np.eye(2))
    np.testing.assert_allclose(eprb.rotated_basis_coefficients(math.pi), [[0, 1], [-1, 0]], atol=1e-16)
    for d in (0.3, 2.0, 5.5):
        m = eprb.rotated_basis_coefficients(d)
        np.testing.assert_allclose(m @ m.T, np.eye(2), atol=1e-15)
        assert np.linalg.det(m) == pytest.approx(1.0)


def test_singlet_in_rotated_basis():
    # (|+-> - |-+>)/sqrt2 rewritten with B on the primed basis
    for d in (0.0, 0.7, math.pi / 2, 2.5):
        m = eprb.rotated_basis_coefficients(d)
        singlet = np.array([[0, 1], [-1, 0]]) / math.sqrt(2)  # [a, b] on the unprimed basis
        primed = singlet @ m  # b index now on the primed basis
        c, s = math.cos(d / 2), math.sin(d / 2)
        np.testing.assert_allclose(primed.ravel(), np.array([-s, c, -c, -s]) / math.sqrt(2), atol=1e-15)


def test_sample_pair_opposition_and_law():
    pairs = eprb.sample_pairs(range(100000), 7, S0)
    assert all(p.thetaA0 + p.thetaB0 == math.pi for p in pairs)
    assert all(math.isclose((p.phiB0 - p.phiA0) % (2 * math.pi), math.pi, rel_tol=1e-14) for p in pairs)
    c2 = np.array([math.cos(p.thetaA0 / 2) ** 2 for p in pairs])
    assert abs(c2.mean() - 0.5) < 0.005
    phis = np.array([p.phiA0 for p in pairs])
    assert phis.min() >= 0 and phis.max() < 2 * math.pi
    z = np.array([p.z0B for p in pairs])
    assert abs(z.std() / S0 - 1) < 0.01


def test_sample_pair_is_frozen():
    p = eprb.sample_pair(0, 7, 1e-4)
    assert p == eprb.PairInitial(
        pair_id=0,
        thetaA0=1.1487013085045206,
        phiA0=4.8667070832871255,
        z0A=3.293835124723315e-06,
        x0A=-1.9421832439287107e-05,
        z0B=-2.6597853247655974e-05,
        x0B=-8.115608324688783e-06,
    )
    assert eprb.sample_pair(3, 7, 1e-4) == eprb.sample_pairs(range(5), 7, 1e-4)[3]
    assert eprb.sample_pair(0, 7, 1e-4, experiment=1) != p


def test_antisymmetrized_initial_structure():
    rA = Position2D(0.3 * S0, -0.4 * S0)
    rB = Position2D(-1.1 * S0, 0.2 * S0)
    moduli = []
    for pair in random_pairs(100, seed=4):
        amp = eprb.antisymmetrized_initial(pair, rA, rB, S0)
        assert abs(amp[0]) < 1e-15 * abs(amp[1]) and abs(amp[3]) < 1e-15 * abs(amp[1])
        assert amp[1] / amp[2] == pytest.approx(-1.0, rel=1e-13)
        moduli.append(abs(amp[1]))
    np.testing.assert_allclose(moduli, moduli[0], rtol=1e-13)


def test_antisymmetrized_initial_on_position_arrays():
    pair = random_pairs(1, seed=9)[0]
    z = np.array([-1.0, 0.5, 2.0]) * S0
    rA = Position2D(np.zeros(3), z)
    rB = Position2D(0.2 * S0 * np.ones(3), z[::-1])
    amp = eprb.antisymmetrized_initial(pair, rA, rB, S0)
    assert amp.shape == (4, 3)
    for i in range(3):
        one = eprb.antisymmetrized_initial(pair, Position2D(0.0, z[i]), Position2D(0.2 * S0, z[::-1][i]), S0)
        np.testing.assert_array_equal(amp[:, i], one)


def test_psiA_pole_state_and_convention():
    pair = eprb.PairInitial(0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    r = Position2D(0.1 * S0, np.linspace(-3, 3, 7) * S0)
    psi = eprb.psiA_after_step1(r, 1e-4, pair, CFG)
    np.testing.assert_allclose(psi.plus, analytic.f_envelope(r, 1e-4, +1, CFG))
    assert np.all(psi.minus == 0)


def test_psiA_density_averaged_over_pairs_is_mixture():
    # Gauss-Legendre average over theta_A0 ~ U[0, pi]; x integrated by trapezoid
    nodes, weights = np.polynomial.legendre.leggauss(40)
    thetas = 0.5 * math.pi * (nodes + 1)
    w = 0.5 * weights
    t = D.t_decoherence
    x = np.linspace(-8, 8, 321) * S0
    z = np.linspace(-8, 8, 81) * S0
    X, Z = np.meshgrid(x, z, indexing="ij")
    avg = np.zeros_like(z)
    for th, wt in zip(thetas, w):
        pair = eprb.PairInitial(0, float(th), 0.9, 0.0, 0.0, 0.0, 0.0)
        rho = eprb.psiA_after_step1(Position2D(X, Z), t, pair, CFG).density()
        avg += wt * integrate.trapezoid(rho, x, axis=0)
    np.testing.assert_allclose(avg, analytic.sg_mixture_density(z, t, CFG), rtol=1e-9, atol=1e-12 * avg.max())


def test_psiA_velocity_matches_closed_form():
    pair = eprb.PairInitial(0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0)
    z = np.linspace(-2, 2, 9) * S0
    r = Position2D(np.zeros_like(z), z)
    for tau in (0.0, 1e-4, D.t_decoherence):
        psi = eprb.psiA_after_step1(r, tau, pair, CFG)
        grad = eprb.psiA_after_step1_gradient(r, tau, pair, CFG)
        v = guidance.velocity_from_spinor(psi, grad, CFG.mass, CFG.hbar)
        closed = guidance.velocity_after_field(z, tau, math.atanh(math.cos(1.0)), CFG)
        np.testing.assert_allclose(v[1], closed, rtol=1e-6)


def test_slave_B_spin():
    s = eprb.slave_B_spin(0.0, 0.0)
    assert s.theta == math.pi and s.phi == pytest.approx(math.pi)
    s = eprb.slave_B_spin(math.pi / 2, 0.4)
    assert s.theta == math.pi / 2 and s.phi == pytest.approx(0.4 + math.pi)
    th = np.linspace(0, math.pi, 1001)
    assert np.all(eprb.slave_B_spin(th, 0.0).theta + th == math.pi)


def test_psiB_has_no_velocity_and_is_pole_after_decision():
    rB = Position2D(np.array([0.4, -1.0]) * S0, np.array([-0.3, 1.2]) * S0)
    psi = eprb.psiB_during_step1(rB, 1e-5, 2.1, 0.7, S0)
    grad = eprb.psiB_during_step1_gradient(rB, 1e-5, 2.1, 0.7, S0)
    v = guidance.velocity_from_spinor(psi, grad, CFG.mass, CFG.hbar)
    assert np.max(np.abs(v)) < 1e-20
    up = eprb.psiB_after_decision(rB, Sign.MINUS, 0.3, S0)
    down = eprb.psiB_after_decision(rB, Sign.PLUS, 0.3, S0)
    assert np.all(up.minus == 0) and np.all(up.plus != 0)
    assert np.all(down.plus == 0) and np.all(down.minus != 0)
    with pytest.raises(ValueError):
        eprb.psiB_after_decision(rB, Sign.UNDECIDED, 0.3, S0)


def test_primed_geometry():
    x, z = 0.3 * S0, -0.8 * S0
    for d in (0.0, 0.9, math.pi):
        xp, zp = eprb.rotate_to_primed(x, z, d)
        c, s = math.cos(d), math.sin(d)
        # back to lab coordinates
        assert xp * c + zp * s == pytest.approx(x, rel=1e-14, abs=1e-19)
        assert -xp * s + zp * c == pytest.approx(z, rel=1e-14, abs=1e-19)
    assert eprb.primed_polar_angle(1, 0.0) == math.pi
    assert eprb.primed_polar_angle(-1, 0.0) == 0.0
    assert eprb.primed_polar_angle(1, math.pi) == 0.0
    assert eprb.primed_polar_angle(-1, math.pi / 2) == math.pi / 2
    assert eprb.primed_polar_angle(-1, 2 * math.pi / 3) == pytest.approx(2 * math.pi / 3)


def test_primed_polar_angle_gives_born_weights():
    # cos^2 of half the primed angle is the probability that B ends +'
    for d in (0.4, 1.7, 2.9):
        p_plus_given_a_plus = math.cos(eprb.primed_polar_angle(1, d) / 2) ** 2
        p = eprb.singlet_probabilities(d)
        assert p_plus_given_a_plus == pytest.approx(p[0] / (p[0] + p[1]))


@pytest.mark.parametrize("delta,relation", [(0.0, -1), (math.pi, 1)])
def test_run_pair_extremes(delta, relation):
    pairs = eprb.sample_pairs(range(2), 3, S0)
    for pair in pairs:
        out = eprb.run_pair(pair, delta, CFG)
        assert out.b == relation * out.a
        assert out.t_a_decided == pytest.approx(D.dt_transit + D.t_decoherence)
        assert out.t_b_decided == pytest.approx(2 * out.t_a_decided)


def test_run_pairs_diagnostics_and_records():
    batch = eprb.run_pairs(40, 1.0, 5, CFG, record_every=700)
    assert len(batch.pairs) == 40 and set(np.unique(batch.a)) <= {-1, 1} and set(np.unique(batch.b)) <= {-1, 1}
    assert batch.max_opposition_error <= 4 * np.finfo(float).eps
    assert batch.max_phi_opposition_error <= 1e-14
    assert batch.max_b_displacement == 0.0
    assert batch.max_spin_norm_error < 1e-10
    rec = batch.records[0]
    for t, zA, thA, thB, phB, zB in rec.a_samples:
        assert thA + thB == pytest.approx(math.pi, abs=1e-15)
        assert zB == rec.initial.z0B
    assert rec.b_samples[-1][0] == pytest.approx(2 * batch.t_a_decided)
    outs = batch.outcomes()
    assert outs[0].a == batch.a[0] and outs[0].delta == 1.0
    rows = list(eprb.pair_rows(batch))
    assert len(rows) == 40 and len(rows[0]) == len(eprb.PAIR_COLUMNS)


def test_run_pairs_block_and_job_independent(monkeypatch):
    a = eprb.run_pairs(30, 0.8, 9, CFG)
    monkeypatch.setattr(eprb, "BLOCK_SIZE", 8)
    b = eprb.run_pairs(30, 0.8, 9, CFG, jobs=2)
    assert np.array_equal(a.a, b.a) and np.array_equal(a.b, b.b)
    assert a.pairs == b.pairs


def test_failures_carry_pair_id(monkeypatch):
    def broken(*args, **kwargs):
        raise NodeDensityZero("left the support")

    monkeypatch.setattr(guidance, "propagate", broken)
    pair = eprb.sample_pair(12, 3, S0)
    with pytest.raises(IntegrationFailure) as info:
        eprb.run_pair(pair, 0.5, CFG)
    assert info.value.index == 12
    with pytest.raises(ValueError):
        eprb.run_pairs(0, 0.5, 3, CFG)


def test_report_from_outcomes():
    a = np.array([1, 1, -1, -1, 1])
    b = np.array([1, -1, 1, -1, -1])
    r = eprb.report_from_outcomes(a, b, 0.3)
    assert r.counts == {"++": 1, "+-": 2, "-+": 1, "--": 1}
    assert sum(r.counts.values()) == r.n_pairs == 5
    assert r.e_delta == pytest.approx(r.p_hat["++"] + r.p_hat["--"] - r.p_hat["+-"] - r.p_hat["-+"])
    assert r.a_plus_rate == pytest.approx(0.6)
    d = r.to_dict()
    assert d["e_theory"] == pytest.approx(-math.cos(0.3))


def test_configspace_singlet_at_entry_is_extended_singlet():
    rA = Position2D(np.array([0.2, -1.0]) * S0, np.array([0.5, 1.5]) * S0)
    rB = Position2D(np.array([-0.7, 0.1]) * S0, np.array([0.0, -2.0]) * S0)
    amps = eprb.configspace_singlet(rA, rB, 0.0, CFG)
    ff = analytic.gaussian(rA, S0) * analytic.gaussian(rB, S0) / math.sqrt(2)
    np.testing.assert_allclose(amps[1], ff, rtol=1e-14)
    np.testing.assert_allclose(amps[2], -ff, rtol=1e-14)
    assert np.all(amps[0] == 0) and np.all(amps[3] == 0)
    step1 = eprb.configspace_step1(rA, rB, 0.0, CFG)
    np.testing.assert_allclose(step1, eprb.configspace_singlet(rA, rB, D.dt_transit, CFG))
    with pytest.raises(ValueError):
        eprb.configspace_step1(rA, rB, -1e-6, CFG)


def test_configspace_step1_matches_joint_density():
    # x_A and x_B integrated by trapezoid on a separable Gaussian
    t = D.t_decoherence
    xs = np.linspace(-7, 7, 57) * S0
    zA = np.linspace(-9, 9, 73) * S0
    zB = np.linspace(-6, 6, 49) * S0
    XB, ZA, ZB = np.meshgrid(xs, zA, zB, indexing="ij")
    acc = np.zeros((len(xs), len(zA), len(zB)))
    for i, xa in enumerate(xs):
        amps = eprb.configspace_step1(Position2D(xa, ZA), Position2D(XB, ZB), t, CFG)
        assert np.all(amps[0] == 0) and np.all(amps[3] == 0)
        acc[i] = integrate.trapezoid(eprb.configspace_density(amps), xs, axis=0)
    rho = integrate.trapezoid(acc, xs, axis=0)
    ref = analytic.eprb_joint_density(*np.meshgrid(zA, zB, indexing="ij"), t, CFG)
    np.testing.assert_allclose(rho, ref, rtol=1e-9, atol=1e-12 * ref.max())


def test_configspace_step2_probabilities():
    # every component is a product g(r_A) h(r_B'); integrate each plane separately
    xs = np.linspace(-8, 8, 161) * S0
    zs = np.linspace(-14, 14, 561) * S0
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    plane = Position2D(X, Z)
    r0 = Position2D(0.0, 0.0)

    def area(f):
        return integrate.simpson(integrate.simpson(f, x=zs, axis=1), x=xs)

    for delta in (0.0, 0.8, 2 * math.pi / 3, math.pi):
        over_a = eprb.configspace_step2(plane, r0, CFG, delta)
        over_b = eprb.configspace_step2(r0, plane, CFG, delta)
        at0 = eprb.configspace_step2(r0, r0, CFG, delta)
        probs = []
        for k in range(4):
            if at0[k] == 0:
                assert np.all(over_a[k] == 0) and np.all(over_b[k] == 0)
                probs.append(0.0)
                continue
            probs.append(area(np.abs(over_a[k]) ** 2) * area(np.abs(over_b[k]) ** 2) / abs(at0[k]) ** 2)
        np.testing.assert_allclose(probs, eprb.singlet_probabilities(delta), atol=1e-6)
        assert sum(probs) == pytest.approx(1.0, abs=1e-6)
        if delta == 0.0:
            assert probs[0] == 0 and probs[3] == 0


def test_configspace_spin_vectors_vanish_for_singlet():
    rA = Position2D(0.1 * S0, np.array([0.3, 3.0]) * S0)
    rB = Position2D(0.0, np.array([0.0, -0.2]) * S0)
    sA, sB = eprb.configspace_spin_vectors(eprb.configspace_singlet(rA, rB, 0.0, CFG), CFG.hbar)
    for comp in (*sA, *sB):
        assert np.all(np.abs(comp) < 1e-20 * CFG.hbar)
    # after A has separated, the local spins are no longer zero away from z = 0
    sA, sB = eprb.configspace_spin_vectors(eprb.configspace_step1(rA, rB, D.t_decoherence, CFG), CFG.hbar)
    assert abs(sA.sz[1]) > 0.49 * CFG.hbar and sB.sz[1] == pytest.approx(-sA.sz[1])


def test_chsh_on_ideal_correlations():
    s = sum(sign * eprb.correlation(b - a) for sign, (a, b) in zip(eprb.CHSH_SIGNS, eprb.CHSH_SETTINGS))
    assert abs(s) == pytest.approx(2 * math.sqrt(2))
