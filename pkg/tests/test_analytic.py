import csv
import math
from statistics import NormalDist

import numpy as np
import pytest
from scipy import integrate

from pilotspin import analytic
from pilotspin.core import Position2D, SpinOrientation, default_config, derive

CFG = default_config()
D = derive(CFG)
S0 = CFG.sigma0
PEAK = (2 * math.pi * S0**2) ** -0.5


def grid2d(half=8.0, n=321):
    x = np.linspace(-half * S0, half * S0, n)
    X, Z = np.meshgrid(x, x, indexing="ij")
    return x, Position2D(X, Z)


def test_initial_spinor_up_eigenstate_at_origin():
    psi = analytic.initial_spinor((0.0, 0.0), SpinOrientation(0.0, 0.0), S0)
    assert psi.plus == pytest.approx(PEAK, rel=1e-15)
    assert psi.minus == 0


def test_initial_spinor_equator_has_equal_components():
    psi = analytic.initial_spinor((0.0, 0.0), SpinOrientation(math.pi / 2, 0.0), S0)
    assert abs(psi.plus) == pytest.approx(abs(psi.minus), rel=1e-15)


def test_initial_spinor_is_normalized():
    x, r = grid2d()
    psi = analytic.initial_spinor(r, SpinOrientation(1.1, 0.4), S0)
    total = integrate.trapezoid(integrate.trapezoid(psi.density(), x, axis=1), x)
    assert total == pytest.approx(1.0, rel=1e-10)


def test_in_field_spinor_at_entry_matches_initial():
    _, r = grid2d(n=41)
    # azimuths chosen so that no angle wraps past 2 pi (that flips the spinor's sign)
    spin = SpinOrientation(1.0, 2.0)
    at0 = analytic.spinor_in_field(r, 0.0, spin, CFG)
    conv = analytic.initial_spinor_in_field_convention(r, SpinOrientation(1.0, 2.0 - math.pi / 2), S0)
    lit = analytic.initial_spinor(r, SpinOrientation(1.0, 2.0 - math.pi / 2), S0)
    # same state: the densities agree and the two writings differ by e^{i pi/4}
    np.testing.assert_allclose(at0.density(), lit.density(), rtol=1e-14)
    np.testing.assert_allclose(conv.plus * np.exp(0.25j * math.pi), at0.plus, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(conv.minus * np.exp(0.25j * math.pi), at0.minus, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(conv.plus, lit.plus, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(conv.minus, lit.minus, rtol=1e-13, atol=1e-300)


def test_up_packet_at_exit_is_centered_at_z_delta():
    z = D.z_delta + S0 * np.linspace(-0.01, 0.01, 2001)
    psi = analytic.spinor_in_field((np.zeros_like(z), z), D.dt_transit, SpinOrientation(0.0), CFG)
    assert z[np.argmax(psi.density())] == pytest.approx(D.z_delta, abs=1e-5 * S0)
    assert np.all(psi.minus == 0)


@pytest.mark.parametrize("t", [-1e-9, 2.1e-5])
def test_in_field_rejects_times_outside_magnet(t):
    with pytest.raises(ValueError):
        analytic.spinor_in_field((0.0, 0.0), t, SpinOrientation(1.0), CFG)


def test_f_envelope_peak_and_mirror_symmetry():
    f = analytic.f_envelope((0.0, D.z_delta), 0.0, +1, CFG)
    assert abs(f) == pytest.approx(PEAK, rel=1e-14)
    z = np.linspace(-5, 5, 11) * S0
    for t in (0.0, 1e-4, D.t_decoherence):
        fp = analytic.f_envelope((0.3 * S0, z), t, +1, CFG)
        fm = analytic.f_envelope((0.3 * S0, -z), t, -1, CFG)
        np.testing.assert_allclose(np.abs(fp), np.abs(fm), rtol=1e-13)


def test_f_envelope_ratio_at_decoherence():
    # at z = z_delta + u t_D = 3 sigma0 the ratio is exp((z + c)^2 - (z - c)^2)/4s^2) = e^9
    c = D.z_delta + D.u * D.t_decoherence
    assert c == pytest.approx(3 * S0, rel=1e-14)
    ratio = abs(analytic.f_envelope((0.0, c), D.t_decoherence, +1, CFG)) / abs(
        analytic.f_envelope((0.0, c), D.t_decoherence, -1, CFG)
    )
    assert ratio == pytest.approx(math.exp(9), rel=1e-10)


def test_f_envelope_rejects_negative_time():
    with pytest.raises(ValueError):
        analytic.f_envelope((0.0, 0.0), -1e-6, +1, CFG)


def test_after_field_eigenstate_does_not_split():
    z = np.linspace(-6, 6, 101) * S0
    for t in (0.0, 1e-4, 4e-4):
        psi = analytic.spinor_after_field((np.zeros_like(z), z), t, SpinOrientation(0.0), CFG)
        assert np.all(psi.minus == 0)


def test_spots_disjoint_at_screen():
    t = CFG.screen_time
    assert 2 * (D.z_delta + D.u * t) > 6 * S0
    z = np.linspace(-12, 12, 4801) * S0
    psi = analytic.spinor_after_field((np.zeros_like(z), z), t, SpinOrientation(math.pi / 2), CFG)
    rho = psi.density()
    # two separate maxima at +-c with a dip at z = 0
    c = D.z_delta + D.u * t
    i_max = np.argmax(np.where(z > 0, rho, 0))
    assert z[i_max] == pytest.approx(c, abs=0.01 * S0)
    assert rho[len(z) // 2] < 1e-3 * rho.max()


def test_exit_continuity():
    _, r = grid2d(n=41)
    spin = SpinOrientation(2.0, 1.3)
    a = analytic.spinor_in_field(r, D.dt_transit, spin, CFG)
    b = analytic.spinor_after_field(r, 0.0, spin, CFG)
    # phases reach ~1e6 rad here, so agreement is limited to ~1e-16 of that
    np.testing.assert_allclose(a.plus, b.plus, rtol=1e-8, atol=1e-300)
    np.testing.assert_allclose(a.minus, b.minus, rtol=1e-8, atol=1e-300)


@pytest.mark.parametrize("in_field", [True, False])
def test_gradients_match_finite_differences(in_field):
    spin = SpinOrientation(1.2, 0.5)
    t = 0.6 * D.dt_transit if in_field else 1e-4
    fn = analytic.spinor_in_field if in_field else analytic.spinor_after_field
    gfn = analytic.spinor_in_field_gradient if in_field else analytic.spinor_after_field_gradient
    x, z = 0.4 * S0, np.array([-0.7, 0.1, 1.5]) * S0
    gx, gz = gfn((x, z), t, spin, CFG)
    # wavenumber of the packets is ~1e9 /m, so use a step well below 1/k
    h = 1e-13
    for comp in ("plus", "minus"):
        dz = (getattr(fn((x, z + h), t, spin, CFG), comp) - getattr(fn((x, z - h), t, spin, CFG), comp)) / (2 * h)
        dx = (getattr(fn((x + h, z), t, spin, CFG), comp) - getattr(fn((x - h, z), t, spin, CFG), comp)) / (2 * h)
        scale = np.abs(getattr(gz, comp)).max()
        np.testing.assert_allclose(getattr(gz, comp), dz, atol=1e-5 * scale)
        np.testing.assert_allclose(getattr(gx, comp), dx, atol=1e-5 * scale)


def test_mixture_density_symmetric_and_normalized():
    z = np.linspace(-20, 20, 8001) * S0
    for t in (0.0, D.t_decoherence, CFG.screen_time):
        rho = analytic.sg_mixture_density(z, t, CFG)
        np.testing.assert_allclose(rho, rho[::-1], rtol=1e-12, atol=1e-15 * rho.max())
        assert integrate.trapezoid(rho, z) == pytest.approx(1.0, rel=1e-10)


def test_mixture_cdf_is_integral_of_density():
    t = CFG.screen_time
    for zq in np.array([-6.0, -4.2, -1.0, 0.0, 0.5, 4.0, 7.0]) * S0:
        val, _ = integrate.quad(lambda z: analytic.sg_mixture_density(z, t, CFG), -30 * S0, zq, points=[-4.2 * S0], epsabs=1e-13)
        assert analytic.sg_mixture_cdf(zq, t, CFG) == pytest.approx(val, abs=1e-10)
    assert analytic.sg_mixture_cdf(np.inf, t, CFG, theta0=1.0) == pytest.approx(1.0)


def test_pure_state_weight_above_axis():
    # independent oracle: stdlib normal distribution
    t = CFG.screen_time
    c = D.z_delta + D.u * t
    nd = NormalDist(0.0, 1.0)
    expected = 0.75 * nd.cdf(c / S0) + 0.25 * nd.cdf(-c / S0)
    z = np.linspace(0, 15, 30001) * S0
    rho = analytic.pure_state_density(z, t, math.pi / 3, CFG)
    assert integrate.simpson(rho, x=z) == pytest.approx(expected, abs=1e-9)


def test_joint_density_factorizes_with_mixture_marginal():
    t = D.t_decoherence
    zA = np.linspace(-12, 12, 1201) * S0
    zB = np.linspace(-8, 8, 801) * S0
    ZA, ZB = np.meshgrid(zA, zB, indexing="ij")
    rho = analytic.eprb_joint_density(ZA, ZB, t, CFG)
    margA = integrate.trapezoid(rho, zB, axis=1)
    margB = integrate.trapezoid(rho, zA, axis=0)
    np.testing.assert_allclose(rho, np.outer(margA, margB), rtol=1e-9, atol=1e-12 * rho.max())
    np.testing.assert_allclose(margA, analytic.sg_mixture_density(zA, t, CFG), rtol=1e-9, atol=1e-9 * margA.max())
    assert integrate.trapezoid(margA, zA) == pytest.approx(1.0, rel=1e-9)


def test_evaluate_grid_and_csv_round_trip(tmp_path):
    xs = np.linspace(-1, 1, 3) * S0
    zs = np.linspace(-2, 2, 5) * S0
    rows = analytic.evaluate_grid(xs, zs, 1e-4, SpinOrientation(1.0, 0.2), CFG)
    assert rows.shape == (15, len(analytic.GRID_COLUMNS))
    np.testing.assert_allclose(rows[:, 7], rows[:, 3] ** 2 + rows[:, 4] ** 2 + rows[:, 5] ** 2 + rows[:, 6] ** 2, rtol=1e-14)
    path = tmp_path / "g.csv"
    analytic.write_rows_csv(path, analytic.GRID_COLUMNS, rows)
    with open(path, newline="") as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == analytic.GRID_COLUMNS
    back = np.array(data[1:], dtype=float)
    assert np.array_equal(back, rows)


def test_format_number():
    assert analytic.format_number(3) == "3"
    assert analytic.format_number(np.int8(-1)) == "-1"
    assert analytic.format_number("free") == "free"
    assert float(analytic.format_number(0.1)) == 0.1
    assert analytic.format_number(1 / 3) == "0.33333333333333331"
