"""Field bundles: dispersion, derivatives, phase branches, hypotheses."""

import numpy as np
import pytest

from comovkit.constants import PhysicalConstants
from comovkit.errors import DensityZero, NodeInDomain, OutOfDomain
from comovkit.fields import (
    Box,
    PacketBundle,
    SpacetimePoint,
    check_theorem_hypotheses,
    congruence_speed,
    differentiate,
    four_velocity,
    make_packet,
    make_plane_wave,
    osmotic_four_velocity,
)


def random_points(rng, n, half=2.0):
    return rng.uniform(-half, half, size=(n, 4))


def test_plane_wave_dispersion(boost_wave):
    assert boost_wave.omega == pytest.approx(1.25, abs=1e-15)
    np.testing.assert_allclose(boost_wave.velocity, [0.6, 0.0, 0.0], atol=1e-15)


def test_plane_wave_phase_gradient_constant(boost_wave):
    rng = np.random.default_rng(11)
    pts = random_points(rng, 50)
    grad = boost_wave.phase_gradient(pts)
    np.testing.assert_allclose(
        grad, np.broadcast_to([-1.25, 0.75, 0.0, 0.0], grad.shape), atol=1e-15
    )
    np.testing.assert_allclose(boost_wave.density(pts), 1.0, atol=0.0)
    np.testing.assert_allclose(boost_wave.phase_hessian(pts), 0.0, atol=0.0)


def test_four_velocity_norm_is_minus_c_squared(boost_wave):
    rng = np.random.default_rng(12)
    pts = random_points(rng, 20)
    v = four_velocity(boost_wave)
    np.testing.assert_allclose(v.minkowski_norm_squared(pts), -1.0, atol=1e-14)
    vcon = v.with_flipped_index()(pts)
    np.testing.assert_allclose(vcon[:, 0], 1.25, atol=1e-15)
    np.testing.assert_allclose(vcon[:, 1], 0.75, atol=1e-15)
    np.testing.assert_allclose(congruence_speed(boost_wave, pts), 1.0, atol=1e-14)


def test_detuned_plane_wave_is_off_shell():
    # frequency override breaks the dispersion relation: the congruence
    # speed moves off c, which downstream classification must notice
    bundle = make_plane_wave([0.75, 0.0, 0.0], frequency=1.5)
    speed2 = congruence_speed(bundle, np.zeros(4)) ** 2
    assert speed2 == pytest.approx(1.5 ** 2 - 0.75 ** 2, rel=1e-14)
    assert abs(speed2 - 1.0) > 0.5


def test_single_mode_packet_matches_plane_wave(constants):
    box = Box((-3.0,) * 4, (3.0,) * 4)
    packet = make_packet([[0.75, 0.0, 0.0]], [1.0], box, constants)
    wave = make_plane_wave([0.75, 0.0, 0.0], constants)
    rng = np.random.default_rng(13)
    pts = random_points(rng, 100)
    np.testing.assert_allclose(packet.phase(pts), wave.phase(pts), atol=1e-12)
    np.testing.assert_allclose(
        packet.phase_gradient(pts), wave.phase_gradient(pts), atol=1e-12
    )
    np.testing.assert_allclose(packet.density(pts), 1.0, atol=1e-12)
    np.testing.assert_allclose(packet.density_gradient(pts), 0.0, atol=1e-12)


def test_packet_weights_must_be_positive(constants):
    box = Box((-1.0,) * 4, (1.0,) * 4)
    with pytest.raises(ValueError):
        make_packet([[0.1, 0, 0], [0.2, 0, 0]], [1.0, -0.5], box, constants)


def test_packet_requires_box(constants):
    with pytest.raises(ValueError):
        make_packet([[0.1, 0, 0]], [1.0], None, constants)


def test_standing_wave_rejected(constants):
    # equal-weight opposed modes produce modulus 2|cos(0.75 x1)| with a
    # zero at x1 = pi/1.5 inside the box
    box = Box((-1.0, -3.0, -1.0, -1.0), (1.0, 3.0, 1.0, 1.0))
    with pytest.raises(NodeInDomain):
        make_packet(
            [[0.75, 0, 0], [-0.75, 0, 0]], [1.0, 1.0], box, constants
        )


def test_density_zero_raised_at_node(constants):
    box = Box((-1.0, -3.0, -1.0, -1.0), (1.0, 3.0, 1.0, 1.0))
    bundle = PacketBundle(
        [[0.75, 0, 0], [-0.75, 0, 0]], [1.0, 1.0], constants, box,
        _skip_node_check=True,
    )
    node = np.array([0.0, np.pi / 1.5, 0.0, 0.0])
    assert bundle.density(node) < 1e-12
    with pytest.raises(DensityZero):
        osmotic_four_velocity(bundle)(node)


def test_packet_density_against_direct_mode_sum(packet9, constants):
    """Density must equal |sum_j w_j exp(i theta_j)|^2 computed longhand."""
    rng = np.random.default_rng(14)
    pts = random_points(rng, 40, half=3.5)
    kc = constants.compton_wavenumber
    total = np.zeros(len(pts), dtype=complex)
    for k, w in zip(packet9.wavevectors, packet9.weights):
        omega = np.sqrt(k @ k + kc ** 2)
        theta = pts[:, 1:] @ k - omega * pts[:, 0]
        total += w * np.exp(1j * theta)
    np.testing.assert_allclose(
        packet9.density(pts), np.abs(total) ** 2, rtol=1e-12
    )


def test_packet_phase_branch_continuity(packet9):
    # reference branch: dense 1-d unwrap along a segment from the domain
    # corner; the cached lattice branch must agree along the whole path
    start = packet9.domain.lo_array + 1e-9
    end = np.array([3.5, 2.8, -3.1, 1.7])
    ts = np.linspace(0.0, 1.0, 6000)
    seg = start + ts[:, None] * (end - start)
    ref = np.unwrap(np.angle(packet9._amp(seg)))
    impl = packet9.phase(seg) / packet9.constants.hbar
    # anchored at the corner on branch zero
    assert impl[0] == pytest.approx(ref[0], abs=1e-9)
    np.testing.assert_allclose(impl, ref, atol=1e-9)
    # the path wraps through several branches, so the test is non-trivial
    assert np.ptp(ref) > 2.0 * np.pi


def test_packet_phase_gradient_consistent_with_values(packet9):
    rng = np.random.default_rng(16)
    pts = random_points(rng, 15, half=3.0)
    h = 1e-4
    for mu in range(4):
        e = np.zeros(4)
        e[mu] = h
        fd = (packet9.phase(pts + e) - packet9.phase(pts - e)) / (2 * h)
        np.testing.assert_allclose(
            fd, packet9.phase_gradient(pts)[:, mu], atol=5e-7
        )


def test_packet_phase_hessian_symmetric(packet9):
    rng = np.random.default_rng(17)
    pts = random_points(rng, 30, half=3.5)
    hess = packet9.phase_hessian(pts)
    np.testing.assert_allclose(hess, np.swapaxes(hess, -1, -2), atol=1e-13)


def test_fd_derivatives_converge_at_second_order(packet9):
    pt = np.array([0.3, -0.7, 0.4, 1.1])
    exact = packet9.density_gradient(pt)
    errs = []
    for h in (0.08, 0.04, 0.02):
        view = packet9.with_fd_derivatives(h)
        assert view.derivative_mode == "fd"
        errs.append(np.max(np.abs(view.density_gradient(pt) - exact)))
    rate = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
    assert rate[0] == pytest.approx(2.0, abs=0.2)
    assert rate[1] == pytest.approx(2.0, abs=0.2)


def test_osmotic_velocity_matches_richardson_fd(packet9):
    """(hbar/2m) grad ln p against Richardson-extrapolated differences."""
    pt = np.array([0.2, 0.5, -0.3, 0.9])
    u = osmotic_four_velocity(packet9)(pt)

    def logp(x):
        return np.log(packet9.density(x))

    h = 0.02
    ref = np.empty(4)
    for mu in range(4):
        e = np.zeros(4)
        e[mu] = 1.0
        d1 = (logp(pt + h * e) - logp(pt - h * e)) / (2 * h)
        d2 = (logp(pt + 0.5 * h * e) - logp(pt - 0.5 * h * e)) / h
        ref[mu] = (4.0 * d2 - d1) / 3.0
    np.testing.assert_allclose(u, 0.5 * ref, atol=1e-8)


def test_differentiate_orders_and_domain(packet9):
    fld = packet9.density_field()
    pt = np.array([0.1, 0.2, 0.3, 0.4])
    assert differentiate(fld, pt, ()) == pytest.approx(packet9.density(pt))
    assert differentiate(fld, pt, (1,)) == pytest.approx(
        packet9.density_gradient(pt)[1]
    )
    assert differentiate(fld, pt, (1, 2)) == pytest.approx(
        packet9.density_hessian(pt)[1, 2]
    )
    with pytest.raises(OutOfDomain):
        differentiate(fld, np.array([0.0, 5.0, 0.0, 0.0]), (1,))


def test_frame_mismatch_rejected(boost_wave):
    pt = SpacetimePoint((0.0, 0.1, 0.2, 0.3), frame="comoving")
    with pytest.raises(ValueError):
        boost_wave.phase(pt)
    ok = SpacetimePoint((0.0, 0.1, 0.2, 0.3))
    assert boost_wave.phase(ok) == pytest.approx(
        boost_wave.phase(np.array([0.0, 0.1, 0.2, 0.3]))
    )


def test_hypotheses_pass_for_plane_wave(boost_wave):
    report = check_theorem_hypotheses(boost_wave, shape=(5, 5, 5, 5))
    assert report.passed
    assert report.violated == []
    assert report.min_abs_v0 == pytest.approx(1.25, abs=1e-14)
    assert report.max_closedness == 0.0
    assert report.timelike_fraction == 1.0
    assert not report.v0_sign_change


def test_hypotheses_pass_for_dominant_packet(packet9):
    box = Box((-2.0,) * 4, (2.0,) * 4)
    report = check_theorem_hypotheses(packet9, box=box, shape=(6, 6, 6, 6))
    assert report.passed
    assert report.min_abs_v0 > 0.5
    assert report.timelike_fraction == 1.0


def test_hypotheses_detect_vanishing_v0(near_standing, constants):
    """The nearly opposed pair has a genuine zero of V_0 between phase
    alignment and phase opposition; the checker must flag condition (i)."""
    m = constants.mass
    aligned = np.array([0.0, 0.0, 0.0, 0.0])
    opposed = np.array([0.0, -np.pi / 1.65, 0.0, 0.0])
    v0_a = near_standing.phase_gradient(aligned)[0] / m
    v0_o = near_standing.phase_gradient(opposed)[0] / m
    # independent closed forms: -(w0 w0^0 + w1 w1^0)/(w0 + w1) aligned,
    # +(w1 w1^0 - w0 w0^0)/(w0 - w1) opposed, with mode frequencies
    w0, w1 = 1.0, 0.98
    om0, om1 = 1.25, np.sqrt(0.81 + 1.0)
    assert v0_a == pytest.approx(-(w0 * om0 + w1 * om1) / (w0 + w1), rel=1e-12)
    assert v0_o == pytest.approx((w1 * om1 - w0 * om0) / (w0 - w1), rel=1e-12)
    assert v0_a < 0 < v0_o

    box = Box((-0.2, -2.2, -0.1, -0.1), (0.2, 0.2, 0.1, 0.1))
    report = check_theorem_hypotheses(near_standing, box=box, shape=(5, 41, 3, 3))
    assert "(i)" in report.violated
    assert report.v0_sign_change
    assert not report.passed


def test_hypotheses_closedness_zero_in_fd_mode(boost_wave):
    # central differences of a linear phase are symmetric by construction
    view = boost_wave.with_fd_derivatives(1e-3)
    report = check_theorem_hypotheses(view, shape=(4, 4, 4, 4))
    assert report.max_closedness < report.closedness_tol


def test_constants_validation():
    with pytest.raises(ValueError):
        PhysicalConstants(hbar=-1.0)
    nat = PhysicalConstants()
    assert nat.nu == pytest.approx(1.0)
    assert nat.compton_wavenumber == pytest.approx(1.0)


def test_conjugate_flips_phase_keeps_density(packet9):
    conj = packet9.conjugate()
    rng = np.random.default_rng(4)
    pts = rng.uniform(-2.0, 2.0, size=(20, 4))
    for x in pts:
        assert conj.density(x) == packet9.density(x)
        assert conj.phase(x) == -packet9.phase(x)
        np.testing.assert_array_equal(
            conj.phase_gradient(x), -packet9.phase_gradient(x)
        )
        np.testing.assert_array_equal(
            conj.density_gradient(x), packet9.density_gradient(x)
        )
        assert conj.amplitude(x) == pytest.approx(
            np.conj(packet9.amplitude(x)), rel=1e-14
        )


def test_conjugate_is_involution(boost_wave):
    assert boost_wave.conjugate().conjugate() is boost_wave
