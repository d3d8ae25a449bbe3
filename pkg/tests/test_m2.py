"""Two-factor system: fixed points, Einstein solver, flow, reconstruction.

Oracle strategy: for n=(1,1), q=(1,1) the interior fixed points have
Y1=Y2=Y and the stationarity conditions collapse to the scalar quadratic
14 Y^2 - 6 Y + 1/2 = 0, solved here with np.roots independently of the
solver under test.  Asymmetric cases are cross-checked with fsolve.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import fsolve

from bundleflow.eigen import fd_jacobian
from bundleflow.m2 import (
    Classification,
    FixedPointKind,
    Region,
    SolverError,
    asymptotics,
    e_of,
    einstein_points,
    f_of,
    fixed_points,
    integrate,
    jacobian,
    phi,
    reconstruct,
    region_of,
    rho_bound_check,
    ricci_signature,
    shoot_manifold,
    vector_field,
)
from bundleflow.params import make_params

P11 = make_params(2, (1, 1), (3.0, 3.0))  # q = (1, 1)
P12 = make_params(2, (1, 2), (3.0, 4.0))  # q = (1, 1)
P23 = make_params(2, (2, 3), (4.0, 5.0))  # q = (1, 1)
SMALL_GRID = [P11, P12, P23, make_params(2, (3, 5), (5.0, 7.0))]


def symmetric_quadratic_roots():
    # Stationarity for n=(1,1), q=(1,1) on the diagonal Y1=Y2=Y:
    # 2*3*Y - 6Y^2 = E = 1/2 + 8Y^2, i.e. 14Y^2 - 6Y + 1/2 = 0.
    roots = np.sort(np.roots([14.0, -6.0, 0.5]))
    return roots[0], roots[1]  # (eta, xi)


class TestFieldValues:
    def test_e_at_origin(self):
        assert e_of((0.0, 0.0), P11) == 0.5

    def test_e_direct_evaluation(self):
        assert e_of((0.2, 0.2), P11) == pytest.approx(0.82, rel=1e-12)

    def test_f_at_origin(self):
        assert f_of((0.0, 0.0), P11) == (-0.5, -0.5)

    def test_f_direct_evaluation(self):
        f1, f2 = f_of((0.2, 0.2), P11)
        assert f1 == pytest.approx(0.14, rel=1e-12)
        assert f2 == pytest.approx(0.14, rel=1e-12)

    def test_vector_field_direct(self):
        v = vector_field((0.2, 0.2), P11)
        assert v[0] == pytest.approx(-0.028, rel=1e-12)
        assert v[1] == pytest.approx(-0.028, rel=1e-12)

    def test_first_axis_point_sits_on_first_nullcline(self):
        # (1/((4n1+6)q1), 0) zeroes F1 while F2 stays negative there.
        f1, f2 = f_of((0.1, 0.0), P11)
        assert abs(f1) < 1e-15
        assert f2 < 0


class TestJacobian:
    def test_origin_is_half_identity(self):
        m = jacobian((0.0, 0.0), P11)
        assert np.array_equal(m.entries, np.diag([0.5, 0.5]))

    def test_axis_saddle_closed_form(self):
        m = jacobian((0.1, 0.0), P11)
        assert m.entries[0, 0] == pytest.approx(-0.4, abs=1e-15)
        assert m.entries[1, 1] == pytest.approx(0.54, abs=1e-15)
        assert m.entries[0, 1] == 0.0
        assert m.entries[1, 0] == 0.0

    @settings(max_examples=40, deadline=None)
    @given(
        y1=st.floats(1e-3, 1.0),
        y2=st.floats(1e-3, 1.0),
        pick=st.integers(0, len(SMALL_GRID) - 1),
    )
    def test_matches_finite_differences(self, y1, y2, pick):
        p = SMALL_GRID[pick]
        analytic = jacobian((y1, y2), p).entries
        numeric = fd_jacobian(
            lambda v: np.array(vector_field((v[0], v[1]), p)),
            np.array([y1, y2]),
            1e-6,
        ).entries
        scale = max(np.max(np.abs(analytic)), 1.0)
        assert np.max(np.abs(analytic - numeric)) < 1e-6 * scale


class TestEinsteinPoints:
    def test_symmetric_case_against_quadratic_oracle(self):
        eta_o, xi_o = symmetric_quadratic_roots()
        xi_fp, eta_fp, detail = einstein_points(P11)
        for i in range(2):
            assert eta_fp.location[i] == pytest.approx(eta_o, rel=1e-12)
            assert xi_fp.location[i] == pytest.approx(xi_o, rel=1e-12)

    def test_eta_estimate_case_one_one(self):
        _, eta_fp, _ = einstein_points(P11)
        assert P11.q[0] * eta_fp.location[0] < 0.1303

    def test_ordering_eta_below_xi(self):
        for p in SMALL_GRID:
            xi_fp, eta_fp, _ = einstein_points(p)
            for i in range(2):
                assert 0 < eta_fp.location[i] < xi_fp.location[i]

    def test_roots_agree_with_energy_reciprocal(self):
        # Independent route: y0 at each interior fixed point must equal
        # 1/(2E) there.
        for p in SMALL_GRID:
            xi_fp, eta_fp, detail = einstein_points(p)
            assert detail.y0_lo == pytest.approx(
                1.0 / (2.0 * e_of(xi_fp.location, p)), rel=1e-10
            )
            assert detail.y0_hi == pytest.approx(
                1.0 / (2.0 * e_of(eta_fp.location, p)), rel=1e-10
            )

    def test_phi_vanishes_at_reported_roots(self):
        for p in SMALL_GRID:
            _, _, detail = einstein_points(p)
            assert abs(phi(detail.y0_lo, p)) < 1e-10
            assert abs(phi(detail.y0_hi, p)) < 1e-10

    def test_root_window(self):
        for p in SMALL_GRID:
            _, _, detail = einstein_points(p)
            lo = 3.0 / (min(p.n) + 2) ** 2
            assert lo <= detail.y0_lo < detail.y0_hi < 1.0

    def test_asymmetric_case_against_fsolve_oracle(self):
        def stationary(y):
            return f_of((y[0], y[1]), P12)

        xi_fp, eta_fp, _ = einstein_points(P12)
        for fp, guess in ((eta_fp, (0.1, 0.1)), (xi_fp, (0.3, 0.3))):
            root = fsolve(stationary, guess, full_output=False, xtol=1e-13)
            assert np.allclose(root, fp.location, rtol=1e-9)

    def test_einstein_constant_consistency(self):
        # Lambda_i*Y_i - 3 q_i^2 Y_i^2 must be i-independent, and equals
        # E/2 exactly at a stationary point.
        for p in SMALL_GRID:
            xi_fp, eta_fp, detail = einstein_points(p)
            for fp, lam in (
                (xi_fp, detail.lambda_xi),
                (eta_fp, detail.lambda_eta),
            ):
                per_factor = [
                    p.lam[i] * fp.location[i]
                    - 3.0 * p.q[i] ** 2 * fp.location[i] ** 2
                    for i in range(2)
                ]
                assert per_factor[0] == pytest.approx(per_factor[1], rel=1e-9)
                assert lam == pytest.approx(per_factor[0], rel=1e-12)
                assert lam == pytest.approx(
                    0.5 * e_of(fp.location, p), rel=1e-10
                )

    def test_factor_order_symmetry(self):
        a = einstein_points(make_params(2, (1, 2), (3.0, 4.0)))
        b = einstein_points(make_params(2, (2, 1), (4.0, 3.0)))
        assert a[0].location == pytest.approx(b[0].location[::-1], rel=1e-12)
        assert a[1].location == pytest.approx(b[1].location[::-1], rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(scale=st.floats(0.1, 10.0))
    def test_q_eta_is_scale_free(self, scale):
        # q_i eta_i depends on n only: rescaling Lambda moves eta by the
        # reciprocal factor.
        base = make_params(2, (1, 2), (3.0, 4.0))
        moved = make_params(2, (1, 2), (3.0 * scale, 4.0 * scale))
        _, eta_a, _ = einstein_points(base)
        _, eta_b, _ = einstein_points(moved)
        for i in range(2):
            assert base.q[i] * eta_a.location[i] == pytest.approx(
                moved.q[i] * eta_b.location[i], rel=1e-11
            )


class TestPhiFunction:
    def test_case_one_one_anchor(self):
        assert phi((3.0 + np.sqrt(2.0)) / 6.0, P11) < -0.19

    def test_case_two_two_anchor_chain(self):
        # The anchor ordinate keeps phi negative, which forces the larger
        # root above it; the bound on q*eta then follows from the anchor.
        p = make_params(2, (2, 2), (4.0, 4.0))
        _, eta_fp, detail = einstein_points(p)
        y0_star = (3.0 + np.sqrt(2.0)) / 6.0
        assert phi(y0_star, p) < 0
        assert detail.y0_hi > y0_star
        for i in range(2):
            assert p.q[i] * eta_fp.location[i] < 0.0912

    def test_out_of_domain_raises(self):
        with pytest.raises(SolverError):
            phi(0.05, P11)


class TestFixedPoints:
    def test_seven_points_with_expected_classification(self):
        expected = {
            FixedPointKind.ORIGIN: Classification.SOURCE,
            FixedPointKind.V1: Classification.HYPERBOLIC,
            FixedPointKind.V1_TILDE: Classification.SOURCE,
            FixedPointKind.V2: Classification.HYPERBOLIC,
            FixedPointKind.V2_TILDE: Classification.SOURCE,
            FixedPointKind.XI: Classification.HYPERBOLIC,
            FixedPointKind.ETA: Classification.SINK,
        }
        for p in SMALL_GRID:
            pts = fixed_points(p)
            assert len(pts) == 7
            seen = {fp.kind: fp.classification for fp in pts}
            assert seen == expected

    def test_locations_are_stationary(self):
        for p in SMALL_GRID:
            for fp in fixed_points(p):
                v = np.array(vector_field(fp.location, p))
                bound = 1e-10 * (1.0 + np.linalg.norm(fp.location))
                assert np.linalg.norm(v) < bound

    def test_origin_spectrum_exact(self):
        pts = {fp.kind: fp for fp in fixed_points(P11)}
        assert pts[FixedPointKind.ORIGIN].spectrum.eigenvalues == (0.5, 0.5)

    def test_axis_point_closed_forms(self):
        pts = {fp.kind: fp for fp in fixed_points(P23)}
        n1, n2 = 2, 3
        v1 = pts[FixedPointKind.V1]
        assert min(v1.spectrum.eigenvalues) == pytest.approx(
            -(n1 + 1) / (2 * n1 + 3), rel=1e-12
        )
        assert max(v1.spectrum.eigenvalues) == pytest.approx(
            n1 / (2 * n1 + 3) ** 2 + 0.5, rel=1e-12
        )
        tilde = pts[FixedPointKind.V2_TILDE]
        assert sorted(tilde.spectrum.eigenvalues) == pytest.approx(
            [n2 + 0.5, n2 + 1.0], rel=1e-12
        )

    def test_unstable_dimensions(self):
        dims = {fp.kind: fp.unstable_dimension for fp in fixed_points(P11)}
        assert dims == {
            FixedPointKind.ORIGIN: 2,
            FixedPointKind.V1: 1,
            FixedPointKind.V1_TILDE: 2,
            FixedPointKind.V2: 1,
            FixedPointKind.V2_TILDE: 2,
            FixedPointKind.XI: 1,
            FixedPointKind.ETA: 0,
        }

    def test_saddle_eigendirections_on_axis(self):
        pts = {fp.kind: fp for fp in fixed_points(P11)}
        v1 = pts[FixedPointKind.V1]
        vecs = {
            round(lam.real, 6): vec
            for lam, vec in zip(
                v1.spectrum.eigenvalues, v1.spectrum.eigenvectors
            )
        }
        stable = vecs[round(-0.4, 6)]
        unstable = vecs[round(0.54, 6)]
        assert abs(abs(stable[0]) - 1.0) < 1e-12 and abs(stable[1]) < 1e-12
        assert abs(unstable[0]) < 1e-12 and abs(abs(unstable[1]) - 1.0) < 1e-12


class TestRhoBounds:
    def test_sink_gap_is_negative(self):
        _, eta_fp, _ = einstein_points(P11)
        rec = rho_bound_check(eta_fp, P11)
        assert rec.minus_e_plus_rho1 < 0

    def test_saddle_straddles_zero(self):
        xi_fp, _, _ = einstein_points(P11)
        rec = rho_bound_check(xi_fp, P11)
        e_val = e_of(xi_fp.location, P11)
        assert rec.minus_e_plus_rho1 > 0
        assert rec.rho2 - e_val < 0

    def test_perron_row_sum_bound(self):
        for p in SMALL_GRID:
            xi_fp, _, _ = einstein_points(p)
            rec = rho_bound_check(xi_fp, p)
            assert rec.rho1 >= rec.perron_lower_bound - 1e-12

    def test_discriminant_exceeds_reference_square(self):
        for p in SMALL_GRID:
            xi_fp, _, _ = einstein_points(p)
            rec = rho_bound_check(xi_fp, p)
            s = sum(
                3.0 * p.q[i] ** 2 * xi_fp.location[i] ** 2 for i in range(2)
            )
            assert rec.a_value > s**2

    def test_rhos_match_numeric_spectrum(self):
        # Dual route: closed-form rho_{1,2} against numpy on the
        # similarity-transformed matrix.
        for p in SMALL_GRID:
            for fp_pick in (0, 1):
                fp = einstein_points(p)[fp_pick]
                rec = rho_bound_check(fp, p)
                n1, n2 = p.n
                q1, q2 = p.q
                c1, c2 = fp.location
                alpha = np.array(
                    [
                        [(8 * n1 + 6) * q1**2 * c1**2, 8 * n2 * q2**2 * c2**2],
                        [8 * n1 * q1**2 * c1**2, (8 * n2 + 6) * q2**2 * c2**2],
                    ]
                )
                lams = np.sort(np.linalg.eigvals(alpha).real)
                assert rec.rho2 == pytest.approx(lams[0], rel=1e-10)
                assert rec.rho1 == pytest.approx(lams[1], rel=1e-10)


class TestRegionMembership:
    def test_wedge_point(self):
        assert region_of((0.2, 0.2), P11) is Region.OMEGA1

    def test_trap_point(self):
        assert region_of((0.05, 0.05), P11) is Region.OMEGA2

    def test_disconnected_negative_pocket(self):
        # Both rates negative, but the segment to the origin crosses the
        # first nullcline, so the point is not in the bounded component.
        assert region_of((0.6, 0.0), P11) is Region.OTHER

    def test_interior_fixed_points_on_boundary(self):
        xi_fp, eta_fp, _ = einstein_points(P11)
        assert region_of(xi_fp.location, P11) is Region.OMEGA1
        assert region_of(eta_fp.location, P11) is Region.OMEGA1


class TestIntegrate:
    def test_fixed_start_stays_put(self):
        _, eta_fp, _ = einstein_points(P11)
        traj = integrate(eta_fp.location, P11, 50.0)
        assert np.max(np.abs(np.array(traj.states) - eta_fp.location)) < 1e-9

    def test_wedge_start_reaches_sink(self):
        traj = integrate((0.2, 0.2), P11, 200.0)
        assert traj.terminal_event.kind == "reached_fixed_point"
        assert traj.terminal_event.target == "eta"
        es = [e_of(s, P11) for s in traj.states]
        assert all(b - a <= 1e-9 for a, b in zip(es, es[1:]))

    def test_trap_start_reaches_sink_with_rising_energy(self):
        traj = integrate((0.05, 0.05), P11, 200.0)
        assert traj.terminal_event.target == "eta"
        es = [e_of(s, P11) for s in traj.states]
        assert all(b - a >= -1e-9 for a, b in zip(es, es[1:]))

    def test_axis_is_exactly_invariant(self):
        traj = integrate((0.3, 0.0), P11, 30.0)
        assert all(s[1] == 0.0 for s in traj.states)

    def test_backward_integration_decreasing_grid(self):
        traj = integrate((0.05, 0.05), P11, -40.0)
        assert traj.u_grid[0] == 0.0
        assert all(b < a for a, b in zip(traj.u_grid, traj.u_grid[1:]))


class TestShootManifold:
    def test_saddle_unstable_branch_lands_on_sink(self):
        xi_fp, eta_fp, _ = einstein_points(P11)
        lam_max = max(
            xi_fp.spectrum.eigenvalues, key=lambda z: complex(z).real
        )
        idx = xi_fp.spectrum.eigenvalues.index(lam_max)
        vec = np.real(np.array(xi_fp.spectrum.eigenvectors[idx]))
        # The inward branch (toward the origin) is the one that falls
        # into the sink; the outward branch leaves the domain.
        if vec[0] > 0:
            vec = -vec
        traj = shoot_manifold(xi_fp, tuple(vec), 1e-6, P11)
        assert traj.terminal_event.target == "eta"

    def test_axis_saddle_transverse_branch(self):
        pts = {fp.kind: fp for fp in fixed_points(P11)}
        traj = shoot_manifold(pts[FixedPointKind.V1], (0.0, 1.0), 1e-6, P11)
        assert traj.terminal_event.target == "eta"

    def test_non_eigendirection_rejected(self):
        xi_fp, _, _ = einstein_points(P11)
        with pytest.raises(SolverError):
            shoot_manifold(xi_fp, (1.0, 0.0), 1e-6, P11)

    def test_stable_direction_integrates_backward(self):
        xi_fp, _, _ = einstein_points(P11)
        lam_min = min(
            xi_fp.spectrum.eigenvalues, key=lambda z: complex(z).real
        )
        idx = xi_fp.spectrum.eigenvalues.index(lam_min)
        vec = np.real(np.array(xi_fp.spectrum.eigenvectors[idx]))
        traj = shoot_manifold(xi_fp, tuple(vec), 1e-6, P11)
        assert traj.u_grid[-1] < 0


class TestReconstruct:
    def test_constant_trajectory_gives_linear_psi(self):
        _, eta_fp, _ = einstein_points(P11)
        traj = integrate(eta_fp.location, P11, 20.0)
        path = reconstruct(traj, 1.0, P11)
        e_val = e_of(eta_fp.location, P11)
        predicted = 1.0 + e_val * np.array(path.tau)
        rel = np.abs(np.array(path.psi) - predicted) / predicted
        assert np.max(rel) < 1e-7

    def test_b_equals_psi_over_y(self):
        traj = integrate((0.2, 0.2), P11, 30.0)
        path = reconstruct(traj, 1.0, P11)
        ys = path.sample(np.array(path.us))["y"]
        assert np.allclose(path.psi / ys[:, 0], path.b1, rtol=1e-12)
        assert np.allclose(path.psi / ys[:, 1], path.b2, rtol=1e-12)
        assert np.allclose(path.a, 2.0 * np.array(path.psi), rtol=0)

    def test_psi_monotone_with_tau(self):
        for u_end in (30.0, -30.0):
            traj = integrate((0.05, 0.05), P11, u_end)
            path = reconstruct(traj, 1.0, P11)
            dtau = np.diff(path.tau)
            dpsi = np.diff(path.psi)
            assert np.all(np.sign(dtau) == np.sign(dpsi))

    def test_derivative_consistency_on_refined_samples(self):
        # Fourth-order stencils in u on a uniform refinement, then chain
        # rule through tau; both flow laws must hold to 1e-6 relative.
        traj = integrate((0.2, 0.2), P11, 25.0)
        path = reconstruct(traj, 1.0, P11)
        s = 0.01
        us = np.arange(path.us[0] + 2 * s, path.us[-1] - 2 * s, s)
        data = path.sample(us)
        psi, tau, ys = data["psi"], data["tau"], data["y"]
        b1 = psi / ys[:, 0]

        def d4(arr):
            return (
                arr[:-4] - 8 * arr[1:-3] + 8 * arr[3:-1] - arr[4:]
            ) / (12 * s)

        mid = slice(2, -2)
        dpsi_dtau = d4(psi) / d4(tau)
        e_vals = np.array([e_of((y1, y2), P11) for y1, y2 in ys[mid]])
        assert np.max(np.abs(dpsi_dtau / e_vals - 1.0)) < 1e-6

        db1_dtau = d4(b1) / d4(tau)
        n1, q1 = P11.n[0], P11.q[0]
        law = 2 * (n1 + 2) * q1 - 6 * q1**2 * psi[mid] / b1[mid]
        assert np.max(np.abs(db1_dtau / law - 1.0)) < 1e-6

    def test_axis_trajectory_truncates(self):
        traj = integrate((0.3, 0.0), P11, 10.0)
        path = reconstruct(traj, 1.0, P11)
        assert path.truncated
        assert len(path.psi) == 0


class TestAsymptotics:
    def test_forward_slope_matches_sink_energy(self):
        traj = integrate((0.2, 0.2), P11, 60.0)
        path = reconstruct(traj, 0.01, P11)
        rep = asymptotics(path, traj, P11)
        assert rep.collapse_time is None
        assert rep.slope == pytest.approx(rep.slope_target, rel=5e-3)
        _, eta_fp, _ = einstein_points(P11)
        assert rep.slope_target == pytest.approx(
            e_of(eta_fp.location, P11), rel=1e-12
        )

    def test_trap_collapse_time_bounds(self):
        traj = integrate((0.05, 0.05), P11, -60.0)
        path = reconstruct(traj, 1.0, P11)
        rep = asymptotics(path, traj, P11)
        _, eta_fp, _ = einstein_points(P11)
        lo = 1.0 / e_of(eta_fp.location, P11)
        assert rep.collapse_time is not None
        assert lo * (1 - 1e-9) <= rep.collapse_time <= 2.0 * (1 + 1e-9)

    def test_near_origin_backward_slope_is_half(self):
        y0 = (0.04 * np.cos(0.7), 0.04 * np.sin(0.7))
        traj = integrate(y0, P11, -60.0)
        path = reconstruct(traj, 1.0, P11)
        rep = asymptotics(path, traj, P11)
        assert rep.slope_target == pytest.approx(0.5, abs=1e-12)
        assert rep.slope == pytest.approx(0.5, rel=1e-2)
        assert rep.limit_point == pytest.approx((0.0, 0.0), abs=1e-9)

    def test_transverse_branch_backward_limits(self):
        pts = {fp.kind: fp for fp in fixed_points(P11)}
        v1 = pts[FixedPointKind.V1]
        fwd = shoot_manifold(v1, (0.0, 1.0), 1e-6, P11)
        # The start sits off the exact invariant branch by O(eps^2); that
        # offset grows backward, so the window stops before it surfaces.
        back = integrate(fwd.states[0], P11, -40.0)
        path = reconstruct(back, 1.0, P11)
        rep = asymptotics(path, back, P11)
        assert rep.limit_psi_over_b[0] == pytest.approx(0.1, rel=1e-2)
        assert abs(rep.limit_psi_over_b[1]) < 1e-2


class TestRicciSignature:
    def test_sink_satisfies_printed_threshold(self):
        for p in SMALL_GRID:
            _, eta_fp, _ = einstein_points(p)
            rec = ricci_signature(eta_fp.location, p)
            assert rec.fibre_positive
            assert rec.base_paper_sufficient == (True, True)
            assert rec.base_exact == (True, True)

    def test_threshold_separation(self):
        # Between (n+2)/(6q) and (n+2)/(3q) the two flags disagree.
        n1, q1 = P11.n[0], P11.q[0]
        y1 = (n1 + 2) / (6 * q1) * 1.5
        rec = ricci_signature((y1, 0.05), P11)
        assert not rec.base_paper_sufficient[0]
        assert rec.base_exact[0]

    def test_saddle_point_flags(self):
        xi_fp, _, _ = einstein_points(P11)
        rec = ricci_signature(xi_fp.location, P11)
        assert rec.base_paper_sufficient == (True, True)
