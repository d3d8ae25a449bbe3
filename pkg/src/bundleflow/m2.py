"""Two-factor reduced flow: fields, fixed points, Einstein pairs, paths.

State is Y = (Y1, Y2) in the closed first quadrant.  The scalar
E(Y) = 1/2 + 4 n1 q1^2 Y1^2 + 4 n2 q2^2 Y2^2 drives both the flow and
the metric amplitude; the factor rates are
F_i = 2(n_i+2) q_i Y_i - 6 q_i^2 Y_i^2 - E and dY_i/du = -Y_i F_i.
All closed-form constants below are re-derivable from these two lines.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .eigen import SmallMatrix, Spectrum, eigen_small
from .ode import (
    IntegratorError,
    OdeOptions,
    TerminalEvent,
    hermite_eval,
    integrate_ode,
)
from .params import BundleParams

ROOT_WIDTH = 1e-14
STATIONARY_TOL = 1e-10
DEGENERATE_TOL = 1e-9
SEGMENT_SAMPLES = 512
SEGMENT_MARGIN = 1e-12
EIGENDIR_TOL = 1e-8
# Relative floor for evaluating psi/(T+tau): closer to the collapse time
# the difference T+tau is pure cancellation noise.
COLLAPSE_EVAL_FLOOR = 1e-6


class SolverError(Exception):
    """A solver contract could not be met (bracketing, fits, inputs)."""


class FixedPointKind(enum.Enum):
    ORIGIN = "origin"
    V1 = "v1"
    V1_TILDE = "v1_tilde"
    V2 = "v2"
    V2_TILDE = "v2_tilde"
    XI = "xi"
    ETA = "eta"


class Classification(enum.Enum):
    SOURCE = "source"
    SINK = "sink"
    HYPERBOLIC = "hyperbolic"
    DEGENERATE = "degenerate"


class Region(enum.Enum):
    OMEGA1 = "omega1"
    OMEGA2 = "omega2"
    OTHER = "other"


@dataclass(frozen=True)
class FixedPointM2:
    kind: FixedPointKind
    location: Tuple[float, float]
    spectrum: Spectrum
    classification: Classification
    unstable_dimension: int


@dataclass(frozen=True)
class EinsteinSolveDetail:
    y0_lo: float
    y0_hi: float
    y_aux: Tuple[Tuple[float, float], Tuple[float, float]]
    phi_min_location: float
    lambda_xi: float
    lambda_eta: float


@dataclass(frozen=True)
class RhoBoundRecord:
    rho1: float
    rho2: float
    a_value: float
    minus_e_plus_rho1: float
    perron_lower_bound: float


@dataclass(frozen=True)
class RicciSignatureM2:
    fibre_positive: bool
    base_exact: Tuple[bool, bool]
    base_paper_sufficient: Tuple[bool, bool]


@dataclass(frozen=True)
class TrajectoryM2:
    params: BundleParams
    u_grid: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    step_diagnostics: tuple
    terminal_event: TerminalEvent
    opts: OdeOptions


@dataclass(frozen=True)
class AsymptoticsReportM2:
    limit_point: Tuple[float, float]
    limit_psi_over_b: Tuple[float, float]
    slope: float
    slope_target: float
    collapse_time: Optional[float]
    quality: Dict[str, float]


def _check_m2(p: BundleParams) -> None:
    if p.m != 2:
        raise ValueError("this module handles exactly two factors")


def e_of(y: Sequence[float], p: BundleParams) -> float:
    _check_m2(p)
    n1, n2 = p.n
    q1, q2 = p.q
    return 0.5 + 4 * n1 * (q1 * y[0]) ** 2 + 4 * n2 * (q2 * y[1]) ** 2


def f_of(y: Sequence[float], p: BundleParams) -> Tuple[float, float]:
    _check_m2(p)
    e = e_of(y, p)
    n1, n2 = p.n
    q1, q2 = p.q
    return (
        2 * (n1 + 2) * q1 * y[0] - 6 * (q1 * y[0]) ** 2 - e,
        2 * (n2 + 2) * q2 * y[1] - 6 * (q2 * y[1]) ** 2 - e,
    )


def vector_field(y: Sequence[float], p: BundleParams) -> Tuple[float, float]:
    f1, f2 = f_of(y, p)
    return (-y[0] * f1, -y[1] * f2)


def _f_batch(pts: np.ndarray, p: BundleParams) -> np.ndarray:
    n1, n2 = p.n
    q1, q2 = p.q
    z1 = q1 * pts[:, 0]
    z2 = q2 * pts[:, 1]
    e = 0.5 + 4 * n1 * z1**2 + 4 * n2 * z2**2
    return np.column_stack(
        (
            2 * (n1 + 2) * z1 - 6 * z1**2 - e,
            2 * (n2 + 2) * z2 - 6 * z2**2 - e,
        )
    )


def jacobian(y: Sequence[float], p: BundleParams) -> SmallMatrix:
    _check_m2(p)
    n1, n2 = p.n
    q1, q2 = p.q
    y1, y2 = y
    h1 = (
        -4 * (n1 + 2) * q1 * y1
        + 3 * (4 * n1 + 6) * (q1 * y1) ** 2
        + 4 * n2 * (q2 * y2) ** 2
        + 0.5
    )
    h2 = (
        -4 * (n2 + 2) * q2 * y2
        + 3 * (4 * n2 + 6) * (q2 * y2) ** 2
        + 4 * n1 * (q1 * y1) ** 2
        + 0.5
    )
    off12 = 8 * n2 * q2**2 * y1 * y2
    off21 = 8 * n1 * q1**2 * y1 * y2
    return SmallMatrix.from_array(np.array([[h1, off12], [off21, h2]]))


def _y_aux_branch(y0: float, n: int) -> float:
    # Negative-sign branch of the auxiliary quadratic, written to avoid
    # the 1 - sqrt(1 - alpha) cancellation for small alpha.  Rounding in
    # y0*(n+2)^2 can push alpha a few ulps past 1 at the branch point
    # y0 = 3/(n+2)^2 itself, so that sliver counts as the boundary.
    alpha = 3.0 / (y0 * (n + 2) ** 2)
    if alpha > 1.0 + 1e-12:
        raise SolverError(
            f"auxiliary discriminant negative at y0={y0!r} (n={n})"
        )
    return 2.0 / (1.0 + np.sqrt(max(1.0 - alpha, 0.0)))


def phi(y0: float, p: BundleParams) -> float:
    """3(y0-1) + sum_i 2 n_i (y_i(y0)-1); symmetric in factor order."""
    _check_m2(p)
    total = 3.0 * (y0 - 1.0)
    for n in p.n:
        total += 2.0 * n * (_y_aux_branch(y0, n) - 1.0)
    return total


def _classify(spec: Spectrum) -> Tuple[Classification, int]:
    res = [complex(z).real for z in spec.eigenvalues]
    unstable = sum(1 for r in res if r > DEGENERATE_TOL)
    if any(abs(r) < DEGENERATE_TOL for r in res):
        return Classification.DEGENERATE, unstable
    if all(r > 0 for r in res):
        return Classification.SOURCE, unstable
    if all(r < 0 for r in res):
        return Classification.SINK, unstable
    return Classification.HYPERBOLIC, unstable


def _point_at(
    kind: FixedPointKind, loc: Tuple[float, float], p: BundleParams
) -> FixedPointM2:
    spec = eigen_small(jacobian(loc, p))
    classification, unstable = _classify(spec)
    return FixedPointM2(kind, loc, spec, classification, unstable)


def _bisect(f, a: float, b: float) -> float:
    fa = f(a)
    fb = f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise SolverError(
            f"root bracket lost on [{a!r}, {b!r}]: f(a)={fa!r}, f(b)={fb!r}"
        )
    while b - a > ROOT_WIDTH:
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b, fb = mid, fm
    return 0.5 * (a + b)


@lru_cache(maxsize=256)
def _einstein_cached(p: BundleParams):
    lo = 3.0 / (min(p.n) + 2) ** 2
    hi = 1.0 - 1e-12

    def phi_p(y0: float) -> float:
        return phi(y0, p)

    if phi_p(lo) <= 0.0 or phi_p(hi) <= 0.0:
        raise SolverError(
            f"endpoint signs violate the convexity bracket for n={p.n}"
        )
    # phi is convex here: trisect to the minimizer, then bisect each side.
    a, b = lo, hi
    while b - a > ROOT_WIDTH:
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if phi_p(m1) < phi_p(m2):
            b = m2
        else:
            a = m1
    y0_min = 0.5 * (a + b)
    if phi_p(y0_min) >= 0.0:
        raise SolverError(
            f"phi minimum is nonnegative for n={p.n}: no interior pair"
        )
    y0_lo = _bisect(phi_p, lo, y0_min)
    y0_hi = _bisect(phi_p, y0_min, hi)

    def recover(y0: float) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        aux = tuple(_y_aux_branch(y0, n) for n in p.n)
        point = tuple(aux[i] / (4.0 * p.lam[i] * y0) for i in range(2))
        return aux, point

    aux_lo, xi = recover(y0_lo)
    aux_hi, eta = recover(y0_hi)

    for point, y0 in ((xi, y0_lo), (eta, y0_hi)):
        f1, f2 = f_of(point, p)
        if max(abs(f1), abs(f2)) > STATIONARY_TOL:
            raise SolverError(f"stationarity residual too large at {point!r}")
        if abs(y0 - 1.0 / (2.0 * e_of(point, p))) > STATIONARY_TOL:
            raise SolverError(f"energy reciprocal mismatch at y0={y0!r}")
    if not all(0.0 < eta[i] < xi[i] for i in range(2)):
        raise SolverError(f"ordering eta < xi violated for n={p.n}")

    def einstein_constant(point: Tuple[float, float]) -> float:
        vals = [
            p.lam[i] * point[i] - 3.0 * (p.q[i] * point[i]) ** 2
            for i in range(2)
        ]
        if abs(vals[0] - vals[1]) > 1e-9 * max(abs(vals[0]), 1e-300):
            raise SolverError(
                f"Einstein constant differs between factors: {vals!r}"
            )
        return vals[0]

    detail = EinsteinSolveDetail(
        y0_lo=y0_lo,
        y0_hi=y0_hi,
        y_aux=(aux_lo, aux_hi),
        phi_min_location=y0_min,
        lambda_xi=einstein_constant(xi),
        lambda_eta=einstein_constant(eta),
    )
    xi_fp = _point_at(FixedPointKind.XI, xi, p)
    eta_fp = _point_at(FixedPointKind.ETA, eta, p)
    return xi_fp, eta_fp, detail


def einstein_points(p: BundleParams):
    """Both interior stationary pairs with the solve detail record."""
    _check_m2(p)
    return _einstein_cached(p)


@lru_cache(maxsize=256)
def _fixed_points_cached(p: BundleParams) -> tuple:
    n1, n2 = p.n
    q1, q2 = p.q
    xi_fp, eta_fp, _ = _einstein_cached(p)
    return (
        _point_at(FixedPointKind.ORIGIN, (0.0, 0.0), p),
        _point_at(FixedPointKind.V1, (1.0 / ((4 * n1 + 6) * q1), 0.0), p),
        _point_at(FixedPointKind.V1_TILDE, (1.0 / (2 * q1), 0.0), p),
        _point_at(FixedPointKind.V2, (0.0, 1.0 / ((4 * n2 + 6) * q2)), p),
        _point_at(FixedPointKind.V2_TILDE, (0.0, 1.0 / (2 * q2)), p),
        xi_fp,
        eta_fp,
    )


def fixed_points(p: BundleParams) -> tuple:
    """All seven stationary states in a fixed reporting order."""
    _check_m2(p)
    return _fixed_points_cached(p)


def rho_bound_check(point: FixedPointM2, p: BundleParams) -> RhoBoundRecord:
    """Spectral data of the similarity-transformed linearization part.

    rho1 >= rho2 are its eigenvalues, a_value the discriminant under the
    square root, and perron_lower_bound the smaller row sum (a positive
    matrix bounds its leading eigenvalue below by any row sum minimum).
    """
    _check_m2(p)
    if point.kind not in (FixedPointKind.XI, FixedPointKind.ETA):
        raise SolverError("bound record is defined at the interior pairs")
    n1, n2 = p.n
    big_p = (p.q[0] * point.location[0]) ** 2
    big_q = (p.q[1] * point.location[1]) ** 2
    half_trace = 0.5 * ((8 * n1 + 6) * big_p + (8 * n2 + 6) * big_q)
    det = big_p * big_q * (48 * n1 + 48 * n2 + 36)
    a_value = half_trace**2 - det
    root = np.sqrt(a_value)
    rho1 = half_trace + root
    rho2 = half_trace - root
    row1 = (8 * n1 + 6) * big_p + 8 * n2 * big_q
    row2 = 8 * n1 * big_p + (8 * n2 + 6) * big_q
    return RhoBoundRecord(
        rho1=rho1,
        rho2=rho2,
        a_value=a_value,
        minus_e_plus_rho1=rho1 - e_of(point.location, p),
        perron_lower_bound=min(row1, row2),
    )


def region_of(y: Sequence[float], p: BundleParams) -> Region:
    _check_m2(p)
    f1, f2 = f_of(y, p)
    # The margin keeps boundary points (the interior fixed points sit on
    # F=0 exactly) from flipping category on rounding noise.
    if f1 >= -SEGMENT_MARGIN and f2 >= -SEGMENT_MARGIN:
        return Region.OMEGA1
    if f1 <= SEGMENT_MARGIN and f2 <= SEGMENT_MARGIN:
        # Bounded-component membership: the straight segment to the
        # origin must stay on the nonpositive side of both rates.
        ts = np.linspace(0.0, 1.0, SEGMENT_SAMPLES)
        pts = ts[:, None] * np.asarray(y, dtype=float)[None, :]
        if np.all(_f_batch(pts, p) <= SEGMENT_MARGIN):
            return Region.OMEGA2
    return Region.OTHER


def _domain_cap(p: BundleParams) -> float:
    return 10.0 * max(1.0 / (2.0 * p.q[0]), 1.0 / (2.0 * p.q[1]))


def _step_cap(p: BundleParams) -> float:
    # Keep h * |eigenvalue| inside the stability region even when the
    # deviation from a sink is below the atol floor; rates are bounded
    # by the energy scale 1/2 + n1 + n2 on the box of interest.
    return 2.5 / max(1.0, 0.5 + p.n[0] + p.n[1])


def _flow_opts(p: BundleParams, opts: Optional[OdeOptions]) -> OdeOptions:
    base = opts or OdeOptions()
    domain = base.domain_hi if base.domain_hi is not None else _domain_cap(p)
    return replace(
        base,
        domain_hi=domain,
        max_step=min(base.max_step, _step_cap(p)),
    )


def _clamp_quadrant(y: np.ndarray) -> np.ndarray:
    return np.where(y < 0.0, 0.0, y)


def integrate(
    y0: Sequence[float],
    p: BundleParams,
    u_end: float,
    opts: Optional[OdeOptions] = None,
) -> TrajectoryM2:
    """Flow from y0; stops on fixed-point arrival or domain exit."""
    _check_m2(p)
    start = np.array(y0, dtype=float)
    if np.any(start < 0.0):
        raise ValueError("state must lie in the closed first quadrant")
    run_opts = _flow_opts(p, opts)
    # A run that starts on a fixed point should report the full window
    # as a constant trajectory, not an instant arrival.
    targets = [
        (fp.kind.value, np.array(fp.location))
        for fp in fixed_points(p)
        if np.linalg.norm(start - np.array(fp.location)) > run_opts.arrival_tol
    ]

    def rhs(u: float, y: np.ndarray) -> np.ndarray:
        return np.array(vector_field(y, p))

    res = integrate_ode(
        rhs,
        0.0,
        u_end,
        start,
        targets=targets,
        post_step=_clamp_quadrant,
        opts=run_opts,
    )
    return TrajectoryM2(
        params=p,
        u_grid=res.us,
        states=res.ys,
        derivs=res.fs,
        step_diagnostics=tuple(res.diagnostics),
        terminal_event=res.event,
        opts=run_opts,
    )


def shoot_manifold(
    fp: FixedPointM2,
    direction: Sequence[float],
    eps: float,
    p: BundleParams,
    u_end: Optional[float] = None,
    opts: Optional[OdeOptions] = None,
) -> TrajectoryM2:
    """Trace the invariant branch leaving fp along an eigendirection.

    Unstable directions integrate forward, stable ones backward; the
    offset is eps scaled down when the spectral gap is thin.
    """
    _check_m2(p)
    if not 0.0 < eps <= 1e-4:
        raise SolverError("offset must lie in (0, 1e-4]")
    d = np.array(direction, dtype=float)
    norm = np.linalg.norm(d)
    if norm == 0.0:
        raise SolverError("direction must be nonzero")
    d = d / norm
    jac = jacobian(fp.location, p).entries
    jd = jac @ d
    lam = float(d @ jd)
    if np.linalg.norm(jd - lam * d) > EIGENDIR_TOL * max(1.0, abs(lam)):
        raise SolverError("direction is not an eigendirection of the flow")
    if abs(lam) < DEGENERATE_TOL:
        raise SolverError("eigenvalue too close to zero to shoot")
    other = float(np.trace(jac)) - lam
    gap = abs(lam - other) / max(abs(lam), abs(other))
    eps_eff = eps * min(1.0, max(gap, 0.1))
    start = np.maximum(np.array(fp.location) + eps_eff * d, 0.0)
    horizon = u_end if u_end is not None else (200.0 if lam > 0 else -60.0)
    return integrate(tuple(start), p, horizon, opts=opts)


@dataclass(frozen=True)
class MetricPathM2:
    params: BundleParams
    psi0: float
    us: np.ndarray
    tau: np.ndarray
    psi: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    a: np.ndarray
    truncated: bool
    _aug_us: np.ndarray
    _aug_ys: np.ndarray
    _aug_fs: np.ndarray

    def sample(self, us_query: np.ndarray) -> Dict[str, np.ndarray]:
        """Dense values of y, psi, tau at arbitrary u inside the range."""
        if len(self.us) == 0:
            raise SolverError("path is empty after truncation")
        vals = hermite_eval(self._aug_us, self._aug_ys, self._aug_fs, us_query)
        return {
            "y": vals[:, 0:2],
            "psi": self.psi0 * np.exp(vals[:, 2]),
            "tau": vals[:, 3],
        }

    def at_tau(self, tau_star: float) -> Dict[str, float]:
        """State at prescribed tau, located by bisection in u."""
        if len(self.us) == 0:
            raise SolverError("path is empty after truncation")
        lo, hi = float(self.us[0]), float(self.us[-1])
        t_lo = float(self.tau[0])
        t_hi = float(self.tau[-1])
        if not min(t_lo, t_hi) <= tau_star <= max(t_lo, t_hi):
            raise SolverError("tau outside the reconstructed range")
        sign = 1.0 if t_hi >= t_lo else -1.0

        def tau_at(u: float) -> float:
            return float(self.sample(np.array([u]))["tau"][0])

        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if sign * (tau_at(mid) - tau_star) < 0.0:
                lo = mid
            else:
                hi = mid
            if abs(hi - lo) < 1e-13 * max(1.0, abs(hi)):
                break
        u_star = 0.5 * (lo + hi)
        data = self.sample(np.array([u_star]))
        y1, y2 = data["y"][0]
        psi = float(data["psi"][0])
        return {
            "u": u_star,
            "tau": float(data["tau"][0]),
            "psi": psi,
            "y1": float(y1),
            "y2": float(y2),
            "b1": psi / y1,
            "b2": psi / y2,
        }


def reconstruct(
    traj: TrajectoryM2, psi0: float, p: BundleParams
) -> MetricPathM2:
    """Metric data (psi, tau, b_i, a) along a trajectory.

    Re-solves the flow jointly with d(ln psi)/du = E and dtau/du = psi at
    the trajectory's own tolerances, so the quadrature carries the same
    order as the integrator instead of degrading to the dense output.
    """
    _check_m2(p)
    if psi0 <= 0.0:
        raise ValueError("psi0 must be positive")
    if len(traj.u_grid) == 0:
        raise SolverError("trajectory is empty")
    states = np.asarray(traj.states)
    zero_idx = np.nonzero(np.min(states, axis=1) <= 0.0)[0]
    truncated = zero_idx.size > 0
    last_idx = int(zero_idx[0]) - 1 if truncated else len(traj.u_grid) - 1
    empty = np.array([])
    if last_idx < 0 or traj.u_grid[last_idx] == traj.u_grid[0]:
        return MetricPathM2(
            params=p, psi0=psi0, us=empty, tau=empty, psi=empty,
            b1=empty, b2=empty, a=empty, truncated=True,
            _aug_us=empty, _aug_ys=empty, _aug_fs=empty,
        )

    def rhs(u: float, z: np.ndarray) -> np.ndarray:
        y = z[0:2]
        v = vector_field(y, p)
        e = e_of(y, p)
        return np.array([v[0], v[1], e, psi0 * np.exp(z[2])])

    def clamp(z: np.ndarray) -> np.ndarray:
        out = z.copy()
        out[0:2] = _clamp_quadrant(out[0:2])
        return out

    # Downstream consistency checks differentiate the dense output; the
    # cubic interpolant's slope error scales like (E h)^3, so cap h by
    # the largest energy seen along the trajectory.
    e_scale = max(
        1.0, max(e_of((s[0], s[1]), p) for s in states[: last_idx + 1])
    )
    run_opts = replace(
        traj.opts,
        domain_hi=None,
        max_step=min(traj.opts.max_step, 0.02 / e_scale),
    )
    z0 = np.array([states[0, 0], states[0, 1], 0.0, 0.0])
    res = integrate_ode(
        rhs,
        float(traj.u_grid[0]),
        float(traj.u_grid[last_idx]),
        z0,
        post_step=clamp,
        opts=run_opts,
    )
    ys = res.ys
    keep = np.min(ys[:, 0:2], axis=1) > 0.0
    if not np.all(keep):
        truncated = True
        cut = int(np.argmin(keep))
        ys = ys[:cut]
        us = res.us[:cut]
        fs = res.fs[:cut]
    else:
        us = res.us
        fs = res.fs
    psi = psi0 * np.exp(ys[:, 2])
    return MetricPathM2(
        params=p,
        psi0=psi0,
        us=us,
        tau=ys[:, 3].copy(),
        psi=psi,
        b1=psi / ys[:, 0],
        b2=psi / ys[:, 1],
        a=2.0 * psi,
        truncated=truncated,
        _aug_us=us,
        _aug_ys=ys,
        _aug_fs=fs,
    )


def _nearest_fixed_point(
    state: np.ndarray, p: BundleParams
) -> Tuple[Optional[FixedPointM2], float]:
    best = None
    best_dist = np.inf
    for fp in fixed_points(p):
        dist = float(np.linalg.norm(state - np.array(fp.location)))
        if dist < best_dist:
            best, best_dist = fp, dist
    return best, best_dist


def asymptotics(
    path: MetricPathM2, traj: TrajectoryM2, p: BundleParams
) -> AsymptoticsReportM2:
    """Growth rate of psi and, for backward runs, the collapse time.

    Forward runs fit psi against tau over the last tau-decade; backward
    runs fit tau(u) to tau_inf + c*exp(E_limit*u) on the tail half and
    report T = -tau_inf.
    """
    _check_m2(p)
    if len(path.us) < 4:
        raise SolverError("path too short for asymptotics")
    final = np.asarray(traj.states[-1], dtype=float)
    snap, snap_dist = _nearest_fixed_point(final, p)
    if snap is not None and snap_dist < 1e-6:
        limit_point = snap.location
    else:
        limit_point = (float(final[0]), float(final[1]))
    slope_target = e_of(limit_point, p)
    quality: Dict[str, float] = {"limit_snap_distance": snap_dist}
    limit_psi_over_b = (
        float(path.psi[-1] / path.b1[-1]),
        float(path.psi[-1] / path.b2[-1]),
    )
    backward = path.us[-1] < path.us[0]

    if not backward:
        tau_end = float(path.tau[-1])
        grid = np.linspace(float(path.us[0]), float(path.us[-1]), 2048)
        data = path.sample(grid)
        mask = data["tau"] >= tau_end / 10.0
        if int(mask.sum()) < 16:
            raise SolverError("tau range too short for a slope fit")
        slope, _ = np.polyfit(data["tau"][mask], data["psi"][mask], 1)
        quality["fit_samples"] = float(mask.sum())
        quality["slope_rel_dev"] = abs(slope / slope_target - 1.0)
        return AsymptoticsReportM2(
            limit_point=limit_point,
            limit_psi_over_b=limit_psi_over_b,
            slope=float(slope),
            slope_target=slope_target,
            collapse_time=None,
            quality=quality,
        )

    # Backward branch: exponential tail fit for the collapse time.
    us = path.us
    half = 0.5 * (us[0] + us[-1])
    mask = us <= half
    if int(mask.sum()) < 8:
        raise SolverError("tail too short for a collapse fit")
    x = np.exp(slope_target * us[mask])
    c_fit, tau_inf = np.polyfit(x, path.tau[mask], 1)
    resid = path.tau[mask] - (tau_inf + c_fit * x)
    t_collapse = -float(tau_inf)
    t_collapse = max(t_collapse, float(-np.min(path.tau)))
    quality["tau_fit_residual"] = float(np.max(np.abs(resid)))
    quality["fit_samples"] = float(mask.sum())

    # Evaluate psi/(T of + tau) away from the cancellation floor.
    denom = t_collapse + path.tau
    ok = denom > COLLAPSE_EVAL_FLOOR * t_collapse
    if not np.any(ok):
        raise SolverError("no sample clear of the collapse time")
    idx = int(np.nonzero(ok)[0][-1])
    slope = float(path.psi[idx] / denom[idx])
    quality["slope_rel_dev"] = abs(slope / slope_target - 1.0)
    quality["slope_eval_u"] = float(us[idx])

    if region_of(np.asarray(traj.states[0]), p) is Region.OMEGA2:
        _, eta_fp, _ = einstein_points(p)
        lo = path.psi0 / e_of(eta_fp.location, p)
        hi = 2.0 * path.psi0
        if not (lo * (1 - 1e-9) <= t_collapse <= hi * (1 + 1e-9)):
            raise SolverError(
                f"collapse time {t_collapse!r} escapes [{lo!r}, {hi!r}]"
            )
        quality["collapse_margin_lo"] = t_collapse - lo
        quality["collapse_margin_hi"] = hi - t_collapse

    return AsymptoticsReportM2(
        limit_point=limit_point,
        limit_psi_over_b=limit_psi_over_b,
        slope=slope,
        slope_target=slope_target,
        collapse_time=t_collapse,
        quality=quality,
    )


def ricci_signature(y: Sequence[float], p: BundleParams) -> RicciSignatureM2:
    """Sign flags for the two curvature thresholds per factor.

    The stricter printed bound (n_i+2)/(6 q_i) is sufficient; the sign of
    Lambda_i - 3 q_i^2 Y_i flips at (n_i+2)/(3 q_i).  Which of the two is
    the exact geometric threshold is left open deliberately; callers get
    both flags and must not collapse them.
    """
    _check_m2(p)
    if not (y[0] > 0.0 and y[1] > 0.0):
        raise ValueError("signature needs strictly positive coordinates")
    sufficient = tuple(
        bool(y[i] < (p.n[i] + 2) / (6.0 * p.q[i])) for i in range(2)
    )
    exact = tuple(
        bool(y[i] < (p.n[i] + 2) / (3.0 * p.q[i])) for i in range(2)
    )
    return RicciSignatureM2(
        fibre_positive=True,
        base_exact=exact,
        base_paper_sufficient=sufficient,
    )
