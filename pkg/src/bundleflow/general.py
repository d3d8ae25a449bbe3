"""Equal-dimension multi-factor flow: simplex field, Einstein pair, spectra.

State is (X, Y) in R^(2m) with sum X_k = 1 and all entries positive, every
factor sharing the dimension d.  With E(X,Y) = m/2 + 1 + sum 4d X_k^2 Y_k^2
the flow is

    dX_k/du = 1/2 + X_k + 4d X_k^2 Y_k^2 - X_k E,
    dY_k/du = -Y_k (2(d+2) Y_k - 6 X_k (1 - X_k) Y_k^2 - E).

The simplex defect obeys d(sum X - 1)/du = (1 - E)(sum X - 1), so the
constraint is invariant and the full linearization always carries the
normal rate 1 - E on top of the tangential spectrum.  Every closed-form
constant below is re-derivable from the two displayed lines.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .eigen import SmallMatrix, Spectrum, eigen_small
from .m2 import SolverError
from .ode import OdeOptions, TerminalEvent, hermite_eval, integrate_ode
from .params import GeneralParams, StateXY

# The public field rejects states further off the simplex than this; the
# integrator renormalizes each accepted step so it never comes close.
SIMPLEX_GATE = 1e-8
DEGENERATE_TOL = 1e-9
# A stable seed is grown on the manifold from this fraction of the
# requested offset when the point also has unstable directions.
REFINE_SHRINK = 1e-5


class EinsteinSign(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"


@dataclass(frozen=True)
class CMatrixRecord:
    """2x2 action of the linearization on vectors (s1 v, s2 v), sum v = 0."""

    c: np.ndarray
    eigenvalues: Tuple[float, float]
    trace: float
    det: float


@dataclass(frozen=True)
class EinsteinPointGeneral:
    sign: EinsteinSign
    beta: float
    x: Tuple[float, ...]
    y: Tuple[float, ...]
    lambda3: float
    c_matrix: np.ndarray
    spectrum_v2: Spectrum

    @property
    def state(self) -> StateXY:
        return StateXY(x=self.x, y=self.y)


@dataclass(frozen=True)
class TrajectoryGeneral:
    params: GeneralParams
    u_grid: np.ndarray
    states: Tuple[StateXY, ...]
    derivs: np.ndarray
    step_diagnostics: tuple
    terminal_event: TerminalEvent
    opts: OdeOptions
    truncated: bool


def _as_vector(s, p: GeneralParams) -> np.ndarray:
    if isinstance(s, StateXY):
        return s.as_vector()
    z = np.asarray(s, dtype=float).ravel()
    if z.size != 2 * p.m:
        raise ValueError(f"expected a state of length {2 * p.m}, got {z.size}")
    return z


def e_general(s, p: GeneralParams) -> float:
    z = _as_vector(s, p)
    x, y = z[: p.m], z[p.m :]
    return float(p.m / 2.0 + 1.0 + np.sum(4.0 * p.d * x**2 * y**2))


def _field(z: np.ndarray, p: GeneralParams) -> np.ndarray:
    m, d = p.m, p.d
    x, y = z[:m], z[m:]
    e = m / 2.0 + 1.0 + np.sum(4.0 * d * x**2 * y**2)
    dx = 0.5 + x + 4.0 * d * x**2 * y**2 - x * e
    dy = -y * (2.0 * (d + 2) * y - 6.0 * x * (1.0 - x) * y**2 - e)
    return np.concatenate([dx, dy])


def vf_general(s, p: GeneralParams) -> Tuple[np.ndarray, np.ndarray]:
    """Field at a simplex state; raises beyond a 1e-8 constraint drift."""
    z = _as_vector(s, p)
    drift = abs(float(np.sum(z[: p.m])) - 1.0)
    if drift > SIMPLEX_GATE:
        raise SolverError(f"simplex constraint violated: sum X - 1 = {drift:.3e}")
    out = _field(z, p)
    return out[: p.m], out[p.m :]


def vf_metric_raw(a, b, n, lam) -> Tuple[np.ndarray, np.ndarray]:
    """Backward-time rates of the raw per-factor components (a_k, b_k).

    Unequal dimensions n_k and constants lam_k are allowed.  Exploratory
    only: nothing downstream consumes this and no claims are verified
    beyond its reduction to the normalized system when all n_k coincide.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = np.asarray(n, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if not (a.shape == b.shape == n.shape == lam.shape) or a.ndim != 1 or a.size < 2:
        raise ValueError("a, b, n, lam must be 1-d sequences of equal length >= 2")
    if np.any(a <= 0) or np.any(b <= 0) or np.any(n < 1) or np.any(lam <= 0):
        raise ValueError("components must be positive (n_k >= 1)")
    q = lam / (n + 2.0)
    a_hat = float(np.sum(a))
    da = 0.5 + a / a_hat + 4.0 * n * q**2 * (a / b) ** 2
    db = 2.0 * lam - 6.0 * q**2 * (a / b) * (1.0 - a / a_hat)
    return da, db


def jacobian_general(s, p: GeneralParams) -> np.ndarray:
    """Derivative of the field as a dense 2m x 2m matrix.

    Off-diagonal coupling enters only through E, so every block is a
    diagonal plus a rank-one term in grad E.
    """
    z = _as_vector(s, p)
    m, d = p.m, p.d
    x, y = z[:m], z[m:]
    e = m / 2.0 + 1.0 + np.sum(4.0 * d * x**2 * y**2)
    gx = 8.0 * d * x * y**2
    gy = 8.0 * d * x**2 * y
    a11 = np.diag(1.0 + 8.0 * d * x * y**2 - e) - np.outer(x, gx)
    a12 = np.diag(8.0 * d * x**2 * y) - np.outer(x, gy)
    a21 = np.diag(6.0 * (1.0 - 2.0 * x) * y**3) + np.outer(y, gx)
    a22 = np.diag(-4.0 * (d + 2) * y + 18.0 * x * (1.0 - x) * y**2 + e) + np.outer(
        y, gy
    )
    return np.block([[a11, a12], [a21, a22]])


@lru_cache(maxsize=None)
def v2_basis(m: int) -> np.ndarray:
    """Orthonormal basis of {sum of the first m coordinates = 0} in R^(2m).

    Householder reflection sending e_1 to the unit normal; its remaining
    columns span the subspace, deterministically.
    """
    if m < 2:
        raise ValueError(f"m must be at least 2, got {m}")
    dim = 2 * m
    normal = np.zeros(dim)
    normal[:m] = 1.0 / np.sqrt(m)
    v = -normal
    v[0] += 1.0
    h = np.eye(dim) - 2.0 * np.outer(v, v) / float(v @ v)
    basis = h[:, 1:].copy()
    basis.flags.writeable = False
    return basis


def _quadratic_coefficients(m: int, d: int) -> Tuple[float, float, float]:
    return (
        2.0 + 3.0 * (m - 1) / (m * d),
        (d + 2) / np.sqrt(d),
        (m + 2) / (4.0 * m),
    )


def _c_entries(m: int, d: int, beta: float) -> Tuple[float, float, float, float]:
    # c11 follows from 1 + 8 m beta^2 - E with E = m/2 + 1 + 4 m beta^2;
    # c22 uses the quadratic to trade the linear beta term for beta^2.
    c11 = 4.0 * m * beta**2 - m / 2.0
    c12 = 8.0 * np.sqrt(d) * beta / m
    c21 = 6.0 * m**2 * (m - 2) * beta**3 / d**1.5
    c22 = (6.0 * (m - 1) / d - 4.0 * m) * beta**2 - (m + 2) / 2.0
    return c11, c12, c21, c22


def _assemble_l(m: int, d: int, beta: float) -> np.ndarray:
    c11, c12, c21, c22 = _c_entries(m, d, beta)
    eye = np.eye(m)
    ones = np.ones((m, m))
    rd = np.sqrt(d)
    top = np.hstack(
        [c11 * eye - 8.0 * beta**2 * ones, c12 * eye - (8.0 * rd / m**2) * beta * ones]
    )
    bottom = np.hstack(
        [
            c21 * eye + (8.0 * m**2 / rd) * beta**3 * ones,
            c22 * eye + 8.0 * beta**2 * ones,
        ]
    )
    return np.vstack([top, bottom])


def _build_point(
    m: int, d: int, sign: EinsteinSign, beta: float
) -> Tuple[EinsteinPointGeneral, CMatrixRecord, np.ndarray]:
    qa, qb, qc = _quadratic_coefficients(m, d)
    residual = abs(qa * beta**2 - qb * beta + qc)
    if residual >= 1e-12:
        raise SolverError(f"quadratic residual {residual:.3e} for beta={beta!r}")
    c11, c12, c21, c22 = _c_entries(m, d, beta)
    c = np.array([[c11, c12], [c21, c22]])
    c.flags.writeable = False
    disc = (c11 - c22) ** 2 + 4.0 * c12 * c21
    if disc <= 0.0:
        raise SolverError("tangential eigenvalues failed to be real and distinct")
    half_gap = 0.5 * np.sqrt(disc)
    mid = 0.5 * (c11 + c22)
    record = CMatrixRecord(
        c=c,
        eigenvalues=(float(mid - half_gap), float(mid + half_gap)),
        trace=float(c11 + c22),
        det=float(c11 * c22 - c12 * c21),
    )
    l_full = _assemble_l(m, d, beta)
    l_full.flags.writeable = False
    basis = v2_basis(m)
    restricted = basis.T @ l_full @ basis
    spectrum = eigen_small(SmallMatrix.from_array(restricted))
    point = EinsteinPointGeneral(
        sign=sign,
        beta=float(beta),
        x=(1.0 / m,) * m,
        y=(float(m * beta / np.sqrt(d)),) * m,
        lambda3=float(2.0 * (d + 2) * m * beta / np.sqrt(d) - (m + 2)),
        c_matrix=c,
        spectrum_v2=spectrum,
    )
    return point, record, l_full


@lru_cache(maxsize=None)
def _einstein_data(
    m: int, d: int
) -> Dict[EinsteinSign, Tuple[EinsteinPointGeneral, CMatrixRecord, np.ndarray]]:
    qa, qb, qc = _quadratic_coefficients(m, d)
    disc = qb**2 - 4.0 * qa * qc
    if disc <= 0.0:
        raise SolverError(f"no real Einstein pair for m={m}, d={d}")
    sq = np.sqrt(disc)
    beta_plus = (qb + sq) / (2.0 * qa)
    beta_minus = 2.0 * qc / (qb + sq)
    return {
        EinsteinSign.PLUS: _build_point(m, d, EinsteinSign.PLUS, beta_plus),
        EinsteinSign.MINUS: _build_point(m, d, EinsteinSign.MINUS, beta_minus),
    }


def einstein_general(
    p: GeneralParams,
) -> Tuple[EinsteinPointGeneral, EinsteinPointGeneral]:
    """Both symmetric fixed points with all Y_k equal and positive."""
    data = _einstein_data(p.m, p.d)
    return data[EinsteinSign.PLUS][0], data[EinsteinSign.MINUS][0]


def c_matrices(p: GeneralParams, sign: EinsteinSign) -> CMatrixRecord:
    return _einstein_data(p.m, p.d)[EinsteinSign(sign)][1]


def l_matrix(p: GeneralParams, sign: EinsteinSign) -> np.ndarray:
    """Full linearization at the requested point, assembled blockwise."""
    return _einstein_data(p.m, p.d)[EinsteinSign(sign)][2].copy()


def l_spectrum_v2(p: GeneralParams, sign: EinsteinSign) -> Spectrum:
    """Spectrum of the linearization restricted to {sum dX = 0}."""
    return _einstein_data(p.m, p.d)[EinsteinSign(sign)][0].spectrum_v2


def stable_directions(
    p: GeneralParams, sign: EinsteinSign
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Contracting tangential eigendirections, lifted to ambient vectors."""
    data = _einstein_data(p.m, p.d)[EinsteinSign(sign)]
    spectrum = data[0].spectrum_v2
    basis = v2_basis(p.m)
    values: List[float] = []
    vectors: List[np.ndarray] = []
    for lam, vec in zip(spectrum.eigenvalues, spectrum.eigenvectors):
        lam = complex(lam)
        if lam.real >= -DEGENERATE_TOL:
            continue
        if abs(lam.imag) > 1e-9:
            raise SolverError(f"unexpected complex stable eigenvalue {lam}")
        w = np.asarray(vec)
        if np.iscomplexobj(w):
            w = w.real
        ambient = basis @ w
        ambient = ambient / np.linalg.norm(ambient)
        values.append(lam.real)
        vectors.append(ambient)
    return np.array(values), vectors


def _first_primes(k: int) -> List[int]:
    primes: List[int] = []
    n = 2
    while len(primes) < k:
        if all(n % q for q in primes):
            primes.append(n)
        n += 1
    return primes


def _weyl_coefficients(k: int, index: int) -> np.ndarray:
    """Deterministic low-discrepancy coefficients in [-1, 1)."""
    roots = np.sqrt(np.array(_first_primes(k), dtype=float))
    fractions = (index + 1) * (roots - np.floor(roots))
    return 2.0 * (fractions - np.floor(fractions)) - 1.0


def _renorm_x(z: np.ndarray, m: int) -> np.ndarray:
    out = z.copy()
    total = float(np.sum(out[:m]))
    if total > 0.0:
        out[:m] /= total
    out[m : 2 * m] = np.where(out[m : 2 * m] < 0.0, 0.0, out[m : 2 * m])
    return out


def _refine_on_manifold(
    p: GeneralParams,
    x_star: np.ndarray,
    unit: np.ndarray,
    norm: float,
    slow_rate: float,
) -> StateXY:
    """Grow a tiny stable offset backward until it reaches the target norm.

    Backward time contracts the transverse error while the stable span
    expands, so the crossing point sits on the stable manifold to the
    integrator's accuracy instead of the tangent's O(norm^2).
    """
    m = p.m
    opts = OdeOptions(rtol=1e-13, atol=1e-15, max_step=0.01)
    chunk = min(0.5, 1.0 / slow_rate)

    def rhs(u: float, z: np.ndarray) -> np.ndarray:
        return _field(z, p)

    def post(z: np.ndarray) -> np.ndarray:
        return _renorm_x(z, m)

    z = _renorm_x(x_star + (REFINE_SHRINK * norm) * unit, m)
    u = 0.0
    for _ in range(400):
        res = integrate_ode(rhs, u, u - chunk, z, post_step=post, opts=opts)
        dist = np.linalg.norm(res.ys - x_star, axis=1)
        beyond = np.nonzero(dist >= norm)[0]
        if beyond.size:
            i = int(beyond[0])
            if i == 0:
                crossing = res.ys[0]
            else:
                lo, hi = float(res.us[i - 1]), float(res.us[i])

                def offset_at(uu: float) -> float:
                    z_i = hermite_eval(res.us, res.ys, res.fs, np.array([uu]))[0]
                    return float(np.linalg.norm(z_i - x_star)) - norm

                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    if offset_at(mid) < 0.0:
                        lo = mid
                    else:
                        hi = mid
                # The interpolant locates the crossing time but its O(h^4)
                # value error sits off the orbit and would leak onto the
                # expanding modes; land on the crossing by integration.
                short = integrate_ode(
                    rhs, float(res.us[i - 1]), hi, res.ys[i - 1].copy(),
                    post_step=post, opts=opts,
                )
                crossing = short.ys[-1]
            crossing = _renorm_x(crossing, m)
            deviation = crossing - x_star
            deviation *= norm / np.linalg.norm(deviation)
            return StateXY.from_vector(x_star + deviation)
        z = res.ys[-1]
        u = float(res.us[-1])
    raise SolverError("backward refinement never reached the requested offset")


def stable_perturbation(
    p: GeneralParams, sign: EinsteinSign, index: int = 0, norm: float = 1e-3
) -> StateXY:
    """Reproducible stable-subspace seed at distance ``norm`` from the point.

    Quasi-random coefficients (Weyl sequence over ``index``) combine the
    stable directions.  At a point that also has expanding directions the
    tangent seed alone would be thrown off by its O(norm^2) manifold error,
    so the offset is instead grown backward along the flow.
    """
    if norm <= 0.0:
        raise ValueError(f"norm must be positive, got {norm}")
    if index < 0:
        raise ValueError(f"index must be nonnegative, got {index}")
    sign = EinsteinSign(sign)
    point = _einstein_data(p.m, p.d)[sign][0]
    values, vectors = stable_directions(p, sign)
    coeffs = _weyl_coefficients(len(vectors), index)
    combo = np.zeros(2 * p.m)
    for c, v in zip(coeffs, vectors):
        combo += c * v
    scale = float(np.linalg.norm(combo))
    if scale < 1e-9:
        raise SolverError(f"degenerate direction combination at index {index}")
    unit = combo / scale
    x_star = point.state.as_vector()
    expanding = any(
        complex(lam).real > DEGENERATE_TOL for lam in point.spectrum_v2.eigenvalues
    )
    if not expanding:
        return StateXY.from_vector(_renorm_x(x_star + norm * unit, p.m))
    return _refine_on_manifold(p, x_star, unit, norm, float(np.min(np.abs(values))))


def _rate_scale(p: GeneralParams) -> float:
    worst = 1.0
    for point, record, _ in _einstein_data(p.m, p.d).values():
        e_val = e_general(point.state, p)
        worst = max(
            worst,
            abs(record.eigenvalues[0]),
            abs(record.eigenvalues[1]),
            abs(point.lambda3),
            abs(1.0 - e_val),
        )
    return worst


def _domain_cap(p: GeneralParams) -> float:
    plus = _einstein_data(p.m, p.d)[EinsteinSign.PLUS][0]
    return 10.0 * max(1.0, plus.y[0])


def _flow_opts(p: GeneralParams, opts: Optional[OdeOptions]) -> OdeOptions:
    base = opts or OdeOptions()
    domain = base.domain_hi if base.domain_hi is not None else _domain_cap(p)
    # Keep h * |rate| inside the stability region even when the deviation
    # from a sink sits below the atol floor.
    return replace(
        base,
        domain_hi=domain,
        max_step=min(base.max_step, 2.5 / _rate_scale(p)),
    )


def integrate_general(
    s0: StateXY,
    p: GeneralParams,
    u_end: float,
    opts: Optional[OdeOptions] = None,
) -> TrajectoryGeneral:
    """Flow from s0; X is renormalized onto the simplex each accepted step."""
    if not isinstance(s0, StateXY):
        s0 = StateXY.from_vector(_as_vector(s0, p))
    z0 = s0.as_vector()
    run_opts = _flow_opts(p, opts)
    # A run that starts on an Einstein point reports the full window as a
    # constant trajectory instead of an instant arrival.
    targets = [
        (sign.value, point.state.as_vector())
        for sign, (point, _, _) in _einstein_data(p.m, p.d).items()
        if np.linalg.norm(z0 - point.state.as_vector()) > run_opts.arrival_tol
    ]

    def rhs(u: float, z: np.ndarray) -> np.ndarray:
        return _field(z, p)

    def post(z: np.ndarray) -> np.ndarray:
        return _renorm_x(z, p.m)

    res = integrate_ode(
        rhs, 0.0, float(u_end), z0, targets=targets, post_step=post, opts=run_opts
    )
    cut = len(res.us)
    truncated = False
    states: List[StateXY] = []
    for i, row in enumerate(res.ys):
        if np.min(row) <= 0.0:
            cut = i
            truncated = True
            break
        states.append(StateXY.from_vector(row))
    return TrajectoryGeneral(
        params=p,
        u_grid=res.us[:cut],
        states=tuple(states),
        derivs=res.fs[:cut],
        step_diagnostics=tuple(res.diagnostics[:cut]),
        terminal_event=res.event,
        opts=run_opts,
        truncated=truncated,
    )


@dataclass(frozen=True)
class MetricPathGeneral:
    """Per-factor metric data along a trajectory.

    a_hat is the total fibre amplitude, a_k = X_k a_hat its factor shares
    and b_k = a_hat / Y_k the base sizes; tau is flow time.
    """

    params: GeneralParams
    a_hat0: float
    us: np.ndarray
    tau: np.ndarray
    a_hat: np.ndarray
    a: Tuple[np.ndarray, ...]
    b: Tuple[np.ndarray, ...]
    truncated: bool
    _aug_us: np.ndarray
    _aug_ys: np.ndarray
    _aug_fs: np.ndarray

    def sample(self, us_query: Sequence[float]) -> Dict[str, np.ndarray]:
        """Dense per-factor data at query times inside the covered window."""
        if len(self._aug_us) < 2:
            raise SolverError("path too short for dense evaluation")
        m = self.params.m
        vals = hermite_eval(
            self._aug_us,
            self._aug_ys,
            self._aug_fs,
            np.asarray(us_query, dtype=float),
        )
        x = vals[:, :m]
        y = vals[:, m : 2 * m]
        a_hat = self.a_hat0 * np.exp(vals[:, 2 * m])
        return {
            "x": x,
            "y": y,
            "a_hat": a_hat,
            "tau": vals[:, 2 * m + 1].copy(),
            "a": x * a_hat[:, None],
            "b": a_hat[:, None] / y,
        }

    def at_tau(self, tau_star: float) -> Dict[str, object]:
        """State and metric data at a flow time, by bisection in u."""
        if len(self.us) < 2:
            raise SolverError("path too short for inversion")
        lo, hi = float(self.us[0]), float(self.us[-1])
        t0, t1 = float(self.tau[0]), float(self.tau[-1])
        sign = 1.0 if t1 >= t0 else -1.0
        if not (min(t0, t1) <= tau_star <= max(t0, t1)):
            raise SolverError(f"tau={tau_star!r} outside the covered range")

        def tau_at(uu: float) -> float:
            return float(self.sample(np.array([uu]))["tau"][0])

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
        return {
            "u": u_star,
            "tau": float(data["tau"][0]),
            "a_hat": float(data["a_hat"][0]),
            "x": data["x"][0],
            "y": data["y"][0],
            "a": data["a"][0],
            "b": data["b"][0],
        }


def reconstruct_general(
    traj: TrajectoryGeneral, a_hat0: float, p: GeneralParams
) -> MetricPathGeneral:
    """Metric data along a trajectory from d(ln a_hat)/du = E, dtau/du = a_hat.

    Re-solves the flow jointly with the amplitude and clock so the
    quadrature carries the integrator's order instead of degrading to the
    dense output.
    """
    if a_hat0 <= 0.0:
        raise ValueError(f"a_hat0 must be positive, got {a_hat0!r}")
    if len(traj.u_grid) == 0:
        raise SolverError("trajectory is empty")
    m = p.m
    if len(traj.u_grid) < 2 or traj.u_grid[-1] == traj.u_grid[0]:
        empty = np.array([])
        return MetricPathGeneral(
            params=p, a_hat0=a_hat0, us=empty, tau=empty, a_hat=empty,
            a=(empty,) * m, b=(empty,) * m, truncated=True,
            _aug_us=empty, _aug_ys=empty, _aug_fs=empty,
        )

    def rhs(u: float, z: np.ndarray) -> np.ndarray:
        flow = _field(z[: 2 * m], p)
        x, y = z[:m], z[m : 2 * m]
        e = m / 2.0 + 1.0 + np.sum(4.0 * p.d * x**2 * y**2)
        return np.concatenate([flow, [e, a_hat0 * np.exp(z[2 * m])]])

    def post(z: np.ndarray) -> np.ndarray:
        out = z.copy()
        out[: 2 * m] = _renorm_x(out[: 2 * m], m)
        return out

    # Downstream consistency checks differentiate the dense output; the
    # cubic interpolant's slope error scales like (E h)^3, so cap h by the
    # largest energy seen along the trajectory.
    e_scale = max(1.0, max(e_general(s, p) for s in traj.states))
    run_opts = replace(
        traj.opts,
        domain_hi=None,
        max_step=min(traj.opts.max_step, 0.02 / e_scale),
    )
    z0 = np.concatenate([traj.states[0].as_vector(), [0.0, 0.0]])
    res = integrate_ode(
        rhs,
        float(traj.u_grid[0]),
        float(traj.u_grid[-1]),
        z0,
        post_step=post,
        opts=run_opts,
    )
    ys = res.ys
    keep = np.min(ys[:, : 2 * m], axis=1) > 0.0
    truncated = traj.truncated
    if not np.all(keep):
        truncated = True
        last = int(np.argmin(keep))
        ys, us, fs = ys[:last], res.us[:last], res.fs[:last]
    else:
        us, fs = res.us, res.fs
    a_hat = a_hat0 * np.exp(ys[:, 2 * m])
    return MetricPathGeneral(
        params=p,
        a_hat0=a_hat0,
        us=us,
        tau=ys[:, 2 * m + 1].copy(),
        a_hat=a_hat,
        a=tuple(ys[:, k] * a_hat for k in range(m)),
        b=tuple(a_hat / ys[:, m + k] for k in range(m)),
        truncated=truncated,
        _aug_us=us,
        _aug_ys=ys,
        _aug_fs=fs,
    )


def ricci_positive_general(s, p: GeneralParams) -> np.ndarray:
    """Per-factor flags 2(d+2) - 6 X_k (1 - X_k) Y_k > 0.

    The fibre directions are always positively curved; these margins decide
    the base directions, hence positivity of the whole tensor.
    """
    z = _as_vector(s, p)
    x, y = z[: p.m], z[p.m :]
    return (2.0 * (p.d + 2) - 6.0 * x * (1.0 - x) * y) > 0.0
