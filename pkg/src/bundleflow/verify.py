"""Mechanical re-checks of the inequality, sign, and classification claims.

Everything the fixed-point theory rests on is re-evaluated over parameter
grids and reported as CheckRecords with explicit margins.  A record passes
only when its strict inequality clears the scale-aware margin rule, so a
pass distinguishes a genuine gap from numerical noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .general import (
    EinsteinSign,
    c_matrices,
    einstein_general,
    integrate_general,
    l_spectrum_v2,
    reconstruct_general,
    stable_perturbation,
)
from .m2 import (
    Classification,
    FixedPointKind,
    FixedPointM2,
    SolverError,
    asymptotics,
    e_of,
    einstein_points,
    f_of,
    fixed_points,
    integrate,
    reconstruct,
    rho_bound_check,
    shoot_manifold,
)
from .ode import OdeOptions
from .params import BundleParams, general_params, make_params

__all__ = [
    "CheckRecord",
    "VerificationReport",
    "default_general_grid",
    "default_m2_grid",
    "run_all",
    "to_json",
    "to_text",
    "verify_classifications",
    "verify_dynamics",
    "verify_eta_bounds",
    "verify_general_lemmas",
    "verify_xi_claims",
]

# A pass needs margin > MARGIN_RULE * scale, where scale defaults to
# max(1, |lhs|, |rhs|) and tolerance-style checks use the tolerance itself.
MARGIN_RULE = 1e-9
CLOSED_FORM_TOL = 1e-12
CLUSTER_TOL = 1e-9
# The row-sum eigenvalue bound is non-strict and tight at n1 = n2, so that
# one check carries an explicit slack instead of a strict-margin demand.
PERRON_SLACK = 1e-12

ANCHOR_MAIN = (6.0 + math.sqrt(2.0)) / 12.0
ANCHOR_SYMMETRIC = (3.0 + math.sqrt(2.0)) / 6.0
ANCHOR_TWO_THREE = (10.0 + math.sqrt(2.0)) / 20.0


@dataclass(frozen=True)
class CheckRecord:
    """One re-derived claim: rendered inequality, numbers, margin, verdict."""

    check_id: str
    params: Dict[str, object]
    claim: str
    lhs: float
    rhs: float
    margin: float
    passed: bool


@dataclass(frozen=True)
class VerificationReport:
    records: Tuple[CheckRecord, ...]
    summary: Dict[str, Dict[str, int]]
    environment: Dict[str, object]


def _scale_for(lhs: float, rhs: float, scale: Optional[float]) -> float:
    return scale if scale is not None else max(1.0, abs(lhs), abs(rhs))


def _gt(check_id, params, claim, lhs, rhs, scale=None) -> CheckRecord:
    lhs, rhs = float(lhs), float(rhs)
    margin = lhs - rhs
    passed = margin > MARGIN_RULE * _scale_for(lhs, rhs, scale)
    return CheckRecord(check_id, dict(params), claim, lhs, rhs, margin, bool(passed))


def _lt(check_id, params, claim, lhs, rhs, scale=None) -> CheckRecord:
    lhs, rhs = float(lhs), float(rhs)
    margin = rhs - lhs
    passed = margin > MARGIN_RULE * _scale_for(lhs, rhs, scale)
    return CheckRecord(check_id, dict(params), claim, lhs, rhs, margin, bool(passed))


def _report(records: Sequence[CheckRecord], environment) -> VerificationReport:
    summary: Dict[str, Dict[str, int]] = {}
    for rec in records:
        family = rec.check_id.split(".", 1)[0]
        row = summary.setdefault(family, {"checks": 0, "passed": 0, "failed": 0})
        row["checks"] += 1
        row["passed" if rec.passed else "failed"] += 1
    return VerificationReport(
        records=tuple(records), summary=summary, environment=dict(environment)
    )


def default_m2_grid() -> Tuple[Tuple[int, int], ...]:
    grid = [(n1, n2) for n1 in range(1, 13) for n2 in range(1, 13)]
    grid += [(n1, 50) for n1 in range(1, 13)]
    return tuple(grid)


def default_general_grid() -> Tuple[Tuple[int, int], ...]:
    return tuple((m, d) for m in range(3, 13) for d in range(1, 13))


def _m2_grid(grid) -> Tuple[Tuple[int, int], ...]:
    pairs = tuple(tuple(pt) for pt in grid) if grid is not None else default_m2_grid()
    for n1, n2 in pairs:
        if not (1 <= n1 <= 50 and 1 <= n2 <= 50):
            raise ValueError(f"grid point ({n1}, {n2}) lies outside {{1..50}}^2")
    return pairs


def _grid_spec(pairs) -> str:
    if len(pairs) <= 8:
        return "[" + ", ".join(f"({a},{b})" for a, b in pairs) + "]"
    a, b = pairs[0], pairs[-1]
    return f"{len(pairs)} points from ({a[0]},{a[1]}) to ({b[0]},{b[1]})"


def _params(n1: int, n2: int) -> BundleParams:
    return make_params(2, (int(n1), int(n2)), (float(n1 + 2), float(n2 + 2)))


# ---------------------------------------------------------------------------
# Sink-coordinate bounds, case by case.

def _eta_case(n1: int, n2: int) -> Tuple[str, float, str]:
    lo, hi = sorted((n1, n2))
    if (lo, hi) == (1, 1):
        return "case-v", ANCHOR_SYMMETRIC, "y02 > (3+sqrt(2))/6"
    if lo == 1:
        return "case-ii", ANCHOR_MAIN, "y02 > (6+sqrt(2))/12"
    if (lo, hi) == (2, 2):
        return "case-iii", ANCHOR_SYMMETRIC, "y02 > (3+sqrt(2))/6"
    if (lo, hi) == (2, 3):
        return "case-iv", ANCHOR_TWO_THREE, "y02 > (10+sqrt(2))/20"
    return "case-i", ANCHOR_MAIN, "y02 > (6+sqrt(2))/12"


def _eta_bound(case: str, n: int) -> Tuple[float, str]:
    if case == "case-iii":
        return 0.0912, "q*eta < 0.0912"
    if case == "case-iv":
        return (0.1204, "q*eta < 0.1204") if n == 2 else (0.0928, "q*eta < 0.0928")
    if case == "case-v":
        return 0.1303, "q*eta < 0.1303"
    if case == "case-ii" and n == 1:
        return 0.1608, "q*eta < 0.1608"
    return 0.4661 / (n + 2), "q*eta < 0.4661/(n+2)"


def verify_eta_bounds(grid=None) -> VerificationReport:
    """Per-factor sink bounds plus the root anchor each case rests on."""
    pairs = _m2_grid(grid)
    records: List[CheckRecord] = []
    for n1, n2 in pairs:
        p = _params(n1, n2)
        _, eta_fp, detail = einstein_points(p)
        case, anchor, anchor_claim = _eta_case(n1, n2)
        base = {"n1": n1, "n2": n2}
        for i, (n, q, eta) in enumerate(zip(p.n, p.q, eta_fp.location), start=1):
            rhs, claim = _eta_bound(case, n)
            records.append(
                _lt(
                    f"lemma-eta-bound.{case}",
                    {**base, "factor": i},
                    claim.replace("q*eta", f"q{i}*eta{i}").replace("(n+2)", f"(n{i}+2)"),
                    q * eta,
                    rhs,
                )
            )
        records.append(
            _gt("lemma-eta-bound.anchor", base, anchor_claim, detail.y0_hi, anchor)
        )
    env = {"margin_rule": MARGIN_RULE, "m2_grid": _grid_spec(pairs)}
    return _report(records, env)


# ---------------------------------------------------------------------------
# Fixed-point classifications and closed-form spectra.

_KIND_SLUG = {
    FixedPointKind.ORIGIN: "origin",
    FixedPointKind.V1: "v1",
    FixedPointKind.V1_TILDE: "v1-tilde",
    FixedPointKind.V2: "v2",
    FixedPointKind.V2_TILDE: "v2-tilde",
    FixedPointKind.XI: "xi",
    FixedPointKind.ETA: "eta",
}

_EXPECTED_CLASS = {
    FixedPointKind.ORIGIN: Classification.SOURCE,
    FixedPointKind.V1: Classification.HYPERBOLIC,
    FixedPointKind.V1_TILDE: Classification.SOURCE,
    FixedPointKind.V2: Classification.HYPERBOLIC,
    FixedPointKind.V2_TILDE: Classification.SOURCE,
    FixedPointKind.XI: Classification.HYPERBOLIC,
    FixedPointKind.ETA: Classification.SINK,
}


def _closed_spectrum(kind: FixedPointKind, p: BundleParams):
    n1, n2 = p.n
    if kind is FixedPointKind.ORIGIN:
        return (0.5, 0.5)
    if kind is FixedPointKind.V1:
        return (-(n1 + 1) / (2 * n1 + 3), n1 / (2 * n1 + 3) ** 2 + 0.5)
    if kind is FixedPointKind.V2:
        return (-(n2 + 1) / (2 * n2 + 3), n2 / (2 * n2 + 3) ** 2 + 0.5)
    if kind is FixedPointKind.V1_TILDE:
        return (n1 + 0.5, n1 + 1.0)
    if kind is FixedPointKind.V2_TILDE:
        return (n2 + 0.5, n2 + 1.0)
    return None


def _classification_record(
    pair: Tuple[int, int], fp: FixedPointM2, expected: Classification
) -> CheckRecord:
    res = [complex(z).real for z in fp.spectrum.eigenvalues]
    slug = _KIND_SLUG[fp.kind]
    params = {"n1": pair[0], "n2": pair[1]}
    check_id = f"prop-classification.{slug}"
    if expected is Classification.SOURCE:
        rec = _gt(check_id, params, f"{slug} is a source: min Re lambda > 0", min(res), 0.0)
    elif expected is Classification.SINK:
        rec = _lt(check_id, params, f"{slug} is a sink: max Re lambda < 0", max(res), 0.0)
    else:
        rec = _gt(
            check_id,
            params,
            f"{slug} is hyperbolic: spectrum straddles zero",
            min(-min(res), max(res)),
            0.0,
        )
    if rec.passed and fp.classification is not expected:
        # A degenerate or mistyped point must surface as a failure even
        # when the raw spectral margin happens to clear the rule.
        rec = CheckRecord(
            rec.check_id, rec.params, rec.claim, rec.lhs, rec.rhs, rec.margin, False
        )
    return rec


def verify_classifications(grid=None) -> VerificationReport:
    """Seven point types per grid pair, with closed-form spectra checks."""
    pairs = _m2_grid(grid)
    records: List[CheckRecord] = []
    for n1, n2 in pairs:
        p = _params(n1, n2)
        for fp in fixed_points(p):
            records.append(_classification_record((n1, n2), fp, _EXPECTED_CLASS[fp.kind]))
            closed = _closed_spectrum(fp.kind, p)
            if closed is None:
                continue
            res = sorted(complex(z).real for z in fp.spectrum.eigenvalues)
            dev = max(abs(a - b) for a, b in zip(res, sorted(closed)))
            dev = max(dev, max(abs(complex(z).imag) for z in fp.spectrum.eigenvalues))
            records.append(
                _lt(
                    f"prop-classification.{_KIND_SLUG[fp.kind]}.closed-form",
                    {"n1": n1, "n2": n2},
                    "max |lambda - closed form| < 1e-12",
                    dev,
                    CLOSED_FORM_TOL,
                    scale=CLOSED_FORM_TOL,
                )
            )
    env = {
        "margin_rule": MARGIN_RULE,
        "m2_grid": _grid_spec(pairs),
        "closed_form_tol": CLOSED_FORM_TOL,
    }
    return _report(records, env)


# ---------------------------------------------------------------------------
# The estimate chain at the interior saddle.

def verify_xi_claims(grid=None) -> VerificationReport:
    """Saddle-side estimate chain, from the fraction sum to the row bound."""
    pairs = _m2_grid(grid)
    records: List[CheckRecord] = []
    for n1, n2 in pairs:
        p = _params(n1, n2)
        xi_fp, eta_fp, _ = einstein_points(p)
        base = {"n1": n1, "n2": n2}
        a_vals = [
            2 * (n + 2) * q - (4 * n + 6) * 2 * q * q * x
            for n, q, x in zip(p.n, p.q, xi_fp.location)
        ]
        b_vals = [8 * n * q * q * x for n, q, x in zip(p.n, p.q, xi_fp.location)]
        frac_sum = sum(b / (a + b) for a, b in zip(a_vals, b_vals))
        records.append(
            _gt(
                "xi-claims.sum-exceeds-one",
                base,
                "b1/(a1+b1) + b2/(a2+b2) > 1",
                frac_sum,
                1.0,
            )
        )
        for i, (a, b) in enumerate(zip(a_vals, b_vals), start=1):
            records.append(
                _gt("xi-claims.a-plus-b", {**base, "factor": i}, f"a{i} + b{i} > 0", a + b, 0.0)
            )
        e_val = e_of(xi_fp.location, p)
        for i, (q, x) in enumerate(zip(p.q, xi_fp.location), start=1):
            records.append(
                _gt(
                    "xi-claims.e-dominates",
                    {**base, "factor": i},
                    f"E(xi) - 6*q{i}^2*xi{i}^2 > 0",
                    e_val - 6 * q * q * x * x,
                    0.0,
                )
            )
        big_p = (p.q[0] * xi_fp.location[0]) ** 2
        big_q = (p.q[1] * xi_fp.location[1]) ** 2
        g_val = (
            -e_val**2
            + ((8 * n1 + 6) * big_p + (8 * n2 + 6) * big_q) * e_val
            - (48 * n1 + 48 * n2 + 36) * big_p * big_q
        )
        records.append(_gt("xi-claims.g-positive", base, "G(xi, E(xi)) > 0", g_val, 0.0))
        bound = rho_bound_check(xi_fp, p)
        row = min(
            (8 * n1 + 6) * big_p + 8 * n2 * big_q,
            8 * n1 * big_p + (8 * n2 + 6) * big_q,
        )
        slack = PERRON_SLACK * max(1.0, bound.rho1, row)
        records.append(
            _gt(
                "xi-claims.perron-row",
                base,
                "rho1 >= min row sum of the comparison matrix (non-strict, 1e-12 slack)",
                bound.rho1 - row,
                -slack,
                scale=slack,
            )
        )
        records.append(
            _gt("xi-claims.rho1-exceeds-e", base, "rho1(xi) > E(xi)", bound.rho1, e_val)
        )
        records.append(
            _gt(
                "xi-claims.discriminant",
                base,
                "A(xi) > (3*q1^2*xi1^2 + 3*q2^2*xi2^2)^2",
                bound.a_value,
                (3 * big_p + 3 * big_q) ** 2,
            )
        )
        eta_bound = rho_bound_check(eta_fp, p)
        pe = (p.q[0] * eta_fp.location[0]) ** 2
        qe = (p.q[1] * eta_fp.location[1]) ** 2
        records.append(
            _lt(
                "xi-claims.eta-discriminant",
                base,
                "A(eta) < ((4*n1+3)*q1^2*eta1^2 + (4*n2+3)*q2^2*eta2^2)^2",
                eta_bound.a_value,
                ((4 * n1 + 3) * pe + (4 * n2 + 3) * qe) ** 2,
            )
        )
    env = {
        "margin_rule": MARGIN_RULE,
        "m2_grid": _grid_spec(pairs),
        "perron_slack": PERRON_SLACK,
    }
    return _report(records, env)


# ---------------------------------------------------------------------------
# Equal-dimension lemmas: root bounds, 2x2 signs, invariant-subspace spectra.

def _cluster_deviation(spectrum, pair_eigs, lam3: float, m: int) -> float:
    res = sorted(complex(z).real for z in spectrum.eigenvalues)
    expected = sorted([pair_eigs[0]] * (m - 1) + [pair_eigs[1]] * (m - 1) + [lam3])
    dev = max(abs(a - b) for a, b in zip(res, expected))
    imag = max(abs(complex(z).imag) for z in spectrum.eigenvalues)
    return max(dev, imag)


def verify_general_lemmas(grid=None) -> VerificationReport:
    pts = tuple(tuple(pt) for pt in grid) if grid is not None else default_general_grid()
    records: List[CheckRecord] = []
    for m, d in pts:
        p = general_params(m, d)
        plus, minus = einstein_general(p)
        base = {"m": m, "d": d}
        sd = math.sqrt(d)
        bp, bm = plus.beta, minus.beta
        records.append(
            _gt("general-lemmas.beta-plus-lower", base,
                "beta+ > sqrt(d)*(d+2)/(2*(2d+3))", bp, sd * (d + 2) / (2 * (2 * d + 3)))
        )
        records.append(
            _lt("general-lemmas.beta-plus-upper", base,
                "beta+ < sqrt(d)*(d+2)/(2*(d+1))", bp, sd * (d + 2) / (2 * (d + 1)))
        )
        records.append(
            _gt("general-lemmas.beta-minus-lower", base,
                "beta- > sqrt(d)/(4*(d+2))", bm, sd / (4 * (d + 2)))
        )
        records.append(
            _lt("general-lemmas.beta-minus-upper", base,
                "beta- < 5*sqrt(d)/(6*(d+2))", bm, 5 * sd / (6 * (d + 2)))
        )
        cp = c_matrices(p, EinsteinSign.PLUS)
        cm = c_matrices(p, EinsteinSign.MINUS)
        records.append(
            _gt("general-lemmas.c-plus-c11-positive", base, "c11+ > 0", cp.c[0, 0], 0.0)
        )
        records.append(
            _lt("general-lemmas.c-plus-c22-negative", base, "c22+ < 0", cp.c[1, 1], 0.0)
        )
        records.append(
            _lt("general-lemmas.c-plus-det-negative", base, "det C+ < 0", cp.det, 0.0)
        )
        records.append(
            _lt("general-lemmas.c-minus-trace-negative", base, "tr C- < 0", cm.trace, 0.0)
        )
        records.append(
            _gt("general-lemmas.c-minus-det-positive", base, "det C- > 0", cm.det, 0.0)
        )
        records.append(
            _gt("general-lemmas.c-plus-gap", base,
                "eigenvalues of C+ are real and distinct",
                cp.eigenvalues[1] - cp.eigenvalues[0], 0.0)
        )
        records.append(
            _gt("general-lemmas.c-minus-gap", base,
                "eigenvalues of C- are real and distinct",
                cm.eigenvalues[1] - cm.eigenvalues[0], 0.0)
        )
        records.append(
            _lt("general-lemmas.lambda1-plus-negative", base,
                "lambda1+ < 0", cp.eigenvalues[0], 0.0)
        )
        records.append(
            _gt("general-lemmas.lambda2-plus-positive", base,
                "lambda2+ > 0", cp.eigenvalues[1], 0.0)
        )
        records.append(
            _lt("general-lemmas.lambda2-minus-negative", base,
                "lambda2- < 0", cm.eigenvalues[1], 0.0)
        )
        records.append(
            _gt("general-lemmas.lambda3-plus-positive", base,
                "lambda3+ > 0", plus.lambda3, 0.0)
        )
        records.append(
            _lt("general-lemmas.lambda3-minus-negative", base,
                "lambda3- < 0", minus.lambda3, 0.0)
        )
        for name, point, crec in (("plus", plus, cp), ("minus", minus, cm)):
            records.append(
                _lt(
                    f"general-lemmas.v2-{name}-multiplicities",
                    base,
                    "spectrum on the sum-zero subspace clusters as {m-1, m-1, 1}",
                    _cluster_deviation(point.spectrum_v2, crec.eigenvalues, point.lambda3, m),
                    CLUSTER_TOL,
                    scale=CLUSTER_TOL,
                )
            )
        res_p = sorted(complex(z).real for z in plus.spectrum_v2.eigenvalues)
        records.append(
            _gt(
                "general-lemmas.v2-plus-counts",
                base,
                "plus point has m expanding and m-1 contracting directions",
                min(-res_p[m - 2], res_p[m - 1]),
                0.0,
            )
        )
        res_m = [complex(z).real for z in minus.spectrum_v2.eigenvalues]
        records.append(
            _lt(
                "general-lemmas.v2-minus-definite",
                base,
                "minus point is negative definite on the sum-zero subspace",
                max(res_m),
                0.0,
            )
        )
        if d == 1:
            den = 2.0 * (5 * m - 3)
            records.append(
                _gt("general-lemmas.beta-plus-d1-lower", base,
                    "beta+ > (5m-2)/(2*(5m-3)) at d=1", bp, (5 * m - 2) / den)
            )
            records.append(
                _lt("general-lemmas.beta-plus-d1-upper", base,
                    "beta+ < (5m-1)/(2*(5m-3)) at d=1", bp, (5 * m - 1) / den)
            )
            records.append(
                _gt("general-lemmas.beta-minus-d1-lower", base,
                    "beta- > (m+1)/(2*(5m-3)) at d=1", bm, (m + 1) / den)
            )
            records.append(
                _lt("general-lemmas.beta-minus-d1-upper", base,
                    "beta- < (m+2)/(2*(5m-3)) at d=1", bm, (m + 2) / den)
            )
            records.append(
                _lt("general-lemmas.c-minus-c11-negative", base,
                    "c11- < 0 at d=1", cm.c[0, 0], 0.0)
            )
            records.append(
                _lt("general-lemmas.c-minus-c22-negative", base,
                    "c22- < 0 at d=1", cm.c[1, 1], 0.0)
            )
    env = {
        "margin_rule": MARGIN_RULE,
        "general_grid": _grid_spec(pts),
        "cluster_tol": CLUSTER_TOL,
    }
    return _report(records, env)


# ---------------------------------------------------------------------------
# Trajectory scenarios: limits, monotonicity, invariance, collapse windows.

def _p11() -> BundleParams:
    return _params(1, 1)


def _scenario_omega1() -> List[CheckRecord]:
    p = _p11()
    base = {"n1": 1, "n2": 1}
    traj = integrate((0.2, 0.2), p, 200.0)
    _, eta_fp, _ = einstein_points(p)
    dist = float(np.linalg.norm(np.asarray(traj.states[-1]) - np.array(eta_fp.location)))
    e_vals = np.array([e_of(s, p) for s in traj.states])
    defect = float(max(0.0, np.max(np.diff(e_vals))))
    f_vals = np.array([f_of(s, p) for s in traj.states])
    return [
        _lt("dynamics.omega1-limit", base,
            "flow from (0.2, 0.2) reaches the sink within 1e-8 by u=200",
            dist, 1e-8, scale=1e-8),
        _lt("dynamics.omega1-e-monotone", base,
            "E nonincreasing along the path (per-step defect < 1e-9)",
            defect, 1e-9, scale=1e-9),
        _gt("dynamics.omega1-invariance", base,
            "both rates stay nonnegative along the path (within 1e-8)",
            float(f_vals.min()), -1e-8, scale=1e-8),
    ]


def _scenario_omega2() -> List[CheckRecord]:
    p = _p11()
    base = {"n1": 1, "n2": 1}
    traj = integrate((0.05, 0.05), p, 200.0)
    _, eta_fp, _ = einstein_points(p)
    dist = float(np.linalg.norm(np.asarray(traj.states[-1]) - np.array(eta_fp.location)))
    e_vals = np.array([e_of(s, p) for s in traj.states])
    defect = float(max(0.0, -np.min(np.diff(e_vals))))
    f_vals = np.array([f_of(s, p) for s in traj.states])
    return [
        _lt("dynamics.omega2-limit", base,
            "flow from (0.05, 0.05) reaches the sink within 1e-8 by u=200",
            dist, 1e-8, scale=1e-8),
        _lt("dynamics.omega2-e-monotone", base,
            "E nondecreasing along the path (per-step defect < 1e-9)",
            defect, 1e-9, scale=1e-9),
        _lt("dynamics.omega2-invariance", base,
            "both rates stay nonpositive along the path (within 1e-8)",
            float(f_vals.max()), 1e-8, scale=1e-8),
    ]


def _scenario_xi_branches() -> List[CheckRecord]:
    p = _p11()
    base = {"n1": 1, "n2": 1}
    xi_fp, eta_fp, _ = einstein_points(p)
    res = [complex(z).real for z in xi_fp.spectrum.eigenvalues]
    idx = res.index(max(res))
    vec = np.real(np.array(xi_fp.spectrum.eigenvectors[idx]))
    if vec[0] > 0:
        # The inward branch falls into the sink; the outward one exits.
        vec = -vec
    fwd = shoot_manifold(xi_fp, tuple(vec), 1e-6, p)
    dist = float(np.linalg.norm(np.asarray(fwd.states[-1]) - np.array(eta_fp.location)))
    back = integrate(tuple(fwd.states[0]), p, -60.0)
    path = reconstruct(back, 1.0, p)
    rep = asymptotics(path, back, p)
    if rep.collapse_time is None:
        raise SolverError("backward branch produced no collapse time")
    return [
        _lt("dynamics.xi-forward-limit", base,
            "unstable branch of the saddle reaches the sink within 1e-8",
            dist, 1e-8, scale=1e-8),
        _gt("dynamics.xi-backward-time", base,
            "backward branch collapses at a finite positive time",
            rep.collapse_time, 0.0),
        _lt("dynamics.xi-backward-slope", base,
            "|psi/(T1+tau) - E(xi)| / E(xi) < 1% near the collapse",
            rep.quality["slope_rel_dev"], 0.01),
    ]


def _scenario_gamma1() -> List[CheckRecord]:
    p = _p11()
    base = {"n1": 1, "n2": 1}
    pts = {fp.kind: fp for fp in fixed_points(p)}
    _, eta_fp, _ = einstein_points(p)
    fwd = shoot_manifold(pts[FixedPointKind.V1], (0.0, 1.0), 1e-6, p)
    dist = float(np.linalg.norm(np.asarray(fwd.states[-1]) - np.array(eta_fp.location)))
    # The start sits off the exact branch by O(eps^2); backing up past
    # u = -40 lets that offset surface, so the window stops there.
    back = integrate(tuple(fwd.states[0]), p, -40.0)
    path = reconstruct(back, 1.0, p)
    rep = asymptotics(path, back, p)
    target = 1.0 / ((4 * p.n[0] + 6) * p.q[0])
    return [
        _lt("dynamics.gamma1-forward-limit", base,
            "transverse branch of the first axis saddle reaches the sink",
            dist, 1e-8, scale=1e-8),
        _lt("dynamics.gamma1-psi-b1", base,
            "psi/b1 approaches 1/((4n1+6)q1) within 1%",
            abs(rep.limit_psi_over_b[0] / target - 1.0), 0.01),
        _lt("dynamics.gamma1-psi-b2", base,
            "psi/b2 vanishes along the backward branch (below 1e-3)",
            abs(rep.limit_psi_over_b[1]), 1e-3, scale=1e-3),
    ]


def _scenario_steering() -> List[CheckRecord]:
    p = _p11()
    base = {"n1": 1, "n2": 1}
    records: List[CheckRecord] = []
    ratios = []
    for angle in (0.5, 1.1):
        y0 = (0.04 * math.cos(angle), 0.04 * math.sin(angle))
        traj = integrate(y0, p, -60.0)
        path = reconstruct(traj, 1.0, p)
        rep = asymptotics(path, traj, p)
        records.append(
            _lt("dynamics.origin-slope", {**base, "angle": angle},
                "|psi/(T+tau) - 1/2| / (1/2) < 1% near the collapse",
                rep.quality["slope_rel_dev"], 0.01)
        )
        ratios.append(float(path.b2[-1] / path.b1[-1]))
    records.append(
        _gt("dynamics.origin-steering", base,
            "limiting b2/b1 differs across the two slopes by more than 10%",
            abs(ratios[0] / ratios[1] - 1.0), 0.1)
    )
    return records


def _scenario_collapse_window() -> List[CheckRecord]:
    p = _p11()
    base = {"n1": 1, "n2": 1}
    _, eta_fp, _ = einstein_points(p)
    traj = integrate((0.05, 0.05), p, -60.0)
    path = reconstruct(traj, 1.0, p)
    rep = asymptotics(path, traj, p)
    if rep.collapse_time is None:
        raise SolverError("bounded-component backward run produced no collapse time")
    lo = 1.0 / e_of(eta_fp.location, p)
    return [
        _gt("dynamics.collapse-lower", base,
            "collapse time exceeds psi0/E(eta)", rep.collapse_time, lo),
        _lt("dynamics.collapse-upper", base,
            "collapse time stays below 2*psi0", rep.collapse_time, 2.0),
    ]


def _general_return_records(sign: EinsteinSign) -> List[CheckRecord]:
    p = general_params(3, 1)
    base = {"m": 3, "d": 1}
    name = sign.value
    plus, minus = einstein_general(p)
    point = plus if sign is EinsteinSign.PLUS else minus
    opts = OdeOptions(rtol=1e-13, atol=1e-15)
    s0 = stable_perturbation(p, sign, index=0, norm=1e-3)
    traj = integrate_general(s0, p, 100.0, opts=opts)
    target = point.state.as_vector()
    dists = [float(np.linalg.norm(s.as_vector() - target)) for s in traj.states]
    i_min = int(np.argmin(dists))
    drift = max(abs(sum(s.x) - 1.0) for s in traj.states)
    near = traj.states[i_min].as_vector()
    x, y = near[: p.m], near[p.m :]
    ricci_margin = float(np.min(2.0 * (p.d + 2) - 6.0 * x * (1.0 - x) * y))
    records = [
        _lt(f"dynamics.general-{name}-return", base,
            "stable-subspace perturbation returns within 1e-8 by u=100",
            dists[i_min], 1e-8, scale=1e-8),
        _lt(f"dynamics.general-{name}-drift", base,
            "simplex drift stays below 1e-10 throughout",
            drift, 1e-10, scale=1e-10),
        _gt(f"dynamics.general-{name}-ricci", base,
            "curvature margins are positive near the limit point",
            ricci_margin, 0.0),
    ]
    if sign is EinsteinSign.PLUS:
        # The saddle orbit leaves again along the expanding modes, so the
        # metric path is rebuilt only up to the closest approach.
        approach = integrate_general(s0, p, float(traj.u_grid[i_min]), opts=opts)
        path = reconstruct_general(approach, 1.0, p)
        slope_target = 2.0 * (p.d + 2) - 6.0 * (p.m - 1) * point.beta / (
            p.m * math.sqrt(p.d)
        )
        dtau = path.tau[-1] - path.tau[-2]
        devs = [
            abs(((bk[-1] - bk[-2]) / dtau) / slope_target - 1.0) for bk in path.b
        ]
        records.append(
            _lt("dynamics.general-plus-b-slope", base,
                "db_k/dtau approaches 2(d+2) - 6(m-1)beta+/(m sqrt(d)) within 1%",
                max(devs), 0.01)
        )
    return records


def _scenario_general_minus() -> List[CheckRecord]:
    return _general_return_records(EinsteinSign.MINUS)


def _scenario_general_plus() -> List[CheckRecord]:
    return _general_return_records(EinsteinSign.PLUS)


_SCENARIOS: Tuple[Tuple[str, Callable[[], List[CheckRecord]]], ...] = (
    ("m2-omega1-interior", _scenario_omega1),
    ("m2-omega2-interior", _scenario_omega2),
    ("m2-xi-branches", _scenario_xi_branches),
    ("m2-gamma1", _scenario_gamma1),
    ("m2-origin-steering", _scenario_steering),
    ("m2-collapse-window", _scenario_collapse_window),
    ("general-minus-return", _scenario_general_minus),
    ("general-plus-return", _scenario_general_plus),
)


def verify_dynamics(scenarios: Optional[Iterable[str]] = None) -> VerificationReport:
    """Trajectory scenarios; integrator failures become failed records."""
    table = dict(_SCENARIOS)
    names = [name for name, _ in _SCENARIOS] if scenarios is None else list(scenarios)
    records: List[CheckRecord] = []
    for name in names:
        if name not in table:
            raise ValueError(f"unknown scenario {name!r}")
        try:
            records.extend(table[name]())
        except SolverError as err:
            records.append(
                CheckRecord(
                    check_id=f"dynamics.{name}.error",
                    params={"scenario": name},
                    claim=f"scenario completed without solver error ({err})",
                    lhs=0.0,
                    rhs=1.0,
                    margin=-1.0,
                    passed=False,
                )
            )
    env = {"margin_rule": MARGIN_RULE, "scenarios": list(names)}
    return _report(records, env)


def run_all(m2_grid=None, general_grid=None, scenarios=None) -> VerificationReport:
    """All five families on their default (or supplied) grids."""
    parts = [
        verify_eta_bounds(m2_grid),
        verify_classifications(m2_grid),
        verify_xi_claims(m2_grid),
        verify_general_lemmas(general_grid),
        verify_dynamics(scenarios),
    ]
    records = [rec for part in parts for rec in part.records]
    env: Dict[str, object] = {}
    for part in parts:
        env.update(part.environment)
    return _report(records, env)


# ---------------------------------------------------------------------------
# Serialization: JSON for machines, aligned text for reading.

def to_json(report: VerificationReport) -> str:
    payload = {
        "environment": report.environment,
        "summary": report.summary,
        "records": [
            {
                "check_id": rec.check_id,
                "params": rec.params,
                "claim": rec.claim,
                "lhs": rec.lhs,
                "rhs": rec.rhs,
                "margin": rec.margin,
                "pass": rec.passed,
            }
            for rec in report.records
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _fmt_param(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_text(report: VerificationReport) -> str:
    rows = [
        (
            rec.check_id,
            " ".join(f"{k}={_fmt_param(v)}" for k, v in rec.params.items()),
            f"{rec.lhs:+.9e}",
            f"{rec.rhs:+.9e}",
            f"{rec.margin:+.9e}",
            "ok" if rec.passed else "FAIL",
        )
        for rec in report.records
    ]
    headers = ("check", "params", "lhs", "rhs", "margin", "status")
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
        for i in range(6)
    ]

    def fmt(row):
        left = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        right = [row[i].rjust(widths[i]) for i in (2, 3, 4)]
        return "  ".join(left + right + [row[5].ljust(widths[5])])

    lines = []
    for family in sorted(report.summary):
        counts = report.summary[family]
        # The "# " prefix keeps summary lines distinct from data rows,
        # which start with the bare family name.
        lines.append(f"# {family}: {counts['passed']}/{counts['checks']} checks passed")
    lines.append("")
    lines.append(fmt(headers))
    lines.append("-" * len(fmt(headers)))
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"
