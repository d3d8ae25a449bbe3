"""Config-driven command line exporting CSV/JSON artifacts.

One scenario per invocation, configured by a single JSON document.
Exit codes: 0 pass, 1 config error, 2 solver failure, 3 integrator
failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import verify as verify_mod
from .general import (
    EinsteinSign,
    c_matrices,
    e_general,
    einstein_general,
    integrate_general,
    reconstruct_general,
)
from .m2 import (
    SolverError,
    asymptotics,
    e_of,
    einstein_points,
    f_of,
    fixed_points,
    integrate,
    reconstruct,
    region_of,
)
from .ode import IntegratorError, OdeOptions
from .params import BundleParams, GeneralParams, StateXY, general_params, make_params

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INTEGRATOR = 3
EXIT_VERIFY = 4

_OPT_KEYS = (
    "rtol", "atol", "arrival_tol", "domain_hi", "max_steps", "first_step",
    "max_step",
)


class ConfigError(Exception):
    pass


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _params_from(cfg: dict):
    spec = cfg.get("params")
    if not isinstance(spec, dict):
        raise ConfigError("config needs a 'params' object")
    if "m" in spec and "d" in spec:
        return general_params(int(spec["m"]), int(spec["d"]))
    if "n" in spec and "lam" in spec:
        n = tuple(int(v) for v in spec["n"])
        lam = tuple(float(v) for v in spec["lam"])
        return make_params(2, n, lam)
    raise ConfigError("params must give either n/lam or m/d")


def _opts_from(cfg: dict) -> Optional[OdeOptions]:
    kwargs = {}
    for key in _OPT_KEYS:
        if key in cfg:
            value = cfg[key]
            kwargs[key] = int(value) if key == "max_steps" else float(value)
    return OdeOptions(**kwargs) if kwargs else None


def _vector(cfg: dict, key: str, length: int) -> tuple:
    value = cfg.get(key)
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ConfigError(f"config needs '{key}' as a list of {length} numbers")
    return tuple(float(v) for v in value)


def _float_field(cfg: dict, key: str, default: Optional[float] = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"config needs a numeric '{key}'")
        return default
    return float(cfg[key])


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _py(value):
    if isinstance(value, dict):
        return {k: _py(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_py(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_py(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_py(payload), sort_keys=True, indent=2) + "\n")


def _write_csv(
    path: Path,
    header: Sequence[str],
    rows: Sequence[Sequence[str]],
    comment: Optional[str] = None,
) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    if comment is not None:
        lines.append(f"# {comment}")
    path.write_text("\n".join(lines) + "\n")


def _spectrum_payload(spectrum) -> List[List[float]]:
    return [[float(complex(z).real), float(complex(z).imag)]
            for z in spectrum.eigenvalues]


# ---------------------------------------------------------------------------
# einstein / classify

def _m2_point_payload(fp, p: BundleParams) -> dict:
    f1, f2 = f_of(fp.location, p)
    return {
        "location": list(fp.location),
        "residual": max(abs(f1), abs(f2)),
        "eigenvalues": _spectrum_payload(fp.spectrum),
        "classification": fp.classification.value,
        "unstable_dimension": fp.unstable_dimension,
    }


def _general_point_payload(point, p: GeneralParams) -> dict:
    # Residual of the defining quadratic in beta.
    qa = 2.0 + 3.0 * (p.m - 1) / (p.m * p.d)
    qb = -(p.d + 2) / math.sqrt(p.d)
    qc = (p.m + 2) / (4.0 * p.m)
    crec = c_matrices(p, point.sign)
    return {
        "beta": point.beta,
        "x": list(point.x),
        "y": list(point.y),
        "lambda3": point.lambda3,
        "residual": abs(qa * point.beta**2 + qb * point.beta + qc),
        "c_matrix": [[crec.c[0, 0], crec.c[0, 1]], [crec.c[1, 0], crec.c[1, 1]]],
        "c_eigenvalues": list(crec.eigenvalues),
        "v2_eigenvalues": _spectrum_payload(point.spectrum_v2),
    }


def cmd_einstein(cfg: dict, out: Path) -> int:
    p = _params_from(cfg)
    if isinstance(p, BundleParams):
        try:
            xi_fp, eta_fp, detail = einstein_points(p)
        except SolverError as err:
            print(f"solver failure: {err}", file=sys.stderr)
            return EXIT_SOLVER
        payload = {
            "system": "m2",
            "n": list(p.n),
            "lam": list(p.lam),
            "q": list(p.q),
            "xi": _m2_point_payload(xi_fp, p),
            "eta": _m2_point_payload(eta_fp, p),
            "einstein_constants": {
                "xi": detail.lambda_xi,
                "eta": detail.lambda_eta,
            },
            "y0": {"lo": detail.y0_lo, "hi": detail.y0_hi},
        }
    else:
        try:
            plus, minus = einstein_general(p)
        except SolverError as err:
            print(f"solver failure: {err}", file=sys.stderr)
            return EXIT_SOLVER
        payload = {
            "system": "general",
            "m": p.m,
            "d": p.d,
            "plus": _general_point_payload(plus, p),
            "minus": _general_point_payload(minus, p),
        }
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "einstein.json", payload)
    return EXIT_OK


def cmd_classify(cfg: dict, out: Path) -> int:
    p = _params_from(cfg)
    if not isinstance(p, BundleParams):
        raise ConfigError("classify expects two-factor params (n/lam)")
    try:
        points = fixed_points(p)
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    payload = {
        "n": list(p.n),
        "lam": list(p.lam),
        "points": [
            {
                "kind": fp.kind.value,
                "location": list(fp.location),
                "eigenvalues": _spectrum_payload(fp.spectrum),
                "classification": fp.classification.value,
                "unstable_dimension": fp.unstable_dimension,
            }
            for fp in points
        ],
    }
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "classification.json", payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# flow / reconstruct

def _m2_trajectory_rows(traj, p: BundleParams) -> List[List[str]]:
    rows = []
    for u, s in zip(traj.u_grid, traj.states):
        rows.append(
            [_fmt(u), _fmt(s[0]), _fmt(s[1]), region_of(s, p).value,
             _fmt(e_of(s, p))]
        )
    return rows


def _asymptotics_payload(rep) -> dict:
    return {
        "limit_point": list(rep.limit_point),
        "limit_psi_over_b": list(rep.limit_psi_over_b),
        "slope": rep.slope,
        "slope_target": rep.slope_target,
        "collapse_time": rep.collapse_time,
        "quality": dict(rep.quality),
    }


def _run_m2_metric(cfg: dict, p: BundleParams, out: Path, with_trajectory: bool) -> int:
    y0 = _vector(cfg, "y0", 2)
    u_end = _float_field(cfg, "u_end")
    psi0 = _float_field(cfg, "psi0", 1.0)
    opts = _opts_from(cfg)
    out.mkdir(parents=True, exist_ok=True)
    traj_file = out / "trajectory.csv"
    header = ["u", "Y1", "Y2", "region", "E"]
    try:
        traj = integrate(y0, p, u_end, opts=opts)
    except (SolverError, IntegratorError) as err:
        if with_trajectory:
            _write_csv(traj_file, header, [], comment=f"integrator failure: {err}")
        print(f"integrator failure: {err}", file=sys.stderr)
        return EXIT_INTEGRATOR
    if with_trajectory:
        _write_csv(traj_file, header, _m2_trajectory_rows(traj, p))
    try:
        path = reconstruct(traj, psi0, p)
    except (SolverError, IntegratorError) as err:
        _write_csv(out / "metric.csv", ["tau", "psi", "b1", "b2"], [],
                   comment=f"integrator failure: {err}")
        print(f"integrator failure: {err}", file=sys.stderr)
        return EXIT_INTEGRATOR
    rows = [
        [_fmt(t), _fmt(ps), _fmt(b1), _fmt(b2)]
        for t, ps, b1, b2 in zip(path.tau, path.psi, path.b1, path.b2)
    ]
    _write_csv(out / "metric.csv", ["tau", "psi", "b1", "b2"], rows)
    try:
        rep = asymptotics(path, traj, p)
    except SolverError as err:
        _write_json(out / "asymptotics.json", {"error": str(err)})
        print(f"integrator failure: {err}", file=sys.stderr)
        return EXIT_INTEGRATOR
    _write_json(out / "asymptotics.json", _asymptotics_payload(rep))
    return EXIT_OK


def _run_general_metric(
    cfg: dict, p: GeneralParams, out: Path, with_trajectory: bool
) -> int:
    x0 = _vector(cfg, "x0", p.m)
    y0 = _vector(cfg, "y0", p.m)
    u_end = _float_field(cfg, "u_end")
    a_hat0 = _float_field(cfg, "a_hat0", 1.0)
    opts = _opts_from(cfg)
    try:
        s0 = StateXY(x=x0, y=y0)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    out.mkdir(parents=True, exist_ok=True)
    traj_file = out / "trajectory.csv"
    header = (
        ["u"]
        + [f"X{i}" for i in range(1, p.m + 1)]
        + [f"Y{i}" for i in range(1, p.m + 1)]
        + ["E"]
    )
    try:
        traj = integrate_general(s0, p, u_end, opts=opts)
    except (SolverError, IntegratorError) as err:
        if with_trajectory:
            _write_csv(traj_file, header, [], comment=f"integrator failure: {err}")
        print(f"integrator failure: {err}", file=sys.stderr)
        return EXIT_INTEGRATOR
    if with_trajectory:
        rows = []
        for u, s in zip(traj.u_grid, traj.states):
            rows.append(
                [_fmt(u)]
                + [_fmt(v) for v in s.x]
                + [_fmt(v) for v in s.y]
                + [_fmt(e_general(s, p))]
            )
        _write_csv(traj_file, header, rows)
    m_header = (
        ["tau", "a_hat"]
        + [f"a{i}" for i in range(1, p.m + 1)]
        + [f"b{i}" for i in range(1, p.m + 1)]
    )
    try:
        path = reconstruct_general(traj, a_hat0, p)
    except (SolverError, IntegratorError) as err:
        _write_csv(out / "metric.csv", m_header, [],
                   comment=f"integrator failure: {err}")
        print(f"integrator failure: {err}", file=sys.stderr)
        return EXIT_INTEGRATOR
    rows = []
    for i in range(len(path.tau)):
        row = [_fmt(path.tau[i]), _fmt(path.a_hat[i])]
        row += [_fmt(path.a[k][i]) for k in range(p.m)]
        row += [_fmt(path.b[k][i]) for k in range(p.m)]
        rows.append(row)
    _write_csv(out / "metric.csv", m_header, rows)
    drift = max(abs(sum(s.x) - 1.0) for s in traj.states)
    b_slope = None
    if len(path.tau) >= 2:
        dtau = path.tau[-1] - path.tau[-2]
        b_slope = [float((bk[-1] - bk[-2]) / dtau) for bk in path.b]
    _write_json(
        out / "asymptotics.json",
        {
            "terminal": {
                "kind": traj.terminal_event.kind,
                "u": traj.terminal_event.u,
                "target": traj.terminal_event.target,
            },
            "sum_x_drift": drift,
            "b_slope": b_slope,
        },
    )
    return EXIT_OK


def cmd_flow(cfg: dict, out: Path) -> int:
    p = _params_from(cfg)
    if isinstance(p, BundleParams):
        return _run_m2_metric(cfg, p, out, with_trajectory=True)
    return _run_general_metric(cfg, p, out, with_trajectory=True)


def cmd_reconstruct(cfg: dict, out: Path) -> int:
    p = _params_from(cfg)
    if isinstance(p, BundleParams):
        return _run_m2_metric(cfg, p, out, with_trajectory=False)
    return _run_general_metric(cfg, p, out, with_trajectory=False)


# ---------------------------------------------------------------------------
# portrait

def _nullcline_rows(p: BundleParams, samples: int) -> List[List[str]]:
    # F_i = 0 completes the square to an axis-aligned ellipse: with
    # c = (n_i+2)/((4n_i+6)q_i) and R = (n_i+2)^2/(4n_i+6) - 1/2 > 0,
    # (4n_i+6)q_i^2 (Y_i - c)^2 + 4 n_j q_j^2 Y_j^2 = R.
    ts = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    rows = []
    for locus, i in (("f1", 0), ("f2", 1)):
        j = 1 - i
        n_i, q_i = p.n[i], p.q[i]
        n_j, q_j = p.n[j], p.q[j]
        center = (n_i + 2) / ((4 * n_i + 6) * q_i)
        radius = (n_i + 2) ** 2 / (4 * n_i + 6) - 0.5
        semi_own = math.sqrt(radius / ((4 * n_i + 6) * q_i**2))
        semi_other = math.sqrt(radius / (4 * n_j * q_j**2))
        for t in ts:
            y = [0.0, 0.0]
            y[i] = center + semi_own * math.cos(t)
            y[j] = semi_other * math.sin(t)
            rows.append([locus, _fmt(t), _fmt(y[0]), _fmt(y[1])])
    return rows


def cmd_portrait(cfg: dict, out: Path) -> int:
    p = _params_from(cfg)
    if not isinstance(p, BundleParams):
        raise ConfigError("portrait expects two-factor params (n/lam)")
    seeds = cfg.get("seeds", [])
    if not isinstance(seeds, list):
        raise ConfigError("'seeds' must be a list of [Y1, Y2] pairs")
    seeds = [tuple(float(v) for v in seed) for seed in seeds]
    if any(len(seed) != 2 for seed in seeds):
        raise ConfigError("'seeds' must be a list of [Y1, Y2] pairs")
    samples = int(cfg.get("samples", 256))
    if samples < 8:
        raise ConfigError("'samples' must be at least 8")
    u_end = _float_field(cfg, "u_end", 40.0)
    opts = _opts_from(cfg)
    try:
        points = fixed_points(p)
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "nullclines.csv", ["locus", "t", "Y1", "Y2"],
               _nullcline_rows(p, samples))
    fp_rows = []
    for fp in points:
        eigs = _spectrum_payload(fp.spectrum)
        fp_rows.append(
            [fp.kind.value, _fmt(fp.location[0]), _fmt(fp.location[1]),
             fp.classification.value, str(fp.unstable_dimension),
             _fmt(eigs[0][0]), _fmt(eigs[0][1]), _fmt(eigs[1][0]),
             _fmt(eigs[1][1])]
        )
    _write_csv(
        out / "fixedpoints.csv",
        ["kind", "Y1", "Y2", "classification", "unstable_dimension",
         "lambda1_re", "lambda1_im", "lambda2_re", "lambda2_im"],
        fp_rows,
    )
    header = ["u", "Y1", "Y2", "region", "E"]
    for idx, seed in enumerate(seeds):
        traj_file = out / f"trajectory_{idx:03d}.csv"
        try:
            traj = integrate(seed, p, u_end, opts=opts)
        except (SolverError, IntegratorError) as err:
            _write_csv(traj_file, header, [], comment=f"integrator failure: {err}")
            print(f"integrator failure: {err}", file=sys.stderr)
            return EXIT_INTEGRATOR
        _write_csv(traj_file, header, _m2_trajectory_rows(traj, p))
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

_FAMILIES = {
    "lemma-eta-bound": "m2",
    "prop-classification": "m2",
    "xi-claims": "m2",
    "general-lemmas": "general",
    "dynamics": "dynamics",
}


def _grid_from(cfg: dict, key: str):
    grid = cfg.get(key)
    if grid is None:
        return None
    if not isinstance(grid, list):
        raise ConfigError(f"'{key}' must be a list of integer pairs")
    return [tuple(int(v) for v in pt) for pt in grid]


def cmd_verify(cfg: dict, out: Path, family: Optional[str]) -> int:
    m2_grid = _grid_from(cfg, "m2_grid")
    general_grid = _grid_from(cfg, "general_grid")
    scenarios = cfg.get("scenarios")
    if family is None:
        report = verify_mod.run_all(
            m2_grid=m2_grid, general_grid=general_grid, scenarios=scenarios
        )
    else:
        root = family.split(".", 1)[0]
        if root not in _FAMILIES:
            raise ConfigError(
                f"unknown check family {root!r}; expected one of "
                f"{sorted(_FAMILIES)}"
            )
        runner = {
            "lemma-eta-bound": lambda: verify_mod.verify_eta_bounds(m2_grid),
            "prop-classification": lambda: verify_mod.verify_classifications(m2_grid),
            "xi-claims": lambda: verify_mod.verify_xi_claims(m2_grid),
            "general-lemmas": lambda: verify_mod.verify_general_lemmas(general_grid),
            "dynamics": lambda: verify_mod.verify_dynamics(scenarios),
        }[root]
        full = runner()
        kept = [r for r in full.records if r.check_id.startswith(family)]
        report = verify_mod._report(kept, full.environment)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(verify_mod.to_json(report))
    (out / "report.txt").write_text(verify_mod.to_text(report))
    if all(rec.passed for rec in report.records):
        return EXIT_OK
    print("verification failed; see report.txt", file=sys.stderr)
    return EXIT_VERIFY


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bundleflow",
        description="Fixed points, flows, and inequality re-checks for the "
        "reduced bundle flow systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = (
        ("einstein", "solve for the interior Einstein points", True),
        ("classify", "classify all fixed points of a two-factor system", True),
        ("flow", "integrate a trajectory and reconstruct its metric path", True),
        ("portrait", "export nullclines, fixed points, and a trajectory fan", True),
        ("verify", "re-check the inequality suite over parameter grids", False),
        ("reconstruct", "reconstruct the metric path for one trajectory", True),
    )
    for name, help_text, config_required in specs:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=config_required,
                        help="path to the JSON scenario config")
        sp.add_argument("--out", default=".", help="output directory")
        if name == "verify":
            sp.add_argument("--family", default=None,
                            help="only emit checks whose id starts with this prefix")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return EXIT_OK if code == 0 else EXIT_CONFIG
    out = Path(args.out)
    try:
        cfg = _load_config(args.config)
        if args.command == "einstein":
            return cmd_einstein(cfg, out)
        if args.command == "classify":
            return cmd_classify(cfg, out)
        if args.command == "flow":
            return cmd_flow(cfg, out)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, out)
        if args.command == "portrait":
            return cmd_portrait(cfg, out)
        return cmd_verify(cfg, out, args.family)
    except (ConfigError, ValueError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except IntegratorError as err:
        print(f"integrator failure: {err}", file=sys.stderr)
        return EXIT_INTEGRATOR


if __name__ == "__main__":
    sys.exit(main())
