"""Adaptive Dormand-Prince 4(5) integrator with dense output and events.

The stepper is deliberately self-contained: downstream checks compare
trajectories against closed-form rates at tight tolerances, so the exact
error-control policy (norm, clamp window, safety factor) must stay pinned
rather than float with a library upgrade.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# Butcher tableau, Dormand & Prince order 5(4), FSAL.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, 0] = 1 / 5
_A[2, :2] = (3 / 40, 9 / 40)
_A[3, :3] = (44 / 45, -56 / 15, 32 / 9)
_A[4, :4] = (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729)
_A[5, :5] = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656)
_A[6, :6] = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_B5 = _A[6, :].copy()  # fifth-order weights; row 7 of A by the FSAL property
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

_SAFETY = 0.9
_FACTOR_MIN = 0.2
_FACTOR_MAX = 5.0
_ORDER_EXPONENT = -1.0 / 5.0


class IntegratorError(Exception):
    """Step-size underflow or a non-finite right-hand side.

    Carries the last accepted node so callers can report how far the
    trajectory got before the failure.
    """

    def __init__(self, message: str, last_u: Optional[float] = None,
                 last_y: Optional[np.ndarray] = None):
        super().__init__(message)
        self.last_u = last_u
        self.last_y = None if last_y is None else np.array(last_y, dtype=float)


@dataclass(frozen=True)
class OdeOptions:
    rtol: float = 1e-10
    atol: float = 1e-10
    arrival_tol: float = 1e-11
    domain_hi: Optional[float] = None
    max_steps: int = 1_000_000
    first_step: Optional[float] = None
    # Cap on |h|.  Near an attracting fixed point the deviation drops
    # below the atol floor, where the error estimate can no longer veto
    # steps outside the stability region; callers that wait for arrival
    # must bound h against the local eigenvalue scale.
    max_step: float = float("inf")


@dataclass(frozen=True)
class TerminalEvent:
    kind: str  # "max_time" | "reached_fixed_point" | "left_domain"
    u: float
    target: Optional[str] = None


@dataclass(frozen=True)
class StepDiagnostic:
    u: float
    h: float
    error_norm: float
    rejects: int


@dataclass
class OdeResult:
    us: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    event: TerminalEvent
    diagnostics: list = field(default_factory=list)


def _error_norm(err: np.ndarray, y_old: np.ndarray, y_new: np.ndarray,
                rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, u0: float, y0: np.ndarray, direction: float,
                  span: float, rtol: float, atol: float) -> float:
    # One-Euler-trial heuristic; the controller corrects it within a step
    # or two, so only the order of magnitude matters.
    scale = atol + rtol * np.abs(y0)
    f0 = f(u0, y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h, 0.1 * span)
    y1 = y0 + direction * h * f0
    f1 = f(u0 + direction * h, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h
    if max(d1, d2) > 1e-15:
        h = min(h, (0.01 / max(d1, d2)) ** 0.2)
    return direction * max(h, 1e-12)


def integrate_ode(
    f: Callable[[float, np.ndarray], np.ndarray],
    u0: float,
    u_end: float,
    y0: np.ndarray,
    targets: Optional[Sequence[tuple]] = None,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    opts: Optional[OdeOptions] = None,
) -> OdeResult:
    """Integrate dy/du = f(u, y) from u0 to u_end with event detection.

    targets is a sequence of (name, point) pairs; the run stops with a
    "reached_fixed_point" event once the state comes within arrival_tol
    of any of them.  domain_hi caps max(|y_i|); crossing it stops the run
    with "left_domain".  post_step, when given, maps each accepted state
    to a corrected one (e.g. a constraint renormalization) before it is
    recorded.
    """
    opts = opts or OdeOptions()
    y = np.array(y0, dtype=float)
    if y.ndim != 1:
        raise ValueError("state must be a one-dimensional vector")
    u = float(u0)
    span = abs(u_end - u0)
    if span == 0.0:
        f0 = np.asarray(f(u, y), dtype=float)
        return OdeResult(np.array([u]), y[None, :], f0[None, :],
                         TerminalEvent("max_time", u))
    direction = 1.0 if u_end > u0 else -1.0

    us = [u]
    ys = [y.copy()]
    k1 = np.asarray(f(u, y), dtype=float)
    fs = [k1.copy()]
    diagnostics: list = []

    if opts.first_step is not None:
        h = direction * abs(opts.first_step)
    else:
        h = _initial_step(f, u, y, direction, span, opts.rtol, opts.atol)

    k = np.empty((7, y.size))
    event: Optional[TerminalEvent] = None
    steps = 0
    while event is None:
        if steps >= opts.max_steps:
            raise IntegratorError(
                f"no event after {opts.max_steps} steps", last_u=u, last_y=y
            )
        if abs(h) > opts.max_step:
            h = direction * opts.max_step
        # Do not step past the endpoint.
        if direction * (u + h - u_end) > 0.0:
            h = u_end - u
        rejects = 0
        while True:
            if abs(h) <= 16.0 * np.finfo(float).eps * max(abs(u), 1.0):
                raise IntegratorError(
                    f"step size underflow at u={u!r}", last_u=u, last_y=y
                )
            k[0] = k1
            failed = False
            for i in range(1, 7):
                yi = y + h * (_A[i, :i] @ k[:i])
                if not np.all(np.isfinite(yi)):
                    failed = True
                    break
                k[i] = f(u + _C[i] * h, yi)
                if not np.all(np.isfinite(k[i])):
                    failed = True
                    break
            if failed:
                h *= 0.5
                rejects += 1
                continue
            y_new = y + h * (_B5 @ k)
            err = h * ((_B5 - _B4) @ k)
            enorm = _error_norm(err, y, y_new, opts.rtol, opts.atol)
            if enorm <= 1.0 or not np.isfinite(enorm):
                if not np.isfinite(enorm):
                    raise IntegratorError(
                        f"non-finite error estimate at u={u!r}",
                        last_u=u, last_y=y,
                    )
                break
            factor = max(_FACTOR_MIN,
                         min(1.0, _SAFETY * enorm ** _ORDER_EXPONENT))
            h *= factor
            rejects += 1

        u_new = u + h
        # The clamp above targets u_end exactly; u + h can still land one
        # ulp short or past it, so snap the node onto the endpoint.
        if direction * (u_new - u_end) >= 0.0:
            u_new = u_end
        k_last = k[6].copy()  # FSAL: f at (u_new, y_new) before correction
        if post_step is not None:
            y_corr = np.asarray(post_step(y_new), dtype=float)
            if not np.array_equal(y_corr, y_new):
                y_new = y_corr
                k_last = np.asarray(f(u_new, y_new), dtype=float)

        diagnostics.append(StepDiagnostic(u=u_new, h=h, error_norm=enorm,
                                          rejects=rejects))
        us.append(u_new)
        ys.append(y_new.copy())
        fs.append(k_last.copy())

        if targets:
            for name, point in targets:
                if np.linalg.norm(y_new - np.asarray(point)) <= opts.arrival_tol:
                    event = TerminalEvent("reached_fixed_point", u_new, name)
                    break
        if event is None and opts.domain_hi is not None:
            if np.max(np.abs(y_new)) > opts.domain_hi:
                event = TerminalEvent("left_domain", u_new)
        if event is None and direction * (u_new - u_end) >= 0.0:
            event = TerminalEvent("max_time", u_new)

        if enorm > 0.0:
            factor = _SAFETY * enorm ** _ORDER_EXPONENT
        else:
            factor = _FACTOR_MAX
        h *= max(_FACTOR_MIN, min(_FACTOR_MAX, factor))
        u, y, k1 = u_new, y_new, k_last
        steps += 1

    return OdeResult(np.array(us), np.array(ys), np.array(fs), event,
                     diagnostics)


def hermite_eval(us: np.ndarray, ys: np.ndarray, fs: np.ndarray,
                 u_query: np.ndarray) -> np.ndarray:
    """Cubic Hermite dense output through the accepted nodes.

    Works for both integration directions; queries must lie inside the
    covered interval.
    """
    us = np.asarray(us, dtype=float)
    u_query = np.atleast_1d(np.asarray(u_query, dtype=float))
    increasing = us[-1] >= us[0]
    grid = us if increasing else us[::-1]
    lo, hi = grid[0], grid[-1]
    if np.any(u_query < lo - 1e-12) or np.any(u_query > hi + 1e-12):
        raise ValueError("dense-output query outside the integration range")
    idx = np.clip(np.searchsorted(grid, u_query, side="right") - 1,
                  0, len(us) - 2)
    if not increasing:
        idx = len(us) - 2 - idx
        left, right = idx + 1, idx
    else:
        left, right = idx, idx + 1

    h = us[right] - us[left]
    t = (u_query - us[left]) / h
    t = t[:, None]
    h = h[:, None]
    y0, y1 = ys[left], ys[right]
    f0, f1 = fs[left], fs[right]
    h00 = (1 + 2 * t) * (1 - t) ** 2
    h10 = t * (1 - t) ** 2
    h01 = t**2 * (3 - 2 * t)
    h11 = t**2 * (t - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
