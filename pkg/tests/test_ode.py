"""Adaptive Runge-Kutta integrator: accuracy, events, dense output."""

import numpy as np
import pytest

from bundleflow.ode import IntegratorError, OdeOptions, hermite_eval, integrate_ode


def test_exponential_decay_matches_closed_form():
    res = integrate_ode(lambda u, y: -y, 0.0, 5.0, np.array([1.0]))
    assert res.event.kind == "max_time"
    assert abs(res.us[-1] - 5.0) < 1e-14
    assert abs(res.ys[-1, 0] - np.exp(-5.0)) < 1e-9


def test_backward_integration():
    res = integrate_ode(lambda u, y: y, 0.0, -3.0, np.array([2.0]))
    assert res.us[-1] == pytest.approx(-3.0, abs=1e-14)
    assert res.ys[-1, 0] == pytest.approx(2.0 * np.exp(-3.0), rel=1e-9)
    assert np.all(np.diff(res.us) < 0)


def test_harmonic_oscillator_accuracy():
    f = lambda u, y: np.array([y[1], -y[0]])
    res = integrate_ode(f, 0.0, 20.0, np.array([1.0, 0.0]))
    assert res.ys[-1, 0] == pytest.approx(np.cos(20.0), abs=1e-8)
    assert res.ys[-1, 1] == pytest.approx(-np.sin(20.0), abs=1e-8)


def test_arrival_event_stops_at_target():
    # Flow toward the origin; the arrival sphere has radius 1e-11.
    # max_step keeps h*lambda inside the stability region, otherwise the
    # state hovers at the atol floor and never lands.
    f = lambda u, y: -y
    res = integrate_ode(
        f,
        0.0,
        1e3,
        np.array([1.0, 0.5]),
        targets=[("origin", np.zeros(2))],
        opts=OdeOptions(arrival_tol=1e-11, max_step=2.0),
    )
    assert res.event.kind == "reached_fixed_point"
    assert res.event.target == "origin"
    assert np.linalg.norm(res.ys[-1]) < 1e-11
    assert res.us[-1] < 1e3


def test_domain_exit_event():
    f = lambda u, y: y
    res = integrate_ode(
        f, 0.0, 100.0, np.array([1.0]), opts=OdeOptions(domain_hi=50.0)
    )
    assert res.event.kind == "left_domain"
    assert res.ys[-1, 0] > 50.0


def test_dense_output_is_locally_accurate():
    # Cubic Hermite between accepted nodes; its h^4 error tracks the
    # step-size choice of the controller, landing near 1e-7 here.
    f = lambda u, y: np.array([y[1], -y[0]])
    res = integrate_ode(f, 0.0, 3.0, np.array([0.0, 1.0]))
    probe = np.linspace(0.05, 2.95, 117)
    vals = hermite_eval(res.us, res.ys, res.fs, probe)
    assert np.max(np.abs(vals[:, 0] - np.sin(probe))) < 1e-6
    assert np.max(np.abs(vals[:, 1] - np.cos(probe))) < 1e-6


def test_step_diagnostics_recorded():
    res = integrate_ode(lambda u, y: -y, 0.0, 1.0, np.array([1.0]))
    assert len(res.diagnostics) == len(res.us) - 1
    assert all(d.error_norm <= 1.0 for d in res.diagnostics)


def test_post_step_hook_applied():
    # Renormalize the state to the unit circle after each accepted step.
    f = lambda u, y: np.array([-y[1], y[0]]) + 0.1 * y
    res = integrate_ode(
        f,
        0.0,
        10.0,
        np.array([1.0, 0.0]),
        post_step=lambda y: y / np.linalg.norm(y),
    )
    assert np.linalg.norm(res.ys[-1]) == pytest.approx(1.0, abs=1e-15)


def test_step_underflow_reports_last_state():
    def stiff_blowup(u, y):
        return np.array([y[0] ** 2])

    with pytest.raises(IntegratorError) as err:
        integrate_ode(stiff_blowup, 0.0, 2.0, np.array([1.0]))
    assert err.value.last_u is not None
