import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from share.geometry import CameraPose, build_grid
from share.landscape import (
    ErrorSample,
    FitConfig,
    FitReport,
    LandscapeError,
    LossLandscape,
    MinMaxScaler,
    composite_metric,
    composite_metrics,
    derivatives,
    export_landscape,
    fit_landscape,
    fit_scaler,
    load_landscape,
    predict,
    read_errors_csv,
    save_landscape,
    write_errors_csv,
)
from share._io import CsvFormatError


class Analytic:
    """Stands in for the MLP so finite differences can be checked exactly."""

    activation = "analytic"

    def __init__(self, f):
        self.f = f

    def forward(self, x):
        return self.f(x[:, 0], x[:, 1])


def analytic_landscape(f, w_error="scaled", scaler=None, fd_step=0.01):
    scaler = scaler or MinMaxScaler((-60.0, 0.0, 0.0), (60.0, 352.8, 100.0))
    return LossLandscape(scaler, Analytic(f), FitConfig(fd_step=fd_step, w_error=w_error), FitReport(0.0, 0, 0, 0))


def wavy(X, Y):
    return np.sin(2 * X) * np.cos(3 * Y) + X * X * Y


def wavy_grad(X, Y):
    return np.stack([2 * np.cos(2 * X) * np.cos(3 * Y) + 2 * X * Y,
                     -3 * np.sin(2 * X) * np.sin(3 * Y) + X * X], axis=-1)


def wavy_hess(X, Y):
    hxx = -4 * np.sin(2 * X) * np.cos(3 * Y) + 2 * Y
    hyy = -9 * np.sin(2 * X) * np.cos(3 * Y)
    hxy = -6 * np.cos(2 * X) * np.sin(3 * Y) + 2 * X
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


def surface_samples(fn, n_theta=20, n_phi=20):
    grid = build_grid(n_theta, n_phi)
    return [ErrorSample(p, float(fn(p.theta_deg, p.phi_deg))) for p in grid]


# -- scaler ---------------------------------------------------------------------

def test_scaler_hits_extremes_exactly():
    samples = surface_samples(lambda t, p: 50 + 0.3 * t + np.cos(np.radians(p)))
    sc = fit_scaler(samples)
    theta = np.array([s.pose.theta_deg for s in samples])
    err = np.array([s.error_mm for s in samples])
    assert sc.scale(theta, "theta").min() == -1.0
    assert sc.scale(theta, "theta").max() == 1.0
    assert sc.scale(err, "E").min() == -1.0
    assert sc.scale(err, "E").max() == 1.0


def test_degenerate_axis_scales_to_zero_and_warns(caplog):
    samples = [ErrorSample(CameraPose(0, p), 5.0) for p in range(0, 360, 20)]
    with caplog.at_level(logging.WARNING):
        sc = fit_scaler(samples)
    assert sc.degenerate == (True, False, True)
    assert np.all(sc.scale([0.0, 1.0], "theta") == 0)
    assert np.all(sc.unscale([0.3], "E") == 5.0)
    assert "constant" in caplog.text


@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.floats(-2, 2))
def test_scale_unscale_round_trip(lo, width, x):
    sc = MinMaxScaler((lo, 0, 0), (lo + width, 1, 1))
    assert sc.scale(sc.unscale(x, "theta"), "theta") == pytest.approx(x, abs=1e-9 * max(1, abs(lo) / width))


# -- fitting ----------------------------------------------------------------------

SMALL = FitConfig(hidden=(16, 16), iterations=600)


def test_fit_is_deterministic_per_seed():
    samples = surface_samples(lambda t, p: 50 + 30 * np.cos(np.radians(2 * p)) + 0.3 * t, 10, 10)
    a = fit_landscape(samples, SMALL, seed=3)
    b = fit_landscape(samples, SMALL, seed=3)
    c = fit_landscape(samples, SMALL, seed=4)
    for wa, wb in zip(a.regressor.weights, b.regressor.weights):
        np.testing.assert_array_equal(wa, wb)
    assert not np.array_equal(a.regressor.weights[0], c.regressor.weights[0])


def test_fit_learns_a_smooth_surface():
    fn = lambda t, p: 50 + 20 * np.cos(np.radians(p)) + 0.3 * t  # noqa: E731
    land = fit_landscape(surface_samples(fn), FitConfig(hidden=(32, 32), iterations=2000), seed=0)
    grid = build_grid(7, 9, theta_range=(-50, 50), phi_range=(10, 340))
    pred = land.predict_mm(grid.thetas, grid.phis)
    rmse = np.sqrt(np.mean((pred - fn(grid.thetas, grid.phis)) ** 2))
    assert rmse < 2.0
    assert land.fit_report.final_loss < 1e-2
    assert predict(land, grid.poses[0]) == pytest.approx(pred[0])


def test_momentum_optimizer_reduces_loss():
    samples = surface_samples(lambda t, p: 60 + t + p / 10, 8, 8)
    untrained = fit_landscape(samples, FitConfig(hidden=(8,), iterations=0), seed=0)
    trained = fit_landscape(samples, FitConfig(hidden=(8,), iterations=300, optimizer="momentum"), seed=0)
    assert trained.fit_report.final_loss < untrained.fit_report.final_loss


def test_periodic_phi_closes_the_seam():
    samples = surface_samples(lambda t, p: 50 + 20 * np.sin(np.radians(p)), 10, 12)
    land = fit_landscape(samples, FitConfig(hidden=(16,), iterations=300, periodic_phi=True), seed=0)
    assert land.regressor.sizes[0] == 3
    assert land.predict_mm(10.0, 0.0) == pytest.approx(land.predict_mm(10.0, 360.0), abs=1e-9)


def test_warm_start_reuses_weights():
    samples = surface_samples(lambda t, p: 60 + t, 6, 6)
    first = fit_landscape(samples, SMALL, seed=0)
    again = fit_landscape(samples, FitConfig(hidden=(16, 16), iterations=0), seed=99, init=first.regressor)
    np.testing.assert_array_equal(again.regressor.weights[0], first.regressor.weights[0])


def test_fit_needs_sixteen_samples():
    with pytest.raises(LandscapeError):
        fit_landscape([ErrorSample(CameraPose(0, i), 1.0) for i in range(15)], SMALL)


@pytest.mark.parametrize("value", [-1.0, float("nan"), float("inf")])
def test_error_sample_rejects_bad_values(value):
    with pytest.raises(LandscapeError):
        ErrorSample(CameraPose(0, 0), value)


# -- derivatives --------------------------------------------------------------------

def test_interior_derivatives_match_analytic():
    land = analytic_landscape(wavy)
    rng = np.random.default_rng(0)
    X, Y = rng.uniform(-0.9, 0.9, (2, 200))
    g, H = derivatives(land, X, Y)
    np.testing.assert_allclose(g, wavy_grad(X, Y), atol=5e-4)
    np.testing.assert_allclose(H, wavy_hess(X, Y), atol=5e-3)


@pytest.mark.parametrize("x, y", [(-1, -1), (1, 1), (-1, 1), (1, 0.3), (0.2, -1), (0.995, -0.995)])
def test_edge_stencils_stay_accurate(x, y):
    land = analytic_landscape(wavy)
    g, H = derivatives(land, x, y)
    assert g.shape == (2,) and H.shape == (2, 2)
    np.testing.assert_allclose(g, wavy_grad(x, y), atol=2e-3)
    np.testing.assert_allclose(H, wavy_hess(x, y), atol=5e-2)
    assert H[0, 1] == H[1, 0]


def test_step_halving_gives_second_order_convergence():
    land = analytic_landscape(wavy)
    X, Y = np.meshgrid(np.linspace(-0.8, 0.8, 9), np.linspace(-0.8, 0.8, 9))
    X, Y = X.ravel(), Y.ravel()
    err = []
    for h in (0.04, 0.02):
        g, _ = derivatives(land, X, Y, h=h)
        err.append(np.linalg.norm(g - wavy_grad(X, Y)))
    assert err[0] / err[1] > 3.5


def test_linear_ramp_score_is_its_slope():
    land = analytic_landscape(lambda X, Y: 0.7 * X)
    w = composite_metric(land, 0.0, 0.25)
    assert w.E == pytest.approx(0.0, abs=1e-12)
    assert w.W == pytest.approx(0.7, abs=1e-8)


def test_bowl_apex_score_is_its_curvature():
    land = analytic_landscape(lambda X, Y: X * X + Y * Y)
    w = composite_metric(land, 0.0, 0.0)
    assert w.W == pytest.approx(2 * np.sqrt(2), abs=1e-6)


def test_raw_score_uses_physical_units():
    sc = MinMaxScaler((-60.0, 0.0, 20.0), (60.0, 360.0, 120.0))
    land = analytic_landscape(lambda X, Y: 0.5 * X + 0.0 * Y, w_error="raw", scaler=sc)
    E, W = composite_metrics(land, [0.0], [0.0])
    # E_mm = 70 + 50*0.5*X, so dE/dtheta = 25 mm per 60 deg
    assert W[0] == pytest.approx(70.0 + 25.0 / 60.0, rel=1e-8)


def test_vectorized_scores_match_pointwise():
    land = analytic_landscape(wavy)
    X = np.array([-1.0, 0.0, 0.5, 1.0])
    Y = np.array([0.3, -1.0, 0.5, 1.0])
    E, W = composite_metrics(land, X, Y)
    for i in range(4):
        w = composite_metric(land, X[i], Y[i])
        assert (w.E, w.W) == (E[i], W[i])


# -- export & persistence ------------------------------------------------------

@pytest.fixture(scope="module")
def small_land():
    return fit_landscape(surface_samples(lambda t, p: 50 + 10 * np.cos(np.radians(p)) + t / 10, 8, 8), SMALL, seed=1)


def test_export_rows_agree_with_point_queries(small_land):
    grid = build_grid(10, 10)
    rows = export_landscape(small_land, grid)
    assert len(rows) == 100
    for (theta, phi, X, Y, E, E_mm, W), pose in zip(rows[::17], grid.poses[::17]):
        assert (theta, phi) == (pose.theta_deg, pose.phi_deg)
        assert E_mm == pytest.approx(predict(small_land, pose), rel=1e-12)
        assert W == pytest.approx(composite_metric(small_land, X, Y).W, rel=1e-12)


def test_save_load_is_bit_exact(tmp_path, small_land):
    path = save_landscape(small_land, tmp_path / "l.json")
    back = load_landscape(path)
    grid = build_grid(9, 9)
    np.testing.assert_array_equal(back.predict_mm(grid.thetas, grid.phis), small_land.predict_mm(grid.thetas, grid.phis))
    assert back.fit_report == small_land.fit_report
    assert save_landscape(back, tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_load_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(LandscapeError):
        load_landscape(p)


def test_errors_csv_round_trip_and_line_numbers(tmp_path):
    samples = surface_samples(lambda t, p: 40 + t / 7, 3, 4)
    path = write_errors_csv(tmp_path / "e.csv", samples)
    assert read_errors_csv(path) == samples
    bad = tmp_path / "bad.csv"
    bad.write_text("theta_deg,phi_deg,error_mm\n0,0,1\n0,10,1\n99,0,1\n")
    with pytest.raises(CsvFormatError) as info:
        read_errors_csv(bad)
    assert info.value.line == 4
