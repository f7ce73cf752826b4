# test_analysis.py - Moments, regressions and error norms
from pathlib import Path

import numpy as np
import pytest

from subdiff import analysis, cli, rdsolver, states
from subdiff.error_handlers import DomainError
from subdiff.models import DiffusionKind, Grid1D

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"


# ==================== REGRESSIONS ====================

def test_power_law_recovers_exponent():
    t = np.geomspace(1e-3, 1.0, 30)
    fit = analysis.fit_power_law(t, 3.0 * t ** 0.5)
    assert fit.value == pytest.approx(0.5, abs=1e-10)
    assert np.exp(fit.intercept) == pytest.approx(3.0)
    assert fit.n_points == 30


def test_power_law_window():
    t = np.geomspace(1e-4, 10.0, 50)
    y = np.where(t < 1e-2, t, 0.1 * t ** 0.5)
    fit = analysis.fit_power_law(t, y, window=(1e-4, 1e-3))
    assert fit.value == pytest.approx(1.0, abs=1e-10)
    assert fit.t_a == 1e-4 and fit.t_b == 1e-3


def test_exp_decay_rate():
    t = np.linspace(0.0, 2.0, 21)
    fit = analysis.fit_exp_decay(t, 5.0 * np.exp(-3.0 * t))
    assert fit.value == pytest.approx(3.0)


def test_window_needs_three_points():
    t = np.linspace(0.0, 1.0, 11)
    with pytest.raises(DomainError):
        analysis.fit_exp_decay(t, np.exp(-t), window=(0.0, 0.15))
    with pytest.raises(DomainError):
        analysis.fit_exp_decay(t, np.exp(-t), window=(0.5, 0.5))


def test_power_law_rejects_nonpositive():
    with pytest.raises(DomainError):
        analysis.fit_power_law([0.0, 1.0, 2.0], [1.0, 2.0, 3.0])


def test_regression_result_checks_window():
    with pytest.raises(ValueError):
        analysis.RegressionResult(value=1.0, intercept=0.0, residual=0.0, t_a=2.0, t_b=1.0, n_points=3)


def test_kprime_regression_windows():
    t = np.geomspace(1e-4, 1.0, 81)
    y = np.exp(-(50.0 * np.minimum(t, 1e-3) + 5.0 * np.maximum(t - 1e-3, 0.0)))
    rates = analysis.kprime_regression(t, y)
    assert rates["early"].value == pytest.approx(50.0, rel=1e-8)
    assert rates["late"].value == pytest.approx(5.0, rel=1e-8)


# ==================== MOMENTS ====================

def test_second_moment():
    x = np.array([-1.0, 0.0, 1.0])
    assert analysis.second_moment(x, np.array([1.0, 2.0, 1.0])) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        analysis.second_moment(x, np.zeros(3))


def test_ordinary_msd_is_2t(single_state):
    g = Grid1D(x_lo=-5.0, x_hi=5.0, nx=200)
    system = rdsolver.SystemDef(params=single_state, diffusion=DiffusionKind.ORDINARY)
    f0 = rdsolver.gaussian_ic(g, 1e-2, 0.0, {"A": 1.0}, [1.0])
    snaps = rdsolver.integrate(system, f0, 1e-3, 0.1, every=20)
    t, msd = analysis.msd_of_field(snaps)
    assert msd[0] == 0.0
    np.testing.assert_allclose(msd[1:], 2.0 * t[1:], rtol=1e-4)


def test_two_state_msd_matches_mean_field(two_state):
    g = Grid1D(x_lo=-15.0, x_hi=15.0, nx=300)
    system = rdsolver.SystemDef(params=two_state)
    f0 = rdsolver.gaussian_ic(g, 0.25, 0.0, {"A": 1.0}, two_state.mu_arr)
    snaps = rdsolver.integrate(system, f0, 1e-3, 2.0, every=500)
    t, msd = analysis.msd_of_field(snaps)
    expected = states.msd_exact(states.build_state_matrix(two_state), two_state.mu_arr, t)
    np.testing.assert_allclose(msd[1:], expected[1:], rtol=1e-4)


def test_three_regimes_of_mean_field_msd(set1):
    t = np.geomspace(1e-7, 10.0, 120)
    msd = states.msd_exact(states.build_state_matrix(set1), set1.mu_arr, t)
    report = analysis.three_regime_report(t, msd, set1)
    assert set(report) == {"short", "middle", "long"}
    assert report["short"].value == pytest.approx(1.0, abs=0.1)
    assert report["middle"].value == pytest.approx(0.5, abs=0.05)
    assert report["long"].value == pytest.approx(1.0, abs=0.1)


def test_three_regimes_of_solver_msd():
    cfg = cli.load_config(EXPERIMENTS / "msd_set1.json")
    sp = cli.resolve_state_params(cfg)
    segments = rdsolver.log_segments(cfg.msd.t_first, cfg.t_end)
    series = rdsolver.integrate_segments(cli.build_system(cfg, sp), cli.initial_fields(cfg, sp), segments)
    t, msd = analysis.msd_of_field(series, center=cfg.ic.center)
    report = analysis.three_regime_report(t[1:], msd[1:], sp)
    assert report["short"].value == pytest.approx(1.0, abs=0.1)
    assert report["middle"].value == pytest.approx(0.5, abs=0.05)
    assert report["long"].value == pytest.approx(1.0, abs=0.1)


# ==================== ERROR NORMS ====================

def test_l2_rel_error():
    ref = np.array([3.0, 4.0])
    assert analysis.l2_rel_error(ref, ref) == 0.0
    assert analysis.l2_rel_error([3.0, 5.0], ref) == pytest.approx(0.2)
    with pytest.raises(DomainError):
        analysis.l2_rel_error([1.0], ref)
    with pytest.raises(DomainError):
        analysis.l2_rel_error([1.0, 1.0], [0.0, 0.0])
