# test_specfun.py - Mittag-Leffler, Meijer-G and the alpha = 1/2 Green's functions
import logging
import math

import mpmath
import numpy as np
import pytest
from scipy import integrate, special

from subdiff import specfun
from subdiff.config import map_tasks
from subdiff.error_handlers import DomainError
from subdiff.models import GreenCoeffs, RateScaling


def _ml_mp(alpha, beta, z, terms=400):
    mpmath.mp.dps = 50
    z = mpmath.mpf(z)
    return float(mpmath.fsum(z ** k / mpmath.gamma(alpha * k + beta) for k in range(terms)))


# ==================== MITTAG-LEFFLER ====================

def test_ml_reduces_to_exp():
    assert specfun.ml(1.0, 1.0, -2.5) == pytest.approx(math.exp(-2.5), rel=1e-15)


@pytest.mark.parametrize("x", [0.1, 1.0, 3.0, 10.0, 40.0])
def test_ml_half_matches_erfcx(x):
    assert specfun.ml(0.5, 1.0, -x) == pytest.approx(special.erfcx(x), rel=1e-8)


@pytest.mark.parametrize("x", [0.5, 2.0, 8.0])
def test_ml_half_half_closed_form(x):
    expected = 1.0 / math.sqrt(math.pi) - x * special.erfcx(x)
    assert specfun.ml(0.5, 0.5, -x) == pytest.approx(expected, rel=1e-7)


def test_ml_positive_argument():
    assert specfun.ml(0.5, 1.0, 2.0) == pytest.approx(special.erfcx(-2.0), rel=1e-10)


@pytest.mark.parametrize("alpha,beta,z", [(0.8, 1.2, -3.0), (0.3, 0.9, -1.5), (0.7, 1.0, 4.0)])
def test_ml_against_mpmath(alpha, beta, z):
    assert specfun.ml(alpha, beta, z) == pytest.approx(_ml_mp(alpha, beta, z), rel=1e-9)


def test_ml_at_zero_is_reciprocal_gamma():
    assert specfun.ml(0.4, 2.5, 0.0) == pytest.approx(1.0 / math.gamma(2.5), rel=1e-15)


# ==================== WAITING TIMES ====================

def test_waiting_pdf_exponential_limit():
    assert specfun.waiting_time_pdf(1.0, 2.0, 3.0) == pytest.approx(math.exp(-1.5) / 2.0, rel=1e-15)


@pytest.mark.parametrize("factor,tol", [(1000.0, 0.01), (100.0, 0.02)])
def test_waiting_pdf_approaches_tail(factor, tol):
    tau = 7.62e-5
    t = factor * tau
    ratio = specfun.waiting_time_pdf(0.5, tau, t) / specfun.waiting_time_tail(0.5, tau, t)
    assert abs(ratio - 1.0) < tol


def test_tail_coefficient_half():
    assert specfun.tail_coefficient(0.5) == pytest.approx(1.0 / (2.0 * math.sqrt(math.pi)), rel=1e-14)


def test_waiting_pdf_domain():
    with pytest.raises(DomainError):
        specfun.waiting_time_pdf(0.5, 1.0, 0.0)
    with pytest.raises(DomainError):
        specfun.waiting_time_tail(1.5, 1.0, 1.0)


# ==================== MEIJER-G ====================

@pytest.mark.parametrize("z", [0.01, 0.5, 3.0, 20.0])
def test_meijer_series_against_mpmath(z):
    mpmath.mp.dps = 30
    expected = float(mpmath.meijerg([[], []], [[0, 0.25, 0.5], []], z))
    assert specfun.meijer_g_303(z) == pytest.approx(expected, rel=1e-6)


def test_meijer_shifted_indices_against_mpmath():
    mpmath.mp.dps = 30
    b = (0.0, 1.75, 0.5)
    expected = float(mpmath.meijerg([[], []], [list(b), []], 2.0))
    assert specfun.meijer_g_303(2.0, b) == pytest.approx(expected, rel=1e-6)


def test_meijer_at_origin():
    assert specfun.meijer_g_303(0.0) == pytest.approx(math.gamma(0.25) * math.gamma(0.5), rel=1e-14)


def test_meijer_asymptotic_branch():
    mpmath.mp.dps = 30
    expected = float(mpmath.meijerg([[], []], [[0, 0.25, 0.5], []], 1000.0))
    assert specfun.meijer_g_303(1000.0) == pytest.approx(expected, rel=0.1)


def test_asymptotic_warning_logged_once_across_threads(monkeypatch, caplog):
    monkeypatch.setattr(specfun, "_asymptotic_warned", False)
    with caplog.at_level(logging.WARNING, logger="subdiff.specfun"):
        values = map_tasks(specfun.meijer_g_303, [100.0 + i for i in range(32)], workers=8)
    assert all(v > 0 for v in values)
    assert sum("asymptotic branch" in r.getMessage() for r in caplog.records) == 1


def test_meijer_rejects_congruent_indices():
    with pytest.raises(DomainError, match="congruent"):
        specfun.meijer_g_303(1.0, (0.0, 1.0, 0.5))


def test_meijer_rejects_negative_argument():
    with pytest.raises(DomainError):
        specfun.meijer_g_303(-1.0)


# ==================== GREEN'S FUNCTIONS ====================

K = 0.04


def _mass(fn, half_width=1.0):
    value, _ = integrate.quad(fn, 0.0, half_width, limit=200)
    return 2.0 * value


def test_green_peak_matches_fox_form():
    t = 1e-3
    peak = specfun.green_pure_half(0.0, t, GreenCoeffs(K_alpha=K))
    assert peak == pytest.approx(specfun.fox_peak_half(t, K), rel=1e-12)


def test_green_pure_has_unit_mass():
    c = GreenCoeffs(K_alpha=K, mass=2.0)
    mass = _mass(lambda x: specfun.green_pure_half(x, 1e-3, c))
    assert mass == pytest.approx(2.0, rel=1e-4)


def test_green_pure_vectorized_and_even():
    x = np.array([-0.05, 0.0, 0.05])
    values = specfun.green_pure_half(x, 1e-3, GreenCoeffs(K_alpha=K))
    assert values.shape == (3,)
    assert values[0] == pytest.approx(values[2], rel=1e-14)
    assert values[1] > values[0]


def test_model_one_mass_decays_as_mittag_leffler():
    t, k_star = 1e-3, 5.0
    c = GreenCoeffs(K_alpha=K, k_star=k_star)
    mass = _mass(lambda x: specfun.green_annihilation_half(RateScaling.MODEL_I, x, t, c))
    assert mass == pytest.approx(specfun.caputo_relaxation(0.5, k_star, t), rel=1e-3)


def test_model_one_without_reaction_is_pure():
    x = np.linspace(-0.1, 0.1, 5)
    pure = specfun.green_pure_half(x, 1e-3, GreenCoeffs(K_alpha=K))
    value, info = specfun.green_annihilation_half(RateScaling.MODEL_I, x, 1e-3, GreenCoeffs(K_alpha=K),
                                                  return_info=True)
    np.testing.assert_allclose(value, pure, rtol=1e-14)
    assert not info["cancellation"]


def test_model_two_is_exponentially_damped_pure():
    x = np.linspace(-0.1, 0.1, 5)
    t, k_star = 1e-2, 50.0
    pure = specfun.green_pure_half(x, t, GreenCoeffs(K_alpha=K))
    damped = specfun.green_annihilation_half("II", x, t, GreenCoeffs(K_alpha=K, k_star=k_star))
    np.testing.assert_allclose(damped, math.exp(-k_star * t) * pure, rtol=1e-14)


def test_green_pure_rejects_reaction():
    with pytest.raises(DomainError):
        specfun.green_pure_half(0.0, 1.0, GreenCoeffs(K_alpha=K, k_star=1.0))


def test_mono_total_is_pure_diffusion():
    x = np.linspace(-0.1, 0.1, 7)
    t = 1e-3
    c = GreenCoeffs(K_alpha=K, k_star=3.0, ell_star=6.0)
    U, V = specfun.green_mono_half(RateScaling.MODEL_II, x, t, c, u0=0.7, v0=0.2)
    pure = specfun.green_pure_half(x, t, GreenCoeffs(K_alpha=K))
    np.testing.assert_allclose(U + V, 0.9 * pure, rtol=1e-12)


def test_mono_equilibrium_data_stays_in_balance():
    x = np.linspace(-0.1, 0.1, 7)
    c = GreenCoeffs(K_alpha=K, k_star=1.0, ell_star=2.0)
    # u0 : v0 = l : k has no reactive component
    U, V = specfun.green_mono_half(RateScaling.MODEL_I, x, 1e-3, c, u0=2.0, v0=1.0)
    np.testing.assert_allclose(U, 2.0 * V, rtol=1e-12)


# ==================== MACROSCOPIC REFERENCES ====================

def test_caputo_relaxation_models():
    assert specfun.caputo_relaxation(0.5, 2.0, 0.25) == pytest.approx(special.erfcx(1.0), rel=1e-8)
    assert specfun.caputo_relaxation(0.5, 2.0, 0.25, "II") == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_msd_subdiffusive():
    value = specfun.msd_subdiffusive(0.5, 0.04, 1e-2)
    assert value == pytest.approx(2 * 0.04 * 0.1 / math.gamma(1.5), rel=1e-14)
