# specfun.py - Special functions and closed-form Green's functions
"""
Mittag-Leffler function, CTRW waiting-time densities, the G^{3,0}_{0,3}
Meijer-G function and the alpha = 1/2 Green's functions built on it.

All routines are pure and reentrant.
"""

import logging
import math
import threading
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special

from subdiff.config import SPECFUN_CONFIG
from subdiff.error_handlers import (
    CancellationError,
    DomainError,
    EvaluationError,
    SeriesConvergenceError,
)
from subdiff.models import GreenCoeffs, MLParams, RateScaling

logger = logging.getLogger("subdiff.specfun")

EPS = np.finfo(float).eps
_asymptotic_warned = False
_warned_lock = threading.Lock()

ArrayLike = Union[float, Sequence[float], np.ndarray]


# ==================== MITTAG-LEFFLER ====================

def _ml_taylor(alpha: float, beta: float, z: float, tol: float, cap: int) -> Tuple[float, float]:
    """Taylor series; returns (value, estimated relative rounding error)."""
    if z == 0.0:
        return float(special.rgamma(beta)), 0.0

    log_abs_z = math.log(abs(z))
    negative = z < 0
    terms = []
    max_abs = 0.0
    prev_log = -math.inf
    for k in range(cap):
        log_term = k * log_abs_z - special.gammaln(alpha * k + beta)
        if log_term > 700.0:
            return math.nan, math.inf
        term = math.exp(log_term)
        if negative and k % 2:
            term = -term
        terms.append(term)
        max_abs = max(max_abs, abs(term))
        if k > 0 and log_term < prev_log:
            partial = math.fsum(terms)
            if abs(term) <= tol * abs(partial):
                err = max_abs * EPS * math.sqrt(len(terms)) / abs(partial) if partial else math.inf
                return partial, err
        prev_log = log_term

    partial = math.fsum(terms)
    raise EvaluationError(
        f"Mittag-Leffler series did not converge in {cap} terms (alpha={alpha}, beta={beta}, z={z})",
        partial_sum=partial,
        bound=abs(terms[-1]),
    )


def _ml_integral(alpha: float, beta: float, z: float) -> float:
    """Integral representation for z < 0, 0 < alpha < 1, beta < 1 + alpha."""
    x = abs(z)
    s1 = math.sin(math.pi * (1.0 - beta))
    s2 = math.sin(math.pi * (1.0 - beta + alpha))
    c = math.cos(alpha * math.pi)
    p = (1.0 - beta) / alpha
    pref = 1.0 / (alpha * math.pi)

    def kernel(chi):
        if chi == 0.0:
            return 0.0
        return (
            pref * chi ** p * math.exp(-chi ** (1.0 / alpha))
            * (chi * s1 - z * s2) / (chi * chi - 2.0 * chi * z * c + z * z)
        )

    # exp(-chi^(1/alpha)) is below e^-40 past the cut
    cut = 40.0 ** alpha
    points = [x] if x < cut else None
    head, _ = integrate.quad(kernel, 0.0, cut, points=points, limit=200, epsabs=0.0, epsrel=1e-12)
    tail, _ = integrate.quad(kernel, cut, math.inf, limit=200, epsabs=0.0, epsrel=1e-12)
    return head + tail


def _ml_asymptotic(alpha: float, beta: float, z: float, tol: float, cap: int) -> float:
    """-sum_k z^-k / Gamma(beta - alpha k) for large negative z."""
    terms = []
    prev = math.inf
    for k in range(1, cap):
        term = -(z ** -k) * float(special.rgamma(beta - alpha * k))
        if abs(term) > prev:
            break
        terms.append(term)
        prev = abs(term) if term != 0 else prev
        partial = math.fsum(terms)
        if partial != 0 and abs(term) <= tol * abs(partial):
            return partial
    partial = math.fsum(terms) if terms else 0.0
    raise EvaluationError(
        f"asymptotic Mittag-Leffler expansion not accurate enough at z={z}",
        partial_sum=partial,
        bound=prev,
    )


def mittag_leffler(p: MLParams, z: float) -> float:
    """
    Generalized Mittag-Leffler function E_{alpha,beta}(z) for real z.

    Taylor series with compensated summation near the origin; for negative
    arguments where the series would lose more than ml_tol to cancellation
    the integral representation (0 < alpha < 1, beta < 1 + alpha) or the
    algebraic asymptotic expansion takes over.
    """
    alpha, beta, z = float(p.alpha), float(p.beta), float(z)
    if alpha == 1.0 and beta == 1.0:
        return math.exp(z)

    tol = SPECFUN_CONFIG["ml_tol"]
    cap = SPECFUN_CONFIG["ml_term_cap"]
    radius = SPECFUN_CONFIG["ml_taylor_radius"]

    if z >= 0 or -z <= radius:
        value, err = _ml_taylor(alpha, beta, z, tol, cap)
        if err <= tol or (z >= 0 and math.isfinite(value)):
            return value
        if z >= 0:
            raise EvaluationError(f"Mittag-Leffler series overflows at z={z}", partial_sum=value, bound=math.inf)
        logger.debug("ML Taylor loses %.1e at z=%g, switching representation", err, z)

    if alpha < 1.0 and beta < 1.0 + alpha:
        return _ml_integral(alpha, beta, z)
    return _ml_asymptotic(alpha, beta, z, tol, cap)


def ml(alpha: float, beta: float, z: float) -> float:
    return mittag_leffler(MLParams(alpha=alpha, beta=beta), z)


# ==================== WAITING TIMES ====================

def tail_coefficient(alpha: float) -> float:
    """A_alpha = sin(pi alpha) Gamma(1 + alpha) / pi."""
    return math.sin(math.pi * alpha) * math.gamma(1.0 + alpha) / math.pi


def waiting_time_pdf(alpha: float, tau: float, t: float) -> float:
    """Mittag-Leffler waiting-time density (t^(a-1)/tau^a) E_{a,a}(-(t/tau)^a)."""
    if not (t > 0 and tau > 0 and 0 < alpha <= 1):
        raise DomainError(f"waiting_time_pdf needs t > 0, tau > 0, 0 < alpha <= 1 (got {alpha}, {tau}, {t})")
    if alpha == 1.0:
        return math.exp(-t / tau) / tau
    value = t ** (alpha - 1.0) / tau ** alpha * ml(alpha, alpha, -((t / tau) ** alpha))
    return max(value, 0.0)


def waiting_time_tail(alpha: float, tau: float, t: float) -> float:
    if not (t > 0 and tau > 0 and 0 < alpha <= 1):
        raise DomainError(f"waiting_time_tail needs t > 0, tau > 0, 0 < alpha <= 1 (got {alpha}, {tau}, {t})")
    return tail_coefficient(alpha) * tau ** alpha / t ** (1.0 + alpha)


# ==================== MEIJER-G ====================

def _meijer_asymptotic(z: float, b: Sequence[float]) -> float:
    theta = (sum(b) - 1.0) / 3.0
    return 2.0 * math.pi / math.sqrt(3.0) * z ** theta * math.exp(-3.0 * z ** (1.0 / 3.0))


def _meijer_series(z: float, b: Sequence[float], tol: float, cap: int, budget: float) -> float:
    """Residue sum over the three simple pole families."""
    log_z = math.log(z) if z > 0 else -math.inf
    parts = []
    magnitude = 0.0
    for h in range(3):
        others = [b[j] for j in range(3) if j != h]
        log_c, sign = 0.0, 1.0
        for bj in others:
            log_c += special.gammaln(bj - b[h])
            sign *= special.gammasgn(bj - b[h])
        if z == 0.0:
            if b[h] == 0.0:
                parts.append(sign * math.exp(log_c))
            elif b[h] < 0.0:
                raise DomainError("G(0) diverges for a negative index")
            continue
        scale = sign * math.exp(log_c + b[h] * log_z)

        # 0F2(; 1 + b_h - b_j ; -z)
        a1, a2 = 1.0 + b[h] - others[0], 1.0 + b[h] - others[1]
        term, terms = 1.0, [1.0]
        for n in range(cap):
            term *= -z / ((n + 1.0) * (a1 + n) * (a2 + n))
            if not math.isfinite(term):
                raise CancellationError(f"Meijer-G residue series overflows at z={z}", z=z)
            terms.append(term)
            ratio_next = z / abs((n + 2.0) * (a1 + n + 1.0) * (a2 + n + 1.0))
            if ratio_next < 1.0 and abs(term) <= tol * abs(math.fsum(terms)):
                break
        else:
            raise EvaluationError(
                f"Meijer-G residue series did not converge in {cap} terms at z={z}",
                partial_sum=scale * math.fsum(terms),
                bound=abs(scale * term),
            )
        parts.append(scale * math.fsum(terms))
        magnitude += abs(scale) * sum(abs(t) for t in terms)

    total = math.fsum(parts)
    if z > 0.0:
        lost = magnitude * EPS / abs(total) if total else math.inf
        if lost > budget:
            raise CancellationError(
                f"Meijer-G residue series loses {lost:.1e} to cancellation at z={z}",
                partial_sum=total,
                bound=magnitude * EPS,
                z=z,
            )
    return total


def meijer_g_303(z: float, b: Sequence[float] = (0.0, 0.25, 0.5), crossover: float = None) -> float:
    """
    G^{3,0}_{0,3}(z | b1, b2, b3) for z >= 0 with pairwise non-congruent b.

    Residue series below the crossover, leading exponential asymptotics
    (2 pi / sqrt 3) z^theta exp(-3 z^(1/3)) above it.
    """
    global _asymptotic_warned
    z = float(z)
    b = tuple(float(v) for v in b)
    if z < 0:
        raise DomainError(f"meijer_g_303 needs z >= 0 (got {z})")
    for i in range(3):
        for j in range(i + 1, 3):
            diff = b[i] - b[j]
            if abs(diff - round(diff)) < 1e-12:
                raise DomainError(f"indices {b[i]} and {b[j]} are congruent modulo 1")

    crossover = SPECFUN_CONFIG["meijer_crossover"] if crossover is None else crossover
    if z >= crossover:
        if not _asymptotic_warned:
            with _warned_lock:
                if not _asymptotic_warned:
                    logger.warning("Meijer-G asymptotic branch in use for z >= %g", crossover)
                    _asymptotic_warned = True
        return _meijer_asymptotic(z, b)
    return _meijer_series(
        z, b,
        SPECFUN_CONFIG["meijer_tol"],
        SPECFUN_CONFIG["meijer_term_cap"],
        SPECFUN_CONFIG["meijer_cancellation_budget"],
    )


# ==================== GREEN'S FUNCTIONS (alpha = 1/2) ====================

def _prefactor(t: float, K: float) -> float:
    return 1.0 / math.sqrt(8.0 * math.pi ** 3 * K * math.sqrt(t))


def _meijer_arg(x: float, t: float, K: float) -> float:
    return (x * x / (16.0 * K * math.sqrt(t))) ** 2


def _vectorize(fn, x):
    arr = np.asarray(x, dtype=float)
    out = np.array([fn(float(v)) for v in arr.ravel()]).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def fox_peak_half(t: float, K_alpha: float) -> float:
    """Value at x = 0 of the unit-mass alpha = 1/2 Green's function, Fox form."""
    return math.sqrt(math.pi) / math.gamma(0.75) / math.sqrt(4.0 * math.pi * K_alpha * math.sqrt(t))


def green_pure_half(x: ArrayLike, t: float, c: GreenCoeffs):
    """Free-space alpha = 1/2 Green's function scaled by c.mass."""
    if t <= 0:
        raise DomainError("green_pure_half needs t > 0")
    if c.k_star != 0:
        raise DomainError("green_pure_half needs k_star = 0; use green_annihilation_half")
    pref = c.mass * _prefactor(t, c.K_alpha)
    return _vectorize(lambda xv: pref * meijer_g_303(_meijer_arg(xv, t, c.K_alpha)), x)


def _model_one_point(x: float, t: float, c: GreenCoeffs) -> Tuple[float, Dict]:
    tol = SPECFUN_CONFIG["green_series_tol"]
    cap = SPECFUN_CONFIG["green_series_cap"]
    z = _meijer_arg(x, t, c.K_alpha)
    factor = -2.0 * c.k_star * math.sqrt(t)

    terms = []
    coeff = 1.0
    prev = math.inf
    fallback = 0
    for j in range(cap + 1):
        if j > 0:
            coeff *= factor / j
        b = (0.0, 0.25 + 0.5 * j, 0.5)
        if j == 0:
            g = meijer_g_303(z, b)
        elif coeff == 0.0:
            g = 0.0
        else:
            # large indices: the leading asymptotic term is poor, try the series first
            try:
                g = meijer_g_303(z, b, crossover=math.inf)
            except EvaluationError:
                g = _meijer_asymptotic(z, b)
                fallback += 1
        term = coeff * g
        terms.append(term)
        partial = math.fsum(terms)
        if j > 0 and abs(term) <= tol * abs(partial) and abs(term) <= prev:
            magnitude = sum(abs(v) for v in terms)
            info = {
                "terms": j + 1,
                "cancellation": magnitude * EPS / abs(partial) > 1e-6 if partial else True,
                "asymptotic_terms": fallback,
            }
            return partial, info
        prev = abs(term)

    raise SeriesConvergenceError(
        f"model I series did not converge in {cap} terms (k*·sqrt(t) = {c.k_star * math.sqrt(t):.3g})",
        partial_sum=math.fsum(terms),
        bound=abs(terms[-1]),
    )


def green_annihilation_half(model: RateScaling, x: ArrayLike, t: float, c: GreenCoeffs, return_info: bool = False):
    """
    alpha = 1/2 Green's function with annihilation at rate k_star.

    Model I sums the Meijer-G series with factors (-2 k* sqrt t)^j / j!;
    model II multiplies the pure Green's function by exp(-k* t).
    """
    if t <= 0:
        raise DomainError("green_annihilation_half needs t > 0")
    model = RateScaling(model)

    if model == RateScaling.MODEL_II:
        pure = green_pure_half(x, t, c.model_copy(update={"k_star": 0.0}))
        value = math.exp(-c.k_star * t) * pure
        return (value, {"terms": 1, "cancellation": False}) if return_info else value
    if model != RateScaling.MODEL_I:
        raise DomainError(f"closed forms exist for models I and II only (got {model.value})")

    pref = c.mass * _prefactor(t, c.K_alpha)
    arr = np.asarray(x, dtype=float)
    values, infos = [], []
    for xv in arr.ravel():
        s, info = _model_one_point(float(xv), t, c)
        values.append(pref * s)
        infos.append(info)
    out = np.array(values).reshape(arr.shape)
    value = float(out) if out.ndim == 0 else out

    if not return_info:
        return value
    summary = {
        "terms": max(i["terms"] for i in infos),
        "cancellation": any(i["cancellation"] for i in infos),
        "asymptotic_terms": sum(i["asymptotic_terms"] for i in infos),
    }
    if summary["cancellation"]:
        logger.warning("model I series lost precision to cancellation at t=%g", t)
    return value, summary


def green_mono_half(model: RateScaling, x: ArrayLike, t: float, c: GreenCoeffs, u0: float, v0: float):
    """
    alpha = 1/2 solution of the reversible A <-> B problem with point
    masses u0, v0 at the origin. Returns (U, V).
    """
    if t <= 0:
        raise DomainError("green_mono_half needs t > 0")
    k, ell = c.k_star, c.ell_star
    unit = c.model_copy(update={"k_star": 0.0, "ell_star": 0.0, "mass": 1.0})
    pure = green_pure_half(x, t, unit)

    if k + ell == 0.0:
        return u0 * pure, v0 * pure

    # P^-1 (u0, v0): reactive component and conserved component
    reactive = (k * u0 - ell * v0) / (k + ell)
    conserved = (u0 + v0) / (k + ell)
    if reactive == 0.0:
        g_react = 0.0 * pure
    else:
        g_react = green_annihilation_half(model, x, t, unit.model_copy(update={"k_star": k + ell}))
    U = reactive * g_react + ell * conserved * pure
    V = -reactive * g_react + k * conserved * pure
    return U, V


# ==================== MACROSCOPIC REFERENCES ====================

def caputo_relaxation(alpha: float, k_star: float, t: float, model: RateScaling = RateScaling.MODEL_I) -> float:
    """U(t)/U(0) for homogeneous annihilation: E_alpha(-k* t^alpha) or exp(-k* t)."""
    if RateScaling(model) == RateScaling.MODEL_II:
        return math.exp(-k_star * t)
    return ml(alpha, 1.0, -k_star * t ** alpha)


def msd_subdiffusive(alpha: float, K_alpha: float, t: ArrayLike, dim: int = 1):
    """2 d K_alpha t^alpha / Gamma(1 + alpha)."""
    return 2.0 * dim * K_alpha * np.power(t, alpha) / math.gamma(1.0 + alpha)
