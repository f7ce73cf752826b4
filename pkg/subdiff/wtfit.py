# wtfit.py - Exponential-sum approximation of the waiting-time tail
"""
Fits sum_i mu~_i exp(-s_i t) to t^-(1+alpha) on [t_min, t_max] and maps
the fit to internal-state parameters.

The fit error is the relative L2 norm of F_approx/F_ex - 1 with respect
to dt on the window, evaluated by the trapezoidal rule on a log-spaced
grid (FIT_CONFIG["opt_grid"] points during optimization,
FIT_CONFIG["report_grid"] points for the reported value).
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy import integrate, optimize

from subdiff.config import FIT_CONFIG, map_tasks
from subdiff.error_handlers import DomainError, FitError
from subdiff.models import FitProblem, QuadratureFit, StateParams, WeightMode
from subdiff.specfun import tail_coefficient

logger = logging.getLogger("subdiff.wtfit")

# Reference parameter sets: printed tau_i and weights
PUBLISHED_SETS = {
    "set1": {
        "alpha": 0.5, "K_alpha": 0.04, "t_min": 1e-4, "t_max": 5e-2, "tau": 7.62e-5,
        "tau_i": [9.51e-5, 5.40e-4, 3.09e-3, 2.13e-2],
        "weights": [4.96e-1, 2.07e-1, 8.80e-2, 4.42e-2],
        "eps_mod": 5.25e-2,
    },
    "set2": {
        "alpha": 0.5, "K_alpha": 0.04, "t_min": 1e-3, "t_max": 1.0, "tau": 3.22e-4,
        "tau_i": [7.58e-4, 3.55e-3, 1.66e-2, 7.89e-2, 4.78e-1],
        "weights": [3.23e-1, 1.48e-1, 6.84e-2, 3.24e-2, 1.85e-2],
        "eps_mod": 2.92e-2,
    },
}


# ==================== ERROR MODEL ====================

def log_grid(t_min: float, t_max: float, n: int) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)


def ratio(nodes, weights, alpha: float, t: np.ndarray) -> np.ndarray:
    """F_approx(t) / F_ex(t)."""
    s = np.asarray(nodes, dtype=float)[None, :]
    w = np.asarray(weights, dtype=float)[None, :]
    tt = np.asarray(t, dtype=float)[:, None]
    return (w * np.exp(-s * tt)).sum(axis=1) * tt[:, 0] ** (1.0 + alpha)


def _eps(nodes, weights, alpha: float, t: np.ndarray) -> float:
    r = ratio(nodes, weights, alpha, t) - 1.0
    return math.sqrt(integrate.trapezoid(r * r, t) / (t[-1] - t[0]))


def model_error(fit: QuadratureFit, p: FitProblem, n_grid: Optional[int] = None) -> float:
    """epsilon_mod of a fit on the report grid, independent of the optimizer grid."""
    if abs(fit.alpha - p.alpha) > 1e-15:
        raise DomainError(f"fit alpha {fit.alpha} does not match problem alpha {p.alpha}")
    t = log_grid(p.t_min, p.t_max, n_grid or FIT_CONFIG["report_grid"])
    return _eps(fit.nodes, fit.weights, p.alpha, t)


# ==================== OPTIMIZATION ====================

def _quadrature_weights(t: np.ndarray) -> np.ndarray:
    """Trapezoid weights for integral over t, so sum w r^2 approximates the integral."""
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += dt / 2.0
    w[1:] += dt / 2.0
    return w


def _residuals(theta: np.ndarray, alpha: float, t: np.ndarray, sqrt_w: np.ndarray) -> np.ndarray:
    # theta = (log s, log c) with mu~ = c s^(1+alpha): terms c (s t)^(1+alpha) e^(-s t)
    n = theta.size // 2
    s = np.exp(theta[:n])
    c = np.exp(theta[n:])
    st = s[None, :] * t[:, None]
    r = (c[None, :] * st ** (1.0 + alpha) * np.exp(-st)).sum(axis=1) - 1.0
    return sqrt_w * r


def _jacobian(theta: np.ndarray, alpha: float, t: np.ndarray, sqrt_w: np.ndarray) -> np.ndarray:
    n = theta.size // 2
    s = np.exp(theta[:n])
    c = np.exp(theta[n:])
    st = s[None, :] * t[:, None]
    base = c[None, :] * st ** (1.0 + alpha) * np.exp(-st)
    d_logs = base * (1.0 + alpha - st)
    return sqrt_w[:, None] * np.hstack([d_logs, base])


def _initial_weights(nodes: np.ndarray, alpha: float, t: np.ndarray, sqrt_w: np.ndarray) -> np.ndarray:
    """Nonnegative linear least squares for mu~ with nodes frozen."""
    M = sqrt_w[:, None] * np.exp(-nodes[None, :] * t[:, None]) * t[:, None] ** (1.0 + alpha)
    scale = np.linalg.norm(M, axis=0)
    scale[scale == 0] = 1.0
    sol, _ = optimize.nnls(M / scale, sqrt_w)
    weights = sol / scale
    floor = 1e-8 * weights.max() if weights.max() > 0 else 1e-8
    return np.maximum(weights, floor)


def _to_theta(nodes: np.ndarray, weights: np.ndarray, alpha: float) -> np.ndarray:
    return np.concatenate([np.log(nodes), np.log(weights / nodes ** (1.0 + alpha))])


def _from_theta(theta: np.ndarray, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    n = theta.size // 2
    s = np.exp(theta[:n])
    weights = np.exp(theta[n:]) * s ** (1.0 + alpha)
    order = np.argsort(s, kind="stable")
    s, weights = s[order], weights[order]
    for i in range(1, n):
        if s[i] <= s[i - 1]:
            s[i] = s[i - 1] * (1.0 + 1e-9)
    return s, weights


def diffusive_representation_fit(alpha: float, t_min: float, t_max: float, N: int) -> QuadratureFit:
    """
    Midpoint quadrature of t^-(1+a) = (1/Gamma(1+a)) int s^a e^(-s t) ds
    in the variable log s, nodes log-spaced over [1/t_max, 1/t_min].
    """
    if N < 1 or not 0 < t_min < t_max:
        raise DomainError("diffusive_representation_fit needs N >= 1 and 0 < t_min < t_max")
    lo, hi = math.log(1.0 / t_max), math.log(1.0 / t_min)
    # midpoints of N equal cells in log s
    step = (hi - lo) / N
    y = lo + (np.arange(N) + 0.5) * step
    nodes = np.exp(y)
    weights = step * nodes ** (1.0 + alpha) / math.gamma(1.0 + alpha)
    t = log_grid(t_min, t_max, FIT_CONFIG["report_grid"])
    return QuadratureFit(
        alpha=alpha, t_min=t_min, t_max=t_max,
        weights=weights.tolist(), nodes=nodes.tolist(),
        eps_mod=_eps(nodes, weights, alpha, t),
    )


def _starts(p: FitProblem, t: np.ndarray, sqrt_w: np.ndarray, warm_start: Optional[QuadratureFit]) -> List[np.ndarray]:
    rng = np.random.default_rng(p.seed)
    base = np.geomspace(1.0 / p.t_max, 1.0 / p.t_min, p.N)
    spacing = math.log(base[1] / base[0]) if p.N > 1 else 1.0
    jitter = FIT_CONFIG["jitter"] * spacing

    starts = []
    if warm_start is not None:
        starts.append(_warm_theta(warm_start, p))
    for i in range(p.multistart):
        nodes = base if i == 0 else base * np.exp(rng.normal(0.0, jitter, size=p.N))
        nodes = np.sort(nodes)
        starts.append(_to_theta(nodes, _initial_weights(nodes, p.alpha, t, sqrt_w), p.alpha))
    quad = diffusive_representation_fit(p.alpha, p.t_min, p.t_max, p.N)
    starts.append(_to_theta(np.array(quad.nodes), np.array(quad.weights), p.alpha))
    return starts


def _warm_theta(fit: QuadratureFit, p: FitProblem) -> np.ndarray:
    """Previous fit plus negligible extra nodes, so the start reproduces its error."""
    nodes = np.array(fit.nodes)
    weights = np.array(fit.weights)
    if fit.N > p.N:
        raise DomainError("warm start has more terms than the problem")
    while nodes.size < p.N:
        edges = np.concatenate([[1.0 / p.t_max], nodes, [1.0 / p.t_min]])
        gaps = np.log(edges[1:] / edges[:-1])
        k = int(np.argmax(gaps))
        new = math.sqrt(edges[k] * edges[k + 1])
        pos = int(np.searchsorted(nodes, new))
        nodes = np.insert(nodes, pos, new)
        weights = np.insert(weights, pos, 1e-8 * weights.max())
    return _to_theta(nodes, weights, p.alpha)


def fit_exponential_sum(p: FitProblem, warm_start: Optional[QuadratureFit] = None, workers: Optional[int] = None) -> QuadratureFit:
    """
    Minimize epsilon_mod over (s_i, mu~_i) with Levenberg-Marquardt from
    jittered multistarts. Deterministic for a fixed p.seed: the lowest
    error wins, ties go to the earliest start.
    """
    t = log_grid(p.t_min, p.t_max, FIT_CONFIG["opt_grid"])
    sqrt_w = np.sqrt(_quadrature_weights(t) / (p.t_max - p.t_min))
    starts = _starts(p, t, sqrt_w, warm_start)

    def run(theta0):
        try:
            res = optimize.least_squares(
                _residuals, theta0, jac=_jacobian, method="lm",
                args=(p.alpha, t, sqrt_w),
                xtol=p.tol, ftol=p.tol, gtol=p.tol,
                max_nfev=p.max_iter,
            )
            theta = res.x
        except (ValueError, FloatingPointError) as exc:
            logger.debug("start failed: %s", exc)
            theta = theta0
        # never return worse than the starting point
        if np.linalg.norm(_residuals(theta, p.alpha, t, sqrt_w)) > np.linalg.norm(_residuals(theta0, p.alpha, t, sqrt_w)):
            theta = theta0
        err = float(np.linalg.norm(_residuals(theta, p.alpha, t, sqrt_w)))
        return err if math.isfinite(err) else math.inf, theta

    results = map_tasks(run, starts, workers)
    best_idx = min(range(len(results)), key=lambda i: (results[i][0], i))
    for i, (err, _) in enumerate(results):
        logger.debug("start %d: eps=%.6e", i, err)

    nodes, weights = _from_theta(results[best_idx][1], p.alpha)
    fit = QuadratureFit(
        alpha=p.alpha, t_min=p.t_min, t_max=p.t_max,
        weights=weights.tolist(), nodes=nodes.tolist(), eps_mod=0.0,
    )
    fit = fit.model_copy(update={"eps_mod": model_error(fit, p)})
    logger.info("fit N=%d on [%g, %g]: eps_mod=%.4e (start %d)", p.N, p.t_min, p.t_max, fit.eps_mod, best_idx)

    if p.eps_ceiling is not None and fit.eps_mod > p.eps_ceiling:
        raise FitError(
            f"eps_mod {fit.eps_mod:.3e} above ceiling {p.eps_ceiling:.3e}",
            best_fit=fit, N=p.N,
        )
    return fit


def fit_auto(p: FitProblem, target: float, n_max: int = 16) -> QuadratureFit:
    """Increase N from p.N with nested warm starts until eps_mod <= target."""
    fit = None
    for n in range(p.N, n_max + 1):
        problem = p.model_copy(update={"N": n, "eps_ceiling": None})
        fit = fit_exponential_sum(problem, warm_start=fit)
        if fit.eps_mod <= target:
            return fit
    raise FitError(f"eps_mod {fit.eps_mod:.3e} above target {target:.3e} at N={n_max}", best_fit=fit)


# ==================== PARAMETER MAPPING ====================

def to_state_params(fit: QuadratureFit, K_alpha: float, p: FitProblem) -> StateParams:
    """tau_i = 1/s_i, tau = (A_a sum mu~/s)^(-1/a), mu_i = (mu~_i/s_i)/sum(mu~/s), sigma2 = K tau^a."""
    # nodes ascend, so reverse to list tau_i in increasing order
    s = np.asarray(fit.nodes)[::-1]
    w = np.asarray(fit.weights)[::-1]
    ratio_ws = w / s
    total = math.fsum(ratio_ws)
    a_alpha = tail_coefficient(p.alpha)
    tau = (a_alpha * total) ** (-1.0 / p.alpha)
    raw = w * a_alpha * tau ** p.alpha / s
    return StateParams(
        alpha=p.alpha,
        K_alpha=K_alpha,
        tau_i=(1.0 / s).tolist(),
        mu_i=(ratio_ws / total).tolist(),
        raw_weights=raw.tolist(),
        tau=tau,
        sigma2=K_alpha * tau ** p.alpha,
        t_min=p.t_min,
        t_max=p.t_max,
    )


def from_state_params(sp: StateParams) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse mapping (s_i, mu~_i) using the raw weights: mu~_i = raw_i s_i / (A_a tau^a)."""
    s = 1.0 / sp.tau_arr
    weights = sp.raw_arr * s / (tail_coefficient(sp.alpha) * sp.tau ** sp.alpha)
    return s, weights


def fit_from_state_params(sp: StateParams) -> QuadratureFit:
    if sp.t_min is None or sp.t_max is None:
        raise DomainError("state parameters carry no fit window")
    s, weights = from_state_params(sp)
    order = np.argsort(s)
    t = log_grid(sp.t_min, sp.t_max, FIT_CONFIG["report_grid"])
    return QuadratureFit(
        alpha=sp.alpha, t_min=sp.t_min, t_max=sp.t_max,
        weights=weights[order].tolist(), nodes=s[order].tolist(),
        eps_mod=_eps(s[order], weights[order], sp.alpha, t),
    )


def published_state_params(set_id: str) -> StateParams:
    """Printed parameter sets; sigma2 is recomputed as K_alpha tau^alpha."""
    try:
        data = PUBLISHED_SETS[set_id]
    except KeyError:
        raise DomainError(f"unknown parameter set {set_id!r}; expected one of {sorted(PUBLISHED_SETS)}")
    return StateParams.build(
        alpha=data["alpha"], K_alpha=data["K_alpha"], tau_i=data["tau_i"],
        weights=data["weights"], tau=data["tau"],
        t_min=data["t_min"], t_max=data["t_max"],
    )


# ==================== DENSITIES ====================

def approx_waiting_pdf(sp: StateParams, t, weights: WeightMode = WeightMode.NORMALIZED):
    """sum_i mu_i / tau_i exp(-t / tau_i)."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0):
        raise DomainError("approx_waiting_pdf needs t >= 0")
    mu = sp.weights(weights)
    tau = sp.tau_arr
    out = (mu[None, :] / tau[None, :] * np.exp(-tt.reshape(-1, 1) / tau[None, :])).sum(axis=1)
    out = out.reshape(tt.shape)
    return float(out) if out.ndim == 0 else out


def tau_eq(sp: StateParams) -> float:
    """Equivalent Poisson time at small t: (sum mu/tau) / (sum mu/tau^2)."""
    mu, tau = sp.mu_arr, sp.tau_arr
    return float(np.sum(mu / tau) / np.sum(mu / tau ** 2))
