# analysis.py - Moments, regressions and error norms
"""
Post-processing of solver output: mean squared displacement of summed
fields, log-log and semi-log regressions over explicit windows, and the
relative L2 error used to compare numeric and analytic fields.
"""

import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from subdiff.error_handlers import DomainError
from subdiff.models import StateParams
from subdiff.rdsolver import FieldSet

logger = logging.getLogger("subdiff.analysis")


class RegressionResult(BaseModel):
    """value is the exponent (power law) or the decay rate (exponential)."""
    value: float
    intercept: float
    residual: float
    t_a: float
    t_b: float
    n_points: int

    @model_validator(mode="after")
    def check_fit(self):
        if not self.t_a < self.t_b:
            raise ValueError("regression window must satisfy t_a < t_b")
        if not (math.isfinite(self.value) and math.isfinite(self.intercept)):
            raise ValueError("regression coefficients must be finite")
        return self


# ==================== MOMENTS ====================

def second_moment(x: np.ndarray, U: np.ndarray, center: float = 0.0) -> float:
    """h * sum (x - c)^2 U / (h * sum U); h cancels on a uniform grid."""
    total = float(np.sum(U))
    if not total > 0:
        raise DomainError("second moment of a field with vanishing total")
    return float(np.sum((x - center) ** 2 * U) / total)


def msd_of_field(series: Sequence[FieldSet], species: str = "A", center: float = 0.0,
                 relative: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    (t, msd) of the state-summed field of one species. With relative=True
    the second moment of the first snapshot is subtracted, which removes
    the width of the initial profile.
    """
    if not series:
        raise DomainError("msd_of_field needs at least one snapshot")
    times = np.array([f.t for f in series])
    x = series[0].grid.x
    moments = np.array([second_moment(x, f.species_field(species).sum(axis=0), center) for f in series])
    if relative:
        moments = moments - moments[0]
    return times, moments


# ==================== REGRESSIONS ====================

def _window(t, y, window: Optional[Tuple[float, float]]):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is None:
        window = (float(t.min()), float(t.max()))
    t_a, t_b = window
    if not t_a < t_b:
        raise DomainError(f"window [{t_a:g}, {t_b:g}] is empty")
    # relative slack so window edges that came from rounding are kept
    mask = (t >= t_a * (1 - 1e-12)) & (t <= t_b * (1 + 1e-12))
    if mask.sum() < 3:
        raise DomainError(f"fewer than 3 points in window [{t_a:g}, {t_b:g}]", n_points=int(mask.sum()))
    return t[mask], y[mask], float(t_a), float(t_b)


def _linear_fit(u: np.ndarray, v: np.ndarray):
    design = np.column_stack([u, np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    residual = float(np.linalg.norm(design @ coef - v))
    return float(coef[0]), float(coef[1]), residual


def fit_power_law(t, y, window: Optional[Tuple[float, float]] = None) -> RegressionResult:
    """Least-squares slope of log y against log t."""
    tw, yw, t_a, t_b = _window(t, y, window)
    if np.any(tw <= 0) or np.any(yw <= 0):
        raise DomainError("fit_power_law needs t > 0 and y > 0 in the window")
    slope, intercept, residual = _linear_fit(np.log(tw), np.log(yw))
    return RegressionResult(value=slope, intercept=intercept, residual=residual, t_a=t_a, t_b=t_b, n_points=tw.size)


def fit_exp_decay(t, y, window: Optional[Tuple[float, float]] = None) -> RegressionResult:
    """Rate = minus the slope of log y against t."""
    tw, yw, t_a, t_b = _window(t, y, window)
    if np.any(yw <= 0):
        raise DomainError("fit_exp_decay needs y > 0 in the window")
    slope, intercept, residual = _linear_fit(tw, np.log(yw))
    return RegressionResult(value=-slope, intercept=intercept, residual=residual, t_a=t_a, t_b=t_b, n_points=tw.size)


def kprime_regression(t, Ubar, early: Optional[Tuple[float, float]] = None,
                      late: Optional[Tuple[float, float]] = None) -> Dict[str, RegressionResult]:
    """Early and late decay rates of the total amount; defaults are the first and last decade of samples."""
    t = np.asarray(t, dtype=float)
    positive = t[t > 0]
    early = early or (float(positive.min()), float(positive.min()) * 10.0)
    late = late or (float(t.max()) / 10.0, float(t.max()))
    return {"early": fit_exp_decay(t, Ubar, early), "late": fit_exp_decay(t, Ubar, late)}


def three_regime_report(t, msd, sp: StateParams,
                        windows: Optional[Dict[str, Tuple[float, float]]] = None) -> Dict[str, RegressionResult]:
    """
    MSD slopes in the short-time (ordinary), middle (subdiffusive) and
    long-time (ordinary) regimes. Default windows: [tau_1/100, tau_1/10],
    the fit window of sp, and [10 tau_N, t_last].
    """
    tau = sp.tau_arr
    t = np.asarray(t, dtype=float)
    defaults = {
        "short": (tau[0] / 100.0, tau[0] / 10.0),
        "middle": (sp.t_min or tau[0], sp.t_max or tau[-1]),
        "long": (10.0 * tau[-1], float(t.max())),
    }
    defaults.update(windows or {})
    report = {}
    for name, window in defaults.items():
        report[name] = fit_power_law(t, msd, window)
        logger.info("msd slope %-6s [%g, %g]: %.4f", name, window[0], window[1], report[name].value)
    return report


# ==================== ERROR NORMS ====================

def l2_rel_error(numeric, reference) -> float:
    """||a - b||_2 / ||b||_2 over the grid nodes."""
    a = np.asarray(numeric, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"fields have different shapes {a.shape} and {b.shape}")
    norm = float(np.linalg.norm(b))
    if norm == 0.0:
        raise DomainError("reference field has zero norm")
    return float(np.linalg.norm(a - b)) / norm
