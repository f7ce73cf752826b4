# config.py - Centralized Configuration
"""
Numerical defaults for the toolkit, overridable through environment
variables (or a .env file in the working directory).
"""
import os
import logging
import threading
from pathlib import Path
from concurrent.futures import ThreadPoolExecutor
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent
RESULTS_DIR = Path(os.getenv("SUBDIFF_RESULTS_DIR", str(PROJECT_ROOT / "results")))
EXPERIMENTS_DIR = Path(os.getenv("SUBDIFF_EXPERIMENTS_DIR", str(PROJECT_ROOT / "experiments")))

# Special functions
SPECFUN_CONFIG = {
    "ml_taylor_radius": float(os.getenv("SUBDIFF_ML_TAYLOR_RADIUS", "5.0")),
    "ml_term_cap": int(os.getenv("SUBDIFF_ML_TERM_CAP", "2000")),
    "ml_tol": float(os.getenv("SUBDIFF_ML_TOL", "1e-10")),
    "meijer_term_cap": int(os.getenv("SUBDIFF_MEIJER_TERM_CAP", "500")),
    "meijer_tol": float(os.getenv("SUBDIFF_MEIJER_TOL", "1e-10")),
    "meijer_crossover": float(os.getenv("SUBDIFF_MEIJER_CROSSOVER", "40.0")),
    "meijer_cancellation_budget": float(os.getenv("SUBDIFF_MEIJER_CANCELLATION", "1e-6")),
    "green_series_tol": float(os.getenv("SUBDIFF_GREEN_SERIES_TOL", "1e-12")),
    "green_series_cap": int(os.getenv("SUBDIFF_GREEN_SERIES_CAP", "200")),
}

# Waiting-time fit
FIT_CONFIG = {
    "multistart": int(os.getenv("SUBDIFF_FIT_MULTISTART", "16")),
    "max_iter": int(os.getenv("SUBDIFF_FIT_MAX_ITER", "2000")),
    "tol": float(os.getenv("SUBDIFF_FIT_TOL", "1e-12")),
    "opt_grid": int(os.getenv("SUBDIFF_FIT_OPT_GRID", "512")),
    "report_grid": int(os.getenv("SUBDIFF_FIT_REPORT_GRID", "2048")),
    "jitter": float(os.getenv("SUBDIFF_FIT_JITTER", "0.3")),
    "workers": int(os.getenv("SUBDIFF_WORKERS", "1")),
}

# Deterministic solver
SOLVER_CONFIG = {
    "dt": float(os.getenv("SUBDIFF_DT", "1e-5")),
    "nx": int(os.getenv("SUBDIFF_NX", "128")),
    "warn_negative": float(os.getenv("SUBDIFF_WARN_NEGATIVE", "1e-12")),
    "abort_negative_rel": float(os.getenv("SUBDIFF_ABORT_NEGATIVE_REL", "1e-6")),
}

# Stochastic simulation
SSA_CONFIG = {
    "particle_scale": float(os.getenv("SUBDIFF_PARTICLE_SCALE", "1e4")),
    "replicas": int(os.getenv("SUBDIFF_SSA_REPLICAS", "1000")),
    "voxels": int(os.getenv("SUBDIFF_SSA_VOXELS", "16")),
    "max_events": int(os.getenv("SUBDIFF_SSA_MAX_EVENTS", "50000000")),
    "n_particles": int(os.getenv("SUBDIFF_CTRW_PARTICLES", "100000")),
}

LOG_CONFIG = {
    "level": os.getenv("SUBDIFF_LOG_LEVEL", "INFO"),
    "format": "%(asctime)s  %(levelname)-7s  %(message)s",
    "datefmt": "%H:%M:%S",
}


def validate_config():
    """Validate that numeric settings are usable"""
    positive = {
        "SUBDIFF_ML_TAYLOR_RADIUS": SPECFUN_CONFIG["ml_taylor_radius"],
        "SUBDIFF_ML_TOL": SPECFUN_CONFIG["ml_tol"],
        "SUBDIFF_MEIJER_TOL": SPECFUN_CONFIG["meijer_tol"],
        "SUBDIFF_MEIJER_CROSSOVER": SPECFUN_CONFIG["meijer_crossover"],
        "SUBDIFF_MEIJER_CANCELLATION": SPECFUN_CONFIG["meijer_cancellation_budget"],
        "SUBDIFF_GREEN_SERIES_TOL": SPECFUN_CONFIG["green_series_tol"],
        "SUBDIFF_FIT_TOL": FIT_CONFIG["tol"],
        "SUBDIFF_DT": SOLVER_CONFIG["dt"],
        "SUBDIFF_PARTICLE_SCALE": SSA_CONFIG["particle_scale"],
    }
    at_least_one = {
        "SUBDIFF_ML_TERM_CAP": SPECFUN_CONFIG["ml_term_cap"],
        "SUBDIFF_MEIJER_TERM_CAP": SPECFUN_CONFIG["meijer_term_cap"],
        "SUBDIFF_GREEN_SERIES_CAP": SPECFUN_CONFIG["green_series_cap"],
        "SUBDIFF_FIT_MULTISTART": FIT_CONFIG["multistart"],
        "SUBDIFF_FIT_MAX_ITER": FIT_CONFIG["max_iter"],
        "SUBDIFF_WORKERS": FIT_CONFIG["workers"],
        "SUBDIFF_SSA_REPLICAS": SSA_CONFIG["replicas"],
        "SUBDIFF_SSA_MAX_EVENTS": SSA_CONFIG["max_events"],
        "SUBDIFF_CTRW_PARTICLES": SSA_CONFIG["n_particles"],
    }

    invalid = [name for name, value in positive.items() if not value > 0]
    invalid += [name for name, value in at_least_one.items() if value < 1]
    if FIT_CONFIG["opt_grid"] < 16 or FIT_CONFIG["report_grid"] < 16:
        invalid.append("SUBDIFF_FIT_OPT_GRID/SUBDIFF_FIT_REPORT_GRID")
    if SOLVER_CONFIG["nx"] < 3:
        invalid.append("SUBDIFF_NX")

    if invalid:
        raise EnvironmentError(
            f"Invalid numeric settings: {', '.join(invalid)}\n"
            "Check your .env file against .env.example"
        )

# Run validation on import
validate_config()


def setup_logging(level=None):
    """Configure the root logger once with the toolkit format."""
    logging.basicConfig(
        level=getattr(logging, str(level or LOG_CONFIG["level"]).upper(), logging.INFO),
        format=LOG_CONFIG["format"],
        datefmt=LOG_CONFIG["datefmt"],
    )


# ==================== SHARED WORKER POOL ====================
# Multistart fits and SSA replicas borrow threads from one pool per process.
_executor = None
_executor_lock = threading.Lock()


def get_executor():
    """Return (or lazily create) the shared thread pool."""
    global _executor
    if _executor is None:
        with _executor_lock:
            if _executor is None:  # double-checked locking
                _executor = ThreadPoolExecutor(
                    max_workers=FIT_CONFIG["workers"],
                    thread_name_prefix="subdiff",
                )
    return _executor


def map_tasks(fn, items, workers=None):
    """
    Apply fn to every item and return results in input order.
    Runs inline when only one worker is configured.
    """
    workers = FIT_CONFIG["workers"] if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return list(get_executor().map(fn, items))


def close_executor():
    """Shut the shared pool down at process exit."""
    global _executor
    if _executor is not None:
        _executor.shutdown(wait=True)
        _executor = None
