#!/usr/bin/env python3
"""
experiment.py - Reproduction of the reference measurements
=========================================================
Runs every shipped experiment config and compares the measured
quantities with the published values:

  FIT          - exponential-sum fits (eps_mod) for both parameter sets
  SUBDIFFUSION - subdiffusion vs the Meijer-G solution (eps_tot)
  MSD          - MSD regimes (log-log slopes)
  ANNIHILATION - annihilation, models I and II (decay rates, k'(0), k'_inf)
  REVERSIBLE   - reversible A <-> B (steady states, equivalent rates)
  DIMERIZATION - dimerization A + B <-> C, three reaction variants
  SSA          - lattice SSA ensemble vs the deterministic mean (optional)

Run:
    cd /path/to/repo
    python -m subdiff.eval.experiment [--with-ssa] [--only REVERSIBLE,DIMERIZATION]

Outputs:
    results/eval_raw.json
    results/eval_summary.txt
"""

import sys
import argparse
import json
import time
import logging
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

# ---------------------------------------------------------------------------
# 0. PATHS
# ---------------------------------------------------------------------------
SCRIPT_DIR   = Path(__file__).resolve().parent          # subdiff/eval/
PROJECT_ROOT = SCRIPT_DIR.parent.parent                 # repository root

from dotenv import load_dotenv
load_dotenv(PROJECT_ROOT / ".env")

# ---------------------------------------------------------------------------
# 1. LOCAL IMPORTS
# ---------------------------------------------------------------------------
from subdiff import analysis, rdsolver, states, stochastic, wtfit
from subdiff.cli import analytic_fields, build_system, initial_fields, load_config, resolve_state_params, steady_report
from subdiff.config import EXPERIMENTS_DIR, RESULTS_DIR, close_executor
from subdiff.error_handlers import SubdiffError, error_payload
from subdiff.models import SegmentConfig, SSAConfig

# ---------------------------------------------------------------------------
# 2. LOGGING
# ---------------------------------------------------------------------------
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s  %(levelname)-7s  %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("eval")

# ---------------------------------------------------------------------------
# 3. PUBLISHED VALUES AND TOLERANCES
# ---------------------------------------------------------------------------
PUBLISHED = {
    "FIT": {"set1": {"eps_mod": 5.25e-2, "ceiling": 6.0e-2}, "set2": {"eps_mod": 2.92e-2, "ceiling": 3.5e-2}},
    "SUBDIFFUSION": {"set1": {"eps_tot": 2.33e-2, "ceiling": 4e-2}, "set2": {"eps_tot": 3.65e-2, "ceiling": 6e-2}},
    "MSD": {"set1": 0.4997, "set2": 0.5454},
    "REVERSIBLE": {"U_inf": 8.698e-3, "V_inf": 4.349e-3, "k_eq": 1.047e6, "l_eq": 2.094e6},
    "DIMERIZATION": {
        "I": {"U_inf": 8.204e-3, "V_inf": 6.573e-3, "W_inf": 1.582e-3, "k_eq": 2450.0, "l_eq": 83.51},
        "II": {"U_inf": 5.826e-3, "V_inf": 4.195e-3, "W_inf": 3.959e-3, "k_eq": 1.187e5, "l_eq": 732.8},
        "III": {"U_inf": 3.772e-3, "V_inf": 2.141e-3, "W_inf": 6.014e-3, "k_eq": 24.83, "l_eq": 100.0},
    },
}

STEADY_REL_TOL = 0.02
RATE_REL_TOL   = 0.05


def check(group: str, quantity: str, measured: Optional[float], published: Optional[float],
          tol: Optional[float] = None, ceiling: Optional[float] = None) -> Dict[str, Any]:
    """One comparison row; tol is relative to the published value, ceiling is absolute."""
    ok = measured is not None and np.isfinite(measured)
    if ok and ceiling is not None:
        ok = measured <= ceiling
    if ok and tol is not None and published is not None:
        ok = abs(measured - published) <= tol * abs(published)
    return {
        "group": group, "quantity": quantity, "measured": measured,
        "published": published, "tol": tol, "ceiling": ceiling, "pass": bool(ok),
    }


def config(name: str):
    return load_config(EXPERIMENTS_DIR / f"{name}.json")


# ---------------------------------------------------------------------------
# 4. EXPONENTIAL-SUM FITS
# ---------------------------------------------------------------------------

def run_fit() -> List[Dict]:
    rows = []
    for set_id in ("set1", "set2"):
        cfg = config(f"fit_{set_id}")
        problem = cfg.fit_problem()
        fit = wtfit.fit_exponential_sum(problem)
        sp = wtfit.to_state_params(fit, cfg.K_alpha, problem)
        pub = PUBLISHED["FIT"][set_id]
        rows.append(check("FIT", f"{set_id} eps_mod", fit.eps_mod, pub["eps_mod"], ceiling=pub["ceiling"]))
        identity = abs(sp.sigma2 - sp.K_alpha * sp.tau ** sp.alpha) / sp.sigma2
        rows.append(check("FIT", f"{set_id} sigma2 identity", identity, None, ceiling=1e-12))
        published = wtfit.published_state_params(set_id)
        rows.append(check("FIT", f"{set_id} eps_mod (printed)", wtfit.fit_from_state_params(published).eps_mod,
                          pub["eps_mod"], tol=0.1))
    return rows


# ---------------------------------------------------------------------------
# 5. SUBDIFFUSION VS ANALYTIC
# ---------------------------------------------------------------------------

def run_subdiffusion() -> List[Dict]:
    rows = []
    for set_id in ("set1", "set2"):
        cfg = config(f"subdiffusion_{set_id}")
        sp = resolve_state_params(cfg)
        snaps = rdsolver.integrate(build_system(cfg, sp), initial_fields(cfg, sp), cfg.dt, cfg.t_end,
                                   observe_times=cfg.observe_times)
        numeric = rdsolver.observable_sum(snaps[-1])["A"]
        reference = analytic_fields(cfg, sp, cfg.t_end)["U"]
        pub = PUBLISHED["SUBDIFFUSION"][set_id]
        rows.append(check("SUBDIFFUSION", f"{set_id} eps_tot", analysis.l2_rel_error(numeric, reference),
                          pub["eps_tot"], ceiling=pub["ceiling"]))
    return rows


# ---------------------------------------------------------------------------
# 6. MSD REGIMES
# ---------------------------------------------------------------------------

def run_msd() -> List[Dict]:
    rows = []
    for set_id in ("set1", "set2"):
        cfg = config(f"msd_{set_id}")
        sp = resolve_state_params(cfg)
        segments = rdsolver.log_segments(cfg.msd.t_first, cfg.t_end)
        snaps = rdsolver.integrate_segments(build_system(cfg, sp), initial_fields(cfg, sp), segments)
        t, msd = analysis.msd_of_field(snaps)
        report = analysis.three_regime_report(t[1:], msd[1:], sp, cfg.msd.windows)
        rows.append(check("MSD", f"{set_id} slope short", report["short"].value, 1.0, tol=0.1))
        rows.append(check("MSD", f"{set_id} slope middle", report["middle"].value, PUBLISHED["MSD"][set_id], tol=0.1))
        rows.append(check("MSD", f"{set_id} slope long", report["long"].value, 1.0, tol=0.1))
    return rows


# ---------------------------------------------------------------------------
# 7. ANNIHILATION
# ---------------------------------------------------------------------------

def run_annihilation() -> List[Dict]:
    rows = []
    # fine steps before the first relaxation time, implicit Euler for the long tail
    segments = [
        SegmentConfig(dt=1e-7, t_end=1e-5),
        SegmentConfig(dt=1e-5, t_end=1e-2),
        SegmentConfig(dt=2e-4, t_end=1.0, theta=1.0),
    ]
    for model in ("I", "II"):
        cfg = config(f"annihilation_model_{model}")
        sp = resolve_state_params(cfg)
        system = build_system(cfg, sp)
        f0 = initial_fields(cfg, sp)

        snaps = rdsolver.integrate(system, f0, cfg.dt, cfg.t_end, observe_times=[cfg.t_end])
        numeric = rdsolver.observable_sum(snaps[-1])["A"]
        reference = analytic_fields(cfg, sp, cfg.t_end)["U"]
        rows.append(check("ANNIHILATION", f"model {model} eps_tot t={cfg.t_end:g}",
                          analysis.l2_rel_error(numeric, reference), None, ceiling=5e-2))

        series = rdsolver.integrate_segments(system, f0, segments)
        t = np.array([f.t for f in series])
        Ubar = np.array([rdsolver.conserved_totals(f, system)["A"] for f in series])
        fits = analysis.kprime_regression(t, Ubar, early=(1e-6, 1e-5), late=(0.1, 1.0))
        if model == "II":
            for name, fit in fits.items():
                rows.append(check("ANNIHILATION", f"model II decay rate ({name})", fit.value, cfg.reaction.k, tol=0.01))
        else:
            report = steady_report(cfg, sp)
            rows.append(check("ANNIHILATION", "model I k'(0) closed form", report["kprime_0"], 674.0, tol=1e-3))
            rows.append(check("ANNIHILATION", "model I k'_inf eigensolve", report["kprime_inf"], None, ceiling=32.0))
            rows.append(check("ANNIHILATION", "model I early rate vs k'(0)", fits["early"].value, report["kprime_0"], tol=0.1))
            rows.append(check("ANNIHILATION", "model I late rate vs k'_inf", fits["late"].value, report["kprime_inf"], tol=0.1))
    return rows


# ---------------------------------------------------------------------------
# 8. REVERSIBLE A <-> B
# ---------------------------------------------------------------------------

def run_reversible() -> List[Dict]:
    rows = []
    pub = PUBLISHED["REVERSIBLE"]
    for model in ("I", "II"):
        cfg = config(f"mono_model_{model}")
        sp = resolve_state_params(cfg)
        report = steady_report(cfg, sp)
        rows.append(check("REVERSIBLE", f"model {model} U_inf", report["U_inf"], pub["U_inf"], tol=STEADY_REL_TOL))
        rows.append(check("REVERSIBLE", f"model {model} V_inf", report["V_inf"], pub["V_inf"], tol=STEADY_REL_TOL))
        rows.append(check("REVERSIBLE", f"model {model} B is a W-matrix", float(report["jacobian_w"].passed), 1.0, tol=0.0))
        if model == "I":
            rows.append(check("REVERSIBLE", "model I k_eq", report["k_eq"], pub["k_eq"], tol=0.01))
            rows.append(check("REVERSIBLE", "model I l_eq", report["l_eq"], pub["l_eq"], tol=0.01))

        system = build_system(cfg, sp)
        snaps = rdsolver.integrate_segments(system, initial_fields(cfg, sp), cfg.segments,
                                            observe_times=[cfg.t_end])
        sums = rdsolver.observable_sum(snaps[-1])
        rows.append(check("REVERSIBLE", f"model {model} simulated mean U(t_end)", float(sums["A"].mean()),
                          pub["U_inf"], tol=STEADY_REL_TOL))
        rows.append(check("REVERSIBLE", f"model {model} simulated U/V", float(sums["A"].sum() / sums["B"].sum()),
                          2.0, tol=0.01))
    return rows


# ---------------------------------------------------------------------------
# 9. DIMERIZATION
# ---------------------------------------------------------------------------

def run_dimerization() -> List[Dict]:
    rows = []
    for variant in ("I", "II", "III"):
        cfg = config(f"bimolecular_{variant}")
        sp = resolve_state_params(cfg)
        report = steady_report(cfg, sp)
        pub = PUBLISHED["DIMERIZATION"][variant]
        for key in ("U_inf", "V_inf", "W_inf"):
            rows.append(check("DIMERIZATION", f"reaction {variant} {key}", report[key], pub[key], tol=STEADY_REL_TOL))
        rows.append(check("DIMERIZATION", f"reaction {variant} equilibrium identity", report["equilibrium_residual"],
                          None, ceiling=1e-10))
        if variant != "III":
            rows.append(check("DIMERIZATION", f"reaction {variant} k_eq", report["k_eq"], pub["k_eq"], tol=RATE_REL_TOL))
            rows.append(check("DIMERIZATION", f"reaction {variant} l_eq", report["l_eq"], pub["l_eq"], tol=RATE_REL_TOL))

        system = build_system(cfg, sp)
        snaps = rdsolver.integrate(system, initial_fields(cfg, sp), cfg.dt, cfg.t_end, observe_times=[0.0, cfg.t_end])
        start, end = (rdsolver.conserved_totals(f, system) for f in snaps)
        drift = max(abs(end[k] - start[k]) / start[k] for k in start)
        rows.append(check("DIMERIZATION", f"reaction {variant} conservation drift", drift, None, ceiling=1e-10))
    return rows


# ---------------------------------------------------------------------------
# 10. SSA VS DETERMINISTIC MEAN
# ---------------------------------------------------------------------------

def run_ssa() -> List[Dict]:
    cfg = config("ssa_mono")
    sp = resolve_state_params(cfg)
    ssa_cfg = cfg.ssa or SSAConfig()
    system = build_system(cfg, sp)
    lattice = cfg.grid.model_copy(update={"nx": ssa_cfg.voxels})
    l0 = stochastic.lattice_from_fields(initial_fields(cfg, sp, grid=lattice), ssa_cfg.particle_scale)
    table = stochastic.build_event_table(system, lattice, ssa_cfg.particle_scale)
    stats = stochastic.ssa_ensemble(l0, table, cfg.t_end, ssa_cfg.replicas, cfg.seed, [0.0, cfg.t_end])

    # deterministic run from the same rounded copy numbers
    f0 = stochastic.lattice_to_fields(l0, lattice, ssa_cfg.particle_scale)
    det = rdsolver.integrate(system, f0, cfg.dt, cfg.t_end, observe_times=[cfg.t_end])[-1]
    mean, stderr = stats.summed()
    det_sum = np.stack([det.data[s].sum(axis=0) for s in range(len(det.species))])
    z = np.abs(mean[-1] - det_sum) / np.maximum(stderr[-1], 1e-300)
    within = float(np.mean(z[stderr[-1] > 0] <= 3.0))
    row = check("SSA", "fraction of voxels within 3 SE", within, None)
    row["pass"] = within >= 0.95
    return [row]


# ---------------------------------------------------------------------------
# 11. SUMMARY TABLE
# ---------------------------------------------------------------------------

def fmt(v: Optional[float], default: str = "-") -> str:
    if v is None:
        return default
    return f"{v:.4g}"


def format_summary_table(rows: List[Dict]) -> str:
    col = [
        ("GROUP",        12),
        ("QUANTITY",     40),
        ("MEASURED",     11),
        ("PUBLISHED",    11),
        ("TOL/CEILING",  12),
        ("PASS",          4),
    ]
    header    = " | ".join(f"{h:<{w}}" for h, w in col)
    separator = "-+-".join("-" * w for _, w in col)

    lines_out = []
    for r in rows:
        limit = fmt(r["tol"]) if r["tol"] is not None else fmt(r["ceiling"])
        cells = [r["group"], r["quantity"], fmt(r["measured"]), fmt(r["published"]), limit,
                 "yes" if r["pass"] else "NO"]
        lines_out.append(" | ".join(f"{c:<{w}}" for c, (_, w) in zip(cells, col)))

    width = sum(w for _, w in col) + 3 * (len(col) - 1)
    passed = sum(r["pass"] for r in rows)
    lines = [
        "=" * width,
        "REACTION-SUBDIFFUSION REPRODUCTION - RESULTS SUMMARY",
        "=" * width,
        "",
        header,
        separator,
    ] + lines_out + ["", f"{passed}/{len(rows)} checks passed", ""]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# 12. MAIN
# ---------------------------------------------------------------------------

GROUPS = {
    "FIT": run_fit,
    "SUBDIFFUSION": run_subdiffusion,
    "MSD": run_msd,
    "ANNIHILATION": run_annihilation,
    "REVERSIBLE": run_reversible,
    "DIMERIZATION": run_dimerization,
    "SSA": run_ssa,
}


def main(argv: Optional[List[str]] = None):
    parser = argparse.ArgumentParser(description="Reproduce the reference measurements")
    parser.add_argument("--only", help="comma-separated groups, e.g. FIT,REVERSIBLE")
    parser.add_argument("--with-ssa", action="store_true", help="include the SSA ensemble (slow)")
    args = parser.parse_args(argv)

    if not EXPERIMENTS_DIR.is_dir():
        log.error("Experiments directory %s not found - check SUBDIFF_EXPERIMENTS_DIR. Aborting.", EXPERIMENTS_DIR)
        sys.exit(1)
    RESULTS_DIR.mkdir(parents=True, exist_ok=True)

    selected = args.only.split(",") if args.only else [g for g in GROUPS if g != "SSA" or args.with_ssa]
    unknown = [g for g in selected if g not in GROUPS]
    if unknown:
        log.error("Unknown groups %s - expected %s. Aborting.", unknown, list(GROUPS))
        sys.exit(1)

    print("\n" + "="*60)
    print("Reaction-subdiffusion reproduction")
    print("="*60 + "\n")

    all_rows: List[Dict] = []
    raw: Dict[str, Any] = {}
    for group in selected:
        print(f"\n{'='*50}")
        print(f"GROUP: {group}")
        print(f"{'='*50}\n")
        started = time.time()
        try:
            rows = GROUPS[group]()
            raw[group] = {"rows": rows, "seconds": time.time() - started}
            all_rows.extend(rows)
            print(f"\n  ✓ {group} complete - {len(rows)} checks in {time.time() - started:.1f}s.")
        except SubdiffError as exc:
            log.error("%s failed: %s", group, exc)
            raw[group] = {"error": error_payload(exc)}
        except Exception:  # noqa: BLE001
            log.error("%s crashed:\n%s", group, traceback.format_exc())
            raw[group] = {"error": traceback.format_exc()}

    close_executor()

    # --- Write raw JSON ---
    raw_path = RESULTS_DIR / "eval_raw.json"
    with open(raw_path, "w", encoding="utf-8") as f:
        json.dump(raw, f, indent=2, default=str)
    print(f"\n✓ Raw results → {raw_path}")

    # --- Write summary ---
    summary_text = format_summary_table(all_rows)
    summary_path = RESULTS_DIR / "eval_summary.txt"
    with open(summary_path, "w", encoding="utf-8") as f:
        f.write(summary_text)
    print(f"✓ Summary      → {summary_path}")

    print("\n" + summary_text)


if __name__ == "__main__":
    main()
