# cli.py - Command-line entry point
"""
subdiff <command> --config run.json [--set key=value ...] [--out DIR] [--seed N]

Commands:
    fit        exponential-sum fit of the waiting-time tail -> fit.json
    simulate   deterministic integration -> fields.csv, summed.csv
    analytic   alpha = 1/2 closed forms on the grid -> analytic.csv
    msd        MSD curve and regime slopes -> msd.csv, msd_regression.json
    ssa        lattice SSA ensemble -> ssa_<species>.csv (t,mean,stderr), ssa_fields.csv
    steady     mean-field report (states, rates, W-matrix checks) -> steady.json
    compare    relative L2 error between two summed CSVs -> compare.json

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from subdiff import analysis, rdsolver, specfun, states, stochastic, wtfit
from subdiff.config import close_executor, setup_logging
from subdiff.error_handlers import EXIT_OK, EXIT_VALIDATION, InputValidationError, handle_error
from subdiff.models import (
    GreenCoeffs, MSDConfig, RateScaling, ReactionKind, RunConfig, SegmentConfig, SSAConfig, StateParams,
)

logger = logging.getLogger("subdiff.cli")

COMMANDS = ("fit", "simulate", "analytic", "msd", "ssa", "steady", "compare")


# ==================== CONFIG LOADING ====================

def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply dotted-path key=value overrides; values are parsed as JSON when possible."""
    for item in overrides:
        if "=" not in item:
            raise InputValidationError(
                f"override {item!r} is not of the form key=value",
                errors=[{"pointer": "/--set", "message": f"bad override {item!r}", "type": "override_syntax"}],
            )
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node: Any = raw
        for key in keys[:-1]:
            if isinstance(node, list):
                node = node[int(key)]
            else:
                node = node.setdefault(key, {})
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(value)
        else:
            node[last] = _parse_value(value)
    return raw


def load_config(path: Path, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputValidationError(
            f"config file {path} not found",
            errors=[{"pointer": "/", "message": "file not found", "type": "missing_file"}],
        )
    except json.JSONDecodeError as exc:
        raise InputValidationError(
            f"config file {path} is not valid JSON: {exc}",
            errors=[{"pointer": "/", "message": str(exc), "type": "json_invalid"}],
        )
    return RunConfig.model_validate(apply_overrides(raw, overrides))


# ==================== SHARED BUILDERS ====================

def resolve_state_params(cfg: RunConfig) -> StateParams:
    """Published set, explicit tau_i/mu_i, or a fresh fit, in that order."""
    if cfg.parameter_set is not None:
        sp = wtfit.published_state_params(cfg.parameter_set)
        if abs(sp.alpha - cfg.alpha) > 1e-12 or abs(sp.K_alpha - cfg.K_alpha) > 1e-12 * cfg.K_alpha:
            raise InputValidationError(
                f"parameter_set {cfg.parameter_set} has alpha={sp.alpha}, K_alpha={sp.K_alpha}",
                errors=[{"pointer": "/parameter_set", "message": "alpha/K_alpha mismatch", "type": "value_error"}],
            )
        return sp
    if cfg.tau_i is not None:
        return StateParams.build(
            alpha=cfg.alpha, K_alpha=cfg.K_alpha, tau_i=cfg.tau_i, weights=cfg.mu_i, tau=cfg.tau,
            t_min=cfg.t_min, t_max=cfg.t_max,
        )
    logger.info("no parameter set given, fitting N=%d on [%g, %g]", cfg.N, cfg.t_min, cfg.t_max)
    problem = cfg.fit_problem()
    return wtfit.to_state_params(wtfit.fit_exponential_sum(problem), cfg.K_alpha, problem)


def build_system(cfg: RunConfig, sp: StateParams) -> rdsolver.SystemDef:
    return rdsolver.SystemDef(params=sp, reaction=cfg.reaction.to_spec(), diffusion=cfg.diffusion)


def initial_fields(cfg: RunConfig, sp: StateParams, grid=None) -> rdsolver.FieldSet:
    sys_species = cfg.reaction.to_spec().species
    return rdsolver.gaussian_ic(
        grid or cfg.grid, cfg.ic.variance, cfg.ic.center, cfg.ic.species_scales,
        sp.weights(cfg.ic.weights), species=sys_species, normalization=cfg.ic.normalization,
    )


def _segments(cfg: RunConfig) -> List[SegmentConfig]:
    if not cfg.segments:
        return [SegmentConfig(dt=cfg.dt, t_end=cfg.t_end)]
    if abs(cfg.segments[-1].t_end - cfg.t_end) > 1e-12 * cfg.t_end:
        raise InputValidationError(
            "last segment must end at t_end",
            errors=[{"pointer": "/segments", "message": "last segment must end at t_end", "type": "value_error"}],
        )
    return list(cfg.segments)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if hasattr(value, "model_dump"):
        return _jsonable(value.model_dump(mode="json"))
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_jsonable(payload), f, indent=2)
        f.write("\n")
    return path


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(v if isinstance(v, str) else "%.12e" % v for v in row) + "\n")
    return path


# ==================== COMMANDS ====================

def cmd_fit(cfg: RunConfig, out: Path, args) -> Dict[str, Any]:
    problem = cfg.fit_problem()
    fit = wtfit.fit_exponential_sum(problem)
    sp = wtfit.to_state_params(fit, cfg.K_alpha, problem)
    path = write_json(out / "fit.json", {
        "problem": problem, "fit": fit, "state_params": sp, "eps_mod": fit.eps_mod,
    })
    return {"artifacts": [str(path)], "eps_mod": fit.eps_mod, "N": fit.N}


def cmd_simulate(cfg: RunConfig, out: Path, args) -> Dict[str, Any]:
    sp = resolve_state_params(cfg)
    system = build_system(cfg, sp)
    f0 = initial_fields(cfg, sp)
    snaps = rdsolver.integrate_segments(
        system, f0, _segments(cfg), every=cfg.output.every, observe_times=cfg.observe_times,
    )
    fields = rdsolver.snapshots_to_csv(snaps, out / "fields.csv")
    summed = rdsolver.summed_to_csv(snaps, out / "summed.csv")
    return {
        "artifacts": [str(fields), str(summed)],
        "snapshots": len(snaps),
        "totals_start": rdsolver.conserved_totals(snaps[0], system),
        "totals_end": rdsolver.conserved_totals(snaps[-1], system),
    }


def analytic_fields(cfg: RunConfig, sp: StateParams, t: float) -> Dict[str, np.ndarray]:
    """
    Closed-form alpha = 1/2 fields on the run grid: the free-space Green's
    function carrying the masses of the initial condition, convolved with
    the discrete initial profile.
    """
    if abs(cfg.alpha - 0.5) > 1e-12:
        raise InputValidationError(
            "closed forms are implemented for alpha = 0.5 only",
            errors=[{"pointer": "/alpha", "message": "analytic needs alpha = 0.5", "type": "value_error"}],
        )
    rs = cfg.reaction.to_spec()
    f0 = initial_fields(cfg, sp)
    h = cfg.grid.h
    mass = {name: h * float(f0.species_field(name).sum()) for name in f0.species}
    profile = f0.data.sum(axis=(0, 1))
    weights = profile / profile.sum()
    # uniform grid: node distances are multiples of h
    x = h * np.arange(cfg.grid.nx)
    fields = _closed_form(cfg, sp, rs, x, t, mass)
    return {name: linalg.toeplitz(g) @ weights for name, g in fields.items()}


def _closed_form(cfg: RunConfig, sp: StateParams, rs, x: np.ndarray, t: float,
                 mass: Dict[str, float]) -> Dict[str, np.ndarray]:
    if rs.kind == ReactionKind.NONE:
        return {"U": specfun.green_pure_half(x, t, GreenCoeffs(K_alpha=cfg.K_alpha, mass=mass["A"]))}
    if rs.kind == ReactionKind.BIMOLECULAR or rs.scaling not in (RateScaling.MODEL_I, RateScaling.MODEL_II):
        raise InputValidationError(
            f"no closed form for {rs.kind.value} reactions with {rs.scaling.value} scaling",
            errors=[{"pointer": "/reaction", "message": "closed forms cover models I and II of A or A<->B",
                     "type": "value_error"}],
        )
    k_star, ell_star = states.macroscopic_rates(rs, sp)
    if rs.kind == ReactionKind.ANNIHILATION:
        coeffs = GreenCoeffs(K_alpha=cfg.K_alpha, k_star=k_star, mass=mass["A"])
        return {"U": specfun.green_annihilation_half(rs.scaling, x, t, coeffs)}
    coeffs = GreenCoeffs(K_alpha=cfg.K_alpha, k_star=k_star, ell_star=ell_star)
    U, V = specfun.green_mono_half(rs.scaling, x, t, coeffs, mass["A"], mass["B"])
    return {"U": U, "V": V}


def cmd_analytic(cfg: RunConfig, out: Path, args) -> Dict[str, Any]:
    sp = resolve_state_params(cfg)
    times = cfg.observe_times or [cfg.t_end]
    times = [t for t in times if t > 0]
    x = cfg.grid.x
    rows, labels = [], None
    for t in times:
        fields = analytic_fields(cfg, sp, t)
        labels = list(fields)
        for j in range(x.size):
            rows.append([t, x[j]] + [float(fields[k][j]) for k in labels])
    path = _write_rows(out / "analytic.csv", ["t", "x"] + (labels or ["U"]), rows)
    return {"artifacts": [str(path)], "times": times}


def cmd_msd(cfg: RunConfig, out: Path, args) -> Dict[str, Any]:
    sp = resolve_state_params(cfg)
    msd_cfg = cfg.msd or MSDConfig()
    if getattr(args, "stochastic", False):
        record = np.geomspace(msd_cfg.t_first, cfg.t_end, 61)
        traj = stochastic.ctrw_sample(sp, msd_cfg.n_particles, cfg.t_end, cfg.seed, record)
        t, msd = traj.times, stochastic.ctrw_msd(traj)
    else:
        system = build_system(cfg, sp)
        f0 = initial_fields(cfg, sp)
        segments = list(cfg.segments) if cfg.segments else rdsolver.log_segments(msd_cfg.t_first, cfg.t_end)
        snaps = rdsolver.integrate_segments(system, f0, segments)
        t, msd = analysis.msd_of_field(snaps, center=cfg.ic.center)
        t, msd = t[1:], msd[1:]

    if msd_cfg.windows:
        report = {name: analysis.fit_power_law(t, msd, w) for name, w in msd_cfg.windows.items()}
    else:
        report = analysis.three_regime_report(t, msd, sp)
    csv_path = _write_rows(out / "msd.csv", ["t", "msd"], zip(t, msd))
    json_path = write_json(out / "msd_regression.json", {
        "stochastic": bool(getattr(args, "stochastic", False)),
        "windows": report,
        "reference": {
            "alpha": sp.alpha,
            "longtime_coefficient": states.equivalent_diffusion(
                states.build_state_matrix(sp, diffusion=cfg.diffusion), sp.mu_arr * sp.tau_arr),
        },
    })
    return {"artifacts": [str(csv_path), str(json_path)], "slopes": {k: r.value for k, r in report.items()}}


def cmd_ssa(cfg: RunConfig, out: Path, args) -> Dict[str, Any]:
    sp = resolve_state_params(cfg)
    ssa_cfg = cfg.ssa or SSAConfig()
    system = build_system(cfg, sp)
    lattice = cfg.grid.model_copy(update={"nx": ssa_cfg.voxels})
    f0 = initial_fields(cfg, sp, grid=lattice)
    l0 = stochastic.lattice_from_fields(f0, ssa_cfg.particle_scale)
    table = stochastic.build_event_table(system, lattice, ssa_cfg.particle_scale)
    record = ssa_cfg.record_times or [0.0, cfg.t_end]
    stats = stochastic.ssa_ensemble(l0, table, cfg.t_end, ssa_cfg.replicas, cfg.seed, record)
    artifacts = []
    for s, name in enumerate(stats.species):
        rows = zip(stats.times, stats.total_mean[:, s], stats.total_stderr[:, s])
        artifacts.append(_write_rows(out / f"ssa_{name}.csv", ["t", "mean", "stderr"], rows))

    # per-voxel means summed over states
    mean, stderr = stats.summed()
    x = lattice.x
    rows = []
    for ti, t in enumerate(stats.times):
        for j in range(x.size):
            for s, name in enumerate(stats.species):
                rows.append([t, x[j], name, mean[ti, s, j], stderr[ti, s, j]])
    artifacts.append(_write_rows(out / "ssa_fields.csv", ["t", "x", "species", "mean", "stderr"], rows))
    return {"artifacts": [str(p) for p in artifacts], "replicas": stats.replicas, "voxels": ssa_cfg.voxels}


def steady_report(cfg: RunConfig, sp: StateParams) -> Dict[str, Any]:
    rs = cfg.reaction.to_spec()
    m = states.build_state_matrix(sp, diffusion=cfg.diffusion)
    pi = states.stationary_distribution(m)
    report: Dict[str, Any] = {
        "N": m.N,
        "stationary_distribution": pi,
        "state_matrix_w": states.is_w_matrix(m.A),
        "raw_weight_column_deficit": float(np.abs(np.ones(m.N) @ states.build_state_matrix(sp, normalize=False).A).max()),
        "longtime_diffusion": {str(w): states.longtime_diffusion_coeff(m, w) for w in (1e-3, 1.0, 10.0)},
    }
    if rs.kind == ReactionKind.NONE:
        return report

    ops = states.build_reaction_ops(rs, sp)
    f0 = initial_fields(cfg, sp)
    length = cfg.grid.length
    conc = {name: cfg.grid.h * f0.species_field(name).sum(axis=1) / length for name in f0.species}

    if rs.kind == ReactionKind.ANNIHILATION:
        times = np.geomspace(sp.tau_arr[0] / 100.0, 10.0 * sp.tau_arr[-1], 40)
        curve = states.kprime_curve(m, ops.K1, conc["A"], times)
        report.update({"kprime_0": curve.k0, "kprime_inf": curve.k_inf,
                       "kprime": {"t": curve.times, "value": curve.values}})
        if rs.scaling in (RateScaling.MODEL_I, RateScaling.MODEL_II):
            report["k_star"] = states.macroscopic_rates(rs, sp)[0]
        return report

    if rs.kind == ReactionKind.MONOMOLECULAR:
        total = float(conc["A"].sum() + conc["B"].sum())
        u, v = states.mono_steady_state(m, ops, total)
        k_eq, l_eq = states.equivalent_rates(rs, m, u, v, ops=ops)
        jac = states.assemble_jacobian(rs, m, ops=ops)
        report.update({
            "u_inf": u, "v_inf": v, "U_inf": float(u.sum()), "V_inf": float(v.sum()),
            "k_eq": k_eq, "l_eq": l_eq, "jacobian_w": states.is_w_matrix(jac.B),
            "gamma_u": states.equivalent_diffusion(m, u), "gamma_v": states.equivalent_diffusion(m, v),
        })
        if rs.scaling in (RateScaling.MODEL_I, RateScaling.MODEL_II):
            report["k_star"], report["l_star"] = states.macroscopic_rates(rs, sp)
        return report

    total_a = float(conc["A"].sum() + conc["C"].sum())
    total_b = float(conc["B"].sum() + conc["C"].sum())
    u, v, w = states.bimolecular_steady_state(m, ops, total_a, total_b, rs=rs)
    k_eq, l_eq = states.equivalent_rates(rs, m, u, v, w, ops=ops)
    jac = states.assemble_jacobian(rs, m, steady=(u, v, w), ops=ops)
    U, V, W = float(u.sum()), float(v.sum()), float(w.sum())
    report.update({
        "u_inf": u, "v_inf": v, "w_inf": w, "U_inf": U, "V_inf": V, "W_inf": W,
        "k_eq": k_eq, "l_eq": l_eq,
        "equilibrium_residual": abs(k_eq * U * V - l_eq * W) / (l_eq * W) if l_eq * W > 0 else None,
        "jacobian_w_raw": states.is_w_matrix(jac.B),
        "jacobian_w_weighted_column_sums": float(np.abs(jac.weighted_column_sums()).max()),
    })
    return report


def cmd_steady(cfg: RunConfig, out: Path, args) -> Dict[str, Any]:
    sp = resolve_state_params(cfg)
    report = steady_report(cfg, sp)
    path = write_json(out / "steady.json", report)
    keys = ("U_inf", "V_inf", "W_inf", "k_eq", "l_eq", "kprime_0", "kprime_inf")
    return {"artifacts": [str(path)], **{k: report[k] for k in keys if k in report}}


def _match_times(a: Dict[float, Any], b: Dict[float, Any]) -> List[Tuple[float, float]]:
    pairs = []
    for ta in sorted(a):
        close = [tb for tb in b if math.isclose(ta, tb, rel_tol=1e-9, abs_tol=1e-15)]
        if close:
            pairs.append((ta, close[0]))
    return pairs


def cmd_compare(cfg: Optional[RunConfig], out: Path, args) -> Dict[str, Any]:
    if not args.numeric or not args.reference:
        raise InputValidationError(
            "compare needs --numeric and --reference CSV files",
            errors=[{"pointer": "/--numeric", "message": "required", "type": "missing"}],
        )
    numeric = rdsolver.read_summed_csv(Path(args.numeric))
    reference = rdsolver.read_summed_csv(Path(args.reference))
    pairs = _match_times(numeric, reference)
    if not pairs:
        raise InputValidationError(
            "no common times between the two files",
            errors=[{"pointer": "/t", "message": "no common times", "type": "value_error"}],
        )
    errors: Dict[str, Dict[str, float]] = {}
    for tn, tr in pairs:
        cols = [c for c in numeric[tn] if c != "x" and c in reference[tr]]
        errors["%.12e" % tn] = {c: analysis.l2_rel_error(numeric[tn][c], reference[tr][c]) for c in cols}
    worst = max(v for row in errors.values() for v in row.values())
    path = write_json(out / "compare.json", {"eps_tot": errors, "max": worst})
    return {"artifacts": [str(path)], "max_eps_tot": worst}


HANDLERS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "analytic": cmd_analytic,
    "msd": cmd_msd,
    "ssa": cmd_ssa,
    "steady": cmd_steady,
    "compare": cmd_compare,
}


# ==================== ENTRY POINT ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subdiff", description="Reaction-subdiffusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "compare", help="JSON run config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, value parsed as JSON")
        p.add_argument("--out", help="output directory (default: output.path of the config)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--log-level", default=None)
        if name == "msd":
            p.add_argument("--stochastic", action="store_true", help="use CTRW particles instead of the solver")
        if name == "compare":
            p.add_argument("--numeric", help="summed CSV from simulate")
            p.add_argument("--reference", help="summed CSV from analytic")
    return parser


def run(command: str, config_path: Optional[str] = None, overrides: Sequence[str] = (),
        out: Optional[str] = None, seed: Optional[int] = None, args=None) -> Tuple[int, Dict[str, Any]]:
    """Execute one command; returns (exit code, payload)."""
    try:
        if command not in HANDLERS:
            raise InputValidationError(
                f"unknown command {command!r}",
                errors=[{"pointer": "/command", "message": f"expected one of {list(COMMANDS)}", "type": "enum"}],
            )
        overrides = list(overrides)
        if seed is not None:
            overrides.append(f"seed={seed}")
        cfg = load_config(Path(config_path), overrides) if config_path else None
        if cfg is None and command != "compare":
            raise InputValidationError(
                "--config is required",
                errors=[{"pointer": "/--config", "message": "required", "type": "missing"}],
            )
        out_dir = Path(out or (cfg.output.path if cfg else "results"))
        logger.info("running %s (%s)", command, cfg.name if cfg and cfg.name else config_path)
        summary = HANDLERS[command](cfg, out_dir, args or argparse.Namespace())
        return EXIT_OK, {"status": "ok", "command": command, **summary}
    except Exception as exc:  # noqa: BLE001
        return handle_error(exc, command)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2; usage errors are validation errors here
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    setup_logging(args.log_level)
    try:
        code, payload = run(args.command, args.config, args.overrides, args.out, args.seed, args)
    finally:
        close_executor()
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    print(json.dumps(_jsonable(payload), indent=2), file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())
