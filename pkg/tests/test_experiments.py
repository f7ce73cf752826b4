# test_experiments.py - Shipped run configs and the reproduction runner
import json
from pathlib import Path

import numpy as np
import pytest

from subdiff import analysis, cli, rdsolver, states
from subdiff.error_handlers import EXIT_OK
from subdiff.eval import experiment
from subdiff.models import RunConfig, SegmentConfig

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"
CONFIGS = sorted(p for p in EXPERIMENTS.glob("*.json") if p.name != "run_config.schema.json")

# h * sum of the raw set-1 weights for nx = 128 on [-1, 1]
SET1_MASS = 0.013049


# ==================== CONFIG FILES ====================

@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_config_loads(path):
    cfg = cli.load_config(path)
    assert cfg.name == path.stem
    assert cfg.output.path.endswith(path.stem)


def test_schema_lists_every_field():
    schema = json.loads((EXPERIMENTS / "run_config.schema.json").read_text(encoding="utf-8"))
    assert set(schema["properties"]) == set(RunConfig.model_fields)
    assert set(schema["required"]) == {n for n, f in RunConfig.model_fields.items() if f.is_required()}


# ==================== STEADY REPORTS ====================

@pytest.mark.parametrize("model", ["I", "II"])
def test_mono_steady_state(model):
    cfg = cli.load_config(EXPERIMENTS / f"mono_model_{model}.json")
    report = cli.steady_report(cfg, cli.resolve_state_params(cfg))
    assert report["U_inf"] + report["V_inf"] == pytest.approx(SET1_MASS, rel=1e-4)
    assert report["U_inf"] / report["V_inf"] == pytest.approx(2.0, rel=1e-3)
    assert report["jacobian_w"].passed


def test_mono_equivalent_rates():
    cfg = cli.load_config(EXPERIMENTS / "mono_model_I.json")
    report = cli.steady_report(cfg, cli.resolve_state_params(cfg))
    assert report["k_eq"] == pytest.approx(1.0462e6, rel=2e-3)
    assert report["l_eq"] == pytest.approx(2.0918e6, rel=2e-3)


def test_dimerization_conservation():
    cfg = cli.load_config(EXPERIMENTS / "bimolecular_I.json")
    report = cli.steady_report(cfg, cli.resolve_state_params(cfg))
    assert report["U_inf"] + report["W_inf"] == pytest.approx(SET1_MASS * 1.5 / 2.0, rel=1e-6)
    assert report["V_inf"] + report["W_inf"] == pytest.approx(SET1_MASS * 1.25 / 2.0, rel=1e-6)
    assert report["equilibrium_residual"] < 1e-10
    assert report["jacobian_w_weighted_column_sums"] < 1e-6


def test_annihilation_kprime_report():
    cfg = cli.load_config(EXPERIMENTS / "annihilation_model_I.json")
    report = cli.steady_report(cfg, cli.resolve_state_params(cfg))
    assert report["kprime_0"] == pytest.approx(674.0, rel=1e-3)
    assert report["kprime_inf"] == pytest.approx(31.70, rel=1e-2)


# ==================== SHORTENED RUNS ====================

SHORT_SOLVER = ["t_end=1e-4", "observe_times=[1e-4]"]
SHORT_MSD = ["t_end=1e-4", 'msd.windows={"short": [1e-5, 1e-4]}', "msd.n_particles=500"]

# per config: overrides that keep every command to a few seconds
SHORT = {
    "annihilation_model_I": SHORT_SOLVER,
    "annihilation_model_II": SHORT_SOLVER,
    "bimolecular_I": SHORT_SOLVER,
    "bimolecular_II": SHORT_SOLVER,
    "bimolecular_III": SHORT_SOLVER,
    "fit_set1": [],
    "fit_set2": [],
    "mono_model_I": SHORT_SOLVER + ['segments=[{"dt": 1e-5, "t_end": 1e-4, "theta": 1.0}]'],
    "mono_model_II": SHORT_SOLVER + ['segments=[{"dt": 1e-5, "t_end": 1e-4, "theta": 1.0}]'],
    "msd_set1": SHORT_MSD,
    "msd_set2": SHORT_MSD,
    "ssa_mono": SHORT_SOLVER + ["ssa.replicas=4", "ssa.record_times=[0.0, 1e-4]"],
    "subdiffusion_set1": SHORT_SOLVER,
    "subdiffusion_set2": ["t_end=1e-3", "observe_times=[1e-3]"],
}


def run_command(command, path, out, overrides=(), extra=()):
    if command == "compare":
        args = cli.build_parser().parse_args([
            "compare", "--numeric", str(out / "summed.csv"), "--reference", str(out / "analytic.csv"),
        ])
        return cli.run("compare", out=str(out), args=args)
    args = cli.build_parser().parse_args([command, "--config", str(path), *extra])
    return cli.run(command, str(path), overrides=overrides, out=str(out), args=args)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_config_runs_end_to_end(path, tmp_path):
    cfg = cli.load_config(path)
    assert cfg.commands
    for command in cfg.commands:
        code, payload = run_command(command, path, tmp_path, overrides=SHORT[path.stem])
        assert code == EXIT_OK, payload
        for artifact in payload["artifacts"]:
            assert Path(artifact).stat().st_size > 0


def test_short_annihilation_simulation(tmp_path):
    code, payload = cli.run(
        "simulate", str(EXPERIMENTS / "annihilation_model_I.json"), overrides=SHORT_SOLVER, out=str(tmp_path),
    )
    assert code == EXIT_OK
    assert 0.0 < payload["totals_end"]["A"] < payload["totals_start"]["A"]
    assert (tmp_path / "summed.csv").exists()


def test_short_ssa_ensemble(tmp_path):
    code, payload = cli.run("ssa", str(EXPERIMENTS / "ssa_mono.json"), overrides=SHORT["ssa_mono"], out=str(tmp_path))
    assert code == EXIT_OK
    assert payload["replicas"] == 4
    for name in ("A", "B"):
        lines = (tmp_path / f"ssa_{name}.csv").read_text().splitlines()
        assert lines[0] == "t,mean,stderr"
        assert len(lines) == 1 + 2

    # A <-> B moves molecules between species, the sum of the means is exact
    a = np.loadtxt(tmp_path / "ssa_A.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "ssa_B.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(a[:, 1] + b[:, 1], a[0, 1] + b[0, 1], rtol=1e-10)
    assert a[0, 2] <= 1e-12 * a[0, 1]

    fields = (tmp_path / "ssa_fields.csv").read_text().splitlines()
    assert fields[0] == "t,x,species,mean,stderr"
    assert len(fields) == 1 + 2 * 16 * 2


# ==================== REPRODUCIBILITY ====================

def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.parametrize("name, command, extra", [
    ("ssa_mono", "ssa", ()),
    ("msd_set1", "msd", ("--stochastic",)),
], ids=["ssa", "msd-stochastic"])
def test_same_seed_gives_identical_files(tmp_path, name, command, extra):
    path = EXPERIMENTS / f"{name}.json"
    for run in ("first", "second"):
        code, payload = run_command(command, path, tmp_path / run, overrides=SHORT[name], extra=extra)
        assert code == EXIT_OK, payload
    first, second = _outputs(tmp_path / "first"), _outputs(tmp_path / "second")
    assert first and set(first) == set(second)
    for artifact, content in first.items():
        assert content == second[artifact], artifact


def test_different_seed_changes_ssa_output(tmp_path):
    path = EXPERIMENTS / "ssa_mono.json"
    for run, seed in (("first", 1), ("second", 2)):
        code, _ = cli.run("ssa", str(path), overrides=SHORT["ssa_mono"], out=str(tmp_path / run), seed=seed)
        assert code == EXIT_OK
    assert (tmp_path / "first" / "ssa_fields.csv").read_bytes() != (tmp_path / "second" / "ssa_fields.csv").read_bytes()


# ==================== CLOSED-FORM AGREEMENT ====================

@pytest.mark.parametrize("name, ceiling", [("subdiffusion_set1", 4e-2), ("subdiffusion_set2", 6e-2)])
def test_subdiffusion_matches_meijer_g(tmp_path, name, ceiling):
    path = EXPERIMENTS / f"{name}.json"
    for command in ("simulate", "analytic", "compare"):
        code, payload = run_command(command, path, tmp_path)
        assert code == EXIT_OK, payload
    assert 0.0 < payload["max_eps_tot"] <= ceiling


def _total_amount(cfg, segments):
    sp = cli.resolve_state_params(cfg)
    system = cli.build_system(cfg, sp)
    series = rdsolver.integrate_segments(system, cli.initial_fields(cfg, sp), segments)
    t = np.array([f.t for f in series])
    Ubar = np.array([rdsolver.conserved_totals(f, system)["A"] for f in series])
    return sp, series[0], t, Ubar


def test_annihilation_model_two_decays_at_configured_rate():
    cfg = cli.load_config(EXPERIMENTS / "annihilation_model_II.json", ["t_end=1e-3"])
    _, _, t, Ubar = _total_amount(cfg, [SegmentConfig(dt=cfg.dt, t_end=cfg.t_end)])
    assert t[0] == 0.0 and t[-1] == pytest.approx(1e-3)
    fit = analysis.fit_exp_decay(t, Ubar)
    assert fit.value == pytest.approx(cfg.reaction.k, rel=1e-4)
    assert fit.residual < 1e-8


def test_annihilation_model_one_rates_follow_kprime():
    cfg = cli.load_config(EXPERIMENTS / "annihilation_model_I.json")
    segments = [
        SegmentConfig(dt=1e-7, t_end=1e-5),
        SegmentConfig(dt=1e-5, t_end=1e-2),
        SegmentConfig(dt=2e-4, t_end=1.0, theta=1.0),
    ]
    sp, f0, t, Ubar = _total_amount(cfg, segments)
    windows = {"early": (1e-6, 1e-5), "late": (0.1, 1.0)}
    fits = analysis.kprime_regression(t, Ubar, **windows)

    # mean-field total amount on the same sampling times
    m = states.build_state_matrix(sp)
    K1 = states.build_reaction_ops(cfg.reaction.to_spec(), sp).K1
    exact = states.total_amount_evolution(m, K1, f0.species_field("A").sum(axis=1), t).sum(axis=1)
    reference = analysis.kprime_regression(t, exact, **windows)
    for name in windows:
        assert fits[name].value == pytest.approx(reference[name].value, rel=1e-2)

    report = cli.steady_report(cfg, sp)
    assert fits["early"].value == pytest.approx(report["kprime_0"], rel=0.1)
    assert fits["late"].value == pytest.approx(report["kprime_inf"], rel=5e-2)


# ==================== RUNNER ====================

def test_check_rows():
    assert experiment.check("REVERSIBLE", "U", 1.01, 1.0, tol=0.02)["pass"]
    assert not experiment.check("REVERSIBLE", "U", 1.05, 1.0, tol=0.02)["pass"]
    assert not experiment.check("FIT", "eps", 0.07, 0.05, ceiling=0.06)["pass"]
    assert not experiment.check("FIT", "eps", None, 0.05)["pass"]


def test_summary_table_counts_passes():
    rows = [experiment.check("REVERSIBLE", "U", 1.0, 1.0, tol=0.01), experiment.check("REVERSIBLE", "V", 2.0, 1.0, tol=0.01)]
    text = experiment.format_summary_table(rows)
    assert "1/2 checks passed" in text
    assert "NO" in text and "yes" in text


@pytest.mark.slow
def test_reversible_tables_reproduce():
    rows = experiment.run_reversible()
    failed = [r["quantity"] for r in rows if not r["pass"]]
    assert not failed
