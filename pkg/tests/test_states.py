# test_states.py - State-exchange operators, Jacobians and mean-field quantities
import math

import numpy as np
import pytest
from scipy import linalg

from subdiff import states
from subdiff.error_handlers import DomainError, NullspaceError
from subdiff.models import DiffusionKind, RateScaling, ReactionKind, ReactionSpec


def mono(model="I", k=1719.0, l=3437.0):  # noqa: E741
    return ReactionSpec(kind=ReactionKind.MONOMOLECULAR, scaling=model, k=k, l=l)


def annihilation(model="I", k=0.1):
    return ReactionSpec(kind=ReactionKind.ANNIHILATION, scaling=model, k=k)


def bimolecular(model="I", k=1.0, l=1.0, theta=None):  # noqa: E741
    return ReactionSpec(kind=ReactionKind.BIMOLECULAR, scaling=model, k=k, l=l, theta=theta)


# ==================== STATE MATRIX ====================

def test_state_matrix_is_w_matrix(set1, set2):
    for sp in (set1, set2):
        m = states.build_state_matrix(sp)
        verdict = states.is_w_matrix(m.A)
        assert verdict.passed, verdict.reason
        np.testing.assert_allclose(m.D, sp.sigma2 * m.T)


def test_raw_weights_break_column_sums(set1):
    m = states.build_state_matrix(set1, normalize=False)
    verdict = states.is_w_matrix(m.A)
    assert not verdict.column_sums_ok
    assert "column sums" in verdict.reason


def test_ordinary_diffusion_matrix(two_state):
    m = states.build_state_matrix(two_state, diffusion=DiffusionKind.ORDINARY)
    np.testing.assert_allclose(m.D, np.eye(2))


def test_stationary_distribution_proportional_to_mu_tau(set1):
    m = states.build_state_matrix(set1)
    pi = states.stationary_distribution(m)
    expected = set1.mu_arr * set1.tau_arr / np.sum(set1.mu_arr * set1.tau_arr)
    np.testing.assert_allclose(pi, expected, rtol=1e-8)
    np.testing.assert_allclose(pi, [0.0344, 0.0815, 0.1981, 0.6860], atol=5e-4)


def test_reducible_matrix_detected():
    M = np.array([[-1.0, 1.0, 0.0, 0.0], [1.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 1.0], [0.0, 0.0, 1.0, -1.0]])
    verdict = states.is_w_matrix(M)
    assert verdict.column_sums_ok and verdict.off_diagonal_ok
    assert not verdict.irreducible_ok and not verdict.passed


def test_negative_off_diagonal_detected():
    verdict = states.is_w_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert not verdict.off_diagonal_ok


def test_is_w_matrix_needs_square():
    with pytest.raises(DomainError):
        states.is_w_matrix(np.ones((2, 3)))


# ==================== REACTION OPERATORS ====================

def test_model_one_operators(set1):
    ops = states.build_reaction_ops(mono(), set1)
    np.testing.assert_allclose(np.diag(ops.K1), 1719.0 / set1.tau_arr)
    np.testing.assert_allclose(ops.L2, ops.L.T)


def test_model_two_operators(two_state):
    ops = states.build_reaction_ops(mono("II", k=2.0, l=3.0), two_state)
    np.testing.assert_allclose(ops.K1, 2.0 * np.eye(2))
    np.testing.assert_allclose(ops.L1, 3.0 * np.eye(2))


def test_general_matrix_shape_checked(two_state):
    rs = ReactionSpec(kind=ReactionKind.MONOMOLECULAR, scaling=RateScaling.GENERAL,
                      K_matrix=[[1.0]], L_matrix=[[1.0]])
    with pytest.raises(DomainError, match="shape"):
        states.build_reaction_ops(rs, two_state)


def test_cross_state_tensor(two_state):
    K, L = states.build_bimolecular_tensors(RateScaling.CROSS_STATE, 2.0, 3.0, two_state.tau_i, theta=0.25)
    tau = two_state.tau_arr
    for i in range(2):
        for j in range(2):
            np.testing.assert_allclose(K[i, j], 2.0 * (0.25 / tau[i] + 0.75 / tau[j]))
            np.testing.assert_allclose(L[i, j], 3.0 / tau)


def test_same_state_tensors_are_diagonal(two_state):
    K, L = states.build_bimolecular_tensors(RateScaling.MODEL_I, 2.0, 3.0, two_state.tau_i)
    assert K[0, 0, 0] == 2.0 and K[1, 1, 1] == 1.0
    assert np.count_nonzero(K) == 2 and np.count_nonzero(L) == 2


def test_cross_state_time_limits():
    assert states.cross_state_time(1.0, 2.0, 5.0) == pytest.approx(2.0)
    assert states.cross_state_time(0.5, 3.0, 3.0) == pytest.approx(3.0)


def test_collins_kimball_limits():
    # fast binding approaches the Smoluchowski rate, slow binding approaches k_b
    smol = 4.0 * math.pi * 2.0 * 1e-3
    assert states.collins_kimball_rate(1e12, 1.0, 1.0, 1e-3) == pytest.approx(smol, rel=1e-9)
    assert states.collins_kimball_rate(1e-9, 1.0, 1.0, 1e-3) == pytest.approx(1e-9, rel=1e-6)


def test_macroscopic_rates(set1):
    k_star, l_star = states.macroscopic_rates(mono(k=2.0, l=4.0), set1)
    assert k_star == pytest.approx(2.0 * math.sqrt(set1.tau))
    assert l_star == pytest.approx(4.0 * math.sqrt(set1.tau))
    assert states.macroscopic_rates(mono("II", k=2.0, l=4.0), set1) == (2.0, 4.0)


def test_association_and_dissociation_balance(two_state, rng):
    K, L = states.build_bimolecular_tensors(RateScaling.CROSS_STATE, 1.5, 0.5, two_state.tau_i)
    u, v, w = rng.random((3, 2, 5))
    loss_u, loss_v, gain_w = states.association_terms(K, u, v)
    np.testing.assert_allclose(loss_u.sum(axis=0), gain_w.sum(axis=0))
    np.testing.assert_allclose(loss_v.sum(axis=0), gain_w.sum(axis=0))
    gain_u, gain_v, loss_w = states.dissociation_terms(L, w)
    np.testing.assert_allclose(gain_u.sum(axis=0), loss_w.sum(axis=0))
    np.testing.assert_allclose(gain_v.sum(axis=0), loss_w.sum(axis=0))


# ==================== JACOBIANS ====================

@pytest.mark.parametrize("model", ["I", "II"])
def test_mono_jacobian_is_w_matrix(set1, model):
    m = states.build_state_matrix(set1)
    jac = states.assemble_jacobian(mono(model), m)
    verdict = states.is_w_matrix(jac.B)
    assert verdict.passed, verdict.reason


def test_annihilation_jacobian_loses_mass(set1):
    m = states.build_state_matrix(set1)
    jac = states.assemble_jacobian(annihilation(), m)
    np.testing.assert_allclose(np.ones(4) @ jac.B, -0.1 / set1.tau_arr, rtol=1e-10)


def test_bimolecular_jacobian_needs_weights(two_state):
    rs = bimolecular(k=2.0, l=1.0)
    m = states.build_state_matrix(two_state)
    ops = states.build_reaction_ops(rs, two_state)
    steady = states.bimolecular_steady_state(m, ops, 1.0, 0.5, rs=rs)
    jac = states.assemble_jacobian(rs, m, steady=steady, ops=ops)
    assert not states.is_w_matrix(jac.B).column_sums_ok
    scale = np.abs(jac.B).max()
    assert np.abs(jac.weighted_column_sums()).max() <= 1e-12 * scale


def test_bimolecular_jacobian_requires_steady_state(two_state):
    with pytest.raises(DomainError):
        states.assemble_jacobian(bimolecular(), states.build_state_matrix(two_state))


def test_adjoint_envelope_is_monotone(set1, rng):
    m = states.build_state_matrix(set1)
    B = states.assemble_jacobian(mono(), m).B
    hi, lo = states.adjoint_envelope(B, rng.random(8), np.geomspace(1e-6, 1e-1, 20))
    assert np.all(np.diff(hi) <= 1e-7)
    assert np.all(np.diff(lo) >= -1e-7)
    assert np.all(hi >= lo)


# ==================== EQUIVALENT RATES AND STEADY STATES ====================

def test_mono_equivalent_rates_set1(set1):
    m = states.build_state_matrix(set1)
    rs = mono()
    ops = states.build_reaction_ops(rs, set1)
    u, v = states.mono_steady_state(m, ops, 0.013049)
    k_eq, l_eq = states.equivalent_rates(rs, m, u, v, ops=ops)
    assert k_eq == pytest.approx(1.047e6, rel=1e-2)
    assert l_eq == pytest.approx(2.094e6, rel=1e-2)
    assert u.sum() / v.sum() == pytest.approx(3437.0 / 1719.0, rel=1e-8)
    assert u.sum() + v.sum() == pytest.approx(0.013049, rel=1e-10)
    assert u.sum() == pytest.approx(8.698e-3, rel=2e-2)


def test_mono_steady_state_without_reaction_is_degenerate(two_state):
    m = states.build_state_matrix(two_state)
    ops = states.build_reaction_ops(mono(k=0.0, l=0.0), two_state)
    with pytest.raises(NullspaceError):
        states.mono_steady_state(m, ops, 1.0)


def test_equivalent_diffusion_of_stationary_state(set1):
    m = states.build_state_matrix(set1)
    gamma = states.equivalent_diffusion(m, states.stationary_distribution(m))
    assert gamma == pytest.approx(set1.sigma2 / np.sum(set1.mu_arr * set1.tau_arr), rel=1e-8)
    assert gamma == pytest.approx(0.2124, rel=1e-3)


@pytest.mark.parametrize("model,theta", [("I", None), ("II", None), ("cross_state", 0.5)])
def test_bimolecular_steady_state_balances_fluxes(two_state, model, theta):
    rs = bimolecular(model, k=3.0, l=0.5, theta=theta)
    m = states.build_state_matrix(two_state)
    ops = states.build_reaction_ops(rs, two_state)
    u, v, w = states.bimolecular_steady_state(m, ops, 1.0, 0.6, rs=rs)
    assert u.sum() + w.sum() == pytest.approx(1.0, rel=1e-10)
    assert v.sum() + w.sum() == pytest.approx(0.6, rel=1e-10)
    k_eq, l_eq = states.equivalent_rates(rs, m, u, v, w, ops=ops)
    assert k_eq * u.sum() * v.sum() == pytest.approx(l_eq * w.sum(), rel=1e-8)


def test_production_fixed_point(two_state):
    m = states.build_state_matrix(two_state)
    ops = states.build_reaction_ops(annihilation("II", k=2.0), two_state)
    p = np.array([0.3, 0.7])
    x = states.production_fixed_point(m, ops.K1, p)
    np.testing.assert_allclose((ops.K1 - m.A) @ x, p, atol=1e-14)
    assert x.sum() == pytest.approx(0.5)


def test_production_without_loss_is_singular(two_state):
    m = states.build_state_matrix(two_state)
    with pytest.raises(DomainError):
        states.production_fixed_point(m, np.zeros((2, 2)), [1.0, 0.0])


# ==================== TIME EVOLUTION ====================

def test_total_amount_model_two_decays_exponentially(two_state):
    m = states.build_state_matrix(two_state)
    ops = states.build_reaction_ops(annihilation("II", k=1.5), two_state)
    u0 = np.array([0.2, 0.8])
    t = np.array([0.0, 0.5, 2.0])
    out = states.total_amount_evolution(m, ops.K1, u0, t)
    np.testing.assert_allclose(out.sum(axis=1), np.exp(-1.5 * t), rtol=1e-10)


def test_total_amount_matches_expm(set1):
    m = states.build_state_matrix(set1)
    ops = states.build_reaction_ops(annihilation(), set1)
    u0 = set1.mu_arr
    out = states.total_amount_evolution(m, ops.K1, u0, 1e-3)
    np.testing.assert_allclose(out, linalg.expm((m.A - ops.K1) * 1e-3) @ u0, rtol=1e-6)


def test_kprime_curve_limits(set1):
    m = states.build_state_matrix(set1)
    ops = states.build_reaction_ops(annihilation(k=0.1), set1)
    curve = states.kprime_curve(m, ops.K1, set1.mu_arr, np.geomspace(1e-7, 1.0, 30))
    assert curve.k0 == pytest.approx(674.0, rel=1e-3)
    lam1 = linalg.eigvals(m.A - ops.K1).real.max()
    assert curve.k_inf == pytest.approx(-lam1, rel=1e-10)
    assert curve.k_inf == pytest.approx(31.70, rel=1e-2)
    assert curve.values[0] == pytest.approx(curve.k0, rel=1e-2)
    assert curve.values[-1] == pytest.approx(curve.k_inf, rel=1e-3)


def test_longtime_coefficient_small_frequency(set1):
    m = states.build_state_matrix(set1)
    gamma = states.longtime_diffusion_coeff(m, 1e-3)
    assert gamma == pytest.approx(states.equivalent_diffusion(m, states.stationary_distribution(m)), rel=1e-4)


def test_longtime_coefficient_matches_decay_rate(two_state):
    m = states.build_state_matrix(two_state)
    omega = 1e-2
    lam1 = linalg.eigvals(m.A - omega ** 2 * m.D).real.max()
    assert states.longtime_diffusion_coeff(m, omega) == pytest.approx(-lam1 / omega ** 2, rel=1e-3)


def test_longtime_coefficient_rejects_zero_frequency(two_state):
    with pytest.raises(DomainError):
        states.longtime_diffusion_coeff(states.build_state_matrix(two_state), 0.0)


def test_msd_exact_from_stationary_start_is_linear(set1):
    m = states.build_state_matrix(set1)
    pi = states.stationary_distribution(m)
    t = np.array([1e-5, 1e-3, 1e-1])
    np.testing.assert_allclose(states.msd_exact(m, pi, t), 2.0 * np.sum(m.D @ pi) * t, rtol=1e-8)


def test_msd_exact_short_time_slope(two_state):
    m = states.build_state_matrix(two_state)
    t = 1e-6
    expected = 2.0 * np.sum(m.D @ two_state.mu_arr) * t
    assert states.msd_exact(m, two_state.mu_arr, [t])[0] == pytest.approx(expected, rel=1e-5)
