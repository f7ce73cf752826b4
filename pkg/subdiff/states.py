# states.py - Internal-state operators and mean-field analysis
"""
Assembles the state-exchange generator A = (mu e^T - I) T, the reaction
operators of the monomolecular, annihilation and bimolecular systems,
their block Jacobians, and the mean-field quantities built on them:
stationary states, equivalent rates, long-time diffusion coefficient and
the anomalous rate curve k'(t).

Species vectors are ordered by state; block matrices are species-major.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import integrate, linalg, optimize
from scipy.sparse.csgraph import connected_components

from subdiff.error_handlers import DomainError, NullspaceError, SolverError
from subdiff.models import DiffusionKind, RateScaling, ReactionKind, ReactionSpec, StateParams

logger = logging.getLogger("subdiff.states")

COND_LIMIT = 1e8


# ==================== TYPES ====================

class StateMatrixSet(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    tau_i: np.ndarray
    mu_hat: np.ndarray
    T: np.ndarray
    A: np.ndarray
    D: np.ndarray
    sigma2: float
    alpha: float
    tau: float
    diffusion: DiffusionKind = DiffusionKind.ANOMALOUS

    @property
    def N(self) -> int:
        return self.tau_i.size


class ReactionOps(BaseModel):
    """K1 = diag(K e), K2 = K^T, L1 = diag(L e), L2 = L^T, or the bimolecular tensors."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ReactionKind
    K: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None
    K1: Optional[np.ndarray] = None
    K2: Optional[np.ndarray] = None
    L1: Optional[np.ndarray] = None
    L2: Optional[np.ndarray] = None
    K_tensor: Optional[np.ndarray] = None
    L_tensor: Optional[np.ndarray] = None


class BlockJacobian(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    B: np.ndarray
    species: Tuple[str, ...]
    weights: np.ndarray

    def weighted_column_sums(self) -> np.ndarray:
        return self.weights @ self.B


class WVerdict(BaseModel):
    passed: bool
    column_sums_ok: bool
    off_diagonal_ok: bool
    irreducible_ok: bool
    reason: str = ""


class KPrimeCurve(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    values: np.ndarray
    k0: float
    k_inf: float


# ==================== STATE MATRIX ====================

def build_state_matrix(sp: StateParams, normalize: bool = True,
                       diffusion: DiffusionKind = DiffusionKind.ANOMALOUS) -> StateMatrixSet:
    """
    A = (mu e^T - I) T. With normalize=False the raw weights are used
    and the column sums of A expose their deficit.
    """
    tau = sp.tau_arr
    mu = sp.mu_arr if normalize else sp.raw_arr
    T = np.diag(1.0 / tau)
    A = (np.outer(mu, np.ones_like(mu)) - np.eye(tau.size)) @ T
    if DiffusionKind(diffusion) == DiffusionKind.ANOMALOUS:
        D = sp.sigma2 * T
    else:
        D = sp.sigma2 * np.eye(tau.size)
    return StateMatrixSet(
        tau_i=tau, mu_hat=mu, T=T, A=A, D=D,
        sigma2=sp.sigma2, alpha=sp.alpha, tau=sp.tau, diffusion=DiffusionKind(diffusion),
    )


def _null_vector(M: np.ndarray, weights: np.ndarray, total: float, tol: float = 1e-10) -> np.ndarray:
    """Solve the bordered system [M; w^T] x = [0; total] after checking nullity 1."""
    sv = linalg.svdvals(M)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    nullity = int(np.sum(sv <= tol * scale))
    if nullity != 1:
        raise NullspaceError(f"expected a one-dimensional nullspace, found dimension {nullity}", nullity=nullity)
    bordered = np.vstack([M / scale, weights[None, :]])
    rhs = np.zeros(M.shape[0] + 1)
    rhs[-1] = total
    x, *_ = linalg.lstsq(bordered, rhs)
    return x


def stationary_distribution(m: StateMatrixSet) -> np.ndarray:
    """Nonnegative null vector of A with unit 1-norm; proportional to mu_i tau_i."""
    x = _null_vector(m.A, np.ones(m.N), 1.0)
    if np.any(x < -1e-10):
        raise NullspaceError("null vector of A has negative components")
    return np.clip(x, 0.0, None)


# ==================== REACTION OPERATORS ====================

def collins_kimball_rate(k_b: float, D_A: float, D_B: float, rho: float) -> float:
    """k_b 4 pi (D_A + D_B) rho / (k_b + 4 pi (D_A + D_B) rho)."""
    smol = 4.0 * math.pi * (D_A + D_B) * rho
    return k_b * smol / (k_b + smol)


def cross_state_time(theta: float, tau_i: float, tau_j: float) -> float:
    """tau_ij = 1 / (theta / tau_i + (1 - theta) / tau_j)."""
    return 1.0 / (theta / tau_i + (1.0 - theta) / tau_j)


def build_bimolecular_tensors(scaling: RateScaling, k: float, l: float, tau_i: Sequence[float],  # noqa: E741
                              theta: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """
    K[i, j, k]: A_i + B_j -> C_k, L[i, j, k]: C_k -> A_i + B_j.

    Model I and II react in the same state only; cross_state associates
    any pair at k (theta/tau_i + (1-theta)/tau_j) into every product state
    and dissociates C_k at l / tau_k into every pair.
    """
    tau = np.asarray(tau_i, dtype=float)
    n = tau.size
    K = np.zeros((n, n, n))
    L = np.zeros((n, n, n))
    scaling = RateScaling(scaling)
    if scaling == RateScaling.MODEL_I:
        for i in range(n):
            K[i, i, i] = k / tau[i]
            L[i, i, i] = l / tau[i]
    elif scaling == RateScaling.MODEL_II:
        for i in range(n):
            K[i, i, i] = k
            L[i, i, i] = l
    elif scaling == RateScaling.CROSS_STATE:
        pair = k / np.array([[cross_state_time(theta, tau[i], tau[j]) for j in range(n)] for i in range(n)])
        K[:] = pair[:, :, None]
        L[:] = (l / tau)[None, None, :]
    else:
        raise DomainError("general tensors must be supplied by the caller")
    return K, L


def _matrix(value, n: int, name: str) -> np.ndarray:
    M = np.asarray(value, dtype=float)
    if M.shape != (n, n):
        raise DomainError(f"{name} has shape {M.shape}, expected ({n}, {n})")
    return M


def build_reaction_ops(rs: ReactionSpec, sp) -> ReactionOps:
    """Operators for a reaction on the states of sp (StateParams or StateMatrixSet)."""
    tau = np.asarray(sp.tau_i, dtype=float)
    n = tau.size
    kind = rs.kind

    if kind == ReactionKind.NONE:
        return ReactionOps(kind=kind)

    if kind == ReactionKind.BIMOLECULAR:
        if rs.scaling == RateScaling.GENERAL:
            K = np.asarray(rs.K_tensor, dtype=float)
            L = np.asarray(rs.L_tensor, dtype=float)
            if K.shape != (n, n, n) or L.shape != (n, n, n):
                raise DomainError(f"bimolecular tensors must have shape ({n}, {n}, {n})")
        else:
            K, L = build_bimolecular_tensors(rs.scaling, rs.k, rs.l, tau, rs.cross_theta)
        return ReactionOps(kind=kind, K_tensor=K, L_tensor=L)

    if rs.scaling == RateScaling.MODEL_I:
        K, L = rs.k * np.diag(1.0 / tau), rs.l * np.diag(1.0 / tau)
    elif rs.scaling == RateScaling.MODEL_II:
        K, L = rs.k * np.eye(n), rs.l * np.eye(n)
    else:
        K = _matrix(rs.K_matrix, n, "K_matrix")
        L = _matrix(rs.L_matrix, n, "L_matrix") if rs.L_matrix is not None else np.zeros((n, n))

    e = np.ones(n)
    if kind == ReactionKind.ANNIHILATION:
        return ReactionOps(kind=kind, K=K, K1=np.diag(K @ e))
    return ReactionOps(kind=kind, K=K, L=L, K1=np.diag(K @ e), K2=K.T, L1=np.diag(L @ e), L2=L.T)


def macroscopic_rates(rs: ReactionSpec, sp: StateParams) -> Tuple[float, float]:
    """(k*, l*): k tau^alpha for model I, k for model II."""
    if rs.scaling == RateScaling.MODEL_I:
        factor = sp.tau ** sp.alpha
    elif rs.scaling == RateScaling.MODEL_II:
        factor = 1.0
    else:
        raise DomainError("macroscopic rates are defined for models I and II only")
    return rs.k * factor, rs.l * factor


def association_terms(K: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Association fluxes (loss of u, loss of v, gain of w); trailing axes are spatial."""
    Ks = K.sum(axis=2)
    loss_u = u * np.einsum("ij,j...->i...", Ks, v)
    loss_v = v * np.einsum("ij,i...->j...", Ks, u)
    gain_w = np.einsum("ijk,i...,j...->k...", K, u, v)
    return loss_u, loss_v, gain_w


def dissociation_terms(L: np.ndarray, w: np.ndarray):
    """Dissociation fluxes (gain of u, gain of v, loss of w)."""
    gain_u = np.einsum("ijk,k...->i...", L, w)
    gain_v = np.einsum("ijk,k...->j...", L, w)
    loss_w = L.sum(axis=(0, 1)).reshape((-1,) + (1,) * (w.ndim - 1)) * w
    return gain_u, gain_v, loss_w


# ==================== JACOBIANS ====================

def assemble_jacobian(rs: ReactionSpec, m: StateMatrixSet, steady=None,
                      ops: Optional[ReactionOps] = None) -> BlockJacobian:
    """
    Linearized homogeneous generator. Bimolecular systems need the steady
    vectors (u, v, w) in concentration units and use weights (1, 1, 2).
    """
    ops = ops or build_reaction_ops(rs, m)
    A, n = m.A, m.N
    kind = rs.kind

    if kind == ReactionKind.NONE:
        return BlockJacobian(B=A.copy(), species=("A",), weights=np.ones(n))
    if kind == ReactionKind.ANNIHILATION:
        return BlockJacobian(B=A - ops.K1, species=("A",), weights=np.ones(n))
    if kind == ReactionKind.MONOMOLECULAR:
        B = np.block([[A - ops.K1, ops.L2], [ops.K2, A - ops.L1]])
        return BlockJacobian(B=B, species=("A", "B"), weights=np.ones(2 * n))

    if steady is None:
        raise DomainError("bimolecular Jacobian needs the steady vectors (u, v, w)")
    u, v, _ = (np.asarray(x, dtype=float) for x in steady)
    K, L = ops.K_tensor, ops.L_tensor
    K11 = np.diag(np.einsum("ijk,j->i", K, v))
    K22 = np.diag(np.einsum("ijk,i->j", K, u))
    K12 = np.einsum("ijk,i->ij", K, u)        # d(loss u_i)/d v_j
    K21 = np.einsum("ijk,j->ji", K, v)        # d(loss v_j)/d u_i
    K31 = np.einsum("ijk,j->ki", K, v)
    K32 = np.einsum("ijk,i->kj", K, u)
    L1 = L.sum(axis=1)                        # [i, k]
    L2 = L.sum(axis=0)                        # [j, k]
    L3 = np.diag(L.sum(axis=(0, 1)))
    B = np.block([
        [A - K11, -K12, L1],
        [-K21, A - K22, L2],
        [K31, K32, A - L3],
    ])
    weights = np.concatenate([np.ones(n), np.ones(n), 2.0 * np.ones(n)])
    return BlockJacobian(B=B, species=("A", "B", "C"), weights=weights)


def is_w_matrix(M: np.ndarray, weights: Optional[np.ndarray] = None, tol: float = 1e-12) -> WVerdict:
    """Zero (weighted) column sums, nonnegative off-diagonals, irreducible."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError("is_w_matrix needs a square matrix")
    n = M.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    scale = max(np.abs(M).max(), 1e-300)

    col = w @ M
    column_sums_ok = bool(np.all(np.abs(col) <= tol * scale * n))
    off = M - np.diag(np.diag(M))
    off_diagonal_ok = bool(np.all(off >= -tol * scale))
    support = (off > tol * scale).astype(int)
    n_comp, _ = connected_components(support, directed=True, connection="strong")
    irreducible_ok = n_comp == 1

    reasons = []
    if not column_sums_ok:
        reasons.append(f"column sums (max |sum| {np.abs(col).max():.3e})")
    if not off_diagonal_ok:
        reasons.append(f"negative off-diagonal (min {off.min():.3e})")
    if not irreducible_ok:
        reasons.append(f"reducible ({n_comp} strong components)")
    return WVerdict(
        passed=not reasons,
        column_sums_ok=column_sums_ok,
        off_diagonal_ok=off_diagonal_ok,
        irreducible_ok=irreducible_ok,
        reason="; ".join(reasons),
    )


def adjoint_envelope(B: np.ndarray, eta0: np.ndarray, times: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """max and min of exp(B^T t) eta0 at each time."""
    hi, lo = [], []
    for t in times:
        eta = linalg.expm(B.T * t) @ eta0
        hi.append(eta.max())
        lo.append(eta.min())
    return np.array(hi), np.array(lo)


# ==================== EQUIVALENT RATES ====================

def _unit(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    total = x.sum()
    if total <= 0:
        raise DomainError("steady vector must have a positive sum")
    return x / total


def equivalent_rates(rs: ReactionSpec, m: StateMatrixSet, u_inf, v_inf=None, w_inf=None,
                     ops: Optional[ReactionOps] = None) -> Tuple[float, float]:
    """k_eq = e^T K1 u (mono) or sum K_ijk u_i v_j (bimolecular); same for l_eq."""
    ops = ops or build_reaction_ops(rs, m)
    u = _unit(u_inf)
    if rs.kind == ReactionKind.ANNIHILATION:
        return float(np.sum(ops.K1 @ u)), 0.0
    if rs.kind == ReactionKind.MONOMOLECULAR:
        v = _unit(v_inf)
        return float(np.sum(ops.K1 @ u)), float(np.sum(ops.L1 @ v))
    if rs.kind == ReactionKind.BIMOLECULAR:
        v, w = _unit(v_inf), _unit(w_inf)
        k_eq = float(np.einsum("ijk,i,j->", ops.K_tensor, u, v))
        l_eq = float(np.einsum("ijk,k->", ops.L_tensor, w))
        return k_eq, l_eq
    return 0.0, 0.0


def equivalent_diffusion(m: StateMatrixSet, u_inf) -> float:
    """gamma_u = e^T D u_inf for a normalized u_inf."""
    return float(np.sum(m.D @ _unit(u_inf)))


# ==================== STEADY STATES ====================

def mono_steady_state(m: StateMatrixSet, ops: ReactionOps, total: float) -> Tuple[np.ndarray, np.ndarray]:
    """Homogeneous equilibrium with e^T u + e^T v = total (concentration)."""
    B = np.block([[m.A - ops.K1, ops.L2], [ops.K2, m.A - ops.L1]])
    x = _null_vector(B, np.ones(2 * m.N), total)
    return x[: m.N], x[m.N:]


def _bimolecular_rhs(m: StateMatrixSet, ops: ReactionOps, x: np.ndarray) -> np.ndarray:
    n = m.N
    u, v, w = x[:n], x[n:2 * n], x[2 * n:]
    loss_u, loss_v, gain_w = association_terms(ops.K_tensor, u, v)
    gain_u, gain_v, loss_w = dissociation_terms(ops.L_tensor, w)
    return np.concatenate([
        m.A @ u - loss_u + gain_u,
        m.A @ v - loss_v + gain_v,
        m.A @ w + gain_w - loss_w,
    ])


def bimolecular_steady_state(m: StateMatrixSet, ops: ReactionOps, total_a: float, total_b: float,
                             rs: Optional[ReactionSpec] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Homogeneous equilibrium of A + B <-> C with conserved concentrations
    U + W = total_a and V + W = total_b. Relaxes the homogeneous ODE with
    solve_ivp and polishes with least_squares.
    """
    n = m.N
    spec = rs or ReactionSpec(kind=ReactionKind.BIMOLECULAR, scaling=RateScaling.GENERAL,
                              K_tensor=ops.K_tensor.tolist(), L_tensor=ops.L_tensor.tolist())
    pi = stationary_distribution(m)
    x0 = np.concatenate([total_a * pi, total_b * pi, np.zeros(n)])

    def jac(x):
        return assemble_jacobian(spec, m, steady=(x[:n], x[n:2 * n], x[2 * n:]), ops=ops).B

    t_relax = 1e3 * float(m.tau_i.max())
    sol = integrate.solve_ivp(
        lambda _t, x: _bimolecular_rhs(m, ops, x), (0.0, t_relax), x0,
        method="BDF", jac=lambda _t, x: jac(x), rtol=1e-10, atol=1e-14 * max(total_a, total_b),
    )
    if not sol.success:
        raise SolverError(f"steady-state relaxation failed: {sol.message}")
    x_relaxed = sol.y[:, -1]

    scale = total_a + total_b
    rate = float(np.abs(m.A).max())
    cons = np.zeros((2, 3 * n))
    cons[0, :n] = 1.0
    cons[0, 2 * n:] = 1.0
    cons[1, n:] = 1.0

    def residual(y):
        x = y * scale
        return np.concatenate([
            _bimolecular_rhs(m, ops, x) / (rate * scale),
            (cons @ x - np.array([total_a, total_b])) / scale,
        ])

    def residual_jac(y):
        return np.vstack([jac(y * scale) / rate, cons])

    res = optimize.least_squares(residual, x_relaxed / scale, jac=residual_jac, method="lm",
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    x = res.x * scale
    if np.max(np.abs(res.fun)) > 1e-12:
        logger.warning("bimolecular steady state polished to residual %.2e only", np.max(np.abs(res.fun)))
    if np.any(x < -1e-12 * scale):
        raise SolverError("bimolecular steady state has negative components")
    x = np.clip(x, 0.0, None)
    return x[:n], x[n:2 * n], x[2 * n:]


def production_fixed_point(m: StateMatrixSet, K1: np.ndarray, p) -> np.ndarray:
    """Stationary mean of production p with loss K1: (K1 - A)^-1 p."""
    M = np.asarray(K1, dtype=float) - m.A
    try:
        lu = linalg.lu_factor(M)
    except (linalg.LinAlgError, ValueError) as exc:
        raise DomainError(f"production fixed point is singular: {exc}")
    x = linalg.lu_solve(lu, np.asarray(p, dtype=float))
    if not np.all(np.isfinite(x)):
        raise DomainError("production fixed point is singular (no loss term)")
    return x


# ==================== TIME EVOLUTION ====================

def _dominant_eigen(M: np.ndarray):
    vals, vecs = linalg.eig(M)
    idx = int(np.argmax(vals.real))
    return vals, vecs, idx


def expm_action(M: np.ndarray, v: np.ndarray, times: Sequence[float], shift: float = 0.0) -> np.ndarray:
    """
    exp((M - shift I) t) v for each t. Eigendecomposition when the
    eigenvector matrix is well conditioned, scaling-and-squaring otherwise.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    vals, vecs = linalg.eig(M)
    if np.linalg.cond(vecs) < COND_LIMIT:
        coeffs = linalg.solve(vecs, v.astype(complex))
        out = np.array([(vecs @ (np.exp((vals - shift) * t) * coeffs)).real for t in times])
    else:
        shifted = M - shift * np.eye(M.shape[0])
        out = np.array([linalg.expm(shifted * t) @ v for t in times])
    return out


def total_amount_evolution(m: StateMatrixSet, K1: np.ndarray, ubar0, t) -> np.ndarray:
    """ubar(t) = exp((A - K1) t) ubar(0)."""
    K1 = np.asarray(K1, dtype=float)
    M = m.A - K1
    if np.any(K1 > 0):
        lam = linalg.eigvals(M).real.max()
        if lam >= 0:
            raise SolverError(f"A - K1 has an eigenvalue {lam:.3e} outside the left half-plane")
    out = expm_action(M, np.asarray(ubar0, dtype=float), t)
    return out[0] if np.ndim(t) == 0 else out


def kprime_curve(m: StateMatrixSet, K1: np.ndarray, ubar0, times: Sequence[float]) -> KPrimeCurve:
    """
    k'(t) = e^T K1 exp((A-K1)t) u0 / e^T exp((A-K1)t) u0, with the closed
    forms k'(0) = e^T K1 u0 / e^T u0 and k'_inf = -lambda_1(A - K1).
    """
    K1 = np.asarray(K1, dtype=float)
    u0 = np.asarray(ubar0, dtype=float)
    M = m.A - K1
    vals, _, idx = _dominant_eigen(M)
    lam1 = float(vals[idx].real)

    # shift by lambda_1 so long times do not underflow; the ratio is unchanged
    y = expm_action(M, u0, times, shift=lam1)
    values = (y @ K1.T).sum(axis=1) / y.sum(axis=1)
    k0 = float(np.sum(K1 @ u0) / np.sum(u0))
    return KPrimeCurve(times=np.asarray(times, dtype=float), values=values, k0=k0, k_inf=-lam1)


def longtime_diffusion_coeff(m: StateMatrixSet, omega: float) -> float:
    """gamma = e^T D s1 / e^T s1, s1 the dominant eigenvector of A - omega^2 D."""
    if omega <= 0:
        raise DomainError("longtime_diffusion_coeff needs omega > 0")
    M = m.A - omega ** 2 * m.D
    vals, vecs, idx = _dominant_eigen(M)
    real = np.sort(vals.real)[::-1]
    if real.size > 1 and abs(real[0] - real[1]) <= 1e-12 * max(np.abs(real).max(), 1e-300):
        raise NullspaceError("dominant eigenvalue is not simple", omega=omega)
    s1 = vecs[:, idx].real
    s1 = s1 * np.sign(s1.sum())
    return float(np.sum(m.D @ s1) / np.sum(s1))


def msd_exact(m: StateMatrixSet, mu0, times: Sequence[float]) -> np.ndarray:
    """Mean-field MSD 2 int_0^t e^T D exp(A s) mu0 ds for a unit-sum mu0."""
    mu0 = _unit(mu0)
    n = m.N
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = m.A
    aug[n, :n] = np.ones(n) @ m.D
    start = np.concatenate([mu0, [0.0]])
    return np.array([2.0 * (linalg.expm(aug * t) @ start)[n] for t in times])
