# rdsolver.py - Finite-difference integrator for internal-state systems
"""
1D cell-centred finite differences with reflecting (mirrored ghost)
boundaries. The linear part (diffusion, state exchange, monomolecular
reactions, dissociation) is treated with a theta scheme, theta = 1/2
being Crank-Nicolson; association terms are explicit at level n.

Unknowns are stored node-major: index j*(S*N) + s*N + i for node j,
species s and internal state i, which keeps the operator banded.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import sparse
from scipy.sparse import linalg as splinalg

from subdiff.config import SOLVER_CONFIG
from subdiff.error_handlers import DomainError, SolverError
from subdiff.models import (
    DiffusionKind, Grid1D, ReactionKind, ReactionSpec, SegmentConfig, StateParams,
)
from subdiff.states import ReactionOps, association_terms, build_reaction_ops, build_state_matrix

logger = logging.getLogger("subdiff.rdsolver")


# ==================== TYPES ====================

class SystemDef(BaseModel):
    """States, reaction and diffusion law of a system; boundaries are always reflecting."""
    model_config = ConfigDict(frozen=True)

    params: StateParams
    reaction: ReactionSpec = ReactionSpec()
    diffusion: DiffusionKind = DiffusionKind.ANOMALOUS
    production: Optional[List[List[float]]] = None  # [species][state], mol m^-1 s^-1

    @model_validator(mode="after")
    def check_production(self):
        if self.production is not None:
            shape = np.asarray(self.production, dtype=float).shape
            if shape != (len(self.species), self.params.N):
                raise ValueError(f"production must have shape ({len(self.species)}, {self.params.N}), got {shape}")
        return self

    @property
    def species(self) -> Tuple[str, ...]:
        return self.reaction.species


class FieldSet(BaseModel):
    """Concentrations (mol m^-1) with shape (species, state, node) at time t."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    t: float
    grid: Grid1D
    species: Tuple[str, ...]
    data: np.ndarray

    @model_validator(mode="after")
    def check_shape(self):
        if self.data.ndim != 3 or self.data.shape[0] != len(self.species) or self.data.shape[2] != self.grid.nx:
            raise ValueError(f"field shape {self.data.shape} does not match species and grid")
        return self

    @property
    def N(self) -> int:
        return self.data.shape[1]

    def species_field(self, name: str) -> np.ndarray:
        return self.data[self.species.index(name)]


# ==================== INITIAL CONDITIONS ====================

def gaussian_ic(g: Grid1D, variance: float, center: float, species_scales: Dict[str, float],
                weights: Sequence[float], species: Optional[Sequence[str]] = None,
                normalization: str = "sum") -> FieldSet:
    """
    State i of species s starts at scale_s * weight_i * g(x). g is a
    Gaussian normalized to unit discrete sum ("sum") or unit mass h*sum ("mass").
    """
    if variance <= 0:
        raise DomainError("gaussian_ic needs variance > 0")
    species = tuple(species or sorted(species_scales))
    missing = [s for s in species_scales if s not in species]
    if missing:
        raise DomainError(f"species {missing} are not part of the system {species}")
    x = g.x
    profile = np.exp(-(x - center) ** 2 / (2.0 * variance))
    norm = profile.sum() if normalization == "sum" else profile.sum() * g.h
    profile = profile / norm
    w = np.asarray(weights, dtype=float)
    data = np.zeros((len(species), w.size, g.nx))
    for s, name in enumerate(species):
        data[s] = species_scales.get(name, 0.0) * w[:, None] * profile[None, :]
    return FieldSet(t=0.0, grid=g, species=species, data=data)


# ==================== OPERATOR ====================

def neumann_laplacian(g: Grid1D) -> sparse.csc_matrix:
    """Three-point Laplacian with mirrored ghost cells; rows and columns sum to 0."""
    n = g.nx
    main = -2.0 * np.ones(n)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sparse.diags([off, main, off], [-1, 0, 1], format="csc") / g.h ** 2


def _reaction_block(sys: SystemDef, A: np.ndarray, ops: ReactionOps) -> np.ndarray:
    """Linear exchange and reaction block acting on one node's (species, state) vector."""
    n = A.shape[0]
    kind = sys.reaction.kind
    if kind == ReactionKind.NONE:
        return A.copy()
    if kind == ReactionKind.ANNIHILATION:
        return A - ops.K1
    if kind == ReactionKind.MONOMOLECULAR:
        return np.block([[A - ops.K1, ops.L2], [ops.K2, A - ops.L1]])
    L = ops.L_tensor
    zero = np.zeros((n, n))
    return np.block([
        [A, zero, L.sum(axis=1)],
        [zero, A, L.sum(axis=0)],
        [zero, zero, A - np.diag(L.sum(axis=(0, 1)))],
    ])


def linear_operator(sys: SystemDef, g: Grid1D) -> Tuple[sparse.csc_matrix, ReactionOps]:
    """L = kron(Lap, D_blocks) + kron(I, R), node-major."""
    m = build_state_matrix(sys.params, diffusion=sys.diffusion)
    ops = build_reaction_ops(sys.reaction, sys.params)
    n_species = len(sys.species)
    D = sparse.block_diag([m.D] * n_species)
    R = sparse.csr_matrix(_reaction_block(sys, m.A, ops))
    L = sparse.kron(neumann_laplacian(g), D) + sparse.kron(sparse.identity(g.nx), R)
    return L.tocsc(), ops


def to_vector(f: FieldSet) -> np.ndarray:
    return f.data.transpose(2, 0, 1).reshape(-1).copy()


def from_vector(vec: np.ndarray, f: FieldSet, t: float) -> FieldSet:
    S, N, nx = f.data.shape
    return FieldSet(t=t, grid=f.grid, species=f.species, data=vec.reshape(nx, S, N).transpose(1, 2, 0).copy())


class _Stepper:
    """One factorization of (I - theta dt L), reused for every step of a segment."""

    def __init__(self, L: sparse.csc_matrix, ops: ReactionOps, sys: SystemDef, g: Grid1D,
                 dt: float, theta: float):
        n = L.shape[0]
        eye = sparse.identity(n, format="csc")
        try:
            self.lu = splinalg.splu((eye - theta * dt * L).tocsc())
        except RuntimeError as exc:
            raise SolverError(f"factorization of the implicit operator failed: {exc}", dt=dt)
        self.explicit = (eye + (1.0 - theta) * dt * L).tocsr()
        self.dt = dt
        self.shape = (g.nx, len(sys.species), sys.params.N)
        self.K_tensor = ops.K_tensor if sys.reaction.kind == ReactionKind.BIMOLECULAR else None
        self.source = None
        if sys.production is not None:
            self.source = np.tile(np.asarray(sys.production, dtype=float).ravel(), g.nx)

    def nonlinear(self, vec: np.ndarray) -> Optional[np.ndarray]:
        if self.K_tensor is None:
            return None
        fields = vec.reshape(self.shape).transpose(1, 2, 0)
        loss_u, loss_v, gain_w = association_terms(self.K_tensor, fields[0], fields[1])
        F = np.stack([-loss_u, -loss_v, gain_w])
        return F.transpose(2, 0, 1).reshape(-1)

    def step(self, vec: np.ndarray) -> np.ndarray:
        rhs = self.explicit @ vec
        F = self.nonlinear(vec)
        if F is not None:
            rhs += self.dt * F
        if self.source is not None:
            rhs += self.dt * self.source
        return self.lu.solve(rhs)


# ==================== INTEGRATION ====================

def _step_count(span: float, dt: float) -> int:
    n = int(round(span / dt))
    if n < 1 or abs(n * dt - span) > 1e-6 * dt:
        raise DomainError(f"segment length {span:g} is not a multiple of dt={dt:g}")
    return n


def _check_state(vec: np.ndarray, f0: FieldSet, t: float, warned: List[bool]):
    if not np.all(np.isfinite(vec)):
        raise SolverError(f"non-finite values at t={t:g}", snapshot=from_vector(np.nan_to_num(vec), f0, t), t=t)
    low = float(vec.min())
    if low < -SOLVER_CONFIG["warn_negative"]:
        peak = float(np.abs(vec).max())
        if low < -SOLVER_CONFIG["abort_negative_rel"] * peak:
            raise SolverError(
                f"negative concentration {low:.3e} (peak {peak:.3e}) at t={t:g}",
                snapshot=from_vector(vec, f0, t), t=t, minimum=low,
            )
        if not warned[0]:
            logger.warning("negative concentration %.3e at t=%g", low, t)
            warned[0] = True


def integrate_segments(sys: SystemDef, f0: FieldSet, segments: Sequence[SegmentConfig], every: int = 1,
                       observe_times: Optional[Sequence[float]] = None) -> List[FieldSet]:
    """
    Advance through consecutive segments, each with its own dt and theta.
    Records every `every`-th step (plus the first and last state), or only
    the requested observe_times, which must fall on step boundaries.
    """
    if f0.species != sys.species or f0.N != sys.params.N:
        raise DomainError(f"field layout {f0.species}x{f0.N} does not match the system {sys.species}x{sys.params.N}")
    L, ops = linear_operator(sys, f0.grid)
    pending = sorted(observe_times) if observe_times is not None else None

    snapshots: List[FieldSet] = []
    if pending is None or (pending and abs(pending[0] - f0.t) <= 1e-12 * max(1.0, abs(f0.t))):
        snapshots.append(f0)
        if pending:
            pending.pop(0)

    vec = to_vector(f0)
    t_start = f0.t
    warned = [False]
    total_steps = 0
    for seg in segments:
        n_steps = _step_count(seg.t_end - t_start, seg.dt)
        stepper = _Stepper(L, ops, sys, f0.grid, seg.dt, seg.theta)
        logger.debug("segment to t=%g: %d steps of dt=%g (theta=%g)", seg.t_end, n_steps, seg.dt, seg.theta)
        for n in range(1, n_steps + 1):
            vec = stepper.step(vec)
            t = t_start + n * seg.dt
            _check_state(vec, f0, t, warned)
            total_steps += 1
            if pending is not None:
                while pending and abs(pending[0] - t) <= 1e-6 * seg.dt:
                    snapshots.append(from_vector(vec, f0, t))
                    pending.pop(0)
            elif total_steps % every == 0 or (seg is segments[-1] and n == n_steps):
                snapshots.append(from_vector(vec, f0, t))
        t_start = seg.t_end

    if pending:
        raise DomainError(f"observe times {pending} do not fall on step boundaries")
    logger.info("integrated %s system to t=%g in %d steps", sys.reaction.kind.value, t_start, total_steps)
    return snapshots


def integrate(sys: SystemDef, f0: FieldSet, dt: float, t_end: float, every: int = 1,
              observe_times: Optional[Sequence[float]] = None, theta: float = 0.5) -> List[FieldSet]:
    """Crank-Nicolson (theta=1/2) integration from f0.t to t_end."""
    if dt <= 0:
        raise DomainError("integrate needs dt > 0")
    return integrate_segments(sys, f0, [SegmentConfig(dt=dt, t_end=t_end, theta=theta)],
                              every=every, observe_times=observe_times)


def log_segments(t_first: float, t_end: float, steps_per_decade: int = 50,
                 theta_first: float = 0.5, theta_later: float = 1.0) -> List[SegmentConfig]:
    """
    [0, t_first] with dt = t_first/100, then decades [a, 10a] with
    dt close to a/steps_per_decade, ending exactly at t_end.
    """
    if not 0 < t_first < t_end:
        raise DomainError("log_segments needs 0 < t_first < t_end")
    segments = [SegmentConfig(dt=t_first / 100.0, t_end=t_first, theta=theta_first)]
    a = t_first
    while a < t_end * (1 - 1e-12):
        b = min(10.0 * a, t_end)
        n = max(1, math.ceil((b - a) / (a / steps_per_decade)))
        segments.append(SegmentConfig(dt=(b - a) / n, t_end=b, theta=theta_later))
        a = b
    return segments


# ==================== OBSERVABLES ====================

def observable_sum(f: FieldSet) -> Dict[str, np.ndarray]:
    """Sum over internal states: U = e^T u per species."""
    return {name: f.data[s].sum(axis=0) for s, name in enumerate(f.species)}


def conserved_totals(f: FieldSet, sys: SystemDef) -> Dict[str, float]:
    """h * sum of the conserved combinations of the system."""
    h = f.grid.h
    mass = {name: h * float(f.data[s].sum()) for s, name in enumerate(f.species)}
    kind = sys.reaction.kind
    if kind == ReactionKind.MONOMOLECULAR:
        return {"A+B": mass["A"] + mass["B"]}
    if kind == ReactionKind.BIMOLECULAR:
        return {"A+C": mass["A"] + mass["C"], "B+C": mass["B"] + mass["C"]}
    return mass


# ==================== CSV OUTPUT ====================

def _fmt(value: float) -> str:
    return "%.12e" % value


def snapshots_to_csv(snapshots: Sequence[FieldSet], path: Path) -> Path:
    """Full dump, one row per (t, x, species, state)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "species", "state", "value"])
        for f in snapshots:
            x = f.grid.x
            for j in range(f.grid.nx):
                for s, name in enumerate(f.species):
                    for i in range(f.N):
                        writer.writerow([_fmt(f.t), _fmt(x[j]), name, i, _fmt(f.data[s, i, j])])
    return path


def summed_to_csv(snapshots: Sequence[FieldSet], path: Path) -> Path:
    """Summed observables: t,x,U[,V[,W]]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = {"A": "U", "B": "V", "C": "W"}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if not snapshots:
            return path
        writer.writerow(["t", "x"] + [labels[s] for s in snapshots[0].species])
        for f in snapshots:
            sums = observable_sum(f)
            x = f.grid.x
            for j in range(f.grid.nx):
                writer.writerow([_fmt(f.t), _fmt(x[j])] + [_fmt(sums[s][j]) for s in f.species])
    return path


def read_summed_csv(path: Path) -> Dict[float, Dict[str, np.ndarray]]:
    """Inverse of summed_to_csv: {t: {"x": ..., "U": ..., ...}}."""
    out: Dict[float, Dict[str, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            t = float(row.pop("t"))
            bucket = out.setdefault(t, {})
            for key, value in row.items():
                bucket.setdefault(key, []).append(float(value))
    return {t: {k: np.asarray(v) for k, v in cols.items()} for t, cols in out.items()}
