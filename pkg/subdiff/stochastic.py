# stochastic.py - Lattice SSA and multistate CTRW sampling
"""
Stochastic counterparts of the deterministic solver:

- a direct-method Gillespie SSA on a voxel lattice where every molecule
  carries an internal state (state changes, jumps, monomolecular and
  bimolecular reactions, production, annihilation);
- a multistate continuous-time random walk (draw a state, wait an
  exponential time, take a Gaussian jump) for particle MSDs.

Copy numbers convert to concentrations as count / (particle_scale * h).
"""

import logging
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from subdiff.config import SSA_CONFIG, map_tasks
from subdiff.error_handlers import DomainError, PropensityError
from subdiff.models import Grid1D, ReactionKind, StateParams
from subdiff.rdsolver import FieldSet, SystemDef
from subdiff.states import build_reaction_ops, build_state_matrix

logger = logging.getLogger("subdiff.stochastic")


class EventKind(str, Enum):
    STATE_CHANGE = "state_change"
    DIFFUSION = "diffusion"
    MONO_REACTION = "mono_reaction"
    BI_REACTION = "bi_reaction"
    PRODUCTION = "production"
    ANNIHILATION = "annihilation"


# first-order channel slots per (species, state)
_CHANGE, _LEFT, _RIGHT, _REACT = range(4)


# ==================== TYPES ====================

class LatticeState(BaseModel):
    """Copy numbers with shape (species, state, voxel) at time t."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    t: float
    h: float
    species: Tuple[str, ...]
    counts: np.ndarray

    @model_validator(mode="after")
    def check_counts(self):
        if self.counts.ndim != 3 or self.counts.shape[0] != len(self.species):
            raise ValueError("counts must have shape (species, state, voxel)")
        if np.any(self.counts < 0):
            raise ValueError("copy numbers must be nonnegative")
        return self

    @property
    def M(self) -> int:
        return self.counts.shape[2]


class EventTable(BaseModel):
    """
    Propensity constants and jump probabilities. Rows of every
    probability table sum to 1 wherever the matching rate is positive.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    species: Tuple[str, ...]
    reaction_kind: ReactionKind
    first: np.ndarray                 # (S, N, 4) per-molecule rates
    production: np.ndarray            # (S, N) events per voxel per second
    assoc: np.ndarray                 # (N, N) rate / (scale * h), per pair
    dissoc: np.ndarray                # (N,) per C_k molecule
    state_probs: np.ndarray           # (N, N) target state given source
    react_probs: np.ndarray           # (S, N, N) product state given source
    assoc_probs: np.ndarray           # (N, N, N) product C_k given (i, j)
    dissoc_probs: np.ndarray          # (N, N*N) product pair given C_k
    particle_scale: float

    @model_validator(mode="after")
    def check_tables(self):
        if np.any(self.first < 0) or np.any(self.production < 0) or np.any(self.assoc < 0) or np.any(self.dissoc < 0):
            raise ValueError("propensity constants must be nonnegative")
        rows = [
            (self.state_probs, self.first[0, :, _CHANGE] > 0),
            (self.assoc_probs.reshape(-1, self.assoc_probs.shape[-1]), self.assoc.reshape(-1) > 0),
            (self.dissoc_probs, self.dissoc > 0),
        ]
        if self.reaction_kind == ReactionKind.MONOMOLECULAR:
            for s in range(2):
                rows.append((self.react_probs[s], self.first[s, :, _REACT] > 0))
        for table, active in rows:
            sums = table.sum(axis=-1)
            if np.any(np.abs(sums[active] - 1.0) > 1e-12):
                raise ValueError("jump probabilities must sum to 1 per source")
        return self

    @property
    def S(self) -> int:
        return self.first.shape[0]

    @property
    def N(self) -> int:
        return self.first.shape[1]


class Trajectory(BaseModel):
    """Particle positions (m) at the recorded times."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    positions: np.ndarray             # (n_particles, len(times))
    seed: int

    @model_validator(mode="after")
    def check_times(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("record times must be strictly increasing")
        if self.positions.shape[1] != self.times.size:
            raise ValueError("positions must have one column per record time")
        return self


class EnsembleStats(BaseModel):
    """
    Mean concentrations and standard errors across replicas, per state
    (time, species, state, voxel), summed over states (time, species, voxel)
    and as species totals in mol (time, species).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    species: Tuple[str, ...]
    mean: np.ndarray
    stderr: np.ndarray
    voxel_mean: np.ndarray
    voxel_stderr: np.ndarray
    total_mean: np.ndarray
    total_stderr: np.ndarray
    replicas: int

    def summed(self) -> Tuple[np.ndarray, np.ndarray]:
        """Species totals over states: mean and standard error, shape (time, species, voxel)."""
        return self.voxel_mean, self.voxel_stderr


# ==================== EVENT TABLE ====================

def _normalize_rows(M: np.ndarray) -> np.ndarray:
    sums = M.sum(axis=-1, keepdims=True)
    return np.divide(M, sums, out=np.zeros_like(M), where=sums > 0)


def build_event_table(sys: SystemDef, g: Grid1D, particle_scale: Optional[float] = None) -> EventTable:
    """Propensities of every event class on a lattice with spacing g.h and reflecting ends."""
    scale = particle_scale or SSA_CONFIG["particle_scale"]
    m = build_state_matrix(sys.params, diffusion=sys.diffusion)
    ops = build_reaction_ops(sys.reaction, sys.params)
    N, S = m.N, len(sys.species)
    tau, mu = m.tau_i, m.mu_hat
    kind = sys.reaction.kind

    first = np.zeros((S, N, 4))
    off = np.tile(mu, (N, 1))
    np.fill_diagonal(off, 0.0)
    state_probs = _normalize_rows(off)
    # leaving state i at 1/tau_i and re-drawing itself is a no-op, so it is dropped
    first[:, :, _CHANGE] = ((1.0 - mu) / tau)[None, :] if N > 1 else 0.0
    jump = np.diag(m.D) / g.h ** 2
    first[:, :, _LEFT] = jump[None, :]
    first[:, :, _RIGHT] = jump[None, :]

    react_probs = np.zeros((S, N, N))
    if kind == ReactionKind.ANNIHILATION:
        first[0, :, _REACT] = np.diag(ops.K1)
    elif kind == ReactionKind.MONOMOLECULAR:
        first[0, :, _REACT] = np.diag(ops.K1)
        first[1, :, _REACT] = np.diag(ops.L1)
        react_probs[0] = _normalize_rows(ops.K)
        react_probs[1] = _normalize_rows(ops.L)

    production = np.zeros((S, N))
    if sys.production is not None:
        production = np.asarray(sys.production, dtype=float) * scale * g.h

    assoc = np.zeros((N, N))
    dissoc = np.zeros(N)
    assoc_probs = np.zeros((N, N, N))
    dissoc_probs = np.zeros((N, N * N))
    if kind == ReactionKind.BIMOLECULAR:
        K, L = ops.K_tensor, ops.L_tensor
        assoc = K.sum(axis=2) / (scale * g.h)
        dissoc = L.sum(axis=(0, 1))
        assoc_probs = _normalize_rows(K)
        dissoc_probs = _normalize_rows(L.reshape(N * N, N).T)

    return EventTable(
        species=sys.species, reaction_kind=kind, first=first, production=production,
        assoc=assoc, dissoc=dissoc, state_probs=state_probs, react_probs=react_probs,
        assoc_probs=assoc_probs, dissoc_probs=dissoc_probs, particle_scale=scale,
    )


# ==================== CONVERSIONS ====================

def lattice_from_fields(f: FieldSet, particle_scale: Optional[float] = None) -> LatticeState:
    """Round concentrations to copy numbers on the field's own grid."""
    scale = particle_scale or SSA_CONFIG["particle_scale"]
    counts = np.rint(f.data * scale * f.grid.h).astype(np.int64)
    return LatticeState(t=f.t, h=f.grid.h, species=f.species, counts=np.clip(counts, 0, None))


def lattice_to_fields(state: LatticeState, g: Grid1D, particle_scale: Optional[float] = None) -> FieldSet:
    scale = particle_scale or SSA_CONFIG["particle_scale"]
    if g.nx != state.M or abs(g.h - state.h) > 1e-12 * g.h:
        raise DomainError("grid does not match the lattice")
    return FieldSet(t=state.t, grid=g, species=state.species, data=state.counts / (scale * state.h))


# ==================== SSA ====================

class _Lattice:
    """Mutable copy numbers with cached per-voxel channel propensities."""

    def __init__(self, state: LatticeState, table: EventTable):
        self.y = state.counts.astype(np.int64).copy()
        self.table = table
        self.M = state.M
        self.channels = [self._channels(v) for v in range(self.M)]
        self.totals = np.array([c.sum() for c in self.channels])

    def _channels(self, v: int) -> np.ndarray:
        tb = self.table
        y = self.y[:, :, v]
        first = tb.first * y[:, :, None]
        if v == 0:
            first[:, :, _LEFT] = 0.0
        if v == self.M - 1:
            first[:, :, _RIGHT] = 0.0
        parts = [first.ravel(), tb.production.ravel()]
        if tb.reaction_kind == ReactionKind.BIMOLECULAR:
            parts.append((tb.assoc * np.outer(y[0], y[1])).ravel())
            parts.append(tb.dissoc * y[2])
        return np.concatenate(parts)

    def refresh(self, voxels):
        for v in voxels:
            self.channels[v] = self._channels(v)
            self.totals[v] = self.channels[v].sum()

    def fire(self, v: int, c: int, rng: np.random.Generator):
        """Apply channel c in voxel v; returns the voxels whose propensities changed."""
        tb = self.table
        S, N = tb.S, tb.N
        n_first = S * N * 4
        y = self.y
        if c < n_first:
            s, i, slot = np.unravel_index(c, (S, N, 4))
            y[s, i, v] -= 1
            if slot == _CHANGE:
                y[s, rng.choice(N, p=tb.state_probs[i]), v] += 1
            elif slot == _LEFT:
                y[s, i, v - 1] += 1
                return (v, v - 1)
            elif slot == _RIGHT:
                y[s, i, v + 1] += 1
                return (v, v + 1)
            elif tb.reaction_kind == ReactionKind.MONOMOLECULAR:
                y[1 - s, rng.choice(N, p=tb.react_probs[s, i]), v] += 1
            return (v,)
        c -= n_first
        if c < S * N:
            s, i = divmod(c, N)
            y[s, i, v] += 1
            return (v,)
        c -= S * N
        if c < N * N:
            i, j = divmod(c, N)
            y[0, i, v] -= 1
            y[1, j, v] -= 1
            y[2, rng.choice(N, p=tb.assoc_probs[i, j]), v] += 1
            return (v,)
        k = c - N * N
        y[2, k, v] -= 1
        i, j = divmod(int(rng.choice(N * N, p=tb.dissoc_probs[k])), N)
        y[0, i, v] += 1
        y[1, j, v] += 1
        return (v,)


def ssa_run(state: LatticeState, table: EventTable, t_end: float, seed: int,
            record_times: Optional[Sequence[float]] = None,
            max_events: Optional[int] = None) -> List[LatticeState]:
    """
    Direct-method SSA from state.t to t_end. Returns the lattice at each
    record time (default: start and end). Stops early with the final
    state if the total propensity vanishes.
    """
    if t_end < state.t:
        raise DomainError("t_end must not precede the initial time")
    if state.counts.shape[:2] != (table.S, table.N):
        raise DomainError("lattice layout does not match the event table")
    records = sorted(record_times) if record_times is not None else [state.t, t_end]
    cap = max_events or SSA_CONFIG["max_events"]
    rng = np.random.default_rng(seed)
    lat = _Lattice(state, table)

    out: List[LatticeState] = []
    pending = list(records)
    t = state.t
    events = 0

    def snap(at):
        out.append(LatticeState(t=at, h=state.h, species=state.species, counts=lat.y.copy()))

    while True:
        total = float(lat.totals.sum())
        if not np.isfinite(total) or total > 1e300:
            raise PropensityError(f"propensity overflow ({total}) at t={t:g}", t=t)
        t_next = t + rng.exponential(1.0 / total) if total > 0 else np.inf
        while pending and pending[0] <= min(t_next, t_end):
            snap(pending.pop(0))
        if t_next > t_end:
            break
        t = t_next
        cum = np.cumsum(lat.totals)
        v = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), lat.M - 1)
        ch = lat.channels[v]
        ccum = np.cumsum(ch)
        c = min(int(np.searchsorted(ccum, rng.random() * ccum[-1], side="right")), ch.size - 1)
        lat.refresh(lat.fire(v, c, rng))
        events += 1
        if events >= cap:
            raise PropensityError(f"event cap {cap} reached at t={t:g}", t=t, events=events)

    while pending:
        snap(pending.pop(0))
    logger.debug("ssa seed=%d: %d events to t=%g", seed, events, t_end)
    return out


def ensemble_mean(runs: Sequence[Sequence[LatticeState]], particle_scale: Optional[float] = None) -> EnsembleStats:
    """Unbiased mean and standard error of concentrations across replicas."""
    if len(runs) < 2:
        raise DomainError("ensemble_mean needs at least two runs")
    scale = particle_scale or SSA_CONFIG["particle_scale"]
    first = runs[0]
    stack = np.array([[s.counts for s in run] for run in runs], dtype=float)
    stack /= scale * first[0].h
    root_n = np.sqrt(len(runs))
    # replica axis first: (replica, time, species, state, voxel)
    voxels = stack.sum(axis=3)
    totals = stack.sum(axis=(3, 4)) * first[0].h
    return EnsembleStats(
        times=np.array([s.t for s in first]), species=first[0].species,
        mean=stack.mean(axis=0), stderr=stack.std(axis=0, ddof=1) / root_n,
        voxel_mean=voxels.mean(axis=0), voxel_stderr=voxels.std(axis=0, ddof=1) / root_n,
        total_mean=totals.mean(axis=0), total_stderr=totals.std(axis=0, ddof=1) / root_n,
        replicas=len(runs),
    )


def ssa_ensemble(state: LatticeState, table: EventTable, t_end: float, replicas: int, seed_base: int,
                 record_times: Optional[Sequence[float]] = None, workers: Optional[int] = None) -> EnsembleStats:
    """Replica r runs with seed seed_base + r; aggregation does not depend on completion order."""
    logger.info("running %d SSA replicas to t=%g", replicas, t_end)
    runs = map_tasks(
        lambda r: ssa_run(state, table, t_end, seed_base + r, record_times),
        range(replicas), workers=workers,
    )
    return ensemble_mean(runs, table.particle_scale)


# ==================== CTRW ====================

def ctrw_sample(sp: StateParams, n_particles: int, t_end: float, seed: int,
                record_times: Optional[Sequence[float]] = None) -> Trajectory:
    """
    Free-space multistate CTRW started at x = 0: each step draws a state
    i with probability mu_i, waits Exp(tau_i), then jumps N(0, 2 sigma^2).
    """
    if n_particles < 1:
        raise DomainError("ctrw_sample needs n_particles >= 1")
    times = np.asarray(record_times if record_times is not None else [t_end], dtype=float)
    rng = np.random.default_rng(seed)
    tau, mu = sp.tau_arr, sp.mu_arr
    jump_sd = np.sqrt(2.0 * sp.sigma2)

    pos = np.zeros(n_particles)
    clock = rng.exponential(tau[rng.choice(tau.size, size=n_particles, p=mu)])
    rec = np.zeros((n_particles, times.size))
    nxt = np.zeros(n_particles, dtype=np.int64)
    T = times.size

    active = np.arange(n_particles)
    while active.size:
        # record every time that falls before the particle's next jump
        while True:
            can = nxt[active] < T
            idx = active[can]
            if not idx.size:
                break
            hit = idx[times[nxt[idx]] < clock[idx]]
            if not hit.size:
                break
            rec[hit, nxt[hit]] = pos[hit]
            nxt[hit] += 1
        active = active[(clock[active] <= t_end) & (nxt[active] < T)]
        if not active.size:
            break
        pos[active] += rng.normal(0.0, jump_sd, size=active.size)
        states = rng.choice(tau.size, size=active.size, p=mu)
        clock[active] += rng.exponential(tau[states])

    # particles whose clock passed t_end keep their last position
    for p in np.nonzero(nxt < T)[0]:
        rec[p, nxt[p]:] = pos[p]
    return Trajectory(times=times, positions=rec, seed=seed)


def ctrw_msd(traj: Trajectory) -> np.ndarray:
    """Ensemble mean of x(t)^2 at the recorded times."""
    return (traj.positions ** 2).mean(axis=0)
