# models.py - Domain and configuration models
"""
Pydantic models shared across the toolkit: special-function parameters,
waiting-time fits, internal-state parameters, reaction specifications,
the 1D grid and the JSON run configuration consumed by the CLI.

Units are SI throughout (m, s, mol).
"""

import math
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ==================== ENUMS ====================

class ReactionKind(str, Enum):
    NONE = "none"
    ANNIHILATION = "annihilation"
    MONOMOLECULAR = "monomolecular"
    BIMOLECULAR = "bimolecular"


class RateScaling(str, Enum):
    MODEL_I = "I"              # rates k/tau_i
    MODEL_II = "II"            # rates k
    CROSS_STATE = "cross_state"  # bimolecular, tau_ij from theta
    GENERAL = "general"        # user matrices / tensors


class DiffusionKind(str, Enum):
    ANOMALOUS = "anomalous"    # D = sigma^2 T
    ORDINARY = "ordinary"      # D = sigma^2 I


class WeightMode(str, Enum):
    RAW = "raw"
    NORMALIZED = "normalized"


SPECIES_BY_KIND = {
    ReactionKind.NONE: ("A",),
    ReactionKind.ANNIHILATION: ("A",),
    ReactionKind.MONOMOLECULAR: ("A", "B"),
    ReactionKind.BIMOLECULAR: ("A", "B", "C"),
}


# ==================== SPECIAL FUNCTIONS ====================

class MLParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., gt=0)
    beta: float = Field(..., gt=0)


class GreenCoeffs(BaseModel):
    model_config = ConfigDict(frozen=True)

    K_alpha: float = Field(..., gt=0, description="m^2 s^-alpha")
    k_star: float = Field(0.0, ge=0)
    ell_star: float = Field(0.0, ge=0)
    mass: float = Field(1.0, gt=0, description="mol")


# ==================== WAITING-TIME FIT ====================

class FitProblem(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., gt=0, lt=1)
    t_min: float = Field(..., gt=0)
    t_max: float = Field(..., gt=0)
    N: int = Field(..., ge=1)
    multistart: int = Field(16, ge=1)
    max_iter: int = Field(2000, ge=1)
    tol: float = Field(1e-12, gt=0)
    seed: int = 0
    eps_ceiling: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def check_window(self):
        if not self.t_max > self.t_min:
            raise ValueError("t_max must be greater than t_min")
        return self


class QuadratureFit(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float
    t_min: float
    t_max: float
    weights: List[float]
    nodes: List[float]
    eps_mod: float = Field(..., ge=0)

    @model_validator(mode="after")
    def check_terms(self):
        if len(self.weights) != len(self.nodes) or not self.nodes:
            raise ValueError("weights and nodes must be non-empty and of equal length")
        if any(w <= 0 for w in self.weights) or any(s <= 0 for s in self.nodes):
            raise ValueError("weights and nodes must be positive")
        if any(b <= a for a, b in zip(self.nodes, self.nodes[1:])):
            raise ValueError("nodes must be strictly increasing")
        return self

    @property
    def N(self) -> int:
        return len(self.nodes)


class StateParams(BaseModel):
    """
    Internal-state parameters. mu_i are the normalized weights used by
    every operator; raw_weights keeps the weights as printed or fitted
    before normalization and only enters initial conditions.
    """
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., gt=0, le=1)
    K_alpha: float = Field(..., gt=0)
    tau_i: List[float]
    mu_i: List[float]
    raw_weights: Optional[List[float]] = None
    tau: float = Field(..., gt=0)
    sigma2: float = Field(..., gt=0)
    t_min: Optional[float] = None
    t_max: Optional[float] = None

    @model_validator(mode="after")
    def check_states(self):
        n = len(self.tau_i)
        if n < 1 or len(self.mu_i) != n:
            raise ValueError("tau_i and mu_i must be non-empty and of equal length")
        if self.raw_weights is not None and len(self.raw_weights) != n:
            raise ValueError("raw_weights must have one entry per state")
        if any(t <= 0 for t in self.tau_i):
            raise ValueError("tau_i must be positive")
        # duplicates are allowed, descending order is not
        if any(b < a for a, b in zip(self.tau_i, self.tau_i[1:])):
            raise ValueError("tau_i must be sorted in increasing order")
        if any(m <= 0 for m in self.mu_i):
            raise ValueError("mu_i must be positive")
        if abs(math.fsum(self.mu_i) - 1.0) > 1e-9:
            raise ValueError("mu_i must sum to 1 (store unnormalized weights in raw_weights)")
        expected = self.K_alpha * self.tau ** self.alpha
        if abs(self.sigma2 - expected) > 1e-9 * expected:
            raise ValueError("sigma2 must equal K_alpha * tau**alpha")
        return self

    @classmethod
    def build(cls, alpha, K_alpha, tau_i, weights, tau, raw_weights=None, **extra):
        """Normalize weights and derive sigma2 = K_alpha * tau**alpha."""
        weights = [float(w) for w in weights]
        total = math.fsum(weights)
        return cls(
            alpha=alpha,
            K_alpha=K_alpha,
            tau_i=[float(t) for t in tau_i],
            mu_i=[w / total for w in weights],
            raw_weights=list(raw_weights) if raw_weights is not None else weights,
            tau=tau,
            sigma2=K_alpha * tau ** alpha,
            **extra,
        )

    @property
    def N(self) -> int:
        return len(self.tau_i)

    @property
    def tau_arr(self) -> np.ndarray:
        return np.asarray(self.tau_i, dtype=float)

    @property
    def mu_arr(self) -> np.ndarray:
        return np.asarray(self.mu_i, dtype=float)

    @property
    def raw_arr(self) -> np.ndarray:
        return np.asarray(self.raw_weights if self.raw_weights is not None else self.mu_i, dtype=float)

    def weights(self, mode: WeightMode = WeightMode.NORMALIZED) -> np.ndarray:
        return self.raw_arr if WeightMode(mode) == WeightMode.RAW else self.mu_arr


# ==================== REACTIONS ====================

class ReactionSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ReactionKind = ReactionKind.NONE
    scaling: RateScaling = RateScaling.MODEL_I
    k: float = Field(0.0, ge=0)
    l: float = Field(0.0, ge=0)  # noqa: E741
    theta: Optional[float] = Field(None, ge=0, le=1)
    K_matrix: Optional[List[List[float]]] = None
    L_matrix: Optional[List[List[float]]] = None
    K_tensor: Optional[List[List[List[float]]]] = None
    L_tensor: Optional[List[List[List[float]]]] = None

    @model_validator(mode="after")
    def check_operators(self):
        for name in ("K_matrix", "L_matrix", "K_tensor", "L_tensor"):
            value = getattr(self, name)
            if value is not None and np.any(np.asarray(value, dtype=float) < 0):
                raise ValueError(f"{name} must be nonnegative")
        if self.scaling == RateScaling.GENERAL:
            if self.kind == ReactionKind.MONOMOLECULAR and (self.K_matrix is None or self.L_matrix is None):
                raise ValueError("general monomolecular reactions need K_matrix and L_matrix")
            if self.kind == ReactionKind.ANNIHILATION and self.K_matrix is None:
                raise ValueError("general annihilation needs K_matrix")
            if self.kind == ReactionKind.BIMOLECULAR and (self.K_tensor is None or self.L_tensor is None):
                raise ValueError("general bimolecular reactions need K_tensor and L_tensor")
        if self.scaling == RateScaling.CROSS_STATE and self.kind != ReactionKind.BIMOLECULAR:
            raise ValueError("cross_state scaling applies to bimolecular reactions only")
        return self

    @property
    def species(self) -> Tuple[str, ...]:
        return SPECIES_BY_KIND[self.kind]

    @property
    def cross_theta(self) -> float:
        return 0.5 if self.theta is None else self.theta


# ==================== GRID ====================

class Grid1D(BaseModel):
    """Cell-centred uniform grid on [x_lo, x_hi]."""
    model_config = ConfigDict(frozen=True)

    x_lo: float
    x_hi: float
    nx: int = Field(..., ge=3)

    @model_validator(mode="after")
    def check_bounds(self):
        if not self.x_hi > self.x_lo:
            raise ValueError("x_hi must be greater than x_lo")
        return self

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    @property
    def x(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.nx) + 0.5) * self.h

    @property
    def length(self) -> float:
        return self.x_hi - self.x_lo


# ==================== RUN CONFIG ====================

class ICConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variance: float = Field(1e-3, gt=0)
    center: float = 0.0
    species_scales: Dict[str, float] = Field(default_factory=lambda: {"A": 1.0})
    weights: WeightMode = WeightMode.RAW
    normalization: Literal["sum", "mass"] = "sum"

    @field_validator("species_scales")
    @classmethod
    def check_scales(cls, v):
        bad = [name for name in v if name not in ("A", "B", "C")]
        if bad:
            raise ValueError(f"unknown species {bad}; expected A, B or C")
        if any(s < 0 for s in v.values()):
            raise ValueError("species scales must be nonnegative")
        return v


class ReactionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ReactionKind = ReactionKind.NONE
    model: RateScaling = RateScaling.MODEL_I
    k: float = Field(0.0, ge=0)
    l: float = Field(0.0, ge=0)  # noqa: E741
    theta: Optional[float] = Field(None, ge=0, le=1)
    K_matrix: Optional[List[List[float]]] = None
    L_matrix: Optional[List[List[float]]] = None
    K_tensor: Optional[List[List[List[float]]]] = None
    L_tensor: Optional[List[List[List[float]]]] = None

    def to_spec(self) -> ReactionSpec:
        return ReactionSpec(
            kind=self.kind, scaling=self.model, k=self.k, l=self.l, theta=self.theta,
            K_matrix=self.K_matrix, L_matrix=self.L_matrix,
            K_tensor=self.K_tensor, L_tensor=self.L_tensor,
        )


class SegmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(..., gt=0)
    t_end: float = Field(..., gt=0)
    theta: float = Field(0.5, ge=0.5, le=1.0)


class SSAConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    replicas: int = Field(1000, ge=2)
    voxels: int = Field(16, ge=2)
    particle_scale: float = Field(1e4, gt=0)
    record_times: Optional[List[float]] = None


class MSDConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_first: float = Field(1e-7, gt=0)
    windows: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    n_particles: int = Field(100000, ge=1)

    @field_validator("windows")
    @classmethod
    def check_windows(cls, v):
        for name, (a, b) in v.items():
            if not 0 < a < b:
                raise ValueError(f"window {name} must satisfy 0 < t_a < t_b")
        return v


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: str = "results"
    every: int = Field(1, ge=1)


class RunConfig(BaseModel):
    """A complete run description; unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    description: Optional[str] = None
    commands: List[str] = Field(default_factory=list)

    alpha: float = Field(..., gt=0, le=1)
    K_alpha: float = Field(..., gt=0)
    t_min: float = Field(..., gt=0)
    t_max: float = Field(..., gt=0)
    N: int = Field(..., ge=1)

    parameter_set: Optional[Literal["set1", "set2"]] = None
    tau_i: Optional[List[float]] = None
    mu_i: Optional[List[float]] = None
    tau: Optional[float] = Field(None, gt=0)

    domain: Tuple[float, float] = (-1.0, 1.0)
    nx: int = Field(128, ge=3)
    dt: float = Field(1e-5, gt=0)
    t_end: float = Field(..., gt=0)
    observe_times: Optional[List[float]] = None
    segments: Optional[List[SegmentConfig]] = None
    diffusion: DiffusionKind = DiffusionKind.ANOMALOUS

    ic: ICConfig = Field(default_factory=ICConfig)
    reaction: ReactionConfig = Field(default_factory=ReactionConfig)
    ssa: Optional[SSAConfig] = None
    msd: Optional[MSDConfig] = None

    seed: int = Field(0, ge=0)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("commands")
    @classmethod
    def check_commands(cls, v):
        allowed = {"fit", "simulate", "analytic", "msd", "ssa", "steady", "compare"}
        bad = [c for c in v if c not in allowed]
        if bad:
            raise ValueError(f"unknown commands {bad}")
        return v

    @model_validator(mode="after")
    def check_run(self):
        if not self.t_max > self.t_min:
            raise ValueError("t_max must be greater than t_min")
        if not self.domain[1] > self.domain[0]:
            raise ValueError("domain must be [lo, hi] with hi > lo")
        if (self.tau_i is None) != (self.mu_i is None):
            raise ValueError("tau_i and mu_i must be given together")
        if self.tau_i is not None:
            if len(self.tau_i) != self.N or len(self.mu_i) != self.N:
                raise ValueError("tau_i and mu_i must have N entries")
            if self.tau is None:
                raise ValueError("tau is required with explicit tau_i/mu_i")
        if self.parameter_set is not None and self.tau_i is not None:
            raise ValueError("give either parameter_set or tau_i/mu_i, not both")
        species = self.reaction.to_spec().species
        extra = [s for s in self.ic.species_scales if s not in species]
        if extra:
            raise ValueError(f"ic.species_scales has species {extra} not present in a {self.reaction.kind.value} system")
        if self.segments:
            ends = [s.t_end for s in self.segments]
            if any(b <= a for a, b in zip(ends, ends[1:])):
                raise ValueError("segment end times must be increasing")
        return self

    @property
    def grid(self) -> Grid1D:
        return Grid1D(x_lo=self.domain[0], x_hi=self.domain[1], nx=self.nx)

    def fit_problem(self, **overrides) -> FitProblem:
        return FitProblem(
            alpha=self.alpha, t_min=self.t_min, t_max=self.t_max, N=self.N,
            seed=self.seed, **overrides,
        )
