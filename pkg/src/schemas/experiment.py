"""
Configuration schemas for training runs and experiments.

Everything a run depends on is captured here so that a report can embed the
fully resolved configuration (`model_dump(mode="json")`) and be replayed.
"""

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src.core.config import (
    ADALOSS_GAMMA,
    BARRIER_LAMBDA,
    DEFAULT_SEEDS,
    EMA_DECAY,
    HARNESS_WORKERS,
)


# =============================================================================
# Enumerations
# =============================================================================

class WeightScheme(str, Enum):
    CONST = "CONST"
    LINEAR = "LINEAR"
    HALF_END = "HALF_END"
    ADALOSS = "ADALOSS"
    # provenance-only tags
    OPT = "OPT"
    RECIPROCAL = "RECIPROCAL"


TRAINABLE_SCHEMES = (WeightScheme.CONST, WeightScheme.LINEAR, WeightScheme.HALF_END, WeightScheme.ADALOSS)


class LossKind(str, Enum):
    CROSS_ENTROPY = "CROSS_ENTROPY"
    SQUARE = "SQUARE"


class DatasetKind(str, Enum):
    BLOBS = "BLOBS"
    CONCENTRIC = "CONCENTRIC"
    SPIRALS = "SPIRALS"
    IDX = "IDX"


class BudgetSampler(str, Enum):
    STRATIFIED = "STRATIFIED"
    UNIFORM = "UNIFORM"
    GRID = "GRID"


class ReportFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


# Cost fractions at which schemes are compared against OPT
EVALUATION_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


def fraction_to_head(fraction: float, depth: int) -> int:
    """Map a cost fraction to a 1-based head index by rounding up."""
    # round first so that 0.75 * 4 does not become 3.0000000000000004
    return max(1, math.ceil(round(fraction * depth, 9)))


# =============================================================================
# Weighting and objective parameters
# =============================================================================

class MixingConfig(BaseModel):
    """AdaLoss regularization: γ-mixing with constant weights and the extra final weight."""
    gamma: float = Field(default=ADALOSS_GAMMA, ge=0.0, le=1.0)
    final_multiplier: float = Field(default=1.0, ge=1.0)
    decay: float = Field(default=EMA_DECAY, gt=0.0, lt=1.0)
    # γ anneals from 1 down to `gamma` over this many epochs
    anneal_epochs: int = Field(default=0, ge=0)

    def gamma_at(self, epoch_progress: float) -> float:
        """γ in effect after `epoch_progress` (fractional) epochs of training."""
        if self.anneal_epochs == 0 or epoch_progress >= self.anneal_epochs:
            return self.gamma
        t = max(0.0, epoch_progress) / self.anneal_epochs
        return 1.0 + (self.gamma - 1.0) * t


class BarrierConfig(BaseModel):
    lam: float = Field(default=BARRIER_LAMBDA, gt=0.0, alias="lambda")

    model_config = {"populate_by_name": True}


# =============================================================================
# Training
# =============================================================================

class TrainConfig(BaseModel):
    learning_rate: float = Field(default=0.1, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    epochs: int = Field(default=60, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr_drop_points: List[float] = Field(default_factory=lambda: [0.5, 0.75])
    seed: int = 0

    @field_validator("lr_drop_points")
    @classmethod
    def validate_drop_points(cls, v: List[float]) -> List[float]:
        for p in v:
            if not 0.0 < p < 1.0:
                raise ValueError(f"lr drop point {p} must lie strictly inside (0, 1)")
        for a, b in zip(v, v[1:]):
            if b <= a:
                raise ValueError("lr drop points must be strictly increasing")
        return v

    def learning_rate_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch: divided by 10 at every passed drop point."""
        drops = sum(1 for p in self.lr_drop_points if epoch >= p * self.epochs)
        return self.learning_rate / (10.0 ** drops)


class NetworkSpec(BaseModel):
    depth: int = Field(default=8, ge=1, description="number of transforms / heads L")
    width: int = Field(default=32, ge=1)
    loss_kind: LossKind = LossKind.CROSS_ENTROPY


class DatasetSpec(BaseModel):
    kind: DatasetKind = DatasetKind.SPIRALS
    n: int = Field(default=600, ge=10)
    noise: float = Field(default=0.1, ge=0.0)
    seed: int = 0
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    validation_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_idx_paths(self):
        if self.kind == DatasetKind.IDX and not (self.images_path and self.labels_path):
            raise ValueError("IDX datasets need both images_path and labels_path")
        return self

    @property
    def label(self) -> str:
        if self.kind == DatasetKind.IDX:
            return f"IDX:{self.images_path}"
        return self.kind.value


# =============================================================================
# Experiments
# =============================================================================

class ExperimentConfig(BaseModel):
    """Scheme comparison / weight evolution / training experiment."""
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    # extra datasets for weight evolution; `dataset` is always the first one
    extra_datasets: List[DatasetSpec] = Field(default_factory=list)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    schemes: List[WeightScheme] = Field(
        default_factory=lambda: [WeightScheme.CONST, WeightScheme.LINEAR, WeightScheme.HALF_END, WeightScheme.ADALOSS]
    )
    include_opt: bool = True
    train: TrainConfig = Field(default_factory=TrainConfig)
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS))
    workers: int = Field(default=HARNESS_WORKERS, ge=1)
    report_path: Optional[str] = None

    @field_validator("schemes")
    @classmethod
    def validate_schemes(cls, v: List[WeightScheme]) -> List[WeightScheme]:
        if not v:
            raise ValueError("at least one weight scheme is required")
        for scheme in v:
            if scheme not in TRAINABLE_SCHEMES:
                raise ValueError(f"{scheme.value} is not a trainable weight scheme")
        if len(set(v)) != len(v):
            raise ValueError("weight schemes must not repeat")
        return v

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("at least one seed is required")
        return v

    @property
    def datasets(self) -> List[DatasetSpec]:
        return [self.dataset, *self.extra_datasets]


class SizeComparisonConfig(BaseModel):
    """Small ANN with AdaLoss versus an ANN of `size_factor` times the depth with CONST."""
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    network: NetworkSpec = Field(default_factory=lambda: NetworkSpec(depth=4))
    size_factor: int = Field(default=2, ge=2)
    small_scheme: WeightScheme = WeightScheme.ADALOSS
    large_scheme: WeightScheme = WeightScheme.CONST
    train: TrainConfig = Field(default_factory=TrainConfig)
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS))
    report_path: Optional[str] = None


class EannVerifyConfig(BaseModel):
    bases: List[float] = Field(default_factory=lambda: [1.5, 2.0, 3.0, 4.0])
    members: int = Field(default=12, ge=1)
    samples: int = Field(default=1_000_000, ge=1)
    workers: int = Field(default=1, ge=1, description="parallel workers of the ensemble (base amplification)")
    shards: int = Field(default=1, ge=1, description="simulation processes")
    sampler: BudgetSampler = BudgetSampler.STRATIFIED
    sup_tolerance: float = Field(default=0.01, gt=0.0, description="relative")
    mean_tolerance: float = Field(default=0.0, ge=0.0, description="absolute slack on the mean bound")
    linear_mean_tolerance: float = Field(default=0.005, gt=0.0, description="relative")
    seed: int = 0
    report_path: Optional[str] = None

    @field_validator("bases")
    @classmethod
    def validate_bases(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one base is required")
        for b in v:
            if b <= 1.0:
                raise ValueError(f"base {b} must exceed 1")
        return v


class EannSimulateConfig(BaseModel):
    base: float = Field(default=2.0, gt=1.0)
    members: int = Field(default=8, ge=1)
    workers: int = Field(default=1, ge=1)
    anytime: bool = True
    grid_points: int = Field(default=1000, ge=1)
    tau: float = Field(default=8.0, gt=0.0)
    early_factor: float = Field(default=0.9, gt=0.0, le=1.0)
    report_path: Optional[str] = None


class EannEnsembleConfig(BaseModel):
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    base: float = Field(default=2.0, gt=1.0)
    members: int = Field(default=3, ge=1)
    width: int = Field(default=32, ge=1)
    schemes: List[WeightScheme] = Field(default_factory=lambda: [WeightScheme.CONST, WeightScheme.ADALOSS])
    train: TrainConfig = Field(default_factory=TrainConfig)
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS))
    report_path: Optional[str] = None

    @field_validator("schemes")
    @classmethod
    def validate_schemes(cls, v: List[WeightScheme]) -> List[WeightScheme]:
        if not v:
            raise ValueError("at least one weight scheme is required")
        for scheme in v:
            if scheme not in TRAINABLE_SCHEMES:
                raise ValueError(f"{scheme.value} is not a trainable weight scheme")
        return v
