"""
Serializable experiment reports.

Every report carries `schema_version`, the resolved configuration it was
produced from, and `notes` for caveats and exclusions. `csv_rows()` gives the
flat table written by the CSV exporter; column order is the key order of the
first row.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

SCHEMA_VERSION = 1


class BaseReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    kind: str
    config: Dict[str, Any] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        raise NotImplementedError(f"{self.__class__.__name__} has no tabular form")


# =============================================================================
# EANN cost inflation
# =============================================================================

class BudgetRecord(BaseModel):
    budget: float
    member: int = Field(..., description="1-based number of the member executing at this budget")
    z: float
    x_prime: float
    c: float


class InflationReport(BaseModel):
    base: float
    effective_base: float
    members: int
    anytime: bool = True
    samples: int
    sup_c: float
    mean_c: float
    # mean of c^2, kept so shard reports can be merged exactly
    second_moment: float
    mean_c_stderr: float
    per_budget: List[BudgetRecord] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [r.model_dump() for r in self.per_budget]


class BoundCheck(BaseModel):
    name: str
    expected: float
    observed: float
    tolerance: float
    passed: bool


class BaseVerification(BaseModel):
    base: float
    effective_base: float
    eann: InflationReport
    linear: InflationReport
    checks: List[BoundCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


class EannVerificationReport(BaseReport):
    kind: str = "eann_verification"
    results: List[BaseVerification] = Field(default_factory=list)
    passed: bool = True

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "base": r.base,
                "effective_base": r.effective_base,
                "check": c.name,
                "expected": c.expected,
                "observed": c.observed,
                "tolerance": c.tolerance,
                "passed": c.passed,
            }
            for r in self.results
            for c in r.checks
        ]


class QualityRecord(BaseModel):
    budget: float
    published_score: Optional[float]
    optimal_score: float
    member: Optional[int]
    depth: Optional[float]


class EannSimulationReport(BaseReport):
    kind: str = "eann_simulation"
    inflation: InflationReport
    quality: List[QualityRecord] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return self.inflation.csv_rows()


# =============================================================================
# Weight scheme experiments
# =============================================================================

class HeadRecord(BaseModel):
    scheme: str
    seed: int
    head: int
    train_loss: float
    validation_loss: float
    validation_error: float


class RelativeIncrease(BaseModel):
    scheme: str
    metric: str
    fraction: float
    head: int
    mean: float
    std: float
    seeds: int


class ExcludedRun(BaseModel):
    scheme: str
    seed: int
    depth: Optional[int] = None
    dataset: Optional[str] = None
    reason: str


class ExperimentReport(BaseReport):
    kind: str = "scheme_comparison"
    dataset: str
    fractions: List[float]
    heads: List[int]
    runs: List[HeadRecord] = Field(default_factory=list)
    opt_runs: List[HeadRecord] = Field(default_factory=list)
    relative: List[RelativeIncrease] = Field(default_factory=list)
    # dataset label -> mean final AdaLoss weights over seeds
    weights: Dict[str, List[float]] = Field(default_factory=dict)
    excluded: List[ExcludedRun] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [r.model_dump() for r in self.relative]

    def relative_increase(self, scheme: str, fraction: float, metric: str = "train_loss") -> Optional[RelativeIncrease]:
        for r in self.relative:
            if r.scheme == scheme and r.metric == metric and abs(r.fraction - fraction) < 1e-12:
                return r
        return None


class WeightRecord(BaseModel):
    dataset: str
    seed: int
    weights: List[float]
    weight_sum: float
    final_third_share: float


class DatasetWeights(BaseModel):
    dataset: str
    mean_weights: List[float]
    final_third_share_mean: float
    final_third_share_std: float
    seeds: int


class WeightEvolutionReport(BaseReport):
    kind: str = "weight_evolution"
    records: List[WeightRecord] = Field(default_factory=list)
    summary: List[DatasetWeights] = Field(default_factory=list)
    excluded: List[ExcludedRun] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "dataset": r.dataset,
                "seed": r.seed,
                "weight_sum": r.weight_sum,
                "final_third_share": r.final_third_share,
                "weights": " ".join(f"{w:.6g}" for w in r.weights),
            }
            for r in self.records
        ]

    def share(self, dataset: str) -> Optional[float]:
        for s in self.summary:
            if s.dataset == dataset:
                return s.final_third_share_mean
        return None


class SizeComparisonRow(BaseModel):
    fraction: float
    cost: float
    small_head: int
    large_head: int
    small_error: float
    large_error: float
    relative_increase_mean: float
    relative_increase_std: float
    seeds: int


class SizeComparisonReport(BaseReport):
    kind: str = "size_comparison"
    dataset: str
    rows: List[SizeComparisonRow] = Field(default_factory=list)
    excluded: List[ExcludedRun] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [r.model_dump() for r in self.rows]


class EnsemblePoint(BaseModel):
    scheme: str
    budget: float
    error_mean: float
    error_std: float
    seeds: int


class MemberErrors(BaseModel):
    scheme: str
    seed: int
    member: int
    depth: int
    validation_errors: List[float]


class EannEnsembleReport(BaseReport):
    kind: str = "eann_ensemble"
    dataset: str
    member_depths: List[int]
    members: List[MemberErrors] = Field(default_factory=list)
    schedule: List[EnsemblePoint] = Field(default_factory=list)
    excluded: List[ExcludedRun] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [r.model_dump() for r in self.schedule]


class TrainingReport(BaseReport):
    kind: str = "training"
    dataset: str
    scheme: str
    checkpoint: Optional[str] = None
    loss_history: List[List[float]] = Field(default_factory=list)
    final_weights: List[float] = Field(default_factory=list)
    train_losses: List[float] = Field(default_factory=list)
    validation_losses: List[float] = Field(default_factory=list)
    validation_errors: List[float] = Field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "head": i + 1,
                "weight": self.final_weights[i] if i < len(self.final_weights) else None,
                "train_loss": self.train_losses[i],
                "validation_loss": self.validation_losses[i],
                "validation_error": self.validation_errors[i],
            }
            for i in range(len(self.train_losses))
        ]
