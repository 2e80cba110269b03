"""
Exponentially deepening ensembles of anytime networks (EANN).

Members have depths 1, b, b^2, ... and run strictly one after another.
Within member n+1 (n members already finished) at internal depth z the
ensemble either reuses the last output of member n, while z <= b^(n-1), or
publishes member n+1's own anytime output at depth z. The cost inflation C
at budget B is B divided by the depth x' of the optimal network that output
competes with.

Depth is continuous; one computation unit is the depth of the first member.
M parallel workers behave like a single worker with base b^M, so every
quantity below is computed with `EannSpec.effective_base`.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from src.core.errors import ContractViolation, DomainError, NoPredictionYet
from src.schemas.experiment import BudgetSampler
from src.schemas.reports import BudgetRecord, InflationReport, QualityRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EannSpec:
    base: float
    member_count: int
    workers: int = 1
    # False: plain networks that only predict once they finish
    anytime: bool = True
    # output granularity; also the cost of the first prediction
    unit: float = 1.0

    def __post_init__(self):
        if not self.base > 1.0:
            raise DomainError(f"base must exceed 1, got {self.base}")
        if self.member_count < 1:
            raise ContractViolation("an ensemble needs at least one member")
        if self.workers < 1:
            raise ContractViolation("workers must be positive")
        if not self.unit > 0:
            raise DomainError("output unit must be positive")

    @property
    def effective_base(self) -> float:
        return self.base ** self.workers

    @property
    def depths(self) -> np.ndarray:
        return self.effective_base ** np.arange(self.member_count, dtype=np.float64)

    @property
    def prefix_costs(self) -> np.ndarray:
        """S_0 = 0, S_k = total depth of the first k members."""
        return np.concatenate([[0.0], np.cumsum(self.depths)])

    @property
    def total_cost(self) -> float:
        return float(self.prefix_costs[-1])


@dataclass(frozen=True)
class BudgetPoint:
    budget: float
    member_index: int  # n: members completed before the running one
    within_member_depth: float  # z
    member_depth: float  # depth of member n+1

    @property
    def member_number(self) -> int:
        return self.member_index + 1


def _check_budget(budget: float) -> float:
    if not budget >= 0 or not math.isfinite(budget):
        raise DomainError(f"budget must be a finite non-negative number, got {budget}")
    return float(budget)


def locate(spec: EannSpec, budget: float) -> BudgetPoint:
    """
    Which member runs at `budget` and how deep into it the ensemble is.

    A budget that ends exactly at a member's last layer is reported as that
    member at full depth. Budgets past the total cost saturate at the total.
    """
    budget = min(_check_budget(budget), spec.total_cost)
    prefix = spec.prefix_costs
    n = int(np.searchsorted(prefix[1:], budget, side="left"))
    n = min(n, spec.member_count - 1)
    return BudgetPoint(budget, n, budget - float(prefix[n]), float(spec.depths[n]))


def competitive_depth(spec: EannSpec, budget: float) -> float:
    """Depth x' of the optimal network the ensemble's current output competes with."""
    point = locate(spec, budget)
    if point.budget < spec.unit:
        raise NoPredictionYet(f"no prediction before budget {spec.unit}, got {point.budget}")
    n, z = point.member_index, point.within_member_depth
    depths = spec.depths

    if not spec.anytime:
        completed = n + (1 if point.budget >= spec.prefix_costs[n + 1] else 0)
        if completed == 0:
            raise NoPredictionYet("no member has finished yet")
        return float(depths[completed - 1])

    if n == 0:
        return z
    previous = float(depths[n - 1])
    return previous if z <= previous else z


def inflation(spec: EannSpec, budget: float) -> float:
    """C = B / x'."""
    return float(locate(spec, budget).budget / competitive_depth(spec, budget))


def case_inflation(base: float, n: int, z: float) -> float:
    """Closed-form C at depth z of member n+1 (the two cases of the bound's proof)."""
    b = base
    if n == 0:
        return 1.0
    prev = b ** (n - 1)
    if z <= prev:
        return z / prev + 1.0 + 1.0 / (b - 1.0) - 1.0 / (prev * (b - 1.0))
    return 1.0 + (b ** n - 1.0) / (z * (b - 1.0))


def _check_base(b: float):
    if not b > 1.0:
        raise DomainError(f"base must exceed 1, got {b}")


def sup_inflation(b: float) -> float:
    """sup_B C = 2 + 1 / (b - 1)."""
    _check_base(b)
    return 2.0 + 1.0 / (b - 1.0)


def expected_inflation_bound(b: float) -> float:
    """Upper bound on E[C] for uniformly random budgets: 1 - 1/(2b) + (1 + ln b) / (b - 1)."""
    _check_base(b)
    return 1.0 - 1.0 / (2.0 * b) + (1.0 + math.log(b)) / (b - 1.0)


class LinearEnsembleBounds(NamedTuple):
    sup: float
    mean_limit: float


def linear_ensemble_inflation(b: float) -> LinearEnsembleBounds:
    """
    Cost inflation of exponentially growing plain networks, which only predict
    when they finish: sup C -> b^2 / (b - 1), E[C] -> 1.5 + (b - 1)/2 + 1/(b - 1).
    The minima are 4 at b = 2 and 1.5 + sqrt(2) at b = 1 + sqrt(2).
    """
    _check_base(b)
    return LinearEnsembleBounds(
        sup=b * b / (b - 1.0),
        mean_limit=1.5 + (b - 1.0) / 2.0 + 1.0 / (b - 1.0),
    )


def plain_sequence_mean(spec: EannSpec) -> float:
    """
    Exact E[C] of the finite plain (non-anytime) sequence for budgets uniform
    over [first completion, total cost]. Approaches the linear mean limit
    from below as members are added.
    """
    if spec.member_count < 2:
        raise ContractViolation("the plain sequence needs at least two members")
    prefix = spec.prefix_costs
    depths = spec.depths
    # member n+1 runs on (S_n, S_n+1] while the output of member n competes
    integral = sum(
        (prefix[n + 1] ** 2 - prefix[n] ** 2) / (2.0 * depths[n - 1])
        for n in range(1, spec.member_count)
    )
    return float(integral / (prefix[-1] - prefix[1]))


def locate_minimum(
    func: Callable[[float], float], lo: float = 1.0 + 1e-6, hi: float = 10.0, points: int = 100_001
) -> Tuple[float, float]:
    """Grid search followed by bounded Brent refinement; returns (argmin, min)."""
    grid = np.linspace(lo, hi, points)
    values = np.array([func(x) for x in grid])
    k = int(np.argmin(values))
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
    if right > left:
        res = minimize_scalar(func, bounds=(left, right), method="bounded", options={"xatol": 1e-10})
        if res.fun <= values[k]:
            return float(res.x), float(res.fun)
    return float(grid[k]), float(values[k])


# =============================================================================
# Simulation
# =============================================================================

def _inflation_many(spec: EannSpec, budgets: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized locate + competitive depth; returns (n, z, x', C)."""
    prefix = spec.prefix_costs
    depths = spec.depths
    budgets = np.minimum(budgets, prefix[-1])
    n = np.minimum(np.searchsorted(prefix[1:], budgets, side="left"), spec.member_count - 1)
    z = budgets - prefix[n]

    if spec.anytime:
        previous = depths[np.maximum(n - 1, 0)]
        x_prime = np.where(n == 0, z, np.where(z <= previous, previous, z))
    else:
        completed = n + (budgets >= prefix[n + 1])
        x_prime = depths[np.maximum(completed - 1, 0)]
    return n, z, x_prime, budgets / x_prime


def _draw_budgets(sampler: BudgetSampler, low: float, high: float, count: int, rng: np.random.Generator) -> np.ndarray:
    if sampler == BudgetSampler.UNIFORM:
        return rng.uniform(low, high, count)
    width = (high - low) / count
    starts = low + width * np.arange(count)
    if sampler == BudgetSampler.GRID:
        return starts + 0.5 * width
    return starts + width * rng.uniform(0.0, 1.0, count)


def _report_from(spec: EannSpec, budgets: np.ndarray, record: bool) -> InflationReport:
    n, z, x_prime, c = _inflation_many(spec, budgets)
    count = int(c.size)
    mean = float(np.mean(c))
    second = float(np.mean(c * c))
    var = max(second - mean * mean, 0.0)
    records = []
    if record:
        records = [
            BudgetRecord(budget=float(b), member=int(k) + 1, z=float(zz), x_prime=float(xp), c=float(cc))
            for b, k, zz, xp, cc in zip(budgets, n, z, x_prime, c)
        ]
    return InflationReport(
        base=spec.base,
        effective_base=spec.effective_base,
        members=spec.member_count,
        anytime=spec.anytime,
        samples=count,
        sup_c=float(np.max(c)),
        mean_c=mean,
        second_moment=second,
        mean_c_stderr=math.sqrt(var / count),
        per_budget=records,
    )


def _simulate_shard(args) -> InflationReport:
    spec, sampler, low, high, count, seed, record = args
    rng = np.random.default_rng(seed)
    return _report_from(spec, _draw_budgets(sampler, low, high, count, rng), record)


def merge_inflation_reports(reports: Sequence[InflationReport]) -> InflationReport:
    """Combine shard reports; the result does not depend on their order."""
    if not reports:
        raise ContractViolation("nothing to merge")
    first = reports[0]
    total = sum(r.samples for r in reports)
    # sort before summing so float rounding is order independent too
    ordered = sorted(reports, key=lambda r: (r.mean_c, r.samples, r.sup_c))
    mean = sum(r.mean_c * r.samples for r in ordered) / total
    second = sum(r.second_moment * r.samples for r in ordered) / total
    var = max(second - mean * mean, 0.0)
    records = sorted((rec for r in reports for rec in r.per_budget), key=lambda rec: rec.budget)
    return InflationReport(
        base=first.base,
        effective_base=first.effective_base,
        members=first.members,
        anytime=first.anytime,
        samples=total,
        sup_c=max(r.sup_c for r in reports),
        mean_c=mean,
        second_moment=second,
        mean_c_stderr=math.sqrt(var / total),
        per_budget=records,
    )


def simulate_inflation(
    spec: EannSpec,
    sampler: BudgetSampler = BudgetSampler.STRATIFIED,
    samples: int = 100_000,
    seed: int = 0,
    shards: int = 1,
    record: bool = False,
) -> InflationReport:
    """
    Empirical sup and mean of C over budgets drawn uniformly from
    [first prediction, total cost], computed from first principles
    (locate -> competitive depth -> ratio).

    Shards split the budget range into sub-ranges whose widths are
    proportional to their sample counts, so the union stays uniform. Shards
    run in separate processes when `shards` > 1.
    """
    if samples < 1:
        raise ContractViolation("samples must be at least 1")
    low = spec.unit if spec.anytime else float(spec.depths[0])
    high = spec.total_cost
    if high <= low:
        raise ContractViolation("the ensemble is too small to sample budgets from")

    shards = max(1, min(shards, samples))
    counts = [samples // shards + (1 if k < samples % shards else 0) for k in range(shards)]
    seeds = np.random.SeedSequence(seed).spawn(shards)
    jobs, start = [], low
    for count, child in zip(counts, seeds):
        stop = start + (high - low) * count / samples
        jobs.append((spec, sampler, start, stop, count, int(child.generate_state(1)[0]), record))
        start = stop

    if shards == 1:
        parts = [_simulate_shard(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=shards) as pool:
            parts = list(pool.map(_simulate_shard, jobs))

    report = merge_inflation_reports(parts)
    logger.info(
        f"Simulated {samples} budgets: sup C {report.sup_c:.5f}, mean C {report.mean_c:.5f}",
        extra={"base": spec.base},
    )
    return report


def prediction_count(spec: EannSpec, budget: float) -> int:
    """
    Number of predictions produced within `budget`: one per unit for an
    anytime ensemble, one per finished member for plain networks.
    """
    budget = _check_budget(budget)
    if spec.anytime:
        return int(math.floor(min(budget, spec.total_cost) / spec.unit + 1e-9))
    prefix = spec.prefix_costs
    return int(np.searchsorted(prefix[1:], min(budget, prefix[-1]), side="right"))


# =============================================================================
# Validation-gated outputs
# =============================================================================

@dataclass(frozen=True)
class MemberOutput:
    cost: float
    score: float
    payload: Any = None


@dataclass
class GatedSchedule:
    outputs: List[MemberOutput]
    published: List[MemberOutput]
    decisions: List[bool]

    def at(self, budget: float) -> Optional[Any]:
        """Payload of the latest published output whose cost fits the budget."""
        latest = self.latest(budget)
        return None if latest is None else latest.payload

    def latest(self, budget: float) -> Optional[MemberOutput]:
        costs = [o.cost for o in self.published]
        k = int(np.searchsorted(costs, budget, side="right"))
        return self.published[k - 1] if k > 0 else None


OutputLike = Union[MemberOutput, Tuple[float, float, Any]]


def gated_anytime_outputs(member_outputs: Iterable[OutputLike]) -> GatedSchedule:
    """
    Publish an output only if its validation score strictly beats every
    output published before it. Ties keep the earlier, cheaper output.
    """
    outputs = [o if isinstance(o, MemberOutput) else MemberOutput(*o) for o in member_outputs]
    for prev, cur in zip(outputs, outputs[1:]):
        if not cur.cost > prev.cost:
            raise ContractViolation(f"output costs must strictly increase ({prev.cost} then {cur.cost})")

    published, decisions = [], []
    best = -math.inf
    for out in outputs:
        keep = out.score > best
        decisions.append(keep)
        if keep:
            published.append(out)
            best = out.score
    return GatedSchedule(outputs, published, decisions)


@dataclass(frozen=True)
class QualityCurve:
    """
    Synthetic validation score of the optimal network of depth d,
    1 - exp(-d / tau). A member of depth D is assumed competitive with it from
    depth D / b on and scores `early_factor` times the optimal before that.
    """
    tau: float = 8.0
    early_factor: float = 0.9

    def score(self, depth: float) -> float:
        return 1.0 - math.exp(-depth / self.tau)

    def member_score(self, depth: float, member_depth: float, base: float) -> float:
        s = self.score(depth)
        return s * self.early_factor if depth < member_depth / base else s


def _internal_depths(member_depth: float, unit: float) -> List[float]:
    steps = int(math.floor(member_depth / unit + 1e-9))
    depths = [unit * k for k in range(1, steps + 1)]
    if not depths or member_depth - depths[-1] > 1e-9:
        depths.append(member_depth)
    return depths


def illustrate_schedule(spec: EannSpec, curve: QualityCurve) -> Tuple[GatedSchedule, List[QualityRecord]]:
    """
    Gated schedule of an ensemble whose members follow `curve`, and the
    published versus optimal score at every whole unit of budget.
    """
    prefix = spec.prefix_costs
    b = spec.effective_base
    outputs = []
    for k, depth in enumerate(spec.depths):
        internal = _internal_depths(float(depth), spec.unit) if spec.anytime else [float(depth)]
        for u in internal:
            outputs.append(
                MemberOutput(
                    cost=float(prefix[k]) + u,
                    score=curve.member_score(u, float(depth), b),
                    payload={"member": k + 1, "depth": u},
                )
            )
    schedule = gated_anytime_outputs(outputs)

    rows = []
    budget = spec.unit
    while budget <= spec.total_cost + 1e-9:
        latest = schedule.latest(budget + 1e-9)
        rows.append(
            QualityRecord(
                budget=budget,
                published_score=None if latest is None else latest.score,
                optimal_score=curve.score(budget),
                member=None if latest is None else latest.payload["member"],
                depth=None if latest is None else latest.payload["depth"],
            )
        )
        budget += spec.unit
    return schedule, rows


def inflation_grid(spec: EannSpec, points: int) -> InflationReport:
    """Per-budget records on an even grid of budgets from the first prediction to the total cost."""
    low = spec.unit if spec.anytime else float(spec.depths[0])
    budgets = np.linspace(low, spec.total_cost, points) if points > 1 else np.array([spec.total_cost])
    return _report_from(spec, budgets, record=True)
