"""
Aggregation helpers shared by the experiment runs: relative increases over a
reference, mean ± std over seeds, and AdaLoss weight shares.
"""

import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ContractViolation
from src.core.loss_weights import LOSS_FLOOR, WeightVector, final_share
from src.schemas.experiment import WeightScheme
from src.schemas.reports import DatasetWeights, HeadRecord, RelativeIncrease, WeightRecord

logger = logging.getLogger(__name__)

METRICS = ("train_loss", "validation_error")


def relative_increase(value: float, reference: float, floor: float = 0.0) -> float:
    """100 * (value - reference) / reference, with `reference` floored at `floor`."""
    denominator = max(reference, floor)
    if denominator <= 0:
        raise ContractViolation(f"relative increase needs a positive reference, got {reference}")
    return 100.0 * (value - reference) / denominator


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ContractViolation("cannot summarize an empty sample")
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def summarize_relative(
    runs: Iterable[HeadRecord],
    opt_runs: Iterable[HeadRecord],
    fractions: Sequence[float],
    heads: Sequence[int],
    validation_floor: float,
) -> List[RelativeIncrease]:
    """
    Per scheme, metric and fraction: relative increase of the scheme's head
    over the OPT baseline trained with the same seed, averaged over seeds.
    The OPT rows are included and are exactly 0. Training-loss references are
    floored at LOSS_FLOOR, since cross-entropy can underflow to exactly 0.
    """
    opt = {(r.seed, r.head): r for r in opt_runs}
    by_scheme: Dict[str, Dict[int, Dict[int, HeadRecord]]] = defaultdict(lambda: defaultdict(dict))
    for r in runs:
        by_scheme[r.scheme][r.seed][r.head] = r

    rows = []
    for metric in METRICS:
        floor = validation_floor if metric == "validation_error" else LOSS_FLOOR
        for fraction, head in zip(fractions, heads):
            seeds_with_opt = sorted({seed for seed, h in opt if h == head})
            if seeds_with_opt:
                rows.append(
                    RelativeIncrease(
                        scheme=WeightScheme.OPT.value, metric=metric, fraction=fraction,
                        head=head, mean=0.0, std=0.0, seeds=len(seeds_with_opt),
                    )
                )
            for scheme, seeds in by_scheme.items():
                values = []
                for seed, records in sorted(seeds.items()):
                    reference = opt.get((seed, head))
                    if reference is None or head not in records:
                        continue
                    values.append(
                        relative_increase(
                            getattr(records[head], metric), getattr(reference, metric), floor
                        )
                    )
                if not values:
                    continue
                mean, std = mean_std(values)
                rows.append(
                    RelativeIncrease(
                        scheme=scheme, metric=metric, fraction=fraction,
                        head=head, mean=mean, std=std, seeds=len(values),
                    )
                )
    return rows


def weight_record(dataset: str, seed: int, weights: WeightVector) -> WeightRecord:
    return WeightRecord(
        dataset=dataset,
        seed=seed,
        weights=weights.to_list(),
        weight_sum=float(np.sum(weights.weights)),
        final_third_share=final_share(weights),
    )


def summarize_weights(records: Sequence[WeightRecord]) -> List[DatasetWeights]:
    grouped: Dict[str, List[WeightRecord]] = defaultdict(list)
    for r in records:
        grouped[r.dataset].append(r)

    summary = []
    for dataset, group in grouped.items():
        share_mean, share_std = mean_std([r.final_third_share for r in group])
        summary.append(
            DatasetWeights(
                dataset=dataset,
                mean_weights=np.mean([r.weights for r in group], axis=0).tolist(),
                final_third_share_mean=share_mean,
                final_third_share_std=share_std,
                seeds=len(group),
            )
        )
    return summary


def mean_weights(vectors: Sequence[WeightVector]) -> Optional[List[float]]:
    if not vectors:
        return None
    return np.mean([v.weights for v in vectors], axis=0).tolist()
