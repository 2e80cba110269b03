"""
Experiment harness: scheme comparisons, AdaLoss weight evolution, EANN bound
verification and simulation, small-vs-large comparisons, EANN ensembles of
trained members, and single training runs.

Independent (scheme, seed) jobs run through `_run_jobs`, in a process pool
when more than one worker is configured. Jobs return plain records; the
report is assembled afterwards in job order, so a report depends only on its
config and seeds.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.datasets import Dataset, load_dataset
from src.core.eann import (
    EannSpec,
    QualityCurve,
    expected_inflation_bound,
    gated_anytime_outputs,
    illustrate_schedule,
    inflation_grid,
    linear_ensemble_inflation,
    plain_sequence_mean,
    simulate_inflation,
    sup_inflation,
)
from src.core.anytime_net import save_checkpoint
from src.core.errors import DivergenceError
from src.core.loss_weights import LOSS_FLOOR
from src.core.training import build_network, evaluate, make_weight_source, train, train_opt_baseline
from src.schemas.experiment import (
    EVALUATION_FRACTIONS,
    BudgetSampler,
    DatasetSpec,
    EannEnsembleConfig,
    EannSimulateConfig,
    EannVerifyConfig,
    ExperimentConfig,
    NetworkSpec,
    SizeComparisonConfig,
    TrainConfig,
    WeightScheme,
    fraction_to_head,
)
from src.schemas.reports import (
    BaseVerification,
    BoundCheck,
    EannEnsembleReport,
    EannSimulationReport,
    EannVerificationReport,
    EnsemblePoint,
    ExcludedRun,
    ExperimentReport,
    HeadRecord,
    MemberErrors,
    SizeComparisonReport,
    SizeComparisonRow,
    TrainingReport,
    WeightEvolutionReport,
)
from src.services.reporting_service import (
    mean_std,
    mean_weights,
    relative_increase,
    summarize_relative,
    summarize_weights,
    weight_record,
)

logger = logging.getLogger(__name__)

OPT_NOTE = "OPT baselines are trained for the same fixed number of epochs as the weight schemes."
SEED_NOTE = "Relative increases are averaged over seeds of one architecture (mean and sample std)."


def _run_jobs(fn: Callable, jobs: Sequence[Any], workers: int) -> List[Any]:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _split(spec: DatasetSpec) -> Tuple[Dataset, Dataset]:
    return load_dataset(spec).split(spec.validation_fraction, spec.seed)


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return cfg.model_copy(update={"seed": seed})


def _excluded(scheme: str, seed: int, err: DivergenceError, depth=None, dataset=None) -> ExcludedRun:
    logger.warning(
        f"Excluding diverged run: {err}",
        extra={"scheme": scheme, "seed": seed, "depth": depth, "dataset": dataset},
    )
    return ExcludedRun(scheme=scheme, seed=seed, depth=depth, dataset=dataset, reason=str(err))


def _exclusion_notes(excluded: Sequence[ExcludedRun]) -> List[str]:
    return [
        f"Excluded {e.scheme} seed {e.seed}"
        + (f" depth {e.depth}" if e.depth is not None else "")
        + (f" on {e.dataset}" if e.dataset else "")
        + f": {e.reason}"
        for e in excluded
    ]


def _head_records(scheme: str, seed: int, net, train_set: Dataset, val_set: Dataset, heads=None) -> List[HeadRecord]:
    train_losses, _ = evaluate(net, train_set)
    val_losses, val_errors = evaluate(net, val_set)
    heads = heads or range(1, net.depth + 1)
    return [
        HeadRecord(
            scheme=scheme,
            seed=seed,
            head=h,
            train_loss=float(train_losses[h - 1]),
            validation_loss=float(val_losses[h - 1]),
            validation_error=float(val_errors[h - 1]),
        )
        for h in heads
    ]


# =============================================================================
# Scheme comparison
# =============================================================================

def _scheme_job(job) -> Dict[str, Any]:
    cfg, scheme, seed = job
    train_set, val_set = _split(cfg.dataset)
    context = {"scheme": scheme.value, "seed": seed, "dataset": cfg.dataset.label}
    net = build_network(cfg.network, train_set, seed)
    source = make_weight_source(scheme, net.depth, cfg.mixing)
    try:
        result = train(net, train_set, source, _seeded(cfg.train, seed), context)
    except DivergenceError as e:
        return {"excluded": _excluded(scheme.value, seed, e, dataset=cfg.dataset.label)}
    return {
        "records": _head_records(scheme.value, seed, net, train_set, val_set),
        "weights": result.weights if scheme == WeightScheme.ADALOSS else None,
    }


def _opt_job(job) -> Dict[str, Any]:
    cfg, depth, seed = job
    train_set, val_set = _split(cfg.dataset)
    context = {"seed": seed, "dataset": cfg.dataset.label}
    try:
        baseline = train_opt_baseline(train_set, depth, _seeded(cfg.train, seed), cfg.network, seed, context)
    except DivergenceError as e:
        return {"excluded": _excluded(WeightScheme.OPT.value, seed, e, depth=depth, dataset=cfg.dataset.label)}
    return {"records": _head_records(WeightScheme.OPT.value, seed, baseline.net, train_set, val_set, heads=[depth])}


def run_scheme_comparison(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Train OPT baselines at the evaluation heads and one multi-head network per
    scheme and seed, then report relative increases over OPT.
    """
    depth = cfg.network.depth
    heads = [fraction_to_head(f, depth) for f in EVALUATION_FRACTIONS]
    logger.info(
        f"Comparing schemes {[s.value for s in cfg.schemes]} at heads {heads} over seeds {cfg.seeds}",
        extra={"dataset": cfg.dataset.label},
    )

    opt_jobs = [(cfg, h, seed) for seed in cfg.seeds for h in sorted(set(heads))] if cfg.include_opt else []
    scheme_jobs = [(cfg, scheme, seed) for scheme in cfg.schemes for seed in cfg.seeds]
    opt_results = _run_jobs(_opt_job, opt_jobs, cfg.workers)
    scheme_results = _run_jobs(_scheme_job, scheme_jobs, cfg.workers)

    excluded = [r["excluded"] for r in opt_results + scheme_results if "excluded" in r]
    opt_runs = [rec for r in opt_results for rec in r.get("records", [])]
    runs = [rec for r in scheme_results for rec in r.get("records", [])]

    n_val = len(_split(cfg.dataset)[1])
    relative = summarize_relative(runs, opt_runs, EVALUATION_FRACTIONS, heads, validation_floor=1.0 / n_val)
    adaloss = mean_weights([r["weights"] for r in scheme_results if r.get("weights") is not None])

    notes = [
        OPT_NOTE,
        SEED_NOTE,
        f"Validation-error increases use a floor of 1/{n_val} when OPT error is 0.",
        f"Training-loss increases use a floor of {LOSS_FLOOR:g} when OPT loss underflows to 0.",
    ]
    if not cfg.include_opt:
        notes.append("OPT baselines disabled; no relative increases reported.")
    notes.extend(_exclusion_notes(excluded))

    return ExperimentReport(
        config=cfg.model_dump(mode="json"),
        notes=notes,
        dataset=cfg.dataset.label,
        fractions=list(EVALUATION_FRACTIONS),
        heads=heads,
        runs=runs,
        opt_runs=opt_runs,
        relative=relative,
        weights={cfg.dataset.label: adaloss} if adaloss else {},
        excluded=excluded,
    )


# =============================================================================
# Weight evolution
# =============================================================================

def _dataset_labels(specs: Sequence[DatasetSpec]) -> List[str]:
    labels, seen = [], {}
    for spec in specs:
        label = spec.label
        seen[label] = seen.get(label, 0) + 1
        labels.append(label if seen[label] == 1 else f"{label}#{seen[label]}")
    return labels


def _evolution_job(job) -> Dict[str, Any]:
    spec, label, network, train_cfg, mixing, seed = job
    train_set, _ = _split(spec)
    net = build_network(network, train_set, seed)
    source = make_weight_source(WeightScheme.ADALOSS, net.depth, mixing)
    try:
        result = train(net, train_set, source, _seeded(train_cfg, seed), {"seed": seed, "dataset": label})
    except DivergenceError as e:
        return {"excluded": _excluded(WeightScheme.ADALOSS.value, seed, e, dataset=label)}
    return {"record": weight_record(label, seed, result.weights)}


def run_weight_evolution(cfg: ExperimentConfig) -> WeightEvolutionReport:
    """Final AdaLoss weights of identical networks trained on each dataset."""
    specs = cfg.datasets
    labels = _dataset_labels(specs)
    jobs = [
        (spec, label, cfg.network, cfg.train, cfg.mixing, seed)
        for spec, label in zip(specs, labels)
        for seed in cfg.seeds
    ]
    results = _run_jobs(_evolution_job, jobs, cfg.workers)
    records = [r["record"] for r in results if "record" in r]
    excluded = [r["excluded"] for r in results if "excluded" in r]

    notes = ["final_third_share is the weight share of the last ceil(L/3) heads."]
    if len(specs) < 2:
        notes.append("Only one dataset given; no cross-dataset comparison is possible.")
    notes.extend(_exclusion_notes(excluded))

    summary = summarize_weights(records)
    for s in summary:
        logger.info(
            f"Final-third AdaLoss weight share {s.final_third_share_mean:.4f} ± {s.final_third_share_std:.4f}",
            extra={"dataset": s.dataset},
        )
    return WeightEvolutionReport(
        config=cfg.model_dump(mode="json"),
        notes=notes,
        records=records,
        summary=summary,
        excluded=excluded,
    )


# =============================================================================
# EANN bounds
# =============================================================================

def _relative_check(name: str, expected: float, observed: float, tolerance: float) -> BoundCheck:
    passed = abs(observed - expected) <= tolerance * expected
    return BoundCheck(name=name, expected=expected, observed=observed, tolerance=tolerance, passed=passed)


def _upper_check(name: str, bound: float, observed: float, tolerance: float) -> BoundCheck:
    return BoundCheck(name=name, expected=bound, observed=observed, tolerance=tolerance, passed=observed <= bound + tolerance)


def verify_base(cfg: EannVerifyConfig, base: float) -> BaseVerification:
    spec = EannSpec(base, cfg.members, cfg.workers)
    plain = EannSpec(base, cfg.members, cfg.workers, anytime=False)
    b = spec.effective_base
    eann = simulate_inflation(spec, cfg.sampler, cfg.samples, cfg.seed, cfg.shards)
    linear = simulate_inflation(plain, cfg.sampler, cfg.samples, cfg.seed, cfg.shards)

    mean_slack = cfg.mean_tolerance
    if cfg.sampler == BudgetSampler.UNIFORM:
        # iid draws: allow three standard errors of Monte Carlo noise
        mean_slack += 3.0 * eann.mean_c_stderr
    limits = linear_ensemble_inflation(b)
    checks = [
        _relative_check("sup", sup_inflation(b), eann.sup_c, cfg.sup_tolerance),
        _upper_check("sup_bound", sup_inflation(b), eann.sup_c, 1e-9),
        _upper_check("mean_bound", expected_inflation_bound(b), eann.mean_c, mean_slack),
        _relative_check("linear_sup", limits.sup, linear.sup_c, cfg.sup_tolerance),
        _upper_check("linear_mean_limit", limits.mean_limit, linear.mean_c, cfg.linear_mean_tolerance * limits.mean_limit),
    ]
    if cfg.members >= 2:
        checks.append(
            _relative_check("linear_mean", plain_sequence_mean(plain), linear.mean_c, cfg.linear_mean_tolerance)
        )

    result = BaseVerification(base=base, effective_base=b, eann=eann, linear=linear, checks=checks)
    for c in checks:
        if not c.passed:
            logger.error(
                f"Bound check {c.name} failed: observed {c.observed:.6f}, expected {c.expected:.6f}",
                extra={"base": base},
            )
    return result


def run_eann_verification(cfg: EannVerifyConfig) -> EannVerificationReport:
    """Simulate every base and compare against the closed-form bounds."""
    results = [verify_base(cfg, base) for base in cfg.bases]
    passed = all(r.passed for r in results)
    logger.info(f"EANN verification over bases {cfg.bases}: {'passed' if passed else 'FAILED'}")
    notes = [
        "Accuracy competitiveness of members is assumed; only cost inflation geometry is verified.",
        "linear_mean compares against the exact finite-member mean; linear_mean_limit against the infinite limit.",
    ]
    return EannVerificationReport(
        config=cfg.model_dump(mode="json"),
        notes=notes,
        results=results,
        passed=passed,
    )


def run_eann_simulation(cfg: EannSimulateConfig) -> EannSimulationReport:
    """Per-budget inflation on a grid plus an illustrative gated schedule."""
    spec = EannSpec(cfg.base, cfg.members, cfg.workers, anytime=cfg.anytime)
    inflation = inflation_grid(spec, cfg.grid_points)
    _, quality = illustrate_schedule(spec, QualityCurve(cfg.tau, cfg.early_factor))
    logger.info(
        f"Simulated EANN: sup C {inflation.sup_c:.4f}, mean C {inflation.mean_c:.4f} over {cfg.grid_points} budgets",
        extra={"base": cfg.base},
    )
    return EannSimulationReport(
        config=cfg.model_dump(mode="json"),
        notes=["Quality scores come from a synthetic saturating curve, not from trained networks."],
        inflation=inflation,
        quality=quality,
    )


# =============================================================================
# Small ANN with AdaLoss vs large ANN with CONST
# =============================================================================

def _validation_errors_job(job) -> Dict[str, Any]:
    spec, network, scheme, train_cfg, mixing, seed = job
    train_set, val_set = _split(spec)
    net = build_network(network, train_set, seed)
    source = make_weight_source(scheme, net.depth, mixing)
    try:
        train(net, train_set, source, _seeded(train_cfg, seed), {"scheme": scheme.value, "seed": seed})
    except DivergenceError as e:
        return {"excluded": _excluded(scheme.value, seed, e, depth=network.depth, dataset=spec.label)}
    _, errors = evaluate(net, val_set)
    return {"errors": errors.tolist()}


def run_size_comparison(cfg: SizeComparisonConfig) -> SizeComparisonReport:
    """
    Relative validation-error increase of the large network over the small one
    at equal cost. Every transform has the same width, so cost is measured in
    transforms and equal cost means the same head index.
    """
    small_net = cfg.network
    large_net = cfg.network.model_copy(update={"depth": cfg.network.depth * cfg.size_factor})
    jobs = []
    for seed in cfg.seeds:
        jobs.append((cfg.dataset, small_net, cfg.small_scheme, cfg.train, cfg.mixing, seed))
        jobs.append((cfg.dataset, large_net, cfg.large_scheme, cfg.train, cfg.mixing, seed))
    results = _run_jobs(_validation_errors_job, jobs, 1)
    excluded = [r["excluded"] for r in results if "excluded" in r]

    pairs = [
        (small["errors"], large["errors"])
        for small, large in zip(results[0::2], results[1::2])
        if "errors" in small and "errors" in large
    ]
    n_val = len(_split(cfg.dataset)[1])
    rows = []
    for fraction in EVALUATION_FRACTIONS:
        head = fraction_to_head(fraction, small_net.depth)
        if not pairs:
            break
        small_errors = [s[head - 1] for s, _ in pairs]
        large_errors = [l[head - 1] for _, l in pairs]
        increases = [relative_increase(l, s, 1.0 / n_val) for s, l in zip(small_errors, large_errors)]
        inc_mean, inc_std = mean_std(increases)
        rows.append(
            SizeComparisonRow(
                fraction=fraction,
                cost=float(head),
                small_head=head,
                large_head=head,
                small_error=float(np.mean(small_errors)),
                large_error=float(np.mean(large_errors)),
                relative_increase_mean=inc_mean,
                relative_increase_std=inc_std,
                seeds=len(pairs),
            )
        )
    return SizeComparisonReport(
        config=cfg.model_dump(mode="json"),
        notes=[
            f"Cost fractions refer to the small network of depth {small_net.depth}.",
            "Positive relative increases mean the large network is worse at equal cost.",
            *_exclusion_notes(excluded),
        ],
        dataset=cfg.dataset.label,
        rows=rows,
        excluded=excluded,
    )


# =============================================================================
# EANN of trained members
# =============================================================================

def member_depths(base: float, members: int) -> List[int]:
    """ceil(b^k) for k = 0..N-1, rounded before the ceiling so exact powers stay exact."""
    return [max(1, math.ceil(round(base ** k, 9))) for k in range(members)]


def _member_job(job) -> Dict[str, Any]:
    cfg, scheme, seed = job
    train_set, val_set = _split(cfg.dataset)
    errors = []
    for depth in member_depths(cfg.base, cfg.members):
        network = NetworkSpec(depth=depth, width=cfg.width)
        net = build_network(network, train_set, seed)
        source = make_weight_source(scheme, depth, cfg.mixing)
        context = {"scheme": scheme.value, "seed": seed, "depth": depth}
        try:
            train(net, train_set, source, _seeded(cfg.train, seed), context)
        except DivergenceError as e:
            return {"excluded": _excluded(scheme.value, seed, e, depth=depth, dataset=cfg.dataset.label)}
        _, val_errors = evaluate(net, val_set)
        errors.append(val_errors.tolist())
    return {"errors": errors}


def anytime_errors(depths: Sequence[int], member_errors: Sequence[Sequence[float]]) -> List[float]:
    """
    Validation error of the gated ensemble at every whole budget. Member k's
    head h is available at cost (sum of earlier depths) + h and is published
    only if its accuracy beats every earlier published output.
    """
    outputs, offset = [], 0
    for depth, errors in zip(depths, member_errors):
        for h in range(1, depth + 1):
            outputs.append((float(offset + h), 1.0 - errors[h - 1], errors[h - 1]))
        offset += depth
    schedule = gated_anytime_outputs(outputs)
    return [schedule.at(float(budget)) for budget in range(1, offset + 1)]


def run_eann_ensemble(cfg: EannEnsembleConfig) -> EannEnsembleReport:
    depths = member_depths(cfg.base, cfg.members)
    jobs = [(cfg, scheme, seed) for scheme in cfg.schemes for seed in cfg.seeds]
    results = _run_jobs(_member_job, jobs, 1)

    members, excluded = [], []
    curves: Dict[str, List[List[float]]] = {}
    for (_, scheme, seed), result in zip(jobs, results):
        if "excluded" in result:
            excluded.append(result["excluded"])
            continue
        for k, (depth, errors) in enumerate(zip(depths, result["errors"])):
            members.append(
                MemberErrors(scheme=scheme.value, seed=seed, member=k + 1, depth=depth, validation_errors=errors)
            )
        curves.setdefault(scheme.value, []).append(anytime_errors(depths, result["errors"]))

    schedule = []
    for scheme, runs in curves.items():
        per_budget = np.asarray(runs)
        for budget in range(per_budget.shape[1]):
            mean, std = mean_std(per_budget[:, budget])
            schedule.append(
                EnsemblePoint(scheme=scheme, budget=float(budget + 1), error_mean=mean, error_std=std, seeds=len(runs))
            )
    return EannEnsembleReport(
        config=cfg.model_dump(mode="json"),
        notes=[
            "Outputs are gated on the same validation split that the errors are reported on.",
            *_exclusion_notes(excluded),
        ],
        dataset=cfg.dataset.label,
        member_depths=depths,
        members=members,
        schedule=schedule,
        excluded=excluded,
    )


# =============================================================================
# Single training run
# =============================================================================

def run_training(cfg: ExperimentConfig, checkpoint_path: Optional[str] = None) -> TrainingReport:
    """
    Train one network with the first configured scheme and seed.

    Raises:
        DivergenceError: the run diverged; there is nothing to exclude it from.
    """
    scheme, seed = cfg.schemes[0], cfg.seeds[0]
    train_set, val_set = _split(cfg.dataset)
    net = build_network(cfg.network, train_set, seed)
    source = make_weight_source(scheme, net.depth, cfg.mixing)
    result = train(net, train_set, source, _seeded(cfg.train, seed), {"scheme": scheme.value, "seed": seed})

    train_losses, _ = evaluate(net, train_set)
    val_losses, val_errors = evaluate(net, val_set)
    saved = str(save_checkpoint(net, checkpoint_path)) if checkpoint_path else None
    return TrainingReport(
        config=cfg.model_dump(mode="json"),
        dataset=cfg.dataset.label,
        scheme=scheme.value,
        checkpoint=saved,
        loss_history=[h.tolist() for h in result.loss_history],
        final_weights=result.weights.to_list() if result.weights is not None else [],
        train_losses=train_losses.tolist(),
        validation_losses=val_losses.tolist(),
        validation_errors=val_errors.tolist(),
    )
