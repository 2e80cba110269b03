"""
SGD training of anytime networks under a loss weight scheme.

A weight source decides the weights for every step. Static sources return a
fixed vector; the AdaLoss source folds the batch losses into its tracker and
recomputes the weights, so one step runs

    forward -> compute_losses -> update_ema -> adaloss_weights
            -> backward_weighted -> sgd step
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple, Union

import numpy as np

from src.core.anytime_net import (
    AnytimeNetwork,
    GradientSet,
    backward_from_cache,
    compute_losses,
    create_network,
    error_rates,
    forward_all,
    forward_cached,
    truncated,
)
from src.core.datasets import Dataset
from src.core.errors import ContractViolation, DivergenceError
from src.core.loss_weights import (
    LossTracker,
    WeightVector,
    adaloss_weights,
    one_hot_weights,
    static_weights,
    update_ema,
)
from src.schemas.experiment import LossKind, MixingConfig, NetworkSpec, TrainConfig, WeightScheme

logger = logging.getLogger(__name__)


# =============================================================================
# Weight sources
# =============================================================================

@dataclass
class StaticWeights:
    vector: WeightVector

    def weights_for(self, losses: np.ndarray, epoch_progress: float) -> WeightVector:
        return self.vector

    @property
    def scheme(self) -> WeightScheme:
        return self.vector.scheme


@dataclass
class AdaptiveWeights:
    """AdaLoss: a loss tracker plus its mixing configuration, updated every batch."""
    tracker: LossTracker
    mix: MixingConfig

    def weights_for(self, losses: np.ndarray, epoch_progress: float) -> WeightVector:
        update_ema(self.tracker, losses)
        return adaloss_weights(self.tracker, self.mix, gamma=self.mix.gamma_at(epoch_progress))

    @property
    def scheme(self) -> WeightScheme:
        return WeightScheme.ADALOSS


WeightSource = Union[StaticWeights, AdaptiveWeights]


def make_weight_source(scheme: WeightScheme, num_heads: int, mix: Optional[MixingConfig] = None) -> WeightSource:
    mix = mix or MixingConfig()
    if scheme == WeightScheme.ADALOSS:
        return AdaptiveWeights(LossTracker(num_heads, decay=mix.decay), mix)
    return StaticWeights(static_weights(scheme, num_heads))


# =============================================================================
# Optimizer
# =============================================================================

class SGD:
    """Momentum SGD; weight decay applies to weight matrices, not to biases."""

    def __init__(self, net: AnytimeNetwork, learning_rate: float, momentum: float, weight_decay: float):
        self.net = net
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {
            name: np.zeros_like(p) for name, p in net.parameters()
        }

    def step(self, grads: GradientSet, reached: Optional[Set[str]] = None):
        """Update the parameters named in `reached` (all of them when None); the rest stay untouched."""
        for name, p in self.net.parameters():
            if reached is not None and name not in reached:
                continue
            g = grads[name]
            if self.weight_decay and name.endswith(".weight"):
                g = g + self.weight_decay * p
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p -= self.learning_rate * v


def reached_parameters(net: AnytimeNetwork, weights: WeightVector) -> Set[str]:
    """Names of the parameters on a path to some head with nonzero weight."""
    w = np.asarray(weights.weights)
    reached = set()
    for i in range(1, net.depth + 1):
        if np.any(w[i - 1:] != 0.0):
            reached.update((f"transform{i}.weight", f"transform{i}.bias"))
        if w[i - 1] != 0.0:
            reached.update((f"head{i}.weight", f"head{i}.bias"))
    return reached


# =============================================================================
# Training loop
# =============================================================================

@dataclass
class TrainResult:
    net: AnytimeNetwork
    weights: Optional[WeightVector]
    # per epoch: mean batch losses per head
    loss_history: List[np.ndarray] = field(default_factory=list)
    # per epoch: AdaLoss EMA at the end of the epoch (empty for static schemes)
    ema_history: List[np.ndarray] = field(default_factory=list)
    # per epoch: mean weighted objective over the batches
    objective_history: List[float] = field(default_factory=list)


def train(
    net: AnytimeNetwork,
    dataset: Dataset,
    source: Union[WeightSource, WeightVector],
    cfg: TrainConfig,
    log_context: Optional[dict] = None,
) -> TrainResult:
    """
    Train `net` in place with momentum SGD on the weighted objective.

    Raises:
        DivergenceError: a loss became non-finite; carries the epoch and step.
    """
    if len(dataset) == 0:
        raise ContractViolation("cannot train on an empty dataset")
    if isinstance(source, WeightVector):
        source = StaticWeights(source)

    context = dict(log_context or {})
    context.setdefault("scheme", source.scheme.value)
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(net, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    steps_per_epoch = -(-len(dataset) // cfg.batch_size)
    result = TrainResult(net=net, weights=None)

    weights = None
    for epoch in range(cfg.epochs):
        opt.learning_rate = cfg.learning_rate_at(epoch)
        loss_sum = np.zeros(net.depth)
        objective_sum = 0.0
        count = 0
        for step, (xb, yb) in enumerate(dataset.batches(cfg.batch_size, rng)):
            try:
                cache = forward_cached(net, xb)
                losses = compute_losses(cache.predictions, yb, net.loss_kind)
            except DivergenceError as e:
                raise DivergenceError(f"training diverged at epoch {epoch}, step {step}: {e}", epoch, step, e.layer)
            if not np.all(np.isfinite(losses)):
                raise DivergenceError(f"training diverged at epoch {epoch}, step {step}", epoch, step)

            weights = source.weights_for(losses, epoch + step / steps_per_epoch)
            try:
                grads = backward_from_cache(net, cache, yb, weights)
            except DivergenceError as e:
                raise DivergenceError(f"training diverged at epoch {epoch}, step {step}: {e}", epoch, step, e.layer)
            opt.step(grads, reached_parameters(net, weights))

            loss_sum += losses * len(yb)
            objective_sum += float(np.dot(weights.weights, losses)) * len(yb)
            count += len(yb)

        result.loss_history.append(loss_sum / count)
        result.objective_history.append(objective_sum / count)
        if isinstance(source, AdaptiveWeights):
            result.ema_history.append(source.tracker.ema.copy())
        logger.debug(
            f"epoch {epoch + 1}/{cfg.epochs} objective {objective_sum / count:.5f} "
            f"final-head loss {loss_sum[-1] / count:.5f}",
            extra={**context, "epoch": epoch + 1},
        )

    result.weights = weights
    logger.info(
        f"Finished training: final objective {result.objective_history[-1]:.5f}, "
        f"head losses {np.round(result.loss_history[-1], 4).tolist()}",
        extra=context,
    )
    return result


def evaluate(net: AnytimeNetwork, dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Per-head mean loss and error on the whole dataset."""
    preds = forward_all(net, dataset.inputs)
    return (
        compute_losses(preds, dataset.targets, net.loss_kind),
        error_rates(preds, dataset.targets, net.loss_kind),
    )


def build_network(spec: NetworkSpec, dataset: Dataset, seed: int, depth: Optional[int] = None) -> AnytimeNetwork:
    out = dataset.num_classes if spec.loss_kind == LossKind.CROSS_ENTROPY else dataset.targets.shape[1]
    return create_network(dataset.input_dim, spec.width, out, depth or spec.depth, spec.loss_kind, seed)


@dataclass
class OptBaseline:
    depth: int
    net: AnytimeNetwork
    train_loss: float
    result: TrainResult


def train_opt_baseline(
    dataset: Dataset,
    depth: int,
    cfg: TrainConfig,
    spec: NetworkSpec,
    seed: Optional[int] = None,
    log_context: Optional[dict] = None,
) -> OptBaseline:
    """
    OPT reference at head `depth`: all weight on that head.

    Heads and transforms past `depth` never receive gradient under a one-hot
    weight, so the baseline trains the prefix network of that depth, drawn
    from the same initialization as the full network.
    """
    if not 1 <= depth <= spec.depth:
        raise ContractViolation(f"OPT depth {depth} out of range 1..{spec.depth}")
    seed = cfg.seed if seed is None else seed
    net = truncated(build_network(spec, dataset, seed), depth)
    context = {**(log_context or {}), "scheme": WeightScheme.OPT.value, "depth": depth}
    result = train(net, dataset, one_hot_weights(depth, depth), cfg, context)
    losses, _ = evaluate(net, dataset)
    return OptBaseline(depth, net, float(losses[-1]), result)
