"""
Anytime neural network with one auxiliary head per feature transform.

    x_0 = inputs
    x_i = relu(x_{i-1} W_i + b_i)        feature transform f_i
    y_i = x_i V_i + c_i                  head g_i, prediction at depth i

Everything is float64 numpy. Gradients are written out by hand; the
finite-difference check in this module is the reference they are tested
against.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import logsumexp, softmax

from src.core.errors import ContractViolation, DivergenceError
from src.core.loss_weights import WeightVector
from src.schemas.experiment import LossKind

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

GradientSet = Dict[str, np.ndarray]


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy())


@dataclass
class AnytimeNetwork:
    transforms: List[Layer]
    heads: List[Layer]
    loss_kind: LossKind = LossKind.CROSS_ENTROPY

    def __post_init__(self):
        if not self.transforms:
            raise ContractViolation("an anytime network needs at least one transform")
        if len(self.transforms) != len(self.heads):
            raise ContractViolation(
                f"{len(self.transforms)} transforms but {len(self.heads)} heads"
            )
        prev = self.transforms[0].weight.shape[0]
        out = self.heads[0].weight.shape[1]
        for i, (f, g) in enumerate(zip(self.transforms, self.heads), start=1):
            if f.weight.shape[0] != prev or f.bias.shape != (f.weight.shape[1],):
                raise ContractViolation(f"transform {i} does not chain with the previous layer")
            if g.weight.shape != (f.weight.shape[1], out) or g.bias.shape != (out,):
                raise ContractViolation(f"head {i} does not fit its feature map or the output dim")
            prev = f.weight.shape[1]

    @property
    def depth(self) -> int:
        return len(self.transforms)

    @property
    def input_dim(self) -> int:
        return self.transforms[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.heads[0].weight.shape[1]

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        """(name, array) pairs in a fixed order; the arrays are the live parameters."""
        params = []
        for i, f in enumerate(self.transforms, start=1):
            params.append((f"transform{i}.weight", f.weight))
            params.append((f"transform{i}.bias", f.bias))
        for i, g in enumerate(self.heads, start=1):
            params.append((f"head{i}.weight", g.weight))
            params.append((f"head{i}.bias", g.bias))
        return params

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def copy(self) -> "AnytimeNetwork":
        return AnytimeNetwork(
            [f.copy() for f in self.transforms], [g.copy() for g in self.heads], self.loss_kind
        )


def create_network(
    input_dim: int,
    width: int,
    output_dim: int,
    depth: int,
    loss_kind: LossKind = LossKind.CROSS_ENTROPY,
    seed: int = 0,
) -> AnytimeNetwork:
    """
    Fully connected anytime network with uniform initialization of variance
    2 / fan_in and zero biases. Layers are drawn in the order f_1, g_1, f_2,
    g_2, ... so a shallower network with the same seed is an exact prefix.
    """
    rng = np.random.default_rng(seed)

    def init(fan_in: int, fan_out: int) -> Layer:
        limit = np.sqrt(6.0 / fan_in)
        return Layer(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out))

    transforms, heads = [], []
    prev = input_dim
    for _ in range(depth):
        transforms.append(init(prev, width))
        heads.append(init(width, output_dim))
        prev = width
    return AnytimeNetwork(transforms, heads, loss_kind)


def truncated(net: AnytimeNetwork, depth: int) -> AnytimeNetwork:
    """Copy of the first `depth` transforms and heads."""
    if not 1 <= depth <= net.depth:
        raise ContractViolation(f"depth {depth} out of range 1..{net.depth}")
    return AnytimeNetwork(
        [f.copy() for f in net.transforms[:depth]],
        [g.copy() for g in net.heads[:depth]],
        net.loss_kind,
    )


# =============================================================================
# Forward
# =============================================================================

@dataclass
class FlopCounter:
    """Multiply-add count and names of the layers a forward pass touched."""
    flops: int = 0
    touched: List[str] = field(default_factory=list)

    def record(self, name: str, batch: int, layer: Layer):
        fan_in, fan_out = layer.weight.shape
        self.flops += batch * fan_in * fan_out
        self.touched.append(name)


def _check_inputs(net: AnytimeNetwork, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ContractViolation(
            f"inputs of shape {x.shape} do not match input dim {net.input_dim}"
        )
    return x


def _transform(layer: Layer, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    z = x @ layer.weight + layer.bias
    return z, np.maximum(z, 0.0)


def _head(layer: Layer, x: np.ndarray) -> np.ndarray:
    return x @ layer.weight + layer.bias


def forward_all(net: AnytimeNetwork, inputs, counter: Optional[FlopCounter] = None) -> List[np.ndarray]:
    """Predictions of every head, computed in one pass."""
    x = _check_inputs(net, inputs)
    preds = []
    for i, (f, g) in enumerate(zip(net.transforms, net.heads), start=1):
        if counter is not None:
            counter.record(f"transform{i}", x.shape[0], f)
        _, x = _transform(f, x)
        if counter is not None:
            counter.record(f"head{i}", x.shape[0], g)
        preds.append(_head(g, x))
    return preds


def forward_until(net: AnytimeNetwork, inputs, depth: int, counter: Optional[FlopCounter] = None) -> np.ndarray:
    """Prediction of head `depth` (1-based), computing only f_1..f_depth and g_depth."""
    if not 1 <= depth <= net.depth:
        raise ContractViolation(f"depth {depth} out of range 1..{net.depth}")
    x = _check_inputs(net, inputs)
    for i in range(depth):
        f = net.transforms[i]
        if counter is not None:
            counter.record(f"transform{i + 1}", x.shape[0], f)
        _, x = _transform(f, x)
    g = net.heads[depth - 1]
    if counter is not None:
        counter.record(f"head{depth}", x.shape[0], g)
    return _head(g, x)


# =============================================================================
# Losses
# =============================================================================

def _check_targets(targets, loss_kind: LossKind, batch: int, output_dim: int) -> np.ndarray:
    if loss_kind == LossKind.CROSS_ENTROPY:
        t = np.asarray(targets)
        if t.shape != (batch,) or not np.issubdtype(t.dtype, np.integer):
            raise ContractViolation(f"cross-entropy targets must be {batch} class indices")
        if np.any(t < 0) or np.any(t >= output_dim):
            raise ContractViolation(f"class index outside 0..{output_dim - 1}")
        return t
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1 and output_dim == 1:
        t = t[:, None]
    if t.shape != (batch, output_dim):
        raise ContractViolation(f"square-loss targets must have shape {(batch, output_dim)}, got {t.shape}")
    return t


def _head_loss(pred: np.ndarray, targets: np.ndarray, loss_kind: LossKind) -> float:
    if loss_kind == LossKind.CROSS_ENTROPY:
        rows = np.arange(pred.shape[0])
        return float(np.mean(logsumexp(pred, axis=1) - pred[rows, targets]))
    return float(np.mean(np.sum((targets - pred) ** 2, axis=1)))


def compute_losses(predictions: Sequence[np.ndarray], targets, loss_kind: LossKind) -> np.ndarray:
    """Per-head mean loss over the batch."""
    if not predictions:
        raise ContractViolation("no predictions given")
    batch, out = predictions[0].shape
    t = _check_targets(targets, loss_kind, batch, out)
    losses = np.empty(len(predictions))
    for i, pred in enumerate(predictions):
        if pred.shape != (batch, out):
            raise ContractViolation(f"prediction {i + 1} has shape {pred.shape}, expected {(batch, out)}")
        if not np.all(np.isfinite(pred)):
            raise DivergenceError(f"prediction of head {i + 1} is not finite", layer=i + 1)
        losses[i] = _head_loss(pred, t, loss_kind)
    return losses


def error_rates(predictions: Sequence[np.ndarray], targets, loss_kind: LossKind) -> np.ndarray:
    """Classification error per head, or the mean squared residual for square loss."""
    if loss_kind == LossKind.SQUARE:
        return compute_losses(predictions, targets, loss_kind)
    t = np.asarray(targets)
    return np.array([float(np.mean(np.argmax(p, axis=1) != t)) for p in predictions])


# =============================================================================
# Backward
# =============================================================================

@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: List[np.ndarray]
    features: List[np.ndarray]
    predictions: List[np.ndarray]


def forward_cached(net: AnytimeNetwork, inputs) -> ForwardCache:
    x = _check_inputs(net, inputs)
    cache = ForwardCache(x, [], [], [])
    for f, g in zip(net.transforms, net.heads):
        z, x = _transform(f, x)
        cache.pre_activations.append(z)
        cache.features.append(x)
        cache.predictions.append(_head(g, x))
    return cache


def _output_grad(pred: np.ndarray, targets: np.ndarray, loss_kind: LossKind) -> np.ndarray:
    """d(mean loss)/d(pred) for one head."""
    n = pred.shape[0]
    if loss_kind == LossKind.CROSS_ENTROPY:
        grad = softmax(pred, axis=1)
        grad[np.arange(n), targets] -= 1.0
        return grad / n
    return 2.0 * (pred - targets) / n


def backward_from_cache(
    net: AnytimeNetwork, cache: ForwardCache, targets, weights: WeightVector
) -> GradientSet:
    """Gradients of sum_i B_i * loss_i for a forward pass that was already computed."""
    if len(weights) != net.depth:
        raise ContractViolation(f"{len(weights)} weights for {net.depth} heads")
    n = cache.inputs.shape[0]
    t = _check_targets(targets, net.loss_kind, n, net.output_dim)
    B = weights.weights

    grads: GradientSet = {}
    upstream = None  # d objective / d x_i coming from f_{i+1}
    for i in reversed(range(net.depth)):
        layer_no = i + 1
        g = net.heads[i]
        x_i = cache.features[i]
        if B[i] != 0.0:
            dy = B[i] * _output_grad(cache.predictions[i], t, net.loss_kind)
        else:
            dy = np.zeros_like(cache.predictions[i])
        grads[f"head{layer_no}.weight"] = x_i.T @ dy
        grads[f"head{layer_no}.bias"] = dy.sum(axis=0)

        dx = dy @ g.weight.T
        if upstream is not None:
            dx = dx + upstream
        dz = dx * (cache.pre_activations[i] > 0)
        if not np.all(np.isfinite(dz)):
            raise DivergenceError(f"non-finite gradient at transform {layer_no}", layer=layer_no)

        x_prev = cache.features[i - 1] if i > 0 else cache.inputs
        f = net.transforms[i]
        grads[f"transform{layer_no}.weight"] = x_prev.T @ dz
        grads[f"transform{layer_no}.bias"] = dz.sum(axis=0)
        upstream = dz @ f.weight.T
    return grads


def backward_weighted(net: AnytimeNetwork, inputs, targets, weights: WeightVector) -> GradientSet:
    """Exact gradients of the weighted objective sum_i B_i * loss_i w.r.t. every parameter."""
    cache = forward_cached(net, inputs)
    return backward_from_cache(net, cache, targets, weights)


def weighted_objective(net: AnytimeNetwork, inputs, targets, weights: WeightVector) -> float:
    losses = compute_losses(forward_all(net, inputs), targets, net.loss_kind)
    return float(np.dot(weights.weights, losses))


# =============================================================================
# Finite-difference gradient check
# =============================================================================

@dataclass
class GradientCheckResult:
    max_relative_error: float
    checked: int
    skipped_kinks: int
    worst_parameter: Optional[str] = None
    # both gradients below flat_tolerance: roundoff dominates the difference quotient
    skipped_flat: int = 0


def _activation_pattern(net: AnytimeNetwork, inputs: np.ndarray) -> List[np.ndarray]:
    return [z > 0 for z in forward_cached(net, inputs).pre_activations]


def _same_pattern(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_check(
    net: AnytimeNetwork,
    inputs,
    targets,
    weights: WeightVector,
    epsilon: float = 1e-5,
    gradients: Optional[GradientSet] = None,
    max_full: int = 5000,
    sample_size: int = 500,
    seed: int = 0,
    skip_kinks: bool = True,
    flat_tolerance: float = 0.0,
) -> GradientCheckResult:
    """
    Compare analytic gradients with central differences of the weighted objective.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8). Networks
    with more than `max_full` parameters are checked on a random subsample of
    `sample_size` coordinates. A coordinate whose +/- epsilon perturbation
    changes any ReLU activation is skipped when `skip_kinks` is set, since the
    objective is not differentiable across the kink. A positive
    `flat_tolerance` also skips coordinates where both the analytic and the
    numeric value fall below it; the default compares every coordinate, so a
    head with a tiny weight still counts.

    Args:
        gradients: gradient set to check; defaults to backward_weighted's
    """
    if not epsilon > 0:
        raise ContractViolation("epsilon must be positive")
    x = _check_inputs(net, inputs)
    if gradients is None:
        gradients = backward_weighted(net, x, targets, weights)

    work = net.copy()
    params = work.parameters()
    coords = [(name, idx) for name, p in params for idx in range(p.size)]
    if len(coords) > max_full:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=max(200, min(sample_size, len(coords))), replace=False)
        coords = [coords[k] for k in sorted(picks)]

    base_pattern = _activation_pattern(work, x) if skip_kinks else None
    lookup = dict(params)
    worst, worst_name, checked, skipped, flat = 0.0, None, 0, 0, 0
    for name, idx in coords:
        p = lookup[name]
        original = p.flat[idx]

        p.flat[idx] = original + epsilon
        plus = weighted_objective(work, x, targets, weights)
        plus_pattern = _activation_pattern(work, x) if skip_kinks else None
        p.flat[idx] = original - epsilon
        minus = weighted_objective(work, x, targets, weights)
        minus_pattern = _activation_pattern(work, x) if skip_kinks else None
        p.flat[idx] = original

        if skip_kinks and not (
            _same_pattern(base_pattern, plus_pattern) and _same_pattern(base_pattern, minus_pattern)
        ):
            skipped += 1
            continue

        numeric = (plus - minus) / (2.0 * epsilon)
        analytic = float(gradients[name].flat[idx])
        if max(abs(analytic), abs(numeric)) < flat_tolerance:
            flat += 1
            continue
        denom = max(abs(analytic), abs(numeric), 1e-8)
        err = abs(analytic - numeric) / denom
        checked += 1
        if err > worst:
            worst, worst_name = err, f"{name}[{idx}]"

    if skipped:
        logger.debug(f"Gradient check skipped {skipped} coordinates at ReLU kinks")
    return GradientCheckResult(worst, checked, skipped, worst_name, flat)


# =============================================================================
# Checkpoints
# =============================================================================

class NetworkCheckpoint(BaseModel):
    format_version: int = Field(default=CHECKPOINT_FORMAT_VERSION)
    loss_kind: LossKind
    input_dim: int
    width: int
    output_dim: int
    depth: int
    parameters: Dict[str, List[float]]


def save_checkpoint(net: AnytimeNetwork, path) -> Path:
    path = Path(path)
    doc = NetworkCheckpoint(
        loss_kind=net.loss_kind,
        input_dim=net.input_dim,
        width=net.transforms[0].weight.shape[1],
        output_dim=net.output_dim,
        depth=net.depth,
        parameters={name: [float(v) for v in p.ravel()] for name, p in net.parameters()},
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    # format_version first so readers can dispatch before parsing the rest
    path.write_text(json.dumps(doc.model_dump(mode="json"), indent=None))
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(path) -> AnytimeNetwork:
    doc = NetworkCheckpoint.model_validate_json(Path(path).read_text())
    if doc.format_version != CHECKPOINT_FORMAT_VERSION:
        raise ContractViolation(f"unsupported checkpoint format version {doc.format_version}")
    net = create_network(doc.input_dim, doc.width, doc.output_dim, doc.depth, doc.loss_kind)
    for name, p in net.parameters():
        values = doc.parameters.get(name)
        if values is None or len(values) != p.size:
            raise ContractViolation(f"checkpoint parameter {name} is missing or has the wrong size")
        p[...] = np.asarray(values, dtype=np.float64).reshape(p.shape)
    return net
