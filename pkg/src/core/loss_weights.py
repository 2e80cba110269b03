"""
Loss weight schemes for anytime networks.

A network with L auxiliary heads is trained on the weighted sum
sum_i B_i * loss_i. This module produces the weight vectors B:

- static schemes (CONST, LINEAR, HALF_END) that only depend on L
- AdaLoss, which keeps an exponential moving average of every head's loss
  and sets B_i proportional to the inverse of that average, scaled so that
  the largest weight is 1 and optionally mixed with constant weights.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.core.config import EMA_DECAY
from src.core.errors import ContractViolation, DomainError, TrackerNotWarmedUp
from src.schemas.experiment import MixingConfig, WeightScheme

# Observed losses are clamped to this floor so that 1 / ema stays finite
LOSS_FLOOR = 1e-12


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    scheme: WeightScheme

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ContractViolation("weight vector must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(w)):
            bad = int(np.flatnonzero(~np.isfinite(w))[0])
            raise DomainError(f"weight {bad} is not finite", index=bad)
        if np.any(w < 0):
            bad = int(np.flatnonzero(w < 0)[0])
            raise DomainError(f"weight {bad} is negative ({w[bad]})", index=bad)
        if not np.any(w > 0):
            raise DomainError("at least one weight must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return int(self.weights.size)

    def to_list(self) -> list:
        return [float(x) for x in self.weights]


@dataclass
class LossTracker:
    """Exponential moving averages of the per-head training losses."""
    num_heads: int
    decay: float = EMA_DECAY
    ema: np.ndarray = field(init=False)
    initialized: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.num_heads < 1:
            raise ContractViolation("a loss tracker needs at least one head")
        if not 0.0 < self.decay < 1.0:
            raise DomainError(f"EMA decay must lie in (0, 1), got {self.decay}")
        self.ema = np.zeros(self.num_heads, dtype=np.float64)

    def update(self, observed: Sequence[float]) -> "LossTracker":
        obs = np.asarray(observed, dtype=np.float64)
        if obs.shape != (self.num_heads,):
            raise ContractViolation(
                f"expected {self.num_heads} observed losses, got shape {obs.shape}"
            )
        for i, value in enumerate(obs):
            if not math.isfinite(value) or value < 0:
                raise DomainError(f"observed loss for head {i} is invalid: {value}", index=i)
        obs = np.maximum(obs, LOSS_FLOOR)

        if not self.initialized:
            self.ema = obs.copy()
            self.initialized = True
        else:
            self.ema = self.decay * self.ema + (1.0 - self.decay) * obs
        return self


def update_ema(tracker: LossTracker, observed: Sequence[float]) -> LossTracker:
    """Fold one batch of per-head losses into the tracker (mutates and returns it)."""
    return tracker.update(observed)


def adaloss_weights(tracker: LossTracker, mix: MixingConfig, gamma: Optional[float] = None) -> WeightVector:
    """
    AdaLoss weights from the tracked losses.

    With alpha = min_i ema_i, returns B_i = alpha * (1 - gamma) / ema_i + gamma,
    then multiplies the final entry by `mix.final_multiplier`.

    Args:
        tracker: a warmed-up loss tracker
        mix: mixing configuration
        gamma: overrides `mix.gamma` (used by annealing schedules)
    """
    if not tracker.initialized:
        raise TrackerNotWarmedUp(
            "loss tracker has no observations yet; call update_ema with one batch of losses first"
        )
    g = mix.gamma if gamma is None else gamma
    if not 0.0 <= g <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {g}")

    ema = tracker.ema
    alpha = float(np.min(ema))
    weights = alpha * (1.0 - g) / ema + g
    weights[-1] *= mix.final_multiplier
    return WeightVector(weights, WeightScheme.ADALOSS)


def static_weights(scheme: WeightScheme, num_heads: int) -> WeightVector:
    """Weights of the non-adaptive schemes for L = num_heads heads."""
    L = num_heads
    if L < 1:
        raise ContractViolation("number of heads must be positive")

    if scheme == WeightScheme.CONST:
        return WeightVector(np.ones(L), scheme)

    if scheme in (WeightScheme.LINEAR, WeightScheme.HALF_END) and L == 1:
        raise DomainError(f"{scheme.value} needs at least two heads")

    if scheme == WeightScheme.LINEAR:
        return WeightVector(0.25 + 0.75 * np.arange(L) / (L - 1), scheme)

    if scheme == WeightScheme.HALF_END:
        # total mass L, half of it on the final head
        weights = np.full(L, L / (2.0 * (L - 1)))
        weights[-1] = L / 2.0
        return WeightVector(weights, scheme)

    raise ContractViolation(f"{scheme.value} is not a static weight scheme")


def one_hot_weights(head: int, num_heads: int) -> WeightVector:
    """All weight on one head (1-based), as used to train OPT baselines."""
    if not 1 <= head <= num_heads:
        raise ContractViolation(f"head {head} out of range 1..{num_heads}")
    weights = np.zeros(num_heads)
    weights[head - 1] = 1.0
    return WeightVector(weights, WeightScheme.OPT)


def final_share(weights: WeightVector, fraction: float = 1.0 / 3.0) -> float:
    """Share of the total weight on the last ceil(fraction * L) heads."""
    w = weights.weights
    tail = max(1, math.ceil(round(fraction * w.size, 9)))
    return float(np.sum(w[-tail:]) / np.sum(w))
