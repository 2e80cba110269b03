"""
Objective family behind adaptive loss weighting.

- weighted sum of per-head losses
- Gaussian likelihood of square-loss heads and its variance maximizer
- joint objective over weights with log-barriers, whose optimal weights are
  lambda / loss_i
- sum of log losses (log of the geometric mean), whose gradient is the
  1 / loss_i weighted sum of head gradients
- its arithmetic-mean regularized variant, whose gradient weights are the
  mixed AdaLoss weights

All functions are pure and work on float64 numpy arrays.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from src.core.errors import ContractViolation, DomainError
from src.core.loss_weights import WeightVector
from src.schemas.experiment import BarrierConfig, WeightScheme


@dataclass(frozen=True)
class LossVector:
    """Strictly positive, finite per-head losses."""
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ContractViolation("loss vector must be a non-empty 1-D sequence")
        for i, x in enumerate(v):
            if not np.isfinite(x) or x <= 0:
                raise DomainError(f"loss for head {i} must be finite and positive, got {x}", index=i)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.size)

    def to_list(self) -> list:
        return [float(x) for x in self.values]


LossLike = Union[LossVector, Sequence[float], np.ndarray]
WeightLike = Union[WeightVector, Sequence[float], np.ndarray]


def _losses(losses: LossLike) -> np.ndarray:
    if isinstance(losses, LossVector):
        return losses.values
    return LossVector(losses).values


def _weights(weights: WeightLike) -> np.ndarray:
    if isinstance(weights, WeightVector):
        return weights.weights
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ContractViolation("weights must be a 1-D sequence")
    return w


def _same_length(w: np.ndarray, l: np.ndarray):
    if w.size != l.size:
        raise ContractViolation(f"{w.size} weights for {l.size} losses")


def weighted_sum(weights: WeightLike, losses: LossLike) -> float:
    w, l = _weights(weights), _losses(losses)
    _same_length(w, l)
    return float(np.dot(w, l))


def barrier_objective(weights: WeightLike, losses: LossLike, cfg: Optional[BarrierConfig] = None) -> float:
    """sum_i (B_i * l_i - lambda * ln B_i); every B_i must be positive."""
    cfg = cfg or BarrierConfig()
    w, l = _weights(weights), _losses(losses)
    _same_length(w, l)
    for i, b in enumerate(w):
        if not b > 0:
            raise DomainError(f"log-barrier needs positive weights; weight {i} is {b}", index=i)
    return float(np.sum(w * l - cfg.lam * np.log(w)))


def optimal_barrier_weights(losses: LossLike, cfg: Optional[BarrierConfig] = None) -> WeightVector:
    """Minimizer of the barrier objective over the weights: B_i = lambda / l_i."""
    cfg = cfg or BarrierConfig()
    return WeightVector(cfg.lam / _losses(losses), WeightScheme.RECIPROCAL)


def optimal_barrier_value(losses: LossLike, cfg: Optional[BarrierConfig] = None) -> float:
    """Closed form of the barrier objective at its optimal weights."""
    cfg = cfg or BarrierConfig()
    l = _losses(losses)
    lam = cfg.lam
    return float(lam * np.sum(np.log(l)) + l.size * lam * (1.0 - np.log(lam)))


def geometric_mean_objective(losses: LossLike) -> float:
    """sum_i ln l_i, i.e. L times the log of the geometric mean."""
    return float(np.sum(np.log(_losses(losses))))


def geometric_mean_gradient_weights(losses: LossLike) -> WeightVector:
    """Weights 1 / l_i under which sum_i B_i grad l_i is the gradient of sum_i ln l_i."""
    return WeightVector(1.0 / _losses(losses), WeightScheme.RECIPROCAL)


def weighted_geometric_mean_objective(losses: LossLike, exponents: Sequence[float]) -> float:
    """sum_i w_i ln l_i, the objective behind giving the final head extra weight."""
    l = _losses(losses)
    w = np.asarray(exponents, dtype=np.float64)
    _same_length(w, l)
    return float(np.dot(w, np.log(l)))


def mixed_objective(losses: LossLike, alpha: float, gamma: float) -> float:
    """sum_i (alpha (1 - gamma) ln l_i + gamma l_i): log objective regularized by the arithmetic mean."""
    _check_mixing(alpha, gamma)
    l = _losses(losses)
    return float(np.sum(alpha * (1.0 - gamma) * np.log(l) + gamma * l))


def mixed_objective_gradient_weights(losses: LossLike, alpha: float, gamma: float) -> WeightVector:
    """d/dl_i of the mixed objective: alpha (1 - gamma) / l_i + gamma."""
    _check_mixing(alpha, gamma)
    l = _losses(losses)
    return WeightVector(alpha * (1.0 - gamma) / l + gamma, WeightScheme.RECIPROCAL)


def _check_mixing(alpha: float, gamma: float):
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")


# =============================================================================
# Gaussian likelihood view of square losses
# =============================================================================

def gaussian_mle_sigma(mean_squared_residuals: LossLike) -> LossVector:
    """Per-head variances maximizing the likelihood: sigma_i^2 equals the mean squared residual."""
    return LossVector(_losses(mean_squared_residuals))


def gaussian_log_likelihood(mean_squared_residuals: LossLike, sigmas: Sequence[float]) -> float:
    """
    sum_i (-r_i / s_i - ln s_i), with r the mean squared residuals and s the
    variances. Additive and multiplicative constants of the full likelihood
    are dropped.
    """
    r = _losses(mean_squared_residuals)
    s = np.asarray(sigmas.values if isinstance(sigmas, LossVector) else sigmas, dtype=np.float64)
    _same_length(s, r)
    for i, x in enumerate(s):
        if not np.isfinite(x) or x <= 0:
            raise DomainError(f"variance {i} must be positive, got {x}", index=i)
    return float(np.sum(-r / s - np.log(s)))


def numeric_sigma_argmax(residual: float, bounds: Optional[Tuple[float, float]] = None) -> float:
    """Maximize one head's likelihood term over the variance numerically (bounded Brent)."""
    if not residual > 0:
        raise DomainError(f"mean squared residual must be positive, got {residual}")
    lo, hi = bounds if bounds is not None else (residual / 100.0, residual * 100.0)
    result = minimize_scalar(
        lambda s: residual / s + np.log(s),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12 * max(1.0, residual), "maxiter": 500},
    )
    return float(result.x)
