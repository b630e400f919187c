"""Training objective: mixture MSE, per-expert MSE, MMD alignment between
source and meta-target station embeddings, and the beta regularizer."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from airex.airquality import autodiff as ad
from airex.airquality.autodiff import Node
from airex.airquality.exceptions import ConfigError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_BANDWIDTH = 1.0


@dataclass(frozen=True)
class LossWeights:
    lambda_: float = 0.5
    gamma: float = 1.0
    zeta: float = 1.0
    # None selects the median heuristic per batch
    sigma: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.lambda_ <= 1.0):
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lambda_}")
        if self.gamma < 0 or self.zeta < 0:
            raise ConfigError("gamma and zeta must be >= 0")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"Kernel bandwidth must be > 0, got {self.sigma}")


def _as_vector(x: Node | Sequence[float] | np.ndarray) -> Node:
    node = x if isinstance(x, Node) else ad.constant(np.asarray(x, dtype=np.float64))
    return ad.reshape(node, (node.value.size,))


def loss_final(predictions: Node | Sequence[float], truths: Node | Sequence[float]) -> Node:
    predictions, truths = _as_vector(predictions), _as_vector(truths)
    if predictions.shape != truths.shape:
        raise ShapeError(
            f"loss_final: {predictions.shape[0]} predictions for {truths.shape[0]} labels"
        )
    if predictions.shape[0] == 0:
        raise ShapeError("loss_final: empty batch")
    return ad.mean(ad.square(predictions - truths))


def loss_experts(
    per_city: Node | np.ndarray, truths: Node | Sequence[float]
) -> Node:
    """Mean over cities of each expert's MSE; ``per_city`` is (batch, cities)."""
    per_city = ad.as_node(per_city)
    truths = _as_vector(truths)
    if per_city.ndim != 2 or per_city.shape[0] != truths.shape[0]:
        raise ShapeError(
            f"loss_experts: outputs {per_city.shape} do not match {truths.shape[0]} labels"
        )
    if per_city.value.size == 0:
        raise ShapeError("loss_experts: empty batch")
    residual = per_city - ad.reshape(truths, (truths.shape[0], 1))
    return ad.mean(ad.mean(ad.square(residual), axis=0))


def gaussian_kernel(a: Node, b: Node, sigma: float) -> Node:
    """exp(-||a_i - b_j||^2 / (2 sigma^2)) for every pair of rows."""
    return ad.exp(ad.scale(ad.sqdist(a, b), -1.0 / (2.0 * sigma * sigma)))


def _within(kernel: Node) -> Node:
    n = kernel.shape[0]
    off_diagonal = 1.0 - np.eye(n)
    return ad.scale(ad.sum(kernel * off_diagonal), 1.0 / (n * (n - 1)))


def mmd_squared(x: Node, x_prime: Node, sigma: float) -> Node:
    """Kernel MMD^2 estimate: unbiased within-set terms, biased cross term.

    Not clamped, so it may be slightly negative for different sets.
    """
    x, x_prime = ad.as_node(x), ad.as_node(x_prime)
    if x.ndim != 2 or x_prime.ndim != 2:
        raise ShapeError(f"mmd_squared: expected row sets, got {x.shape} and {x_prime.shape}")
    if x.shape[0] < 2 or x_prime.shape[0] < 2:
        raise ShapeError(
            f"mmd_squared: both sets need >= 2 points, got {x.shape[0]} and {x_prime.shape[0]}"
        )
    if not sigma > 0:
        raise ConfigError(f"Kernel bandwidth must be > 0, got {sigma}")
    n, m = x.shape[0], x_prime.shape[0]
    term_x = _within(gaussian_kernel(x, x, sigma))
    term_x_prime = _within(gaussian_kernel(x_prime, x_prime, sigma))
    cross = ad.scale(ad.sum(gaussian_kernel(x, x_prime, sigma)), 2.0 / (n * m))
    return term_x + term_x_prime - cross


def median_bandwidth(points: np.ndarray) -> float:
    """Median pairwise euclidean distance of the rows (the median heuristic)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return DEFAULT_BANDWIDTH
    diff = points[:, None, :] - points[None, :, :]
    distances = np.sqrt((diff * diff).sum(axis=-1))
    upper = distances[np.triu_indices(len(points), k=1)]
    median = float(np.median(upper))
    if not math.isfinite(median) or median <= 0.0:
        logger.debug("Degenerate embeddings (median distance %s), bandwidth %s", median, DEFAULT_BANDWIDTH)
        return DEFAULT_BANDWIDTH
    return median


def loss_adversarial(
    source_by_city: Sequence[Node] | Node,
    target: Node,
    sigma: float | None = None,
) -> Node:
    """MMD^2 between the pooled source-city station embeddings and the
    meta-target station embeddings. The bandwidth, when not given, comes from
    the pooled values and is a constant for differentiation."""
    if isinstance(source_by_city, Node):
        pooled = source_by_city
    else:
        pooled = ad.concat(list(source_by_city), axis=0)
    if sigma is None:
        sigma = median_bandwidth(np.concatenate([pooled.value, target.value], axis=0))
    return mmd_squared(pooled, target, sigma)


def entropy_reg(beta: Node | np.ndarray) -> Node:
    """Sum of beta * log(beta) over cities, averaged over the batch.

    Lies in [-ln K, 0] and is smallest for uniform weights.
    """
    beta = ad.as_node(beta)
    per_sample = ad.sum(ad.xlogx(beta), axis=-1)
    return ad.mean(per_sample) if per_sample.ndim else per_sample


def total_loss(
    l_f: Node | float,
    l_m: Node | float,
    l_a: Node | float,
    r: Node | float,
    w: LossWeights,
) -> Node:
    total = ad.scale(ad.as_node(l_f), w.lambda_) + ad.scale(ad.as_node(l_m), 1.0 - w.lambda_)
    if w.gamma:
        total = total + ad.scale(ad.as_node(l_a), w.gamma)
    if w.zeta:
        total = total + ad.scale(ad.as_node(r), w.zeta)
    return total
