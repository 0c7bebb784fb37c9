"""The alpha-denoiser ``phi_alpha(y) = y + alpha * sigma^2 * score(y; sigma^2)``.

``alpha = 0`` leaves ``y`` alone, ``alpha = 1`` is the posterior mean and
``alpha = 1/2`` sits halfway between.  Any finite real ``alpha`` is accepted.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .targets import NoisedScoreOracle, SampleBatch


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha}")
    return alpha


def denoise_point(oracle: NoisedScoreOracle, y, sigma: float, alpha: float) -> np.ndarray:
    """Apply ``phi_alpha`` to one point or an array of points.

    Args:
        oracle: Exact score oracle of the target.
        y: Noisy point(s), shaped as accepted by ``oracle.score``.
        sigma: Noise standard deviation, > 0.
        alpha: Denoising coefficient.

    Returns:
        Array with the shape of ``y``.
    """
    alpha = _check_alpha(alpha)
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    y = np.asarray(y, dtype=float)
    sigma2 = float(sigma) ** 2
    return y + (alpha * sigma2) * oracle.score(y, sigma2)


def denoise_batch(oracle: NoisedScoreOracle, batch: SampleBatch, sigma: float, alpha: float) -> SampleBatch:
    """Row-wise :func:`denoise_point`; keeps the seed and label of ``batch``."""
    if batch.dim != oracle.dim:
        raise DimensionError(f"batch has dimension {batch.dim}, target has dimension {oracle.dim}")
    return batch.with_data(denoise_point(oracle, batch.data, sigma, alpha))


def denoise_all_alphas(oracle: NoisedScoreOracle, batch: SampleBatch, sigma: float, alphas) -> list[SampleBatch]:
    """Denoise one noisy batch with several alphas, evaluating the score once."""
    if batch.dim != oracle.dim:
        raise DimensionError(f"batch has dimension {batch.dim}, target has dimension {oracle.dim}")
    sigma2 = float(sigma) ** 2
    step = sigma2 * oracle.score(batch.data, sigma2)
    return [batch.with_data(batch.data + _check_alpha(a) * step) for a in alphas]


def optimal_alpha_gaussian(tau: float, sigma: float) -> float:
    """The alpha at which the denoised law of ``N(0, tau^2) + N(0, sigma^2)`` is exactly ``N(0, tau^2)``.

    Equals ``1 + q^2 - q sqrt(1 + q^2)`` with ``q = tau / sigma``, evaluated as
    ``1 - q / (q + sqrt(1 + q^2))`` to avoid cancellation when ``q`` is large.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    q = tau / sigma
    if math.isinf(q):
        return 0.5
    return 1.0 - q / (q + math.sqrt(1.0 + q * q))
