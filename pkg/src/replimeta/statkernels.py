"""Scalar distribution primitives shared by the meta-analysis and replicability layers.

Everything here is pure, reentrant, and cheap enough to call inside tight
simulation loops. Tail probabilities are evaluated on the survival side where
it matters so that left/right p-value pairs stay complementary at full double
precision instead of degrading through ``1 - p``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

from scipy import special

__all__ = [
    "LOG_CEIL",
    "LOG_FLOOR",
    "PValuePair",
    "binomial_pmf",
    "clamp_probability",
    "gamma_cdf",
    "normal_cdf",
    "one_sided_p",
]

# Probabilities are clamped into this range before any log is taken, so that
# combination statistics stay finite even when a study z-score is far out in
# the tail.
LOG_FLOOR = 1e-300
LOG_CEIL = 1.0 - 1e-16

_SQRT2 = math.sqrt(2.0)


class PValuePair(NamedTuple):
    """One-sided p-values of a single study, for the left- and right-sided alternatives."""

    left: float
    right: float


def normal_cdf(z: float) -> float:
    """Standard normal CDF, via the complementary error function.

    Saturates at 0/1 in the extreme tails (including infinite input) rather
    than raising.
    """
    if math.isnan(z):
        raise ValueError("z must not be NaN")
    return 0.5 * math.erfc(-z / _SQRT2)


def gamma_cdf(x: float, shape: float) -> float:
    """CDF of the gamma distribution with the given shape and unit scale."""
    if math.isnan(x) or x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if math.isnan(shape) or shape <= 0:
        raise ValueError(f"shape must be > 0, got {shape}")
    return float(special.gammainc(shape, x))


def binomial_pmf(k: int, trials: int, prob: float) -> float:
    """Binomial point mass P(X = k), computed in log space.

    Log-space evaluation keeps the result from underflowing to zero spuriously
    for trial counts in the thousands.
    """
    if not 0 <= k <= trials:
        raise ValueError(f"k must be in [0, {trials}], got {k}")
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prob must be in [0, 1], got {prob}")
    if prob == 0.0:
        return 1.0 if k == 0 else 0.0
    if prob == 1.0:
        return 1.0 if k == trials else 0.0
    log_pmf = (
        math.lgamma(trials + 1)
        - math.lgamma(k + 1)
        - math.lgamma(trials - k + 1)
        + k * math.log(prob)
        + (trials - k) * math.log1p(-prob)
    )
    return math.exp(log_pmf)


def one_sided_p(theta_hat: float, se: float, shift: float = 0.0) -> PValuePair:
    """Left/right one-sided p-values for one effect estimate.

    The null value is ``shift`` (0 for the usual no-effect null); the test
    statistic is ``(theta_hat - shift) / se``. Both tails are evaluated
    directly so the pair sums to 1 without losing the smaller tail.
    """
    if not se > 0:
        raise ValueError(f"se must be positive, got {se}")
    z = (theta_hat - shift) / se
    return PValuePair(left=normal_cdf(z), right=normal_cdf(-z))


def clamp_probability(p: float) -> float:
    """Clamp a probability into (0, 1) so its log is finite."""
    return min(max(p, LOG_FLOOR), LOG_CEIL)
