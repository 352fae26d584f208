"""Classical inverse-variance meta-analysis.

Fixed-effect and DerSimonian-Laird random-effects pooling, Cochran's Q with
the I-squared heterogeneity fraction, leave-one-out sensitivity refits, and
conversion of 2x2 count tables to log odds/risk ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from scipy import special

from .statkernels import one_sided_p

__all__ = [
    "MetaAnalysisResult",
    "StudySummary",
    "binary_to_log_effect",
    "fixed_effect_meta",
    "heterogeneity",
    "leave_one_out",
    "q_test_p_value",
    "random_effects_meta",
]


@dataclass(frozen=True)
class StudySummary:
    """Effect estimate and standard error for one study, on the analysis scale.

    ``counts`` optionally carries the originating 2x2 table as
    (events_treatment, total_treatment, events_control, total_control).
    """

    label: str
    theta_hat: float
    se: float
    counts: tuple[int, int, int, int] | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.theta_hat):
            raise ValueError(f"study {self.label!r}: effect estimate must be finite")
        if not (math.isfinite(self.se) and self.se > 0):
            raise ValueError(f"study {self.label!r}: se must be positive, got {self.se}")
        if self.counts is not None:
            events_t, total_t, events_c, total_c = self.counts
            if any(c < 0 or c != int(c) for c in self.counts):
                raise ValueError(f"study {self.label!r}: counts must be nonnegative integers")
            if total_t <= 0 or total_c <= 0:
                raise ValueError(f"study {self.label!r}: group totals must be positive")
            if events_t > total_t or events_c > total_c:
                raise ValueError(f"study {self.label!r}: events cannot exceed group totals")


@dataclass(frozen=True)
class MetaAnalysisResult:
    """Pooled estimate with its uncertainty and heterogeneity summaries."""

    model: str
    pooled: float
    se: float
    ci: tuple[float, float]
    p_two_sided: float
    q: float
    i_squared: float
    tau_squared: float


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")


def _build_result(
    model: str, pooled: float, se: float, alpha: float, q: float, i_squared: float, tau_squared: float
) -> MetaAnalysisResult:
    z_crit = float(special.ndtri(1.0 - alpha / 2.0))
    pair = one_sided_p(pooled, se)
    return MetaAnalysisResult(
        model=model,
        pooled=pooled,
        se=se,
        ci=(pooled - z_crit * se, pooled + z_crit * se),
        p_two_sided=2.0 * min(pair.left, pair.right),
        q=q,
        i_squared=i_squared,
        tau_squared=tau_squared,
    )


def fixed_effect_meta(studies: Sequence[StudySummary], alpha: float = 0.05) -> MetaAnalysisResult:
    """Inverse-variance pooled estimate under a common true effect."""
    studies = list(studies)
    if not studies:
        raise ValueError("at least one study is required")
    _check_alpha(alpha)
    weights = [1.0 / s.se**2 for s in studies]
    total = sum(weights)
    pooled = sum(w * s.theta_hat for w, s in zip(weights, studies)) / total
    se = 1.0 / math.sqrt(total)
    if len(studies) >= 2:
        q, i_squared = heterogeneity(studies)
    else:
        q, i_squared = 0.0, 0.0
    return _build_result("fixed", pooled, se, alpha, q, i_squared, 0.0)


def random_effects_meta(studies: Sequence[StudySummary], alpha: float = 0.05) -> MetaAnalysisResult:
    """Random-effects pooling with the DerSimonian-Laird moment estimator.

    The between-study variance estimate is truncated at zero, so homogeneous
    inputs reduce exactly to the fixed-effect analysis.
    """
    studies = list(studies)
    if len(studies) < 2:
        raise ValueError("random-effects model requires at least two studies")
    _check_alpha(alpha)
    q, i_squared = heterogeneity(studies)
    weights = [1.0 / s.se**2 for s in studies]
    total = sum(weights)
    c = total - sum(w * w for w in weights) / total
    tau_squared = max(0.0, (q - (len(studies) - 1)) / c) if c > 0 else 0.0
    re_weights = [1.0 / (s.se**2 + tau_squared) for s in studies]
    re_total = sum(re_weights)
    pooled = sum(w * s.theta_hat for w, s in zip(re_weights, studies)) / re_total
    se = 1.0 / math.sqrt(re_total)
    return _build_result("random", pooled, se, alpha, q, i_squared, tau_squared)


def heterogeneity(studies: Sequence[StudySummary]) -> tuple[float, float]:
    """Cochran's Q and the I-squared fraction it implies.

    I-squared is ``max(0, (Q - (n - 1)) / Q)`` for positive Q, and 0 when
    Q is 0 (identical estimates).
    """
    studies = list(studies)
    if len(studies) < 2:
        raise ValueError("heterogeneity requires at least two studies")
    weights = [1.0 / s.se**2 for s in studies]
    total = sum(weights)
    pooled = sum(w * s.theta_hat for w, s in zip(weights, studies)) / total
    q = sum(w * (s.theta_hat - pooled) ** 2 for w, s in zip(weights, studies))
    i_squared = max(0.0, (q - (len(studies) - 1)) / q) if q > 0 else 0.0
    return q, i_squared


def q_test_p_value(q: float, n_studies: int) -> float:
    """Upper-tail chi-square p-value of Cochran's Q on n-1 degrees of freedom."""
    if n_studies < 2:
        raise ValueError("Q test requires at least two studies")
    return float(special.chdtrc(n_studies - 1, q))


def leave_one_out(
    studies: Sequence[StudySummary], model: str = "fixed", alpha: float = 0.05
) -> list[MetaAnalysisResult]:
    """Refit the chosen model n times, omitting one study each time.

    Result i corresponds to the analysis without study i, in input order.
    """
    studies = list(studies)
    if len(studies) < 3:
        raise ValueError("leave-one-out requires at least three studies")
    if model == "fixed":
        fit = fixed_effect_meta
    elif model == "random":
        fit = random_effects_meta
    else:
        raise ValueError(f"model must be 'fixed' or 'random', got {model!r}")
    return [fit(studies[:i] + studies[i + 1 :], alpha) for i in range(len(studies))]


def binary_to_log_effect(
    counts: tuple[int, int, int, int], measure: str = "odds_ratio"
) -> tuple[float, float]:
    """Log odds ratio or log risk ratio with its standard error from a 2x2 table.

    ``counts`` is (events_treatment, total_treatment, events_control,
    total_control). When any cell of the table is zero, 0.5 is added to all
    four cells to keep the log effect and its standard error finite.
    """
    events_t, total_t, events_c, total_c = counts
    if any(c < 0 for c in counts):
        raise ValueError("cell counts must be nonnegative")
    if total_t <= 0 or total_c <= 0:
        raise ValueError("both arms must have a positive total")
    if events_t > total_t or events_c > total_c:
        raise ValueError("events cannot exceed the arm total")

    a = float(events_t)
    b = float(total_t - events_t)
    c = float(events_c)
    d = float(total_c - events_c)
    if min(a, b, c, d) == 0.0:
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5

    if measure == "odds_ratio":
        theta = math.log((a * d) / (b * c))
        se = math.sqrt(1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d)
    elif measure == "risk_ratio":
        n1 = a + b
        n2 = c + d
        theta = math.log((a / n1) / (c / n2))
        se = math.sqrt(1.0 / a - 1.0 / n1 + 1.0 / c - 1.0 / n2)
    else:
        raise ValueError(f"measure must be 'odds_ratio' or 'risk_ratio', got {measure!r}")
    return theta, se
