"""Mean and variance-of-mean estimators with confidence intervals.

Covers simple random sampling, stratified random sampling, one unit per
stratum with collapsed strata, and two-phase sampling (phase-1 variance taken
either from the phase-1 sample or from the phase-2 stratum means). No
finite-population correction is applied anywhere.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import (
    InconsistentDesign,
    InvalidLevel,
    MultiUnitStratum,
    StratumTooSmall,
    TooFewSamples,
    UnpairedStratum,
    WeightsNotNormalized,
)

#: degrees of freedom large enough to use the normal quantile
LARGE_DF = math.inf

#: n (or L for stratified designs) at which the normal quantile replaces t
LARGE_SAMPLE = 30

WEIGHT_TOL = 1e-9


class Method(str, enum.Enum):
    SRS = "SRS"
    STRATIFIED = "STRATIFIED"
    ONE_UNIT_COLLAPSED = "ONE_UNIT_COLLAPSED"
    TWO_PHASE = "TWO_PHASE"
    TWO_PHASE_P2ONLY = "TWO_PHASE_P2ONLY"


@dataclass(frozen=True)
class Estimate:
    mean: float
    var_of_mean: float
    df: float
    method: Method

    def __post_init__(self):
        if not self.var_of_mean >= 0:
            raise ValueError("var_of_mean must be non-negative")
        if not self.df >= 1:
            raise ValueError("df must be at least 1")

    @property
    def std_error(self) -> float:
        return math.sqrt(self.var_of_mean)


@dataclass(frozen=True)
class ConfidenceInterval:
    center: float
    margin: float
    level: float
    critical: float

    @property
    def relative_margin(self) -> float:
        return self.margin / self.center if self.center > 0 else math.nan

    @property
    def low(self) -> float:
        return self.center - self.margin

    @property
    def high(self) -> float:
        return self.center + self.margin

    def contains(self, value: float) -> bool:
        return abs(value - self.center) <= self.margin


@dataclass(frozen=True)
class StratumSample:
    stratum_id: object
    weight: float
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not 0 < self.weight <= 1:
            raise ValueError(f"stratum {self.stratum_id!r}: weight must be in (0, 1]")
        if not self.values:
            raise ValueError(f"stratum {self.stratum_id!r}: no sampled values")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def var(self) -> float:
        return float(np.var(self.values, ddof=1)) if self.n > 1 else math.nan


@dataclass(frozen=True)
class CollapsedPairing:
    """Groups of adjacent strata; all groups have two members except possibly one of three."""

    groups: tuple[tuple, ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))
        sizes = [len(g) for g in self.groups]
        if any(s not in (2, 3) for s in sizes) or sizes.count(3) > 1:
            raise InconsistentDesign(f"group sizes must be 2 (one group of 3 allowed), got {sizes}")

    @property
    def J(self) -> int:
        return len(self.groups)

    @property
    def has_triple(self) -> bool:
        return any(len(g) == 3 for g in self.groups)


# ---------------------------------------------------------------------------
# quantiles


def _check_level(level):
    if not 0 < level < 1:
        raise InvalidLevel(f"confidence level must be in (0, 1), got {level}")


@lru_cache(maxsize=256)
def z_quantile(level: float) -> float:
    _check_level(level)
    return float(stats.norm.ppf(0.5 + level / 2))


@lru_cache(maxsize=1024)
def t_quantile(level: float, df: float) -> float:
    _check_level(level)
    return float(stats.t.ppf(0.5 + level / 2, df))


def critical_value(df: float, level: float) -> float:
    """z when df is large (>= 30 or LARGE_DF), otherwise t at df."""
    if df >= LARGE_SAMPLE:
        return z_quantile(level)
    return t_quantile(level, df)


def confidence_interval(est: Estimate, level: float = 0.95) -> ConfidenceInterval:
    crit = critical_value(est.df, level)
    return ConfidenceInterval(est.mean, crit * math.sqrt(est.var_of_mean), level, crit)


# ---------------------------------------------------------------------------
# degrees of freedom


def satterthwaite_df(samples: Sequence[StratumSample]) -> float:
    """Satterthwaite effective df for the stratified variance, with a_h = W_h^2 / n_h."""
    terms = [(s.weight**2 / s.n) * s.var for s in samples]
    denom = sum(t * t / (s.n - 1) for t, s in zip(terms, samples))
    if denom == 0:
        return LARGE_DF
    return max(1.0, math.fsum(terms) ** 2 / denom)


def df_rule(
    design: Method,
    n: int | None = None,
    L: int | None = None,
    J: int | None = None,
    samples: Sequence[StratumSample] | None = None,
    satterthwaite: bool = False,
) -> float:
    """Degrees of freedom for a design.

    SRS gives n - 1. Stratified gives LARGE_DF when every stratum has at
    least 30 units or L >= 30, otherwise the n - L rule of thumb, or
    Satterthwaite when requested. For the two-phase tags this is the df of the
    stratified term alone; the estimators combine it with the phase-1 term
    through :func:`combined_df`. One unit per stratum with collapsing gives
    L - J.
    """
    design = Method(design)
    if design is Method.SRS:
        if n is None or n < 2:
            raise InconsistentDesign("SRS df needs n >= 2")
        return float(n - 1)
    if design is Method.ONE_UNIT_COLLAPSED:
        if L is None or J is None or not 1 <= J < L:
            raise InconsistentDesign(f"collapsed df needs 1 <= J < L, got L={L}, J={J}")
        return float(L - J)

    if samples is not None:
        if n is not None and n != sum(s.n for s in samples):
            raise InconsistentDesign("n does not match the sample sizes")
        if L is not None and L != len(samples):
            raise InconsistentDesign("L does not match the number of strata")
        n = sum(s.n for s in samples)
        L = len(samples)
    if n is None or L is None:
        raise InconsistentDesign("stratified df needs n and L (or samples)")
    if L >= LARGE_SAMPLE or (samples is not None and all(s.n >= LARGE_SAMPLE for s in samples)):
        return LARGE_DF
    if satterthwaite:
        if samples is None:
            raise InconsistentDesign("Satterthwaite df needs the stratum samples")
        return satterthwaite_df(samples)
    if n - L < 1:
        raise InconsistentDesign(f"n - L must be at least 1 (n={n}, L={L})")
    return float(n - L)


def combined_df(parts: Sequence[tuple[float, float]]) -> float:
    """Welch-Satterthwaite df of a sum of independent variance terms.

    ``parts`` holds (term, df) pairs; terms with LARGE_DF contribute nothing to
    the denominator. Two-phase variances add a phase-1 term (df n1 - 1) to a
    stratified term (df from the stratified rule).
    """
    total = math.fsum(t for t, _ in parts)
    denom = math.fsum(t * t / d for t, d in parts if t > 0 and not math.isinf(d))
    if denom == 0:
        return LARGE_DF
    return max(1.0, total * total / denom)


# ---------------------------------------------------------------------------
# estimators


def srs_estimate(values: Sequence[float]) -> Estimate:
    y = np.asarray(values, dtype=float)
    n = y.size
    if n < 2:
        raise TooFewSamples(f"simple random sampling needs n >= 2, got {n}")
    mean = float(y.mean())
    s2 = float(np.sum((y - mean) ** 2) / (n - 1))
    return Estimate(mean, s2 / n, float(n - 1), Method.SRS)


def _check_weights(samples):
    if not samples:
        raise InconsistentDesign("no strata")
    total = math.fsum(s.weight for s in samples)
    if abs(total - 1) > WEIGHT_TOL:
        raise WeightsNotNormalized(f"stratum weights sum to {total!r}")


def _stratified_parts(samples):
    _check_weights(samples)
    for s in samples:
        if s.n < 2:
            raise StratumTooSmall(s.stratum_id)
    means = [s.mean for s in samples]
    mean = math.fsum(s.weight * m for s, m in zip(samples, means))
    var = math.fsum(s.weight**2 * s.var / s.n for s in samples)
    return mean, var, means


def stratified_estimate(samples: Sequence[StratumSample], satterthwaite: bool = False) -> Estimate:
    """Weighted stratum means; variance sum of W_h^2 s_h^2 / n_h."""
    mean, var, _ = _stratified_parts(samples)
    df = df_rule(Method.STRATIFIED, samples=samples, satterthwaite=satterthwaite)
    return Estimate(mean, var, df, Method.STRATIFIED)


def collapsed_strata_estimate(
    samples: Sequence[StratumSample],
    pairing: CollapsedPairing,
    divisor: float = 4.0,
) -> Estimate:
    """One unit per stratum; within-stratum variance borrowed from collapsed groups.

    Each stratum in a group gets s_h^2 = (max - min)^2 / divisor over the
    group's sampled values (for a pair this is just the squared difference).
    The default divisor 4 follows the published pairwise formula; ``divisor=2``
    is the ordinary two-point sample variance, which is unbiased for pairs of
    identically distributed strata.
    """
    _check_weights(samples)
    by_id = {}
    for s in samples:
        if s.n != 1:
            raise MultiUnitStratum(s.stratum_id)
        by_id[s.stratum_id] = s
    seen = set()
    for g in pairing.groups:
        for sid in g:
            if sid not in by_id or sid in seen:
                raise UnpairedStratum(sid)
            seen.add(sid)
    for sid in by_id:
        if sid not in seen:
            raise UnpairedStratum(sid)

    var_terms = []
    for g in pairing.groups:
        ys = [by_id[sid].values[0] for sid in g]
        s2 = (max(ys) - min(ys)) ** 2 / divisor
        var_terms.extend(by_id[sid].weight ** 2 * s2 for sid in g)
    mean = math.fsum(s.weight * s.values[0] for s in samples)
    L = len(samples)
    return Estimate(mean, math.fsum(var_terms), df_rule(Method.ONE_UNIT_COLLAPSED, L=L, J=pairing.J),
                    Method.ONE_UNIT_COLLAPSED)


def two_phase_variance(
    phase1_s2: float, phase1_n: int, samples: Sequence[StratumSample], satterthwaite: bool = False
) -> Estimate:
    """Two-phase estimate whose phase-1 term is s^2/n from the phase-1 sample."""
    if phase1_n < 2:
        raise TooFewSamples("phase-1 sample needs n >= 2")
    if phase1_s2 < 0:
        raise ValueError("phase-1 variance must be non-negative")
    mean, var, _ = _stratified_parts(samples)
    p1 = phase1_s2 / phase1_n
    df = combined_df([(p1, phase1_n - 1), (var, df_rule(Method.TWO_PHASE, samples=samples, satterthwaite=satterthwaite))])
    return Estimate(mean, p1 + var, df, Method.TWO_PHASE)


def between_strata_term(weights: Sequence[float], means: Sequence[float]) -> float:
    """Sum of W_h (ybar_h - ybar)^2 with ybar the weighted mean of the stratum means."""
    overall = math.fsum(w * m for w, m in zip(weights, means))
    return math.fsum(w * (m - overall) ** 2 for w, m in zip(weights, means))


def two_phase_variance_p2only(
    phase1_n: int, samples: Sequence[StratumSample], satterthwaite: bool = False
) -> Estimate:
    """Two-phase estimate computed from the phase-2 stratified sample alone."""
    if phase1_n < 2:
        raise TooFewSamples("phase-1 sample needs n >= 2")
    mean, var, means = _stratified_parts(samples)
    p1 = between_strata_term([s.weight for s in samples], means) / phase1_n
    strat_df = df_rule(Method.TWO_PHASE_P2ONLY, samples=samples, satterthwaite=satterthwaite)
    df = combined_df([(p1, phase1_n - 1), (var, strat_df)])
    return Estimate(mean, p1 + var, df, Method.TWO_PHASE_P2ONLY)


def estimate_record(est: Estimate, level: float = 0.95) -> dict:
    """JSON-ready record; df is the string ``"large"`` when the normal quantile applies."""
    ci = confidence_interval(est, level)
    return {
        "mean": est.mean,
        "var_of_mean": est.var_of_mean,
        "df": "large" if math.isinf(est.df) else est.df,
        "method": est.method.value,
        "level": level,
        "margin": ci.margin,
        "relative_margin": ci.relative_margin if est.mean > 0 else None,
    }
