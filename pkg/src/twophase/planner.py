"""Two-phase planning: phase-1 sizing, phase-2 allocation and the drift check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InfeasibleBudget, SamplingError, StratumExhausted, TooFewSamples, ZeroMeanPilot
from .estimators import (
    LARGE_DF,
    LARGE_SAMPLE,
    Estimate,
    between_strata_term,
    combined_df,
    confidence_interval,
    critical_value,
    z_quantile,
)
from .stratification import Stratification

DEFAULT_GROWTH = 1.5
MIN_PER_STRATUM = 2


def size_phase1(pilot: Sequence[float], target_rel_margin: float, level: float = 0.95) -> int:
    """Phase-1 sample size reaching ``target_rel_margin`` given a pilot sample.

    n = ceil((z * s / (target * ybar))^2), never less than the pilot itself.
    """
    y = np.asarray(pilot, dtype=float)
    if y.size < 2:
        raise TooFewSamples("pilot needs at least two values")
    if not target_rel_margin > 0:
        raise SamplingError("target relative margin must be positive")
    mean = float(y.mean())
    if mean <= 0:
        raise ZeroMeanPilot(f"pilot mean must be positive, got {mean}")
    s = float(y.std(ddof=1))
    n = math.ceil((z_quantile(level) * s / (target_rel_margin * mean)) ** 2)
    return max(n, int(y.size))


@dataclass(frozen=True)
class StratumStats:
    stratum_id: int
    weight: float
    sd: float
    size: int
    mean: float


@dataclass(frozen=True)
class Phase1Stats:
    """Summary of the phase-1 sample that the allocator needs."""

    n: int
    mean: float
    s2: float
    strata: tuple[StratumStats, ...]

    @property
    def between(self) -> float:
        return between_strata_term([s.weight for s in self.strata], [s.mean for s in self.strata])

    def margin(self, level: float = 0.95) -> float:
        """Absolute SRS margin of the phase-1 estimate (normal quantile)."""
        return z_quantile(level) * math.sqrt(self.s2 / self.n)

    def relative_margin(self, level: float = 0.95) -> float:
        return self.margin(level) / self.mean

    @classmethod
    def from_stratification(cls, strat: Stratification, y: Mapping[str, float]) -> "Phase1Stats":
        ids = list(strat.assignment)
        values = np.array([y[r] for r in ids], dtype=float)
        members = strat.members()
        strata = []
        for s in strat.strata:
            v = np.array([y[r] for r in members[s.stratum_id]], dtype=float)
            sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
            strata.append(StratumStats(s.stratum_id, s.weight, sd, s.size, float(v.mean())))
        return cls(len(ids), float(values.mean()), float(values.var(ddof=1)), tuple(strata))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "s2": self.s2,
            "strata": [
                {"id": s.stratum_id, "W_h": s.weight, "s_h": s.sd, "N_h": s.size, "mean": s.mean}
                for s in self.strata
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Phase1Stats":
        strata = tuple(
            StratumStats(int(e["id"]), float(e["W_h"]), float(e["s_h"]), int(e["N_h"]), float(e["mean"]))
            for e in d["strata"]
        )
        return cls(int(d["n"]), float(d["mean"]), float(d["s2"]), strata)


@dataclass(frozen=True)
class Phase2Allocation:
    n_h: Mapping[int, int]
    target_margin: float
    predicted_margin: float
    phase1_n: int
    phase1_margin: float
    phase1_term: float
    stratified_term: float
    critical: float
    df: float
    mean: float
    capped: tuple[int, ...] = ()
    growth_factor: float = DEFAULT_GROWTH
    level: float = 0.95

    @property
    def total(self) -> int:
        return sum(self.n_h.values())

    @property
    def target_rel_margin(self) -> float:
        return self.target_margin / self.mean

    @property
    def predicted_rel_margin(self) -> float:
        return self.predicted_margin / self.mean

    @property
    def phase1_rel_margin(self) -> float:
        return self.phase1_margin / self.mean

    @property
    def phase1_dominant(self) -> bool:
        return self.phase1_term >= self.stratified_term

    def to_dict(self) -> dict:
        return {
            "n_h": {str(h): n for h, n in sorted(self.n_h.items())},
            "total": self.total,
            "growth_factor": self.growth_factor,
            "level": self.level,
            "phase1_n": self.phase1_n,
            "phase1_margin": self.phase1_margin,
            "phase1_rel_margin": self.phase1_rel_margin,
            "target_margin": self.target_margin,
            "target_rel_margin": self.target_rel_margin,
            "predicted_margin": self.predicted_margin,
            "predicted_rel_margin": self.predicted_rel_margin,
            "phase1_term": self.phase1_term,
            "stratified_term": self.stratified_term,
            "phase1_dominant": self.phase1_dominant,
            "critical": self.critical,
            "df": "large" if math.isinf(self.df) else self.df,
            "capped": list(self.capped),
        }


def neyman_allocation(
    weights: Sequence[float], sds: Sequence[float], sizes: Sequence[int], budget: float
) -> tuple[list[int], list[int]]:
    """Integer n_h with n_h proportional to W_h s_h meeting sum W_h^2 s_h^2 / n_h <= budget.

    Strata whose ideal share exceeds N_h are capped at N_h and the rest is
    re-allocated. Every n_h is at least 2 (or N_h when smaller). Returns the
    allocation and the list of capped stratum indices.
    """
    W = np.asarray(weights, dtype=float)
    S = np.asarray(sds, dtype=float)
    Nh = np.asarray(sizes, dtype=int)
    ws = W * S
    capped = np.zeros(W.size, dtype=bool)
    ideal = np.zeros(W.size)
    while True:
        free = ~capped & (ws > 0)
        spent = float(np.sum((W[capped] * S[capped]) ** 2 / Nh[capped]))
        remaining = budget - spent
        if not free.any():
            break
        if remaining <= 0:
            raise StratumExhausted("variance budget cannot be met even sampling whole strata")
        total_ws = float(ws[free].sum())
        ideal = np.where(free, total_ws * ws / remaining, 0.0)
        over = free & (ideal > Nh)
        if not over.any():
            break
        capped |= over
    n = np.where(capped, Nh, np.ceil(ideal - 1e-9)).astype(int)
    n = np.minimum(np.maximum(n, MIN_PER_STRATUM), Nh)
    return [int(v) for v in n], [int(i) for i in np.flatnonzero(capped)]


def _stratified_df(n_h, L):
    if L >= LARGE_SAMPLE or all(v >= LARGE_SAMPLE for v in n_h):
        return LARGE_DF
    return float(max(sum(n_h) - L, 1))


def _predicted_df(stats: Phase1Stats, n_h, p1, strat_term):
    return combined_df([(p1, stats.n - 1), (strat_term, _stratified_df(n_h, len(n_h)))])


def predicted_margin(stats: Phase1Stats, n_h: Sequence[int], level: float = 0.95) -> tuple[float, float, float]:
    """(margin, phase-1 term, stratified term) for an allocation, via the phase-2-only variance."""
    p1 = stats.between / stats.n
    strat_term = math.fsum(s.weight**2 * s.sd**2 / n for s, n in zip(stats.strata, n_h))
    crit = critical_value(_predicted_df(stats, n_h, p1, strat_term), level)
    return crit * math.sqrt(p1 + strat_term), p1, strat_term


def allocate_phase2(
    stats: Phase1Stats,
    growth_factor: float = DEFAULT_GROWTH,
    level: float = 0.95,
    max_rounds: int = 50,
) -> Phase2Allocation:
    """Size the phase-2 stratified sample so its margin is at most ``growth_factor``
    times the phase-1 SRS margin.

    The stratified variance budget is (target / crit)^2 minus the between-strata
    phase-1 term; n_h follows Neyman proportions. Sizing starts from the normal
    quantile; if the df of the predicted variance (phase-1 and stratified
    terms combined) calls for a t quantile, the budget is recomputed with it
    until the predicted margin meets the target.
    """
    if not growth_factor > 1:
        raise SamplingError("growth_factor must exceed 1")
    if stats.n < 2:
        raise TooFewSamples("phase-1 sample needs n >= 2")
    W = [s.weight for s in stats.strata]
    S = [s.sd for s in stats.strata]
    Nh = [s.size for s in stats.strata]
    p1_margin = stats.margin(level)
    target = growth_factor * p1_margin
    p1_term = stats.between / stats.n

    crit = z_quantile(level)
    for _ in range(max_rounds):
        budget = (target / crit) ** 2 - p1_term
        if budget <= 0:
            raise InfeasibleBudget(
                f"phase-1 term {p1_term:.3g} already exceeds the target variance {(target / crit) ** 2:.3g}"
            )
        n_h, capped = neyman_allocation(W, S, Nh, budget)
        margin, _, strat_term = predicted_margin(stats, n_h, level)
        df = _predicted_df(stats, n_h, p1_term, strat_term)
        if margin <= target * (1 + 1e-12):
            return Phase2Allocation(
                n_h={s.stratum_id: n for s, n in zip(stats.strata, n_h)},
                target_margin=target,
                predicted_margin=margin,
                phase1_n=stats.n,
                phase1_margin=p1_margin,
                phase1_term=p1_term,
                stratified_term=strat_term,
                critical=critical_value(df, level),
                df=df,
                mean=stats.mean,
                capped=tuple(stats.strata[i].stratum_id for i in capped),
                growth_factor=growth_factor,
                level=level,
            )
        if capped and all(n == s for n, s in zip(n_h, Nh)):
            break
        crit = max(critical_value(df, level), crit * (1 + 1e-6))
    raise StratumExhausted("no allocation meets the target margin")


@dataclass(frozen=True)
class DriftReport:
    one_unit: float
    multi_unit: float
    margin: float
    level: float
    abs_gap: float = field(init=False)
    rel_gap: float = field(init=False)
    verdict: str = field(init=False)

    def __post_init__(self):
        gap = abs(self.one_unit - self.multi_unit)
        object.__setattr__(self, "abs_gap", gap)
        object.__setattr__(self, "rel_gap", gap / self.multi_unit if self.multi_unit else math.nan)
        object.__setattr__(self, "verdict", "OK" if gap <= self.margin else "DRIFT")

    def to_dict(self) -> dict:
        return {
            "one_unit_estimate": self.one_unit,
            "multi_unit_estimate": self.multi_unit,
            "multi_unit_margin": self.margin,
            "level": self.level,
            "abs_gap": self.abs_gap,
            "rel_gap": self.rel_gap,
            "verdict": self.verdict,
        }


def drift_check(sel_estimate: float, multiunit: Estimate, level: float = 0.95) -> DriftReport:
    """OK when the day-to-day one-unit estimate sits inside the multi-unit interval."""
    ci = confidence_interval(multiunit, level)
    return DriftReport(sel_estimate, multiunit.mean, ci.margin, level)
