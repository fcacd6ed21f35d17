"""Choosing one simulation region per stratum.

All policies break ties by the lexicographically smallest region id. The
selection CSV (``stratum_id,region_id,weight``) plays the role of a SimPoints
file.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import FeatureMismatch, MissingBaselineCpi, MissingValue, SamplingError
from .population import CPI_ONLY, PROJECTED_BBV, STANDARDIZED_RFV, FeatureMatrix
from .stratification import BBV, DALENIUS_GURNEY, RFV, Stratification, stratum_means

RANDOM = "RANDOM"
CENTROID = "CENTROID"
MEAN_CPI = "MEAN_CPI"
POLICIES = (RANDOM, CENTROID, MEAN_CPI)

_PROVENANCE_FOR = {BBV: PROJECTED_BBV, RFV: STANDARDIZED_RFV, DALENIUS_GURNEY: CPI_ONLY}


@dataclass(frozen=True)
class Pick:
    stratum_id: int
    region_id: str
    weight: float
    baseline: float | None = None


@dataclass(frozen=True)
class RegionSelection:
    picks: tuple[Pick, ...]
    policy: str
    seed: int | None = None

    @property
    def region_ids(self) -> list[str]:
        return [p.region_id for p in self.picks]

    @property
    def weights(self) -> list[float]:
        return [p.weight for p in self.picks]

    def check_membership(self, strat: Stratification):
        seen = set()
        for p in self.picks:
            if strat.assignment.get(p.region_id) != p.stratum_id:
                raise SamplingError(f"region {p.region_id!r} is not in stratum {p.stratum_id}")
            seen.add(p.stratum_id)
        if len(seen) != strat.L or len(self.picks) != strat.L:
            raise SamplingError("selection must hold exactly one region per stratum")


def _argmin_by_id(ids, scores):
    # ids are sorted; strict < keeps the first (smallest id) among exact ties
    best, best_score = None, math.inf
    for rid, sc in zip(ids, scores):
        if sc < best_score:
            best, best_score = rid, sc
    return best


def select_random(strat: Stratification, seed: int) -> RegionSelection:
    """Uniform draw within each stratum; stream per stratum from (seed, stratum_id)."""
    picks = []
    for h, ids in strat.members().items():
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(h,)))
        picks.append(Pick(h, ids[int(rng.integers(len(ids)))], strat.strata[h].weight))
    return RegionSelection(tuple(picks), RANDOM, seed)


def select_centroid(strat: Stratification, features: FeatureMatrix) -> RegionSelection:
    """Member nearest (Euclidean) to each stratum's centroid."""
    want = _PROVENANCE_FOR.get(strat.scheme)
    if features.provenance != want:
        raise FeatureMismatch(
            f"{strat.scheme} strata need {want} features, got {features.provenance}"
        )
    picks = []
    for h, ids in strat.members().items():
        centroid = strat.strata[h].centroid
        if centroid is None:
            raise FeatureMismatch(f"stratum {h} has no centroid")
        c = np.asarray(centroid, dtype=float)
        try:
            X = features.rows(ids)
        except KeyError as exc:
            raise FeatureMismatch(f"no feature row for region {exc.args[0]!r}") from None
        if X.shape[1] != c.size:
            raise FeatureMismatch(f"feature width {X.shape[1]} != centroid width {c.size}")
        d2 = ((X - c) ** 2).sum(axis=1)
        picks.append(Pick(h, _argmin_by_id(ids, d2), strat.strata[h].weight))
    return RegionSelection(tuple(picks), CENTROID)


def select_mean_cpi(strat: Stratification, baseline_cpi: Mapping[str, float]) -> RegionSelection:
    """Member whose baseline CPI is closest to its stratum's mean baseline CPI."""
    for rid in strat.assignment:
        if rid not in baseline_cpi:
            raise MissingBaselineCpi(rid)
    means = stratum_means(strat, baseline_cpi)
    picks = []
    for h, ids in strat.members().items():
        dev = [abs(baseline_cpi[r] - means[h]) for r in ids]
        rid = _argmin_by_id(ids, dev)
        picks.append(Pick(h, rid, strat.strata[h].weight, baseline_cpi[rid]))
    return RegionSelection(tuple(picks), MEAN_CPI)


def weighted_point_estimate(sel: RegionSelection, y: Mapping[str, float]) -> float:
    terms = []
    for p in sel.picks:
        if p.region_id not in y:
            raise MissingValue(p.region_id)
        terms.append(p.weight * y[p.region_id])
    return math.fsum(terms)


def save_selection(sel: RegionSelection, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum_id", "region_id", "weight"])
        for p in sel.picks:
            w.writerow([p.stratum_id, p.region_id, repr(p.weight)])


def load_selection(path, policy: str = "FILE") -> RegionSelection:
    picks = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"stratum_id", "region_id", "weight"} - set(reader.fieldnames or ())
        if missing:
            raise SamplingError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            picks.append(Pick(int(row["stratum_id"]), row["region_id"], float(row["weight"])))
    if not picks:
        raise SamplingError(f"{path}: empty selection")
    return RegionSelection(tuple(picks), policy)
