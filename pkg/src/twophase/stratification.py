"""Building strata: k-means on feature matrices and CPI boundaries.

Stratum ids are consecutive integers starting at 0. For k-means strata, ties
in the nearest-centroid assignment go to the lowest stratum id. For CPI
boundaries, stratum h holds the regions with ``cuts[h-1] <= cpi < cuts[h]``
(strata ids ascend with CPI).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateCpi,
    EmptyFeatureMatrix,
    EmptyStratumUnrecoverable,
    FeatureMismatch,
    KTooLarge,
    SamplingError,
)
from .estimators import CollapsedPairing
from .population import PROJECTED_BBV, STANDARDIZED_RFV, FeatureMatrix

BBV = "BBV"
RFV = "RFV"
DALENIUS_GURNEY = "DALENIUS_GURNEY"
SCHEMES = (BBV, RFV, DALENIUS_GURNEY)

_SCHEME_OF = {PROJECTED_BBV: BBV, STANDARDIZED_RFV: RFV}


@dataclass(frozen=True)
class Stratum:
    stratum_id: int
    size: int
    weight: float
    centroid: tuple[float, ...] | None = None
    interval: tuple[float, float] | None = None


@dataclass(frozen=True)
class Stratification:
    scheme: str
    assignment: Mapping[str, int]
    strata: tuple[Stratum, ...]
    seed: int | None = None
    # extra provenance (feature parameters, convergence info) for manifests
    info: Mapping = field(default_factory=dict)

    @property
    def L(self) -> int:
        return len(self.strata)

    @property
    def N(self) -> int:
        return len(self.assignment)

    @property
    def weights(self) -> dict[int, float]:
        return {s.stratum_id: s.weight for s in self.strata}

    def stratum(self, stratum_id) -> Stratum:
        return self.strata[stratum_id]

    def members(self) -> dict[int, list[str]]:
        """Region ids per stratum, each list sorted."""
        out = {s.stratum_id: [] for s in self.strata}
        for rid, h in self.assignment.items():
            out[h].append(rid)
        for ids in out.values():
            ids.sort()
        return out

    def to_manifest(self) -> dict:
        strata = []
        for s in self.strata:
            entry = {"id": s.stratum_id, "N_h": s.size, "W_h": s.weight}
            if s.centroid is not None:
                entry["centroid"] = list(s.centroid)
            if s.interval is not None:
                entry["interval"] = [_json_float(v) for v in s.interval]
            strata.append(entry)
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "L": self.L,
            "N": self.N,
            "strata": strata,
            "info": dict(self.info),
        }

    @classmethod
    def from_manifest(cls, manifest: Mapping, assignment: Mapping[str, int]) -> "Stratification":
        strata = []
        for e in manifest["strata"]:
            interval = e.get("interval")
            strata.append(
                Stratum(
                    int(e["id"]),
                    int(e["N_h"]),
                    float(e["W_h"]),
                    tuple(e["centroid"]) if e.get("centroid") is not None else None,
                    tuple(_parse_json_float(v) for v in interval) if interval is not None else None,
                )
            )
        strat = cls(manifest["scheme"], dict(assignment), tuple(strata), manifest.get("seed"),
                    manifest.get("info", {}))
        _validate(strat)
        return strat


def _json_float(v):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _parse_json_float(v):
    return float(v)


def _validate(strat: Stratification):
    sizes = {s.stratum_id: 0 for s in strat.strata}
    if [s.stratum_id for s in strat.strata] != list(range(len(strat.strata))):
        raise SamplingError("stratum ids must be 0..L-1 in order")
    for rid, h in strat.assignment.items():
        if h not in sizes:
            raise SamplingError(f"region {rid!r} assigned to unknown stratum {h}")
        sizes[h] += 1
    for s in strat.strata:
        if sizes[s.stratum_id] != s.size or s.size == 0:
            raise SamplingError(f"stratum {s.stratum_id}: size does not match assignment")
    if abs(math.fsum(s.weight for s in strat.strata) - 1) > 1e-9:
        raise SamplingError("stratum weights do not sum to 1")


def _build(scheme, region_ids, labels, L, seed, centroids=None, intervals=None, info=None):
    N = len(region_ids)
    counts = np.bincount(labels, minlength=L)
    strata = tuple(
        Stratum(
            h,
            int(counts[h]),
            int(counts[h]) / N,
            tuple(float(c) for c in centroids[h]) if centroids is not None else None,
            intervals[h] if intervals is not None else None,
        )
        for h in range(L)
    )
    assignment = {rid: int(lab) for rid, lab in zip(region_ids, labels)}
    return Stratification(scheme, assignment, strata, seed, dict(info or {}))


# ---------------------------------------------------------------------------
# k-means


def _sq_dists(X, centroids):
    # (N, k) squared Euclidean distances, computed without the expansion trick
    # so that exact ties stay exact
    return ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; returns the indices of the chosen initial centers."""
    N = X.shape[0]
    chosen = [int(rng.integers(N))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(N, p=d2 / total))
        else:
            # all remaining points coincide with a center: pick uniformly among the unused
            unused = np.setdiff1d(np.arange(N), chosen)
            idx = int(unused[rng.integers(unused.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(chosen)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float]
    iterations: int
    converged: bool


def _repair_empty(X, labels, centroids, k):
    for _ in range(k):
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return labels
        d2 = ((X - centroids[labels]) ** 2).sum(axis=1)
        # only donors whose cluster keeps at least one member
        d2 = np.where(counts[labels] > 1, d2, -1.0)
        donor = int(np.argmax(d2))
        if d2[donor] < 0:
            break
        labels = labels.copy()
        labels[donor] = empty[0]
        centroids[empty[0]] = X[donor]
    if np.any(np.bincount(labels, minlength=k) == 0):
        raise EmptyStratumUnrecoverable("could not repopulate an empty cluster")
    return labels


def lloyd(X: np.ndarray, k: int, seed: int, max_iter: int = 300) -> KMeansResult:
    rng = np.random.default_rng(seed)
    centroids = X[kmeans_pp_init(X, k, rng)].astype(float)
    labels = np.argmin(_sq_dists(X, centroids), axis=1)
    labels = _repair_empty(X, labels, centroids, k)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        centroids = np.array([X[labels == h].mean(axis=0) for h in range(k)])
        history.append(float(((X - centroids[labels]) ** 2).sum()))
        new = np.argmin(_sq_dists(X, centroids), axis=1)
        new = _repair_empty(X, new, centroids, k)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    else:
        centroids = np.array([X[labels == h].mean(axis=0) for h in range(k)])
    return KMeansResult(labels, centroids, history, it, converged)


def kmeans_stratify(features: FeatureMatrix, k: int, seed: int = 0, max_iter: int = 300) -> Stratification:
    """Cluster a feature matrix into ``k`` strata with k-means++ seeded Lloyd iterations.

    The scheme tag follows the matrix provenance (projected BBV -> BBV,
    standardized RFV -> RFV). Stratum centroids are the member means.
    """
    X = np.asarray(features.values, dtype=float)
    N = X.shape[0]
    if N == 0 or X.shape[1] == 0:
        raise EmptyFeatureMatrix("feature matrix has no rows or no columns")
    if features.provenance not in _SCHEME_OF:
        raise FeatureMismatch(f"k-means strata need BBV or RFV features, got {features.provenance}")
    if not np.all(np.isfinite(X)):
        raise SamplingError("feature matrix contains non-finite values")
    if k < 2:
        raise SamplingError(f"k must be at least 2, got {k}")
    if k > N:
        raise KTooLarge(f"k={k} exceeds the number of regions N={N}")

    res = lloyd(X, k, seed, max_iter)
    info = {
        "provenance": features.provenance,
        "iterations": res.iterations,
        "converged": res.converged,
        "inertia": res.inertia_history[-1] if res.inertia_history else None,
    }
    return _build(_SCHEME_OF[features.provenance], features.region_ids, res.labels, k, seed,
                  centroids=res.centroids, info=info)


# ---------------------------------------------------------------------------
# Dalenius-Gurney CPI boundaries


@dataclass(frozen=True)
class CpiBoundaries:
    cuts: tuple[float, ...]
    spread: float
    iterations: int
    converged: bool

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.cuts[1:], self.cuts[:-1])):
            raise SamplingError("boundaries must be strictly increasing")

    def stratum_of(self, x: float) -> int:
        return int(np.searchsorted(self.cuts, x, side="right"))


class _Sorted:
    """Prefix sums over sorted values for O(1) stratum statistics."""

    def __init__(self, x):
        self.x = np.sort(np.asarray(x, dtype=float))
        c = self.x - self.x.mean()
        self.s1 = np.concatenate([[0.0], np.cumsum(c)])
        self.s2 = np.concatenate([[0.0], np.cumsum(c * c)])
        self.N = self.x.size

    def products(self, starts, ends):
        """W_h * s_h for index ranges [start, end), vectorized; s_h = 0 for n_h < 2."""
        n = ends - starts
        sum1 = self.s1[ends] - self.s1[starts]
        sum2 = self.s2[ends] - self.s2[starts]
        with np.errstate(divide="ignore", invalid="ignore"):
            var = (sum2 - sum1 * sum1 / n) / (n - 1)
        var = np.where(n >= 2, np.maximum(var, 0.0), 0.0)
        return (n / self.N) * np.sqrt(var)


def product_spread(products: np.ndarray) -> np.ndarray:
    """max_h |p_h - mean(p)| / mean(p) along the last axis (inf when all p are 0)."""
    p = np.asarray(products, dtype=float)
    m = p.mean(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(p - m[..., None]).max(axis=-1) / m
    return np.where(m > 0, out, np.inf)


def dg_spread(cpi: Sequence[float], cuts: Sequence[float]) -> float:
    """Relative spread of W_h s_h for the strata induced by ``cuts``."""
    s = _Sorted(cpi)
    idx = np.searchsorted(s.x, np.asarray(cuts, dtype=float), side="left")
    bounds = np.concatenate([[0], idx, [s.N]])
    return float(product_spread(s.products(bounds[:-1], bounds[1:])))


def _separate(s: _Sorted, cut_idx: np.ndarray) -> np.ndarray:
    """Nudge cut positions onto distinct run starts so no stratum starts empty.

    Equidistant cuts over a range stretched by outliers often coincide; the
    lowest coinciding cut keeps its place and the others move to the nearest
    free run starts, upward first and then downward from the top.
    """
    runs = np.flatnonzero(np.concatenate([[True], s.x[1:] != s.x[:-1]]))[1:]
    pos = np.searchsorted(runs, cut_idx, side="left").clip(0, runs.size - 1)
    m = pos.size
    for j in range(1, m):
        pos[j] = max(pos[j], pos[j - 1] + 1)
    pos[-1] = min(pos[-1], runs.size - 1)
    for j in range(m - 2, -1, -1):
        pos[j] = min(pos[j], pos[j + 1] - 1)
    return runs[pos].copy()


def _run_starts(s: _Sorted) -> np.ndarray:
    return np.flatnonzero(np.concatenate([[True], s.x[1:] != s.x[:-1]]))


def _spread_at(s: _Sorted, cut_idx) -> float:
    b = np.concatenate([[0], cut_idx, [s.N]])
    return float(product_spread(s.products(b[:-1], b[1:])))


def _equalize(s: _Sorted, cut_idx: np.ndarray, L: int, tol: float, max_iter: int):
    """Sweeps that move each boundary to balance W_h s_h of the two strata it separates.

    A single boundary only changes its two neighbouring products, so judging a
    move by the global spread stalls whenever the worst stratum is elsewhere.
    Local balancing propagates through repeated sweeps; the best global
    spread seen is kept.
    """
    runs = _run_starts(s)
    best_idx, best = cut_idx.copy(), _spread_at(s, cut_idx)
    it = 0
    while best > tol and it < max_iter:
        it += 1
        moved = False
        for j in range(L - 1):
            lo = cut_idx[j - 1] if j > 0 else 0
            hi = cut_idx[j + 1] if j < L - 2 else s.N
            cand = runs[(runs > lo) & (runs < hi)]
            if cand.size == 0:
                continue
            gap = np.abs(s.products(np.full(cand.size, lo), cand) - s.products(cand, np.full(cand.size, hi)))
            pick = int(cand[np.argmin(gap)])
            if pick != cut_idx[j]:
                cut_idx = cut_idx.copy()
                cut_idx[j] = pick
                moved = True
        spread = _spread_at(s, cut_idx)
        if spread < best:
            best, best_idx = spread, cut_idx.copy()
        if not moved:
            break
    return best_idx, best, it


def _refine(s: _Sorted, cut_idx: np.ndarray, L: int, tol: float, max_iter: int):
    """Coordinate descent over boundary positions (indices into the sorted values).

    A boundary at index i puts sorted values [.., i) below the cut. Candidate
    positions are the starts of runs of equal values, so tied CPIs never
    straddle a cut.
    """
    run_starts = _run_starts(s)

    def score(ci):
        b = np.concatenate([[0], ci, [s.N]])
        p = s.products(b[:-1], b[1:])
        return float(product_spread(p)), float(np.var(p))

    best = score(cut_idx)
    it = 0
    while best[0] > tol and it < max_iter:
        it += 1
        moved = False
        for j in range(L - 1):
            lo = cut_idx[j - 1] if j > 0 else 0
            hi = cut_idx[j + 1] if j < L - 2 else s.N
            cand = run_starts[(run_starts > lo) & (run_starts < hi)]
            if cand.size == 0:
                continue
            b = np.tile(np.concatenate([[0], cut_idx, [s.N]]), (cand.size, 1))
            b[:, j + 1] = cand
            p = s.products(b[:, :-1], b[:, 1:])
            spreads = product_spread(p)
            # lexicographic: spread first, then variance of products to keep moving on plateaus
            order = np.lexsort((p.var(axis=1), spreads))
            pick = int(cand[order[0]])
            new = (float(spreads[order[0]]), float(p[order[0]].var()))
            if new < best and pick != cut_idx[j]:
                cut_idx = cut_idx.copy()
                cut_idx[j] = pick
                best = new
                moved = True
        if not moved:
            break
    return cut_idx, _spread_at(s, cut_idx), it


def dalenius_gurney(
    cpi: Mapping[str, float],
    L: int,
    tol: float = 0.05,
    max_iter: int = 100,
) -> tuple[Stratification, CpiBoundaries]:
    """Choose CPI cut points so that W_h * s_h is (approximately) equal across strata.

    Starts from equidistant cuts over [min, max] and moves them over observed
    CPI values, first balancing neighbouring strata sweep by sweep, then by
    coordinate descent on the global spread, until the relative spread of
    W_h s_h is within ``tol`` or ``max_iter`` passes have run (or no move
    helps). The stratum "centroid" is its mean CPI.
    """
    if L < 2:
        raise SamplingError(f"L must be at least 2, got {L}")
    ids = list(cpi)
    x = np.array([cpi[r] for r in ids], dtype=float)
    if np.unique(x).size < L:
        raise DegenerateCpi(f"need at least {L} distinct CPI values, got {np.unique(x).size}")

    s = _Sorted(x)
    lo, hi = s.x[0], s.x[-1]
    start = lo + (hi - lo) * np.arange(1, L) / L
    cut_idx = _separate(s, np.searchsorted(s.x, start, side="left"))
    cut_idx, spread, it1 = _equalize(s, cut_idx, L, tol, max_iter)
    # polish against the global spread with whatever iterations remain
    cut_idx, spread, it2 = _refine(s, cut_idx, L, tol, max_iter - it1)
    iterations = it1 + it2

    bounds = np.concatenate([[0], cut_idx, [s.N]])
    if np.any(np.diff(bounds) == 0):
        raise EmptyStratumUnrecoverable("refinement left an empty CPI stratum")
    cuts = tuple(float(s.x[i]) for i in cut_idx)
    boundaries = CpiBoundaries(cuts, spread, iterations, spread <= tol)

    labels = np.searchsorted(np.array(cuts), x, side="right")
    edges = (-math.inf,) + cuts + (math.inf,)
    intervals = [(edges[h], edges[h + 1]) for h in range(L)]
    centroids = [(float(x[labels == h].mean()),) for h in range(L)]
    info = {
        "cuts": list(cuts),
        "spread": spread,
        "tol": tol,
        "iterations": iterations,
        "converged": spread <= tol,
    }
    strat = _build(DALENIUS_GURNEY, ids, labels, L, None, centroids=centroids,
                   intervals=intervals, info=info)
    return strat, boundaries


# ---------------------------------------------------------------------------
# collapsing


def stratum_means(strat: Stratification, values: Mapping[str, float]) -> dict[int, float]:
    """Mean of ``values`` over each stratum's members."""
    sums = {s.stratum_id: 0.0 for s in strat.strata}
    for rid, h in strat.assignment.items():
        sums[h] += values[rid]
    return {h: sums[h] / strat.strata[h].size for h in sums}


def pair_strata(strat: Stratification, baseline_cpi_means: Mapping[int, float]) -> CollapsedPairing:
    """Pair neighbouring strata in order of baseline mean CPI.

    With an odd number of strata the last three (highest CPI) form one group.
    Passing the sampled units' baseline CPI instead of stratum means orders by
    the sampled unit.
    """
    L = strat.L
    if L < 2:
        raise SamplingError("pairing needs at least two strata")
    order = sorted((s.stratum_id for s in strat.strata), key=lambda h: (baseline_cpi_means[h], h))
    groups = [tuple(order[i:i + 2]) for i in range(0, L - 3 if L % 2 else L, 2)]
    if L % 2:
        groups.append(tuple(order[-3:]))
    return CollapsedPairing(tuple(groups))


def save_assignment(strat: Stratification, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("region_id,stratum_id\n")
        for rid, h in strat.assignment.items():
            fh.write(f"{rid},{h}\n")


def load_assignment(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "region_id,stratum_id":
            raise SamplingError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if line:
                rid, h = line.split(",")
                out[rid] = int(h)
    return out


def save_stratification(strat: Stratification, manifest_path, assignment_path) -> None:
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(strat.to_manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_assignment(strat, assignment_path)


def load_stratification(manifest_path, assignment_path) -> Stratification:
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return Stratification.from_manifest(manifest, load_assignment(assignment_path))
