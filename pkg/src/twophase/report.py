"""CPI histograms, distributions approximated from a selection, and gap lists.

Figures are written through matplotlib's Agg backend. SVG output is made
byte-reproducible by pinning the SVG hash salt and dropping the date stamp.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import EdgeMismatch, EmptyInput, MissingValue, SamplingError  # noqa: E402
from .selection import RegionSelection  # noqa: E402

DEFAULT_BINS = 50
DEFAULT_MIN_COUNT = 3
PALETTE = [matplotlib.colormaps["tab20"](i) for i in range(20)]


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    # stratum id -> per-bin counts
    composition: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts, dtype=int)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise SamplingError("histogram edges must be strictly increasing")
        if counts.size != edges.size - 1:
            raise SamplingError("need one count per bin")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def default_edges(values: Sequence[float], bins: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def histogram(
    values: Sequence[float],
    bins: int | Sequence[float] = DEFAULT_BINS,
    strata: Sequence[int] | None = None,
) -> Histogram:
    """Count values into bins; bins are right-open except the last.

    ``bins`` is a bin count (edges span [min, max]) or explicit edges, which
    must cover every value. ``strata`` optionally labels each value with a
    stratum id to record the per-bin composition.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyInput("histogram of no values")
    if np.isscalar(bins) or isinstance(bins, (int, np.integer)):
        if int(bins) < 1:
            raise SamplingError("bins must be at least 1")
        edges = default_edges(v, int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
        if edges.size >= 2 and (v.min() < edges[0] or v.max() > edges[-1]):
            raise SamplingError("explicit edges do not cover all values")
    counts, _ = np.histogram(v, bins=edges)
    composition = {}
    if strata is not None:
        labels = np.asarray(strata)
        if labels.size != v.size:
            raise SamplingError("one stratum label per value")
        for h in sorted(set(labels.tolist())):
            composition[int(h)] = np.histogram(v[labels == h], bins=edges)[0]
    return Histogram(edges, counts, composition)


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Integer counts proportional to ``weights`` summing to ``total``.

    Each stratum gets floor(W_h * total); leftover units go to the largest
    fractional remainders, ties to the earlier stratum.
    """
    w = np.asarray(weights, dtype=float)
    quota = w / w.sum() * total
    base = np.floor(quota + 1e-9).astype(int)
    rem = quota - base
    short = total - int(base.sum())
    order = sorted(range(w.size), key=lambda i: (-rem[i], i))
    for i in order[:short]:
        base[i] += 1
    return [int(c) for c in base]


def _mean_preserving(quota: np.ndarray, counts: list[int], y: np.ndarray) -> list[int]:
    """Re-pick which strata round up when largest remainder moves the total too far.

    The k round-ups may go to any k strata. Walking from the k smallest y to
    the k largest by single swaps changes sum(count * y) in steps no larger
    than 2 max|y|, so some set on the walk lands within max|y| of
    sum(quota * y). The closest such set is used.
    """
    base = np.floor(quota + 1e-9).astype(int)
    k = int(sum(counts) - base.sum())
    L = quota.size
    if k <= 0 or k >= L:
        return counts
    target = float(np.dot(quota - base, y))
    order = sorted(range(L), key=lambda i: (y[i], i))
    up = list(order[:k])
    best, best_err = list(up), abs(sum(y[i] for i in up) - target)
    # slide members upward one position at a time, highest member first
    pos = list(range(k))
    for m in range(k - 1, -1, -1):
        limit = L - (k - m)
        while pos[m] < limit:
            pos[m] += 1
            up[m] = order[pos[m]]
            err = abs(sum(y[i] for i in up) - target)
            if err < best_err:
                best, best_err = list(up), err
    out = base.copy()
    out[best] += 1
    return [int(c) for c in out]


def approx_counts(sel: RegionSelection, y: Mapping[str, float], n_total: int) -> list[int]:
    """Copies of each chosen region: largest remainder on W_h * n_total.

    When plain largest remainder would shift the synthesized mean by more than
    max|y| / n_total away from the weighted point estimate, the round-ups are
    reassigned (see :func:`_mean_preserving`).
    """
    if n_total < len(sel.picks):
        raise SamplingError(f"n_total must be at least the number of strata ({len(sel.picks)})")
    for p in sel.picks:
        if p.region_id not in y:
            raise MissingValue(p.region_id)
    w = np.asarray(sel.weights, dtype=float)
    quota = w / w.sum() * n_total
    counts = largest_remainder(w, n_total)
    vals = np.array([float(y[p.region_id]) for p in sel.picks])
    bound = float(np.abs(vals).max())
    if abs(float(np.dot(np.array(counts) - quota, vals))) > bound:
        counts = _mean_preserving(quota, counts, vals)
    return counts


def approx_distribution(sel: RegionSelection, y: Mapping[str, float], n_total: int) -> list[float]:
    """Synthesize ``n_total`` values: about W_h * n_total copies of each chosen region's y."""
    out = []
    for p, c in zip(sel.picks, approx_counts(sel, y, n_total)):
        out.extend([float(y[p.region_id])] * c)
    return out


def approx_labels(sel: RegionSelection, y: Mapping[str, float], n_total: int) -> list[int]:
    """Stratum id of each value emitted by :func:`approx_distribution`."""
    return [p.stratum_id for p, c in zip(sel.picks, approx_counts(sel, y, n_total)) for _ in range(c)]


@dataclass(frozen=True)
class GapReport:
    intervals: tuple[tuple[float, float], ...]
    min_count: int = DEFAULT_MIN_COUNT

    def __len__(self):
        return len(self.intervals)


def gap_report(baseline: Histogram, approx: Histogram, min_count: int = DEFAULT_MIN_COUNT) -> GapReport:
    """Maximal runs of bins populated in the baseline but empty in the approximation."""
    if baseline.edges.shape != approx.edges.shape or not np.array_equal(baseline.edges, approx.edges):
        raise EdgeMismatch("histograms must share bin edges")
    hit = (baseline.counts >= min_count) & (approx.counts == 0)
    intervals = []
    start = None
    for i, flag in enumerate(hit):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            intervals.append((float(baseline.edges[start]), float(baseline.edges[i])))
            start = None
    if start is not None:
        intervals.append((float(baseline.edges[start]), float(baseline.edges[-1])))
    return GapReport(tuple(intervals), min_count)


# ---------------------------------------------------------------------------
# writers


def write_histogram_csv(hist: Histogram, path) -> None:
    strata = sorted(hist.composition)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["bin_lo", "bin_hi", "count"]
        for h in strata:
            header += ["stratum_id", "count"]
        w.writerow(header)
        for i, c in enumerate(hist.counts):
            row = [repr(float(hist.edges[i])), repr(float(hist.edges[i + 1])), int(c)]
            for h in strata:
                row += [h, int(hist.composition[h][i])]
            w.writerow(row)


def write_gaps_csv(gaps: GapReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cpi_lo", "cpi_hi"])
        for lo, hi in gaps.intervals:
            w.writerow([repr(lo), repr(hi)])


def _save(fig, path):
    with matplotlib.rc_context({"svg.hashsalt": "twophase", "svg.fonttype": "none"}):
        fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_histogram(hist: Histogram, path, title: str = "", xlabel: str = "CPI", gaps: GapReport | None = None):
    """Bar chart of a histogram; stacked and colored by stratum when composition is present."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    widths = np.diff(hist.edges)
    left = hist.edges[:-1]
    if hist.composition:
        bottom = np.zeros(hist.counts.size)
        for k, h in enumerate(sorted(hist.composition)):
            c = hist.composition[h]
            ax.bar(left, c, width=widths, bottom=bottom, align="edge",
                   color=PALETTE[k % len(PALETTE)], linewidth=0)
            bottom = bottom + c
    else:
        ax.bar(left, hist.counts, width=widths, align="edge", color="0.35", linewidth=0)
    if gaps is not None:
        for lo, hi in gaps.intervals:
            ax.axvspan(lo, hi, color="tab:red", alpha=0.15, linewidth=0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("regions")
    if title:
        ax.set_title(title)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def plot_error_strips(rows: Sequence[Mapping], path, value_key: str = "rel_error", title: str = ""):
    """One vertical strip of markers per (scheme, policy); used for per-config error charts."""
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(f"{r['scheme']}\n{r['policy']}", []).append(100 * float(r[value_key]))
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(groups)), 3.5))
    for i, (label, vals) in enumerate(groups.items()):
        ax.plot([i] * len(vals), vals, "o", ms=4, color=PALETTE[(2 * i) % len(PALETTE)])
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(list(groups), fontsize=7)
    ax.set_ylabel("relative error (%)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_margins(rows: Sequence[Mapping], path, keys: Sequence[str], title: str = ""):
    """Grouped points of relative margins (in %) per scheme, one marker per seed."""
    schemes = list(dict.fromkeys(r["scheme"] for r in rows))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, key in enumerate(keys):
        for i, scheme in enumerate(schemes):
            vals = [100 * float(r[key]) for r in rows if r["scheme"] == scheme and not _isnan(r[key])]
            ax.plot([i + 0.2 * (k - (len(keys) - 1) / 2)] * len(vals), vals, "o", ms=4,
                    color=PALETTE[(2 * k) % len(PALETTE)], label=key if i == 0 else None)
    ax.set_xticks(range(len(schemes)))
    ax.set_xticklabels(schemes)
    ax.set_ylabel("margin / error (%)")
    ax.legend(fontsize=7, frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def _isnan(v):
    try:
        return math.isnan(float(v))
    except (TypeError, ValueError):
        return True
