"""Region records, basic-block vectors and feature matrices.

Region CSV layout: a header row with ``region_id,instr_count,cpi``; every other
column is a numeric metric (per-instruction event rate). BBV files are CSV
triplets ``region_id,block_id,count`` with an optional header.

Standardization uses the sample standard deviation (divisor n-1), the same
variance convention as the estimators.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AllColumnsConstant,
    DuplicateRegionId,
    EmptyFile,
    InvalidRegion,
    MissingColumn,
    NegativeCount,
    NonNumericValue,
    SamplingError,
    UnknownRegion,
    ZeroRowSum,
)

REQUIRED_COLUMNS = ("region_id", "instr_count", "cpi")

STANDARDIZED_RFV = "standardized-RFV"
PROJECTED_BBV = "projected-BBV"
CPI_ONLY = "cpi-only"
PROVENANCES = (STANDARDIZED_RFV, PROJECTED_BBV, CPI_ONLY)

DEFAULT_PROJECTION_DIMS = 15


@dataclass(frozen=True)
class Region:
    region_id: str
    instr_count: int
    cpi: float
    metrics: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.region_id:
            raise InvalidRegion("empty region_id")
        if self.instr_count <= 0:
            raise InvalidRegion(f"{self.region_id}: instr_count must be positive")
        if not (self.cpi > 0 and math.isfinite(self.cpi)):
            raise InvalidRegion(f"{self.region_id}: cpi must be positive and finite")
        for m in self.metrics:
            if not (m >= 0 and math.isfinite(m)):
                raise InvalidRegion(f"{self.region_id}: metrics must be finite and non-negative")


@dataclass(frozen=True)
class Population:
    regions: tuple[Region, ...]
    metric_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "metric_names", tuple(self.metric_names))
        if len(self.regions) < 2:
            raise SamplingError("a population needs at least two regions")
        seen = set()
        for r in self.regions:
            if r.region_id in seen:
                raise DuplicateRegionId(r.region_id)
            seen.add(r.region_id)
            if len(r.metrics) != len(self.metric_names):
                raise InvalidRegion(
                    f"{r.region_id}: expected {len(self.metric_names)} metrics, got {len(r.metrics)}"
                )

    def __len__(self):
        return len(self.regions)

    @property
    def region_ids(self) -> list[str]:
        return [r.region_id for r in self.regions]

    @property
    def cpi(self) -> np.ndarray:
        return np.array([r.cpi for r in self.regions], dtype=float)

    def cpi_map(self) -> dict[str, float]:
        return {r.region_id: r.cpi for r in self.regions}

    def metric_matrix(self) -> np.ndarray:
        return np.array([r.metrics for r in self.regions], dtype=float).reshape(
            len(self.regions), len(self.metric_names)
        )


@dataclass(frozen=True)
class BbvTable:
    """Sparse (region_id, block_id) -> execution count mapping."""

    entries: Mapping[tuple[str, str], float]

    @property
    def block_ids(self) -> list[str]:
        return sorted({b for _, b in self.entries})

    @property
    def dimension(self) -> int:
        return len({b for _, b in self.entries})

    @property
    def region_ids(self) -> list[str]:
        seen = {}
        for r, _ in self.entries:
            seen.setdefault(r, None)
        return list(seen)

    def check_against(self, pop: Population):
        known = set(pop.region_ids)
        for r, _ in self.entries:
            if r not in known:
                raise UnknownRegion(r)


@dataclass(frozen=True)
class FeatureMatrix:
    region_ids: tuple[str, ...]
    values: np.ndarray
    provenance: str
    columns: tuple[str, ...] = ()
    dropped: tuple[str, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != len(self.region_ids):
            raise ValueError("feature matrix must have one row per region")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "region_ids", tuple(self.region_ids))
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "dropped", tuple(self.dropped))
        object.__setattr__(self, "_index", {r: i for i, r in enumerate(self.region_ids)})

    @property
    def shape(self):
        return self.values.shape

    def row(self, region_id: str) -> np.ndarray:
        return self.values[self._index[region_id]]

    def rows(self, region_ids: Iterable[str]) -> np.ndarray:
        return self.values[[self._index[r] for r in region_ids]]


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise NonNumericValue(row, column, text) from None
    if not math.isfinite(value):
        raise NonNumericValue(row, column, text)
    return value


def load_regions(path, schema: Mapping[str, str] | None = None) -> Population:
    """Read a region CSV into a validated :class:`Population`.

    ``schema`` maps the canonical names ``region_id``, ``instr_count`` and
    ``cpi`` to the column names used in the file. Rows are numbered from 1,
    not counting the header.
    """
    schema = dict(schema or {})
    names = {c: schema.get(c, c) for c in REQUIRED_COLUMNS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path}: no header")
        header = [h.strip() for h in header]
        for canonical in REQUIRED_COLUMNS:
            if names[canonical] not in header:
                raise MissingColumn(names[canonical])
        idx = {c: header.index(names[c]) for c in REQUIRED_COLUMNS}
        metric_cols = [i for i, h in enumerate(header) if i not in idx.values()]
        metric_names = tuple(header[i] for i in metric_cols)

        regions = []
        seen = set()
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InvalidRegion(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
            rid = row[idx["region_id"]].strip()
            if rid in seen:
                raise DuplicateRegionId(rid)
            seen.add(rid)
            instr = _parse_float(row[idx["instr_count"]], rownum, names["instr_count"])
            if instr != int(instr):
                raise NonNumericValue(rownum, names["instr_count"], row[idx["instr_count"]])
            cpi = _parse_float(row[idx["cpi"]], rownum, names["cpi"])
            metrics = tuple(_parse_float(row[i], rownum, header[i]) for i in metric_cols)
            try:
                regions.append(Region(rid, int(instr), cpi, metrics))
            except InvalidRegion as exc:
                raise InvalidRegion(f"row {rownum}: {exc}") from None
    if not regions:
        raise EmptyFile(f"{path}: no data rows")
    return Population(tuple(regions), metric_names)


def save_regions(pop: Population, path) -> None:
    # repr() gives the shortest string that parses back to the same double
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED_COLUMNS) + list(pop.metric_names))
        for r in pop.regions:
            w.writerow([r.region_id, r.instr_count, repr(r.cpi)] + [repr(m) for m in r.metrics])


def load_bbvs(path, population: Population | None = None) -> BbvTable:
    """Read ``region_id,block_id,count`` triplets; repeated pairs are summed."""
    entries: dict[tuple[str, str], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rownum, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InvalidRegion(f"{path}: line {rownum} is not a triplet")
            rid, bid, count = (c.strip() for c in row)
            if rownum == 1 and (rid, bid, count) == ("region_id", "block_id", "count"):
                continue
            value = _parse_float(count, rownum, "count")
            if value < 0:
                raise NegativeCount(f"line {rownum}: count {count} for ({rid}, {bid})")
            entries[(rid, bid)] = entries.get((rid, bid), 0.0) + value
    if not entries:
        raise EmptyFile(f"{path}: no BBV triplets")
    table = BbvTable(entries)
    if population is not None:
        table.check_against(population)
    return table


def save_bbvs(table: BbvTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "block_id", "count"])
        for (rid, bid), count in table.entries.items():
            w.writerow([rid, bid, repr(count) if count != int(count) else int(count)])


def standardize_rfv(pop: Population, include_cpi: bool = True) -> FeatureMatrix:
    """Z-score each metric column (and CPI, if requested) across regions.

    Constant columns carry no clustering information and are dropped; their
    names end up in ``FeatureMatrix.dropped``.
    """
    names = (["cpi"] if include_cpi else []) + list(pop.metric_names)
    parts = ([pop.cpi[:, None]] if include_cpi else []) + [pop.metric_matrix()]
    raw = np.hstack(parts) if names else np.empty((len(pop), 0))

    keep, dropped = [], []
    for j, name in enumerate(names):
        col = raw[:, j]
        (dropped if np.all(col == col[0]) else keep).append((j, name))
    if not keep:
        raise AllColumnsConstant("every feature column is constant")
    cols = raw[:, [j for j, _ in keep]]
    z = (cols - cols.mean(axis=0)) / cols.std(axis=0, ddof=1)
    return FeatureMatrix(
        tuple(pop.region_ids),
        z,
        STANDARDIZED_RFV,
        columns=tuple(n for _, n in keep),
        dropped=tuple(n for _, n in dropped),
    )


def cpi_features(cpi: Mapping[str, float]) -> FeatureMatrix:
    """One-column feature matrix of raw CPI, used for CPI-boundary strata."""
    ids = list(cpi)
    return FeatureMatrix(tuple(ids), np.array([[cpi[r]] for r in ids], dtype=float), CPI_ONLY, ("cpi",))


def projection_matrix(block_ids: Sequence[str], dims: int, seed: int) -> np.ndarray:
    """Dense +-1/sqrt(dims) matrix with one row per block id (rows follow ``block_ids``)."""
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(len(block_ids), dims)) * 2 - 1
    return signs / math.sqrt(dims)


def random_project(
    bbvs: BbvTable,
    dims: int = DEFAULT_PROJECTION_DIMS,
    seed: int = 0,
    region_ids: Sequence[str] | None = None,
) -> FeatureMatrix:
    """Normalize each region's BBV to block frequencies and project to ``dims`` columns.

    Columns of the projection are indexed by sorted block id, so the result
    does not depend on the order regions appear in. Rows follow
    ``region_ids`` (default: order of first appearance in ``bbvs``).
    """
    blocks = bbvs.block_ids
    if dims < 1 or dims > len(blocks):
        raise SamplingError(f"dims must be in [1, {len(blocks)}], got {dims}")
    if region_ids is None:
        region_ids = bbvs.region_ids
    region_ids = list(region_ids)
    ridx = {r: i for i, r in enumerate(region_ids)}
    bidx = {b: j for j, b in enumerate(blocks)}

    dense = np.zeros((len(region_ids), len(blocks)))
    for (rid, bid), count in bbvs.entries.items():
        if rid not in ridx:
            raise UnknownRegion(rid)
        dense[ridx[rid], bidx[bid]] += count
    sums = dense.sum(axis=1)
    for rid, s in zip(region_ids, sums):
        if s <= 0:
            raise ZeroRowSum(rid)
    freq = dense / sums[:, None]
    proj = projection_matrix(blocks, dims, seed)
    # row at a time: each output row is computed identically wherever it sits
    projected = np.array([row @ proj for row in freq]).reshape(len(region_ids), dims)
    return FeatureMatrix(
        tuple(region_ids), projected, PROJECTED_BBV, columns=tuple(f"p{j}" for j in range(dims))
    )
