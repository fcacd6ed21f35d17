import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase.errors import EdgeMismatch, EmptyInput
from twophase.report import (
    GapReport,
    Histogram,
    approx_counts,
    approx_distribution,
    approx_labels,
    gap_report,
    histogram,
    largest_remainder,
    plot_histogram,
    write_gaps_csv,
    write_histogram_csv,
)
from twophase.selection import Pick, RegionSelection, weighted_point_estimate


def sel_of(weights):
    return RegionSelection(tuple(Pick(h, f"r{h}", w) for h, w in enumerate(weights)), "MEAN_CPI")


def ymap(values):
    return {f"r{h}": float(v) for h, v in enumerate(values)}


# -- histogram -------------------------------------------------------------


def test_hand_count():
    h = histogram([1, 2, 3], 2)
    np.testing.assert_array_equal(h.edges, [1, 2, 3])
    assert h.counts.tolist() == [1, 2]


def test_all_equal_single_bin():
    h = histogram([2.5] * 7, 5)
    assert (h.counts > 0).sum() == 1
    assert h.total == 7


def test_uniform_counts():
    x = np.random.default_rng(0).uniform(0, 1, 10_000)
    h = histogram(x, 10)
    assert np.all(np.abs(h.counts - 1000) <= 150)


def test_histogram_errors():
    with pytest.raises(EmptyInput):
        histogram([], 3)
    with pytest.raises(ValueError):
        histogram([1.0, 5.0], [2.0, 3.0])
    with pytest.raises(ValueError):
        Histogram([0, 0, 1], [1, 1])


def test_composition():
    h = histogram([1, 1.5, 2, 2.5, 3], 2, strata=[0, 1, 0, 1, 1])
    assert h.composition[0].tolist() == [1, 1]
    assert h.composition[1].tolist() == [1, 2]
    assert sum(c for c in h.composition.values()).tolist() == h.counts.tolist()


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300), st.integers(1, 60))
def test_counts_sum(values, bins):
    h = histogram(values, bins)
    assert h.total == len(values)
    assert np.all(np.diff(h.edges) > 0)


# -- approximated distribution ---------------------------------------------


def test_approx_examples():
    assert sorted(approx_distribution(sel_of([0.5, 0.5]), ymap([1, 3]), 4)) == [1, 1, 3, 3]
    out = approx_distribution(sel_of([0.3, 0.7]), ymap([1, 2]), 10)
    assert out.count(1.0) == 3 and out.count(2.0) == 7
    assert largest_remainder([1 / 3] * 3, 10) == [4, 3, 3]
    assert approx_counts(sel_of([1 / 3] * 3), ymap([1.0, 1.1, 1.2]), 10) == [4, 3, 3]


def test_labels_follow_counts():
    sel = sel_of([0.2, 0.3, 0.5])
    y = ymap([1, 2, 3])
    labels = approx_labels(sel, y, 10)
    assert labels == [0, 0, 1, 1, 1, 2, 2, 2, 2, 2]


def test_rounding_repair():
    # quotas 1.6, 1.6, 1.6, 2.6, 2.6: plain largest remainder rounds up the three 10s
    w = [0.16, 0.16, 0.16, 0.26, 0.26]
    y = [10.0, 10.0, 10.0, 0.0, 0.0]
    exact = sum(wi * yi for wi, yi in zip(w, y))
    lr = largest_remainder(w, 10)
    assert lr == [2, 2, 2, 2, 2]
    assert abs(np.dot(lr, y) / 10 - exact) == pytest.approx(1.2)
    counts = approx_counts(sel_of(w), ymap(y), 10)
    assert sum(counts) == 10
    assert all(abs(c - wi * 10) < 1 for c, wi in zip(counts, w))
    assert abs(np.dot(counts, y) / 10 - exact) <= 1.0


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(0.001, 1.0), min_size=1, max_size=40),
    st.lists(st.floats(-50, 50, allow_nan=False), min_size=40, max_size=40),
    st.integers(0, 5000),
)
def test_length_and_mean_bound(raw, yv, extra):
    w = [x / sum(raw) for x in raw]
    sel = sel_of(w)
    y = ymap(yv[: len(w)])
    n = len(w) + extra
    out = approx_distribution(sel, y, n)
    assert len(out) == n
    bound = max(abs(v) for v in y.values()) / n
    assert abs(np.mean(out) - weighted_point_estimate(sel, y)) <= bound * (1 + 1e-9) + 1e-12


# -- gaps ------------------------------------------------------------------


def test_identical_no_gaps():
    h = histogram([1, 2, 2, 2, 3, 3, 3], 4)
    assert len(gap_report(h, h)) == 0


def test_gap_pattern():
    edges = np.arange(0.5, 3.01, 0.5)
    base = histogram(np.r_[np.full(5, 0.7), np.full(6, 1.7), np.full(4, 2.7)], edges)
    approx = histogram(np.r_[np.full(9, 0.7), np.full(6, 2.7)], edges)
    g = gap_report(base, approx)
    assert g.intervals == ((1.5, 2.0),)


def test_gap_runs_are_maximal_and_thresholded():
    edges = np.arange(0.0, 6.01, 1.0)
    base = Histogram(edges, [5, 5, 5, 2, 5, 5])
    approx = Histogram(edges, [1, 0, 0, 0, 0, 1])
    g = gap_report(base, approx, min_count=3)
    assert g.intervals == ((1.0, 3.0), (4.0, 5.0))
    assert gap_report(base, approx, min_count=2).intervals == ((1.0, 5.0),)


def test_superset_support_no_gaps():
    edges = np.linspace(0, 4, 9)
    base = histogram(np.repeat([0.3, 1.1, 2.2], 5), edges)
    approx = histogram(np.linspace(0, 4, 200), edges)
    assert gap_report(base, approx).intervals == ()


def test_edge_mismatch():
    with pytest.raises(EdgeMismatch):
        gap_report(histogram([1, 2, 3], 2), histogram([1, 2, 3], 3))


def test_writers(tmp_path):
    h = histogram([1, 1.5, 2, 2.5, 3], 2, strata=[0, 1, 0, 1, 1])
    write_histogram_csv(h, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count,stratum_id,count,stratum_id,count"
    assert lines[1] == "1.0,2.0,2,0,1,1,1"
    write_gaps_csv(GapReport(((1.5, 2.0),)), tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text() == "cpi_lo,cpi_hi\n1.5,2.0\n"


def test_svg_is_reproducible(tmp_path):
    h = histogram(np.random.default_rng(0).lognormal(0, 0.5, 500), 30, strata=np.arange(500) % 4)
    plot_histogram(h, tmp_path / "a.svg", title="x", gaps=GapReport(((1.0, 1.2),)))
    plot_histogram(h, tmp_path / "b.svg", title="x", gaps=GapReport(((1.0, 1.2),)))
    a = (tmp_path / "a.svg").read_bytes()
    assert a == (tmp_path / "b.svg").read_bytes()
    assert a.startswith(b"<?xml")
