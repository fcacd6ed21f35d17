import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase.errors import (
    AllColumnsConstant,
    DuplicateRegionId,
    EmptyFile,
    MissingColumn,
    NegativeCount,
    NonNumericValue,
    UnknownRegion,
    ZeroRowSum,
)
from twophase.population import (
    PROJECTED_BBV,
    STANDARDIZED_RFV,
    BbvTable,
    load_bbvs,
    load_regions,
    random_project,
    save_regions,
    standardize_rfv,
)

from conftest import make_population, write_text


def test_load_three_rows(tmp_path):
    p = write_text(tmp_path / "r.csv", "region_id,instr_count,cpi\nr1,100,1.0\nr2,100,2.0\nr3,100,3.0\n")
    pop = load_regions(p)
    assert len(pop) == 3
    assert pop.cpi.tolist() == [1.0, 2.0, 3.0]
    assert pop.metric_names == ()


def test_extra_columns_are_metrics(tmp_path):
    p = write_text(tmp_path / "r.csv", "region_id,cpi,l2,instr_count\na,1.5,0.1,10\nb,2.5,0.3,10\n")
    pop = load_regions(p)
    assert pop.metric_names == ("l2",)
    assert pop.metric_matrix().ravel().tolist() == [0.1, 0.3]


def test_schema_mapping(tmp_path):
    p = write_text(tmp_path / "r.csv", "id,n,CPI\na,10,1.5\nb,10,2.5\n")
    pop = load_regions(p, schema={"region_id": "id", "instr_count": "n", "cpi": "CPI"})
    assert pop.region_ids == ["a", "b"]


def test_duplicate_region(tmp_path):
    p = write_text(tmp_path / "r.csv", "region_id,instr_count,cpi\nr7,1,1.0\nr8,1,1.0\nr7,1,2.0\n")
    with pytest.raises(DuplicateRegionId) as ei:
        load_regions(p)
    assert ei.value.region_id == "r7"


def test_non_numeric_row_number(tmp_path):
    rows = "".join(f"r{i},1,1.0\n" for i in range(1, 5)) + "r5,1,abc\n"
    p = write_text(tmp_path / "r.csv", "region_id,instr_count,cpi\n" + rows)
    with pytest.raises(NonNumericValue) as ei:
        load_regions(p)
    assert ei.value.row == 5


def test_missing_column_and_empty(tmp_path):
    with pytest.raises(MissingColumn):
        load_regions(write_text(tmp_path / "a.csv", "region_id,cpi\nr1,1\n"))
    with pytest.raises(EmptyFile):
        load_regions(write_text(tmp_path / "b.csv", ""))
    with pytest.raises(EmptyFile):
        load_regions(write_text(tmp_path / "c.csv", "region_id,instr_count,cpi\n"))


def test_bbv_dimension(tmp_path):
    t = load_bbvs(write_text(tmp_path / "b.csv", "r1,b1,10\nr1,b2,5\nr2,b1,3\n"))
    assert t.dimension == 2


def test_bbv_errors(tmp_path):
    with pytest.raises(EmptyFile):
        load_bbvs(write_text(tmp_path / "e.csv", ""))
    with pytest.raises(NegativeCount):
        load_bbvs(write_text(tmp_path / "n.csv", "r1,b1,-2\n"))
    pop = make_population([1.0, 2.0])
    with pytest.raises(UnknownRegion):
        load_bbvs(write_text(tmp_path / "u.csv", "r0000,b1,1\nzz,b1,1\n"), pop)


def test_standardize_sample_std():
    pop = make_population([1.0, 1.0, 1.0], [[1], [2], [3]], ["m"])
    fm = standardize_rfv(pop)
    # CPI is constant here, so it is dropped and only the metric survives
    assert fm.dropped == ("cpi",)
    assert fm.provenance == STANDARDIZED_RFV
    np.testing.assert_allclose(fm.values[:, 0], [-1.0, 0.0, 1.0], atol=1e-15)
    # the population-std convention would give +-1.2247; the sample convention is fixed
    assert not np.allclose(fm.values[:, 0], [-1.2247, 0, 1.2247], atol=1e-3)


def test_constant_column_dropped():
    pop = make_population([1.0, 2.0, 3.0], [[5, 1], [5, 4], [5, 2]], ["const", "x"])
    fm = standardize_rfv(pop)
    assert "const" in fm.dropped
    assert fm.columns == ("cpi", "x")


def test_all_constant():
    pop = make_population([2.0, 2.0], [[5], [5]], ["m"])
    with pytest.raises(AllColumnsConstant):
        standardize_rfv(pop)


def test_identical_regions_duplicate_rows():
    pop = make_population([1.0, 1.0, 2.0], [[3], [3], [4]], ["m"])
    fm = standardize_rfv(pop)
    np.testing.assert_array_equal(fm.values[0], fm.values[1])


def _bbv(n=12, blocks=30, seed=0):
    rng = np.random.default_rng(seed)
    entries = {}
    for i in range(n):
        for b in rng.choice(blocks, 8, replace=False):
            entries[(f"r{i}", f"b{b:03d}")] = float(rng.integers(1, 100))
    return BbvTable(entries)


def test_projection_shape_and_determinism():
    t = _bbv()
    a = random_project(t, dims=t.dimension, seed=4)
    assert a.shape == (12, t.dimension)
    assert a.provenance == PROJECTED_BBV
    b = random_project(t, dims=t.dimension, seed=4)
    assert a.values.tobytes() == b.values.tobytes()
    assert random_project(t, 5, seed=5).values.tobytes() != random_project(t, 5, seed=4).values.tobytes()


def test_projection_zero_row():
    t = BbvTable({("r1", "b1"): 3.0, ("r2", "b1"): 0.0})
    with pytest.raises(ZeroRowSum) as ei:
        random_project(t, 1, 0)
    assert ei.value.region_id == "r2"


def test_projection_scale_invariant():
    # frequencies, not raw counts: doubling a region's counts changes nothing
    t = _bbv()
    doubled = BbvTable({k: (2 * v if k[0] == "r3" else v) for k, v in t.entries.items()})
    np.testing.assert_array_equal(random_project(t, 6, 1).values, random_project(doubled, 6, 1).values)


@settings(max_examples=40, deadline=None)
@given(st.permutations(list(range(12))), st.integers(0, 2**31))
def test_projection_permutation(perm, seed):
    t = _bbv()
    ids = [f"r{i}" for i in range(12)]
    base = random_project(t, 7, seed, ids)
    shuffled_entries = dict(sorted(t.entries.items(), key=lambda kv: (perm.index(int(kv[0][0][1:])), kv[0][1])))
    other = random_project(BbvTable(shuffled_entries), 7, seed, [ids[i] for i in perm])
    assert other.values.tobytes() == base.values[perm].tobytes()


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(1e-3, 1e3, allow_nan=False),
            st.floats(0, 1e6, allow_nan=False),
            st.integers(1, 10**12),
        ),
        min_size=2,
        max_size=25,
    )
)
def test_standardize_moments_and_roundtrip(rows):
    import tempfile
    from pathlib import Path

    from twophase.population import Population, Region

    pop = Population([Region(f"r{i}", n, c, (m,)) for i, (c, m, n) in enumerate(rows)], ("m",))
    try:
        fm = standardize_rfv(pop)
    except AllColumnsConstant:
        pass
    else:
        assert np.all(np.abs(fm.values.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(fm.values.std(axis=0, ddof=1) - 1) < 1e-9)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "r.csv"
        save_regions(pop, p)
        assert load_regions(p) == pop
