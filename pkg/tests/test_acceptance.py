"""Acceptance checks; each test prints one PASS/FAIL line for its criterion."""

import hashlib
import json
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

import oracles
from conftest import ACCEPTANCE
from twophase.cli import main
from twophase.estimators import (
    CollapsedPairing,
    StratumSample,
    collapsed_strata_estimate,
    srs_estimate,
    stratified_estimate,
    two_phase_variance,
    two_phase_variance_p2only,
    z_quantile,
)
from twophase.montecarlo import Design, PhaseSpec, SynthSpec, coverage_experiment, perturbed_configs, scheme_comparison, synth_population
from twophase.planner import Phase1Stats, allocate_phase2, predicted_margin
from twophase.population import Population, random_project, standardize_rfv
from twophase.report import approx_distribution, gap_report, histogram
from twophase.selection import Pick, RegionSelection, weighted_point_estimate
from twophase.stratification import dalenius_gurney, kmeans_stratify, pair_strata, stratum_means


def verdict(n, text, ok, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}  [{elapsed:.2f}s < {limit}s]"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


# -- 1 ---------------------------------------------------------------------------


def test_criterion_1_oracle_equivalence():
    rng = random.Random(2024)
    t0 = time.perf_counter()
    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(b), 1e-300)

    for _ in range(100):
        L = rng.randint(2, 5)
        raw = [rng.uniform(0.05, 1) for _ in range(L)]
        w = [x / sum(raw) for x in raw]
        w[-1] = 1.0 - sum(w[:-1])
        strata = [(w[h], [rng.uniform(0.3, 6) for _ in range(rng.randint(2, 6))]) for h in range(L)]
        samples = [StratumSample(h, wh, ys) for h, (wh, ys) in enumerate(strata)]
        s2, n1 = rng.uniform(0.1, 4), rng.randint(50, 5000)
        ys = [y for _, v in strata for y in v]
        one = {h: (wh, v[0]) for h, (wh, v) in enumerate(strata)}
        groups = [(i, i + 1) for i in range(0, L - 3 if L % 2 else L, 2)]
        if L % 2:
            groups.append((L - 3, L - 2, L - 1))
        pairs = [
            (srs_estimate(ys), oracles.srs(ys)),
            (stratified_estimate(samples), oracles.stratified(strata)),
            (collapsed_strata_estimate([StratumSample(h, wh, (y,)) for h, (wh, y) in one.items()],
                                       CollapsedPairing(groups)), oracles.collapsed(one, groups)),
            (two_phase_variance(s2, n1, samples), oracles.two_phase(s2, n1, strata)),
            (two_phase_variance_p2only(n1, samples), oracles.two_phase_p2only(n1, strata)),
        ]
        for est, (m, v) in pairs:
            worst = max(worst, rel(est.mean, m), rel(est.var_of_mean, v))
    elapsed = time.perf_counter() - t0
    verdict(1, f"estimators vs direct-summation oracle over 100 designs, worst rel diff {worst:.1e} <= 1e-12",
            worst <= 1e-12, elapsed, 1)


# -- 2 ---------------------------------------------------------------------------

CAL_SPECS = {
    "normal": (PhaseSpec(1.0, "normal", {"mean": 1.5, "sd": 0.3}),),
    "lognormal": (PhaseSpec(1.0, "lognormal", {"median": 1.3, "sigma": 0.4}),),
    "bimodal": (PhaseSpec(0.6, "normal", {"mean": 0.9, "sd": 0.1}), PhaseSpec(0.4, "normal", {"mean": 2.4, "sd": 0.3})),
}


def test_criterion_2_srs_coverage():
    t0 = time.perf_counter()
    cov = {}
    for i, (name, phases) in enumerate(CAL_SPECS.items()):
        y = synth_population(SynthSpec(phases, n=5000, seed=i)).population.cpi_map()
        cov[name] = coverage_experiment(y, Design("srs", n=100), trials=10_000, master_seed=100 + i).coverage
    elapsed = time.perf_counter() - t0
    ok = all(0.93 <= c <= 0.97 for c in cov.values())
    verdict(2, "SRS n=100 coverage in [0.93, 0.97]: " + ", ".join(f"{k} {v:.4f}" for k, v in cov.items()),
            ok, elapsed, 30)


# -- 3 ---------------------------------------------------------------------------


def test_criterion_3_collapsed_conservative():
    t0 = time.perf_counter()
    spec = SynthSpec((PhaseSpec(0.6, "lognormal", {"median": 1.2, "sigma": 0.35}),
                      PhaseSpec(0.4, "normal", {"mean": 2.2, "sd": 0.3})), n=4000, seed=3)
    y = synth_population(spec).population.cpi_map()
    strat, _ = dalenius_gurney(y, 20)
    similar = pair_strata(strat, stratum_means(strat, y))
    # low strata paired with high ones
    mismatched = CollapsedPairing(tuple((h, h + 10) for h in range(10)))
    cov = {}
    for name, pairing in (("similar", similar), ("mismatched", mismatched)):
        d = Design("one_unit", strat=strat, pairing=pairing)
        cov[name] = coverage_experiment(y, d, trials=10_000, master_seed=31).coverage
    elapsed = time.perf_counter() - t0
    ok = cov["similar"] >= 0.93 and cov["mismatched"] >= 0.95
    verdict(3, f"collapsed-strata coverage: similar pairs {cov['similar']:.4f} >= 0.93, "
               f"mismatched pairs {cov['mismatched']:.4f} >= 0.95", ok, elapsed, 60)


# -- 4 ---------------------------------------------------------------------------


def test_criterion_4_dalenius_gurney():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    vals = 1.2 * np.exp(0.5 * rng.standard_normal(1000))
    y = {f"r{i:04d}": float(v) for i, v in enumerate(vals)}
    strat, bounds = dalenius_gurney(y, 4)
    members = strat.members()
    W = np.array([s.weight for s in strat.strata])
    S2 = np.array([np.var([y[r] for r in members[s.stratum_id]], ddof=1) for s in strat.strata])
    z = z_quantile(0.95)
    strat_margin = z * np.sqrt(np.sum(W**2 * S2 / 5))
    srs_margin = z * np.sqrt(vals.var(ddof=1) / 20)
    elapsed = time.perf_counter() - t0
    ok = bounds.spread <= 0.05 and strat_margin <= srs_margin
    verdict(4, f"DG L=4 spread {bounds.spread:.4f} <= 0.05; 20-sample stratified margin "
               f"{strat_margin:.4f} <= SRS n=20 margin {srs_margin:.4f}", ok, elapsed, 5)


# -- 5 ---------------------------------------------------------------------------

SUITE = {
    "n": 2000, "seed": 7, "rho": 0.9, "n_metrics": 6, "bbv_blocks": 200, "bbv_noise": 0.3,
    "phases": [
        {"proportion": 0.3, "dist": "normal", "params": {"mean": 0.8, "sd": 0.1}},
        {"proportion": 0.25, "dist": "lognormal", "params": {"median": 1.3, "sigma": 0.25}},
        {"proportion": 0.2, "dist": "normal", "params": {"mean": 2.0, "sd": 0.4}},
        {"proportion": 0.15, "dist": "lognormal", "params": {"median": 3.0, "sigma": 0.3}},
        {"proportion": 0.099, "dist": "normal", "params": {"mean": 1.1, "sd": 0.05}},
    ],
    "outlier": {"proportion": 0.001, "cpi": 28.0},
}
# the same mixture without the outlier component
SMOOTH = dict(SUITE, phases=SUITE["phases"][:-1] + [dict(SUITE["phases"][-1], proportion=0.1)], outlier=None)


def test_criterion_5_scheme_ordering():
    t0 = time.perf_counter()
    sp = synth_population(SynthSpec.from_dict(SUITE))
    pop = sp.population
    feats = {"RFV": standardize_rfv(pop), "BBV": random_project(sp.bbvs, 15, 1, pop.region_ids)}
    configs = perturbed_configs(pop.cpi_map(), 6, seed=3)
    tab = scheme_comparison(pop, feats, 20, configs, list(range(10)), trials=1000,
                            schemes=["RANDOM", "BBV", "RFV"])
    rfv_centroid = tab.max_error("RFV", "CENTROID")
    random_p95 = tab.margin("RANDOM", "empirical_p95")[0]
    bbv_centroid = tab.max_error("BBV", "CENTROID")
    bbv_mean = tab.max_error("BBV", "MEAN_CPI")
    elapsed = time.perf_counter() - t0
    ok = rfv_centroid <= 0.05 and random_p95 > rfv_centroid and bbv_mean < bbv_centroid
    verdict(5, f"(a) RFV centroid max error {rfv_centroid:.2%} <= 5%; (b) RANDOM p95 {random_p95:.2%} > "
               f"{rfv_centroid:.2%}; (c) BBV mean-CPI {bbv_mean:.2%} < BBV centroid {bbv_centroid:.2%}",
            ok, elapsed, 120)


# -- 6 ---------------------------------------------------------------------------


def test_criterion_6_two_phase_sizing():
    t0 = time.perf_counter()
    spec = SynthSpec.from_dict(dict(SMOOTH, n=20000, bbv_blocks=0))
    pop = synth_population(spec).population
    order = np.random.default_rng(6).permutation(len(pop))
    # grow the phase-1 sample until its own SRS margin reaches 2%
    n1 = 500
    while True:
        cpi = pop.cpi[order[:n1]]
        if z_quantile(0.95) * cpi.std(ddof=1) / np.sqrt(n1) / cpi.mean() <= 0.02:
            break
        n1 += 50
    phase1 = Population([pop.regions[i] for i in sorted(order[:n1])], pop.metric_names)
    strat = kmeans_stratify(standardize_rfv(phase1), 20, 0)
    stats = Phase1Stats.from_stratification(strat, phase1.cpi_map())
    alloc = allocate_phase2(stats, 1.5)
    n_h = [alloc.n_h[s.stratum_id] for s in stats.strata]
    eq6 = predicted_margin(stats, n_h)[0] / stats.mean
    elapsed = time.perf_counter() - t0
    ok = stats.relative_margin() <= 0.02 and eq6 <= 0.03 and 5 * alloc.total <= n1
    verdict(6, f"phase-1 n={n1} margin {stats.relative_margin():.2%}; predicted {eq6:.2%} <= 3%; "
               f"phase-2 n={alloc.total} ({n1 / alloc.total:.1f}x smaller, >= 5x)", ok, elapsed, 5)


# -- 7 ---------------------------------------------------------------------------


def test_criterion_7_report_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad_len = bad_mean = 0
    for _ in range(1000):
        L = int(rng.integers(1, 25))
        w = rng.dirichlet(np.full(L, 0.7))
        w[-1] = 1.0 - w[:-1].sum()
        if w[-1] <= 0:
            w = np.full(L, 1.0 / L)
        sel = RegionSelection(tuple(Pick(h, f"r{h}", float(w[h])) for h in range(L)), "TEST")
        y = {f"r{h}": float(v) for h, v in enumerate(rng.lognormal(0, 1, L))}
        n_total = int(rng.integers(L, 400))
        out = approx_distribution(sel, y, n_total)
        bad_len += len(out) != n_total
        bound = max(abs(v) for v in y.values()) / n_total
        bad_mean += abs(np.mean(out) - weighted_point_estimate(sel, y)) > bound + 1e-12
    base = histogram([0.5, 0.6, 1.6, 1.7, 1.8, 1.9, 2.6], [0, 1, 1.5, 2, 2.5, 3])
    approx = histogram([0.5, 0.6, 2.6], [0, 1, 1.5, 2, 2.5, 3])
    gaps = gap_report(base, approx, min_count=3)
    elapsed = time.perf_counter() - t0
    ok = bad_len == 0 and bad_mean == 0 and gaps.intervals == ((1.5, 2.0),)
    verdict(7, f"1000 vectors: {bad_len} length and {bad_mean} mean-bound violations; gaps {gaps.intervals}",
            ok, elapsed, 1)


# -- 8 ---------------------------------------------------------------------------


def _pipeline(root: Path, spec: Path, workers: int, launcher) -> dict:
    """Run every command once; return {relative path: sha256} for all files written."""
    root.mkdir()
    regions = root / "population.csv"
    steps = [
        ["validate", "--spec", spec, "--design", "two-phase", "--k", 6, "--phase1-n", 300, "--trials", 300,
         "--seed", 8, "--workers", workers, "--out", root / "validate"],
        ["characterize", regions, "--out", root / "characterize"],
        ["stratify", regions, "--scheme", "rfv", "--k", 12, "--seed", 3, "--out", root / "strata"],
        ["select", regions, "--strata", root / "strata", "--policy", "centroid", "--out", root / "select"],
        ["plan", regions, "--strata", root / "strata", "--seed", 5, "--out", root / "plan"],
        ["estimate", root / "plan" / "sample.csv", "--values", regions, "--method", "two-phase-p2only",
         "--phase1-n", 1000, "--drift-selection", root / "select" / "selection.csv", "--out", root / "estimate"],
        ["report", regions, "--selection", root / "select" / "selection.csv", "--strata", root / "strata",
         "--out", root / "report"],
        ["compare", "--spec", spec, "--k", 8, "--seeds", 2, "--configs", 2, "--trials", 100, "--seed", 1,
         "--out", root / "compare"],
    ]
    for argv in steps:
        if argv[0] == "validate":
            assert launcher([str(a) for a in argv]) == 0, argv
            (root / "validate" / "population.csv").rename(regions)
        else:
            assert launcher([str(a) for a in argv]) == 0, argv
    digests = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            digests[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return digests


def _subprocess(argv):
    return subprocess.run([sys.executable, "-m", "twophase", *argv], capture_output=True).returncode


def test_criterion_8_determinism(tmp_path):
    t0 = time.perf_counter()
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(dict(SMOOTH, n=1000, bbv_blocks=50)))
    seq = _pipeline(tmp_path / "sequential", spec, 1, main)
    par = _pipeline(tmp_path / "parallel", spec, 2, _subprocess)
    elapsed = time.perf_counter() - t0
    differ = sorted(k for k in seq if seq[k] != par.get(k))
    ok = seq.keys() == par.keys() and not differ and len(seq) >= 20
    verdict(8, f"{len(seq)} output files from 8 commands bit-identical across an in-process sequential run "
               f"and a subprocess run with 2 workers" + (f"; differ: {differ}" if differ else ""),
            ok, elapsed, 60)
