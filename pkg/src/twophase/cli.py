"""Command-line front end.

Every command writes fixed-name files into ``--out`` plus one
``manifest.json`` recording inputs (with SHA-256 digests), parameters, seeds
and output digests. Exit codes: 0 success, 1 internal error, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MissingValue, SamplingError
from .estimators import (
    Method,
    StratumSample,
    collapsed_strata_estimate,
    confidence_interval,
    estimate_record,
    srs_estimate,
    stratified_estimate,
    two_phase_variance,
    two_phase_variance_p2only,
    t_quantile,
    z_quantile,
)
from .montecarlo import (
    Design,
    coverage_experiment,
    load_synth_spec,
    perturbed_configs,
    scheme_comparison,
    synth_population,
)
from .planner import DEFAULT_GROWTH, Phase1Stats, allocate_phase2, drift_check
from .population import (
    DEFAULT_PROJECTION_DIMS,
    cpi_features,
    load_bbvs,
    load_regions,
    random_project,
    save_regions,
    standardize_rfv,
)
from .report import (
    DEFAULT_BINS,
    DEFAULT_MIN_COUNT,
    approx_distribution,
    approx_labels,
    default_edges,
    gap_report,
    histogram,
    plot_error_strips,
    plot_histogram,
    plot_margins,
    write_gaps_csv,
    write_histogram_csv,
)
from .selection import (
    load_selection,
    save_selection,
    select_centroid,
    select_mean_cpi,
    select_random,
    weighted_point_estimate,
)
from .stratification import (
    BBV,
    DALENIUS_GURNEY,
    RFV,
    dalenius_gurney,
    kmeans_stratify,
    load_stratification,
    pair_strata,
    save_stratification,
    stratum_means,
)

STRAT_MANIFEST = "stratification.json"
ASSIGNMENT = "assignment.csv"


# ---------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _clean(obj):
    """Make values JSON-safe and stable (NaN/inf -> None)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, rows, columns=None):
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class Run:
    """Collects what the manifest needs while a command executes."""

    # execution-only options: they never change outputs, so they stay out of the manifest
    EXCLUDED = {"out", "workers", "func", "command"}

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.notes: dict = {}

    def input(self, path):
        if path is not None:
            self.inputs[str(path)] = _sha256(path)
        return path

    def path(self, name) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self):
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in self.EXCLUDED}
        manifest = {
            "command": self.args.command,
            "tool_version": __version__,
            "parameters": params,
            "seeds": {k: v for k, v in params.items() if "seed" in k},
            "inputs": self.inputs,
            "outputs": {name: _sha256(self.out / name) for name in self.outputs},
        }
        manifest.update(self.notes)
        _write_json(self.out / "manifest.json", manifest)


def _read_values(path, column="cpi") -> dict[str, float]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "region_id" not in reader.fieldnames or column not in reader.fieldnames:
            raise SamplingError(f"{path}: needs columns region_id and {column}")
        for row in reader:
            try:
                out[row["region_id"].strip()] = float(row[column])
            except ValueError:
                raise SamplingError(f"{path}: non-numeric {column} for {row['region_id']}") from None
    return out


def _load_strata(run, directory):
    d = Path(directory)
    run.input(d / STRAT_MANIFEST)
    run.input(d / ASSIGNMENT)
    return load_stratification(d / STRAT_MANIFEST, d / ASSIGNMENT)


def _features_for(strat, pop, bbv_path):
    info = strat.info
    if strat.scheme == RFV:
        return standardize_rfv(pop, include_cpi=info.get("include_cpi", True))
    if strat.scheme == BBV:
        if bbv_path is None:
            raise SamplingError("BBV strata need --bbv to rebuild the projected features")
        bbvs = load_bbvs(bbv_path, pop)
        return random_project(bbvs, info.get("dims", DEFAULT_PROJECTION_DIMS), info.get("projection_seed", 0),
                              pop.region_ids)
    return cpi_features(pop.cpi_map())


# ---------------------------------------------------------------------------
# commands


def cmd_characterize(args):
    run = Run(args)
    pop = load_regions(run.input(args.regions))
    y = pop.cpi
    est = srs_estimate(y)
    ci = confidence_interval(est, args.level)
    hist = histogram(y, args.bins)
    write_histogram_csv(hist, run.path("histogram.csv"))
    plot_histogram(hist, run.path("histogram.svg"), title=Path(args.regions).stem)
    stats = {
        "N": len(pop),
        "mean": est.mean,
        "s2": float(np.var(y, ddof=1)),
        "min": float(y.min()),
        "max": float(y.max()),
        "level": args.level,
        "srs_margin": ci.margin,
        "srs_rel_margin": ci.relative_margin,
    }
    _write_json(run.path("stats.json"), stats)
    run.finish()
    print(f"N={len(pop)} mean CPI={est.mean:.4f} s2={stats['s2']:.4f} "
          f"SRS margin={100 * ci.relative_margin:.2f}% at {args.level:.0%}")


def cmd_stratify(args):
    run = Run(args)
    pop = load_regions(run.input(args.regions))
    if args.scheme == "dg":
        strat, bounds = dalenius_gurney(pop.cpi_map(), args.k, args.tol, args.max_iter)
        info = dict(strat.info)
        summary = f"spread {bounds.spread:.4f} ({'converged' if bounds.converged else 'not converged'})"
    else:
        if args.scheme == "rfv":
            fm = standardize_rfv(pop, include_cpi=not args.no_cpi)
            if fm.dropped:
                print("dropped constant columns: " + ", ".join(fm.dropped), file=sys.stderr)
                run.notes["dropped_columns"] = list(fm.dropped)
            extra = {"include_cpi": not args.no_cpi, "columns": list(fm.columns)}
        else:
            bbvs = load_bbvs(run.input(args.bbv), pop)
            fm = random_project(bbvs, args.dims, args.seed, pop.region_ids)
            extra = {"dims": args.dims, "projection_seed": args.seed}
        strat = kmeans_stratify(fm, args.k, args.seed, args.max_iter)
        info = dict(strat.info, **extra)
        summary = f"{strat.info['iterations']} Lloyd iterations"
    strat = type(strat)(strat.scheme, strat.assignment, strat.strata, strat.seed, info)
    save_stratification(strat, run.path(STRAT_MANIFEST), run.path(ASSIGNMENT))
    labels = [strat.assignment[r] for r in pop.region_ids]
    hist = histogram(pop.cpi, args.bins, strata=labels)
    write_histogram_csv(hist, run.path("strata_histogram.csv"))
    plot_histogram(hist, run.path("strata_histogram.svg"), title=f"{strat.scheme} strata (L={strat.L})")
    run.finish()
    print(f"{strat.scheme}: L={strat.L}, N={strat.N}, {summary}")


def cmd_select(args):
    run = Run(args)
    pop = load_regions(run.input(args.regions))
    strat = _load_strata(run, args.strata)
    if args.policy == "random":
        sel = select_random(strat, args.seed)
    elif args.policy == "centroid":
        sel = select_centroid(strat, _features_for(strat, pop, run.input(args.bbv)))
    else:
        sel = select_mean_cpi(strat, pop.cpi_map())
    sel.check_membership(strat)
    save_selection(sel, run.path("selection.csv"))
    run.finish()
    est = weighted_point_estimate(sel, pop.cpi_map())
    print(f"{sel.policy}: {len(sel.picks)} regions, weighted CPI {est:.4f} (population mean {pop.cpi.mean():.4f})")


def _group_sample(sel, values):
    by = {}
    weights = {}
    for p in sel.picks:
        if p.region_id not in values:
            raise MissingValue(p.region_id)
        by.setdefault(p.stratum_id, []).append(values[p.region_id])
        w = weights.setdefault(p.stratum_id, p.weight)
        if abs(w - p.weight) > 1e-12:
            raise SamplingError(f"stratum {p.stratum_id} has inconsistent weights")
    return [StratumSample(h, weights[h], tuple(v)) for h, v in sorted(by.items())]


def cmd_estimate(args):
    run = Run(args)
    values = _read_values(run.input(args.values), args.column)
    sel = load_selection(run.input(args.sample))
    method = args.method
    if method == "srs":
        ys = []
        for rid in sel.region_ids:
            if rid not in values:
                raise MissingValue(rid)
            ys.append(values[rid])
        est = srs_estimate(ys)
    else:
        samples = _group_sample(sel, values)
        if method == "one-unit":
            if args.strata is None or args.baseline is None:
                raise SamplingError("one-unit estimates need --strata and --baseline for pairing")
            strat = _load_strata(run, args.strata)
            baseline = load_regions(run.input(args.baseline)).cpi_map()
            if args.pair_order == "stratum-mean":
                order = stratum_means(strat, baseline)
            else:
                order = {p.stratum_id: baseline[p.region_id] for p in sel.picks}
            pairing = pair_strata(strat, order)
            est = collapsed_strata_estimate(samples, pairing, args.divisor)
            run.notes["pairing"] = [list(g) for g in pairing.groups]
        elif method == "stratified":
            est = stratified_estimate(samples, args.satterthwaite)
        elif method == "two-phase":
            if args.phase1_n is None or args.phase1_s2 is None:
                raise SamplingError("two-phase needs --phase1-n and --phase1-s2")
            est = two_phase_variance(args.phase1_s2, args.phase1_n, samples, args.satterthwaite)
        else:
            if args.phase1_n is None:
                raise SamplingError("two-phase-p2only needs --phase1-n")
            est = two_phase_variance_p2only(args.phase1_n, samples, args.satterthwaite)
    record = estimate_record(est, args.level)
    if args.report_z:
        record["margin_z"] = z_quantile(args.level) * est.std_error
        if math.isfinite(est.df):
            record["margin_t"] = t_quantile(args.level, est.df) * est.std_error
    _write_json(run.path("estimate.json"), record)

    if args.drift_selection is not None:
        one = weighted_point_estimate(load_selection(run.input(args.drift_selection)), values)
        report = drift_check(one, est, args.level)
        _write_json(run.path("drift.json"), report.to_dict())
        print(f"drift check: {report.verdict} (one-unit {one:.4f} vs {est.mean:.4f} +- {report.margin:.4f})")
    run.finish()
    rel = record["relative_margin"]
    print(f"{Method(est.method).value}: mean {est.mean:.4f} +- {record['margin']:.4f}"
          + (f" ({100 * rel:.2f}%)" if rel is not None else "") + f" df={record['df']}")


def cmd_plan(args):
    run = Run(args)
    strat = _load_strata(run, args.strata)
    if args.stats is not None:
        with open(run.input(args.stats), encoding="utf-8") as fh:
            stats = Phase1Stats.from_dict(json.load(fh))
    else:
        pop = load_regions(run.input(args.regions))
        stats = Phase1Stats.from_stratification(strat, pop.cpi_map())
    alloc = allocate_phase2(stats, args.growth, args.level)
    _write_json(run.path("phase1_stats.json"), stats.to_dict())
    _write_json(run.path("allocation.json"), alloc.to_dict())
    rows = [
        {"stratum_id": s.stratum_id, "N_h": s.size, "W_h": s.weight, "s_h": s.sd, "n_h": alloc.n_h[s.stratum_id],
         "capped": int(s.stratum_id in alloc.capped)}
        for s in stats.strata
    ]
    _write_rows(run.path("allocation.csv"), rows)
    name = args.name or Path(args.regions or args.stats).stem
    _write_rows(run.path("table.csv"), [{
        "application": name,
        "phase1_n": stats.n,
        "phase1_rel_margin": alloc.phase1_rel_margin,
        "phase2_n": alloc.total,
        "predicted_rel_margin": alloc.predicted_rel_margin,
    }])
    # the multi-unit (4b) sample itself, drawn among the phase-1 members of each stratum
    members = strat.members()
    picks = []
    for s in strat.strata:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(s.stratum_id,)))
        ids = members[s.stratum_id]
        for i in sorted(rng.choice(len(ids), alloc.n_h[s.stratum_id], replace=False)):
            picks.append({"stratum_id": s.stratum_id, "region_id": ids[i], "weight": s.weight})
    _write_rows(run.path("sample.csv"), picks, ["stratum_id", "region_id", "weight"])
    thin = sorted(h for h, n in alloc.n_h.items() if n < 2)
    if thin:
        # single-region strata cannot give a within-stratum variance
        print(f"warning: strata {thin} have fewer than two regions; merge them before estimating",
              file=sys.stderr)
        run.notes["thin_strata"] = thin
    run.finish()
    print(f"{name}: phase-1 n={stats.n} margin {100 * alloc.phase1_rel_margin:.2f}% -> phase-2 n={alloc.total} "
          f"predicted margin {100 * alloc.predicted_rel_margin:.2f}% (target {100 * alloc.target_rel_margin:.2f}%)"
          + (f"; capped strata {list(alloc.capped)}" if alloc.capped else ""))


def cmd_validate(args):
    run = Run(args)
    if args.spec is not None:
        sp = synth_population(load_synth_spec(run.input(args.spec)))
        pop = sp.population
        save_regions(pop, run.path("population.csv"))
    else:
        pop = load_regions(run.input(args.regions))
    y = pop.cpi_map()
    kind = args.design.replace("-", "_")
    strat = pairing = None
    if kind != "srs":
        strat = _load_strata(run, args.strata) if args.strata else dalenius_gurney(y, args.k)[0]
        if kind == "one_unit":
            pairing = pair_strata(strat, stratum_means(strat, y))
    design = Design(kind, n=args.n, strat=strat, n_per_stratum=args.per_stratum, pairing=pairing,
                    divisor=args.divisor, phase1_n=args.phase1_n or 0, variance=args.variance)
    res = coverage_experiment(y, design, args.trials, args.level, args.seed, args.workers)
    _write_rows(run.path("coverage.csv"), [res.to_row()])
    run.finish()
    print(f"{kind}: coverage {res.coverage:.4f} at {args.level:.0%} over {res.trials} trials; "
          f"95th-percentile relative error {100 * res.p95_error:.2f}%")


def cmd_report(args):
    run = Run(args)
    pop = load_regions(run.input(args.regions))
    baseline = pop.cpi_map()
    y = _read_values(run.input(args.values), args.column) if args.values else baseline
    sel = load_selection(run.input(args.selection))
    base_vals = [y[r] for r in pop.region_ids if r in y]
    approx = approx_distribution(sel, y, len(base_vals))
    edges = default_edges(base_vals + approx, args.bins)
    strat = _load_strata(run, args.strata) if args.strata else None
    base_labels = [strat.assignment[r] for r in pop.region_ids if r in y] if strat else None
    h_base = histogram(base_vals, edges, strata=base_labels)
    h_approx = histogram(approx, edges, strata=approx_labels(sel, y, len(base_vals)) if strat else None)
    gaps = gap_report(h_base, h_approx, args.min_count)
    write_histogram_csv(h_base, run.path("baseline_histogram.csv"))
    write_histogram_csv(h_approx, run.path("approx_histogram.csv"))
    write_gaps_csv(gaps, run.path("gaps.csv"))
    plot_histogram(h_base, run.path("baseline_histogram.svg"), title="population")
    plot_histogram(h_approx, run.path("approx_histogram.svg"),
                   title=f"approximated by {len(sel.picks)} regions", gaps=gaps)
    run.finish()
    print(f"{len(gaps)} gap(s): " + ", ".join(f"[{lo:.3f}, {hi:.3f})" for lo, hi in gaps.intervals))


def cmd_compare(args):
    run = Run(args)
    sp = synth_population(load_synth_spec(run.input(args.spec)))
    pop = sp.population
    features = {RFV: standardize_rfv(pop)}
    schemes = ["RANDOM", RFV, DALENIUS_GURNEY]
    if sp.bbvs is not None:
        features[BBV] = random_project(sp.bbvs, args.dims, args.seed, pop.region_ids)
        schemes.insert(1, BBV)
    configs = perturbed_configs(pop.cpi_map(), args.configs, args.seed)
    table = scheme_comparison(pop, features, args.k, configs, list(range(args.seed, args.seed + args.seeds)),
                              args.level, args.trials, args.seed, schemes=schemes)
    _write_rows(run.path("margins.csv"), table.margins)
    _write_rows(run.path("errors.csv"), table.errors)
    plot_margins(table.margins, run.path("margins.svg"), ["analytical", "empirical_p95", "collapsed"])
    for policy, name in (("CENTROID", "errors_centroid.svg"), ("MEAN_CPI", "errors_mean.svg")):
        plot_error_strips([r for r in table.errors if r["policy"] == policy], run.path(name),
                          title=f"{policy.lower()} selection, all configs")
    run.finish()
    for s in schemes:
        for p in ("CENTROID", "MEAN_CPI", "RANDOM"):
            v = table.max_error(s, p)
            if not math.isnan(v):
                print(f"{s:16s} {p:9s} max error {100 * v:6.2f}%")


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _trials(text):
    v = _positive_int(text)
    if v < 100:
        raise argparse.ArgumentTypeError("at least 100 trials are required")
    return v


def _level(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("level must be in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twophase", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, level=True):
        sp.add_argument("--out", required=True, help="output directory")
        if level:
            sp.add_argument("--level", type=_level, default=0.95)

    c = sub.add_parser("characterize", help="CPI histogram and summary statistics")
    c.add_argument("regions")
    c.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS)
    common(c)
    c.set_defaults(func=cmd_characterize)

    c = sub.add_parser("stratify", help="build strata (k-means on BBV/RFV or CPI boundaries)")
    c.add_argument("regions")
    c.add_argument("--bbv")
    c.add_argument("--scheme", choices=["bbv", "rfv", "dg"], required=True)
    c.add_argument("--k", type=_positive_int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dims", type=_positive_int, default=DEFAULT_PROJECTION_DIMS)
    c.add_argument("--no-cpi", action="store_true", help="leave CPI out of the RFV")
    c.add_argument("--max-iter", type=_positive_int, default=None)
    c.add_argument("--tol", type=float, default=0.05)
    c.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS)
    common(c, level=False)
    c.set_defaults(func=cmd_stratify)

    c = sub.add_parser("select", help="choose one region per stratum")
    c.add_argument("regions")
    c.add_argument("--strata", required=True, help="directory written by 'stratify'")
    c.add_argument("--bbv")
    c.add_argument("--policy", choices=["random", "centroid", "mean"], required=True)
    c.add_argument("--seed", type=int, default=0)
    common(c, level=False)
    c.set_defaults(func=cmd_select)

    c = sub.add_parser("estimate", help="point estimate and confidence interval")
    c.add_argument("sample", help="selection or sample CSV (stratum_id,region_id,weight)")
    c.add_argument("--values", required=True, help="CSV with region_id and the study variable")
    c.add_argument("--column", default="cpi")
    c.add_argument("--method", required=True,
                   choices=["srs", "stratified", "one-unit", "two-phase", "two-phase-p2only"])
    c.add_argument("--strata")
    c.add_argument("--baseline", help="baseline regions CSV used to order strata for pairing")
    c.add_argument("--pair-order", choices=["stratum-mean", "sampled-unit"], default="stratum-mean")
    c.add_argument("--divisor", type=float, default=4.0)
    c.add_argument("--phase1-n", type=_positive_int)
    c.add_argument("--phase1-s2", type=float)
    c.add_argument("--satterthwaite", action="store_true")
    c.add_argument("--report-z", action="store_true", help="also report the normal-quantile margin")
    c.add_argument("--drift-selection", help="one-unit selection CSV to check against this estimate")
    common(c)
    c.set_defaults(func=cmd_estimate)

    c = sub.add_parser("plan", help="size the multi-unit phase-2 sample")
    c.add_argument("regions", nargs="?")
    c.add_argument("--strata", required=True)
    c.add_argument("--stats", help="phase-1 statistics JSON (instead of regions)")
    c.add_argument("--growth", type=float, default=DEFAULT_GROWTH)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--name")
    common(c)
    c.set_defaults(func=cmd_plan)

    c = sub.add_parser("validate", help="Monte Carlo coverage of a design")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="synthetic population spec (JSON)")
    src.add_argument("--regions")
    c.add_argument("--design", choices=["srs", "stratified", "one-unit", "two-phase"], default="srs")
    c.add_argument("--n", type=_positive_int, default=100)
    c.add_argument("--k", type=_positive_int, default=20)
    c.add_argument("--strata")
    c.add_argument("--per-stratum", type=_positive_int, default=2)
    c.add_argument("--phase1-n", type=_positive_int)
    c.add_argument("--variance", choices=["phase1", "p2only"], default="p2only")
    c.add_argument("--divisor", type=float, default=4.0)
    c.add_argument("--trials", type=_trials, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--workers", type=_positive_int, default=1)
    common(c)
    c.set_defaults(func=cmd_validate)

    c = sub.add_parser("report", help="population vs approximated distributions and gaps")
    c.add_argument("regions")
    c.add_argument("--selection", required=True)
    c.add_argument("--values")
    c.add_argument("--column", default="cpi")
    c.add_argument("--strata")
    c.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS)
    c.add_argument("--min-count", type=_positive_int, default=DEFAULT_MIN_COUNT)
    common(c, level=False)
    c.set_defaults(func=cmd_report)

    c = sub.add_parser("compare", help="stratification scheme comparison on a synthetic population")
    c.add_argument("--spec", required=True)
    c.add_argument("--k", type=_positive_int, default=20)
    c.add_argument("--seeds", type=_positive_int, default=10)
    c.add_argument("--configs", type=_positive_int, default=6)
    c.add_argument("--trials", type=_trials, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dims", type=_positive_int, default=DEFAULT_PROJECTION_DIMS)
    common(c)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "stratify":
        if args.scheme == "bbv" and not args.bbv:
            parser.error("--scheme bbv requires --bbv")
        if args.max_iter is None:
            args.max_iter = 100 if args.scheme == "dg" else 300
    if args.command == "plan" and (args.regions is None) == (args.stats is None):
        parser.error("plan needs exactly one of REGIONS or --stats")
    try:
        args.func(args)
    except (SamplingError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
