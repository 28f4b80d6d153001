"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed even
under output capture) or ``python tests/test_acceptance.py``.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refold.cli import main
from refold.dagostini import DagostiniConfig, dagostini_unfold
from refold.disttest import KINDS, DistanceSpec, bhattacharyya, evaluate, kl, pearson, porter, wasserstein1
from refold.evaluation import COLUMNS, bottom_line_table, naive_inversion, toy_seeds
from refold.histogram import BinMerging, Histogram, derive_merging, merge_bins, poisson_resample
from refold.response import build_response, condition_number, fold, response_from_counts
from refold.scenarios import generate, get_scenario
from refold.unfolder import SearchConfig, flat_start, unfold


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


def H(c, edges=None):
    return Histogram(np.arange(len(c) + 1.0) if edges is None else edges, c)


def M(probs):
    probs = np.asarray(probs, dtype=float)
    nr, ng = probs.shape
    return response_from_counts(probs * 1e6, np.arange(ng + 1.0), np.arange(nr + 1.0))


def test_c01_small_oracles(report):
    worst = 0.0
    cases = [
        ([[0.9, 0.1], [0.1, 0.9]], [300.0, 120.0]),
        ([[0.75, 0.3], [0.25, 0.7]], [80.0, 260.0]),
        ([[0.8, 0.1, 0.05], [0.15, 0.8, 0.15], [0.05, 0.1, 0.8]], [200.0, 500.0, 90.0]),
        ([[0.7, 0.2, 0.0], [0.3, 0.6, 0.2], [0.0, 0.2, 0.8]], [40.0, 75.0, 300.0]),
    ]
    for probs, x in cases:
        R = M(probs)
        y = H(R.probs @ np.array(x))
        exact = np.linalg.solve(R.probs, y.counts)
        got = dagostini_unfold(y, R, DagostiniConfig(convergence_tol=1e-9, max_iterations=200_000))
        worst = max(worst, float(np.max(np.abs(got.unfolded.counts - exact) / exact)))
    roundtrip = 0.0
    for probs, _ in cases:
        R = M(probs)
        y = H(np.random.default_rng(0).uniform(10, 1000, R.n_reco))
        x = naive_inversion(R, y)
        roundtrip = max(roundtrip, float(np.max(np.abs(R.probs @ x.counts - y.counts) / y.counts)))
    ok = worst < 0.01 and roundtrip < 1e-6
    report(1, ok, f"max rel deviation vs linear solve {worst:.2e} (< 1e-2), inversion round trip {roundtrip:.2e} (< 1e-6)")


def test_c02_distance_suite(report):
    rng = np.random.default_rng(1)
    zero = all(
        evaluate(DistanceSpec(k), H(c), H(c)).ts == 0
        for k in KINDS
        for c in (rng.integers(1, 100, 8).astype(float), np.array([3.0, 0.0, 5.0]))
    )
    values = {
        "pearson 6.25": (pearson(H([9.0]), H([4.0])).ts, 6.25),
        "porter 2": (porter(H([2.0]), H([0.0]), BinMerging.identity(1)).ts, 2.0),
        "porter 2 (swap)": (porter(H([1.0, 3.0]), H([3.0, 1.0])).ts, 2.0),
        "bhattacharyya 0.11157": (bhattacharyya(H([5.0, 5.0]), H([9.0, 1.0])).ts, 0.11157),
        "w1 1.0": (wasserstein1(H([1.0, 0.0]), H([0.0, 1.0])).ts, 1.0),
        "kl 0.14384": (kl(H([2.0, 2.0]), H([1.0, 3.0])).ts, 0.14384),
    }
    bad = [k for k, (got, want) in values.items() if abs(got - want) > 1e-4]
    report(2, zero and not bad, f"identical inputs give 0: {zero}; hand values off by >1e-4: {bad or 'none'}")


def test_c03_s1_convergence(report):
    sc = generate(get_scenario("s1", seed=0))
    R = sc.response.nominal
    lines, ok = [], True
    t0 = time.perf_counter()
    for kind, start in (("truth", sc.truth), ("flat", flat_start(sc.truth))):
        run = unfold(start, sc.reco, R, SearchConfig(max_samples=100_000, start=kind))
        ok &= run.best_ts.ts_per_ndof <= 1.1 and run.iterations_used <= 100_000
        lines.append(f"{kind} start ts/ndof {run.best_ts.ts_per_ndof:.3f} after {run.iterations_used}")
    wall = time.perf_counter() - t0
    ok &= wall < 300
    report(3, ok, "; ".join(lines) + f"; wall {wall:.2f}s (< 300s)")


def test_c04_s3_ill_posed(report):
    sc = generate(get_scenario("s3", seed=0))
    R = sc.response.nominal
    lines, ok = [], True
    for kind, start in (("truth", sc.truth), ("flat", flat_start(sc.truth))):
        for label, data in (("reco", sc.reco), ("alt", sc.alt_data)):
            cfg = SearchConfig(max_samples=2_000_000, start=kind)
            run = unfold(start, data, R, cfg)
            converged = run.best_ts.ts_per_ndof <= 1 + cfg.early_stop_window
            empty = int(np.sum(run.best_sample.counts == 0))
            ok &= converged and empty == 0
            lines.append(f"{kind}/{label}: {run.best_ts.ts_per_ndof:.3f} at {run.iterations_used} it, {empty} empty")
    report(4, ok, "; ".join(lines))


def test_c05_start_robustness(report):
    fractions, in_band = [], True
    for s in toy_seeds(0, 10):
        sc = generate(get_scenario("s1", seed=s))
        R = sc.response.nominal
        cfg = SearchConfig(max_samples=100_000, seed=s)
        a = unfold(sc.truth, sc.alt_data, R, cfg)
        b = unfold(flat_start(sc.truth), sc.alt_data, R, SearchConfig(max_samples=100_000, seed=s + 1, start="flat"))
        for run in (a, b):
            in_band &= run.best_ts.ts_per_ndof <= 1 + cfg.early_stop_window
        x, y = a.best_sample.counts, b.best_sample.counts
        fractions.append(float(np.mean(np.abs(x - y) <= np.sqrt(x + y))))
    agree = float(np.mean(fractions))
    report(5, in_band and agree >= 0.8,
           f"both starts in band: {in_band}; bins agreeing within combined Poisson error {agree:.1%} (>= 80%)")


def test_c06_condition_numbers(report):
    s1 = [condition_number(generate(get_scenario("s1", seed=s)).response.nominal) for s in range(5)]
    s4 = [condition_number(generate(get_scenario("s4", seed=s)).response.nominal) for s in range(5)]
    ok = all(2 <= c <= 500 for c in s1) and all(c >= 1e4 for c in s4)
    fmt = lambda v: ", ".join(f"{c:.3g}" for c in v)
    report(6, ok, f"s1 cond [{fmt(s1)}] in [2, 500]; s4 cond [{fmt(s4)}] >= 1e4")


def test_c07_pathological_ordering(report):
    spec = get_scenario("s5-small", seed=0)
    algo, dag = [], []
    for s in toy_seeds(spec.seed, 20):
        sc = generate(spec.with_seed(s))
        R = sc.response.nominal
        ok_bins = sc.alt_truth.counts > 0
        run = unfold(sc.truth, sc.alt_data, R, SearchConfig(max_samples=100_000, seed=s))
        d = dagostini_unfold(sc.alt_data, R, DagostiniConfig(prior=sc.truth)).unfolded
        with np.errstate(all="ignore"):
            algo.append(np.where(ok_bins, np.abs(run.best_sample.counts / sc.alt_truth.counts - 1), np.nan))
            dag.append(np.where(ok_bins, np.abs(d.counts / sc.alt_truth.counts - 1), np.nan))
    algo_med = np.nanmedian(algo, axis=0)
    dag_med = np.nanmedian(dag, axis=0)
    populated = ~np.isnan(algo_med)
    wins = int(np.sum(algo_med[populated] < dag_med[populated]))
    n = int(populated.sum())
    report(7, wins > n / 2,
           f"algorithm 1 median |bias| smaller in {wins}/{n} populated bins "
           f"(median over bins: {np.nanmedian(algo_med):.3f} vs D'Agostini {np.nanmedian(dag_med):.3f})")


def test_c08_bottom_line_table(report):
    table = bottom_line_table(("s1", "s2", "s3"), seed=0)
    rows = list(table.rows)
    structure = rows == [
        "Nbins(gen)=20, Nbins(reco)=20",
        "Nbins(gen)=10, Nbins(reco)=20",
        "Nbins(gen)=20, Nbins(reco)=10",
    ] and all(tuple(r) == COLUMNS for r in table.rows.values())
    s1 = table.rows[rows[0]]
    reference = {
        "folded_init_truth": 280.753,
        "algo1_unfolded_init_truth": 306.196,
        "dagostini_unfolded_init_truth": 307.210,
    }
    within = {k: ref / 5 <= s1[k] <= ref * 5 for k, ref in reference.items()}
    detail = ", ".join(f"{k}={s1[k]:.1f}" for k in reference)
    report(8, structure and all(within.values()),
           f"table structure ok: {structure}; s1 {detail} within x5 of reference: {all(within.values())}")


def test_c09_replay_determinism(report, tmp_path):
    d = tmp_path / "sc"
    runs = [
        ["scenario", "--name", "s1", "--seed", "7", "--outdir", str(d)],
        ["unfold", "--data", str(d / "alt_data.csv"), "--response", str(d / "resp.json"),
         "--truth", str(d / "truth.csv"), "--max-samples", "20000", "--seed", "7",
         "--out", str(tmp_path / "u.json"), "--trace", str(tmp_path / "u.trace.csv")],
        ["unfold-abc", "--data", str(d / "alt_data.csv"), "--response", str(d / "resp.json"),
         "--response-up", str(d / "resp_up.json"), "--response-down", str(d / "resp_down.json"),
         "--truth", str(d / "truth.csv"), "--max-samples", "20000", "--out", str(tmp_path / "abc.json")],
        ["dagostini", "--data", str(d / "alt_data.csv"), "--response", str(d / "resp.json"),
         "--truth", str(d / "truth.csv"), "--out", str(tmp_path / "dag.csv")],
        ["build-response", "--pairs", str(tmp_path / "pairs.csv"), "--gen-bins", "5", "--reco-bins", "5",
         "--out", str(tmp_path / "resp.json")],
        ["cond", "--response", str(d / "resp.json"), "--out", str(tmp_path / "cond.json")],
        ["bottom-line", "--scenario", "s1", "--max-samples", "5000", "--threads", "2",
         "--out", str(tmp_path / "bl.json")],
        ["ensemble", "--scenario", "s1", "--toys", "3", "--max-samples", "5000", "--threads", "2",
         "--out", str(tmp_path / "ens.csv")],
    ]
    rng = np.random.default_rng(0)
    t = rng.normal(5, 1, 500)
    np.savetxt(tmp_path / "pairs.csv", np.c_[t, t + rng.normal(0, 0.3, 500)], delimiter=",",
               header="truth,reco", comments="")
    failed = []
    for argv in runs:
        if main(argv) != 0:
            failed.append(argv[0] + " (run)")
            continue
        manifest = d / "manifest.json" if argv[0] == "scenario" else Path(argv[argv.index("--out") + 1] + ".manifest.json")
        outputs = json.loads(manifest.read_text())["outputs"]
        before = {p: Path(p).read_bytes() for p in outputs}
        if main(["replay", str(manifest)]) != 0 or any(Path(p).read_bytes() != b for p, b in before.items()):
            failed.append(argv[0])
    report(9, not failed, f"{len(runs) - len(failed)}/{len(runs)} subcommands replay byte-identically"
           + (f"; differing: {failed}" if failed else ""))


counts = st.lists(st.integers(0, 300).map(float), min_size=3, max_size=12)


@given(counts, counts, st.floats(0, 5), st.floats(0, 5), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def _invariants(a, b, ca, cb, seed):
    n = min(len(a), len(b))
    a, b = np.array(a[:n]), np.array(b[:n])
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, n, 3000)
    R = build_response(t, t + rng.normal(0, 0.7, t.size), np.arange(n + 1.0), np.arange(n + 1.0),
                       unit_efficiency=True)
    # folding linearity and count conservation
    lhs = fold(R, H(ca * a + cb * b)).counts
    np.testing.assert_allclose(lhs, ca * fold(R, H(a)).counts + cb * fold(R, H(b)).counts, rtol=1e-9, atol=1e-8)
    np.testing.assert_allclose(fold(R, H(a)).total, a.sum(), rtol=1e-9, atol=1e-8)
    # merge conservation
    if a.sum() > 0:
        m = derive_merging(H(a))
        assert merge_bins(H(a), m).total == a.sum()
        assert merge_bins(H(b), m).total == b.sum()
    # acceptance monotonicity
    if a.sum() > 0 and b.sum() > 0:
        run = unfold(H(b + 1), fold(R, H(a)).with_counts(np.round(R.probs @ a)), R,
                     SearchConfig(max_samples=300, seed=seed))
        scores = [s for _, s in run.trace]
        assert all(x > y for x, y in zip(scores, scores[1:]))


def test_c10_invariants(report):
    errors = []
    try:
        _invariants()
    except Exception as exc:  # report rather than abort the line
        errors.append(f"property run: {type(exc).__name__}: {exc}")
    # Poisson moments: mean and variance of resampled bins match the input mean
    mu, m = 50.0, 20_000
    rng = np.random.default_rng(3)
    draws = np.array([poisson_resample(H([mu] * 4), rng).counts for _ in range(m)])
    if np.any(np.abs(draws.mean(axis=0) - mu) > 5 * np.sqrt(mu / m)):
        errors.append("Poisson mean off")
    if np.any(np.abs(draws.var(axis=0) / mu - 1) > 0.05):
        errors.append("Poisson variance off")
    report(10, not errors, "folding linearity, count conservation, merge conservation, "
           "acceptance monotonicity, Poisson moments: " + ("all hold" if not errors else "; ".join(errors)))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
