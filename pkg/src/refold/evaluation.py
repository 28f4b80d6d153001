"""Comparison harness: deviations, the bottom-line table, toy ensembles and
direct inversion as a diagnostic.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .dagostini import DagostiniConfig, dagostini_unfold
from .disttest import DistanceSpec, evaluate
from .errors import BinningError, ConfigError, InversionError
from .histogram import Histogram
from .response import ResponseMatrix, fold
from .scenarios import ScenarioData, ScenarioSpec, generate, get_scenario
from .unfolder import SearchConfig, UnfoldRun, flat_start, unfold

log = logging.getLogger(__name__)

NDOF_CAVEAT = "regular NDOF (merged-bin count); no correction for parameters consumed by unfolding"

# iteration budgets: 1e5 for the well-posed setups, more when gen bins outnumber reco bins
DEFAULT_MAX_SAMPLES = {"s1": 100_000, "s2": 100_000, "s3": 2_000_000}


def relative_deviation(a: Histogram, b: Histogram) -> np.ndarray:
    """(a - b) / b per bin; NaN marks bins where ``b`` is zero."""
    if a.n_bins != b.n_bins:
        raise BinningError("relative_deviation needs equal binning")
    out = np.full(a.n_bins, np.nan)
    ok = b.counts != 0
    out[ok] = (a.counts[ok] - b.counts[ok]) / b.counts[ok]
    return out


@dataclass
class BottomLineReport:
    folded_space_ts: float
    unfolded_space_ts_algo1: float
    unfolded_space_ts_dagostini: float
    start_kind: str = "truth"
    note: str = NDOF_CAVEAT


def bottom_line(
    scenario: ScenarioData,
    algo1_run: UnfoldRun,
    dag_result: Histogram,
    distance: DistanceSpec = DistanceSpec(),
    start_kind: str = "truth",
) -> BottomLineReport:
    """ts/ndof of (alt data vs folded truth), (best sample vs truth) and
    (D'Agostini result vs truth). The first member of each pair is the probe,
    the second the reference.
    """
    R = scenario.response.nominal
    truth = scenario.truth
    for h, what in ((algo1_run.best_sample, "algorithm 1 result"), (dag_result, "D'Agostini result")):
        if not h.same_binning(truth):
            raise BinningError(f"{what} is not on the truth binning")
    folded = evaluate(distance, fold(R, truth), scenario.alt_data)
    unf_a = evaluate(distance, algo1_run.best_sample, truth)
    unf_d = evaluate(distance, dag_result, truth)
    return BottomLineReport(
        folded.ts_per_ndof, unf_a.ts_per_ndof, unf_d.ts_per_ndof, start_kind=start_kind
    )


COLUMNS = (
    "folded_init_truth",
    "folded_init_flat",
    "algo1_unfolded_init_truth",
    "algo1_unfolded_init_flat",
    "dagostini_unfolded_init_truth",
    "dagostini_unfolded_init_flat",
)


@dataclass
class BottomLineTable:
    """Rows keyed by scenario name, six columns as in :data:`COLUMNS`."""

    rows: dict[str, dict[str, float]]
    seed: int
    note: str = NDOF_CAVEAT

    def to_dict(self) -> dict:
        return {"columns": list(COLUMNS), "rows": self.rows, "seed": self.seed, "note": self.note}

    def format(self) -> str:
        head = f"{'configuration':<34}" + "".join(f"{c:>31}" for c in COLUMNS)
        lines = [head]
        for name, row in self.rows.items():
            lines.append(f"{name:<34}" + "".join(f"{row[c]:>31.3f}" for c in COLUMNS))
        return "\n".join(lines)


def _bottom_line_row(name: str, seed: int, dag_cfg: DagostiniConfig, max_samples: int | None):
    spec = get_scenario(name, seed=seed)
    sc = generate(spec)
    R = sc.response.nominal
    budget = max_samples or DEFAULT_MAX_SAMPLES.get(name, 100_000)
    starts = {"truth": sc.truth, "flat": flat_start(sc.truth)}
    row = {}
    for i, (kind, start) in enumerate(starts.items()):
        cfg = SearchConfig(max_samples=budget, seed=seed * 10 + i, start=kind)
        run = unfold(start, sc.alt_data, R, cfg)
        prior = sc.truth if kind == "truth" else None
        dag = dagostini_unfold(sc.alt_data, R, replace(dag_cfg, prior=prior)).unfolded
        rep = bottom_line(sc, run, dag, start_kind=kind)
        row[f"folded_init_{kind}"] = rep.folded_space_ts
        row[f"algo1_unfolded_init_{kind}"] = rep.unfolded_space_ts_algo1
        row[f"dagostini_unfolded_init_{kind}"] = rep.unfolded_space_ts_dagostini
    label = f"Nbins(gen)={spec.n_gen_bins}, Nbins(reco)={spec.n_reco_bins}"
    return label, {c: row[c] for c in COLUMNS}


def bottom_line_table(
    names=("s1", "s2", "s3"),
    seed: int = 0,
    dag_cfg: DagostiniConfig = DagostiniConfig(),
    max_samples: int | None = None,
    threads: int = 1,
) -> BottomLineTable:
    """Rebuild the bottom-line table: scenarios x {truth, flat} starts."""
    jobs = [(n, seed, dag_cfg, max_samples) for n in names]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda a: _bottom_line_row(*a), jobs))
    else:
        rows = [_bottom_line_row(*a) for a in jobs]
    return BottomLineTable(dict(rows), seed)


@dataclass
class EnsembleResult:
    """Per-bin relative deviation ``(estimate - alt_truth) / alt_truth``.

    ``deviations`` has one row per successful toy; bins with an empty
    alternative truth are NaN. ``std`` is None with fewer than two toys.
    """

    mean: np.ndarray
    std: Optional[np.ndarray]
    deviations: np.ndarray
    method: str
    n_failed: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def median_abs(self) -> np.ndarray:
        with np.errstate(all="ignore"):
            return np.nanmedian(np.abs(self.deviations), axis=0)


def toy_seeds(seed: int, n_toys: int) -> list[int]:
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n_toys)]


def run_toy(
    spec: ScenarioSpec,
    toy_seed: int,
    method: str,
    search_cfg: SearchConfig,
    dag_cfg: DagostiniConfig,
    dag_prior: str = "truth",
) -> np.ndarray:
    sc = generate(spec.with_seed(toy_seed))
    R = sc.response.nominal
    if method == "algo1":
        start = sc.truth if search_cfg.start == "truth" else flat_start(sc.truth)
        est = unfold(start, sc.alt_data, R, replace(search_cfg, seed=toy_seed)).best_sample
    else:
        prior = sc.truth if dag_prior == "truth" else None
        est = dagostini_unfold(sc.alt_data, R, replace(dag_cfg, prior=prior)).unfolded
    return relative_deviation(est, sc.alt_truth)


def ensemble_bias(
    spec: ScenarioSpec,
    n_toys: int,
    method: str = "algo1",
    search_cfg: SearchConfig = SearchConfig(),
    dag_cfg: DagostiniConfig = DagostiniConfig(),
    dag_prior: str = "truth",
    threads: int = 1,
) -> EnsembleResult:
    """Repeat generate -> unfold over independent toy seeds derived from
    ``spec.seed``. Algorithm 1 starts from the original truth (or flat, per
    ``search_cfg.start``); D'Agostini uses the original truth or a flat
    prior per ``dag_prior``.
    """
    if n_toys < 1:
        raise ConfigError("n_toys must be at least 1")
    if method not in ("algo1", "dagostini"):
        raise ConfigError(f"unknown method {method!r}")
    if dag_prior not in ("truth", "flat"):
        raise ConfigError(f"unknown prior {dag_prior!r}")
    seeds = toy_seeds(spec.seed, n_toys)

    def one(s):
        try:
            return run_toy(spec, s, method, search_cfg, dag_cfg, dag_prior), None
        except Exception as exc:  # a failed toy is recorded, not fatal
            log.warning("toy with seed %d failed: %s", s, exc)
            return None, f"seed {s}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]

    devs = np.array([d for d, err in results if d is not None])
    failures = [err for d, err in results if err is not None]
    if devs.size == 0:
        raise ConfigError("every toy failed: " + "; ".join(failures))
    with np.errstate(all="ignore"):
        mean = np.nanmean(devs, axis=0)
        std = np.nanstd(devs, axis=0, ddof=1) if len(devs) > 1 else None
    return EnsembleResult(mean, std, devs, method, len(failures), failures)


@dataclass(frozen=True)
class InvertedSpectrum:
    """Direct-inversion output. Unlike :class:`Histogram` it may hold
    negative bins, which is the point of the diagnostic.
    """

    edges: np.ndarray
    counts: np.ndarray
    errors: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.counts)


def naive_inversion(R: ResponseMatrix, y: Histogram) -> InvertedSpectrum:
    """Solve ``probs @ x = y`` directly. Diagnostic only."""
    if R.n_gen != R.n_reco:
        raise InversionError(f"response is {R.n_reco}x{R.n_gen}, not square")
    if y.n_bins != R.n_reco:
        raise BinningError("data binning differs from the response reco bins")
    if np.linalg.matrix_rank(R.probs) < R.n_gen:
        raise InversionError("response matrix is singular")
    try:
        inv = np.linalg.inv(R.probs)
    except np.linalg.LinAlgError as exc:
        raise InversionError(str(exc)) from None
    x = np.linalg.solve(R.probs, y.counts)
    errors = np.sqrt((inv**2) @ (y.errors**2))
    return InvertedSpectrum(R.gen_edges, x, errors)

