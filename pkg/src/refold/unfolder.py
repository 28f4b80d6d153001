"""Unfolding by folding: stochastic search in truth space.

Starting from a truth-level histogram, candidates are drawn bin by bin from
Poisson(x_best), folded through the response and scored against the data.
A candidate that scores better than the current best replaces it, and the
next draw is made around the new best.

The loop evaluates candidates in speculative batches: a block of draws is
made around the current best, and everything after the first accepted draw
in the block is discarded. Each kept draw therefore comes from exactly the
distribution a one-at-a-time loop would use, and iteration counts are exact.
"""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .disttest import Comparator, DistanceSpec, TestResult
from .errors import (
    ConfigError,
    DegenerateDataError,
    InsufficientPosteriorError,
    SearchSetupError,
)
from .histogram import Histogram
from .response import ResponseBundle, ResponseMatrix, fold

log = logging.getLogger(__name__)

INITIAL_TS = 1e5
COMPATIBLE_TS = 1.0
MAX_BATCH = 4096


@dataclass(frozen=True)
class SearchConfig:
    """Settings for one search chain.

    The chi-square stop fires once the best ts/ndof sits in
    ``[stop_ts_low, 1]`` or drops below ``stop_ts_low``; the window stop fires when it is within
    ``early_stop_window`` of 1 (or of ``target_distance`` for non-chi-square
    tests). ``use_accept_floor`` rejects candidates scoring below
    ``accept_floor``.
    """

    max_samples: int = 100_000
    stop_ts_low: float = 0.9
    early_stop_window: float = 0.01
    accept_floor: float = 1.0
    use_accept_floor: bool = False
    start: str = "truth"
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    seed: int = 0
    target_distance: float = 0.0

    def __post_init__(self):
        if self.max_samples < 1:
            raise ConfigError("max_samples must be at least 1")
        if not 0 < self.stop_ts_low <= self.accept_floor:
            raise ConfigError("need 0 < stop_ts_low <= accept_floor")
        if not self.early_stop_window > 0:
            raise ConfigError("early_stop_window must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distance"] = asdict(self.distance)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        d = dict(d)
        d["distance"] = DistanceSpec(**d.get("distance", {}))
        return cls(**d)


@dataclass
class UnfoldRun:
    best_sample: Histogram
    best_ts: TestResult
    trace: list[tuple[int, float]]
    iterations_used: int
    config: SearchConfig
    stop_reason: str = "max_samples"

    @property
    def best_score(self) -> float:
        return self.trace[-1][1] if self.trace else float("nan")

    def to_dict(self) -> dict:
        h = self.best_sample
        return {
            "best_sample": {
                "edges": h.edges.tolist(),
                "counts": h.counts.tolist(),
                "errors": h.errors.tolist(),
            },
            "best_ts": self.best_ts.to_dict(),
            "trace": [list(t) for t in self.trace],
            "iterations_used": self.iterations_used,
            "stop_reason": self.stop_reason,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnfoldRun":
        b = d["best_sample"]
        ts = d["best_ts"]
        return cls(
            best_sample=Histogram(b["edges"], b["counts"], b["errors"]),
            best_ts=TestResult(ts["ts"], ts["ndof"], ts["p_value"]),
            trace=[(int(i), float(s)) for i, s in d["trace"]],
            iterations_used=d["iterations_used"],
            config=SearchConfig.from_dict(d["config"]),
            stop_reason=d.get("stop_reason", "max_samples"),
        )


@dataclass
class PosteriorBands:
    central: Histogram
    low: Histogram
    high: Histogram
    quantiles: tuple[float, float] = (0.16, 0.84)
    accepted_count: int = 0
    run: Optional[UnfoldRun] = None


def flat_start(truth: Histogram) -> Histogram:
    """Every bin at half the maximum of ``truth``."""
    level = truth.counts.max() / 2 if truth.n_bins else 0.0
    if level <= 0:
        raise DegenerateDataError("cannot build a flat start from an empty truth histogram")
    return truth.with_counts(np.full(truth.n_bins, level))


def _should_stop(score: float, cfg: SearchConfig) -> Optional[str]:
    if cfg.distance.is_chi2:
        if cfg.stop_ts_low <= score <= COMPATIBLE_TS:
            return "compatible"
        if score < cfg.stop_ts_low:
            return "below_band"
        if abs(score - 1.0) < cfg.early_stop_window:
            return "window"
    elif abs(score - cfg.target_distance) < cfg.early_stop_window:
        return "window"
    return None


def _check_inputs(start: Histogram, data: Histogram, R: ResponseMatrix) -> None:
    if start.n_bins != R.n_gen or not np.allclose(start.edges, R.gen_edges):
        raise SearchSetupError("start histogram binning differs from the response gen bins")
    if data.n_bins != R.n_reco or not np.allclose(data.edges, R.reco_edges):
        raise SearchSetupError("data histogram binning differs from the response reco bins")
    if data.total <= 0:
        raise DegenerateDataError("data histogram is empty")


def _search(
    start: np.ndarray,
    fold_batch: Callable[[np.ndarray], np.ndarray],
    comparator: Comparator,
    cfg: SearchConfig,
    rng: np.random.Generator,
    on_accept: Callable[[int, float], None] | None = None,
    keep: deque | None = None,
    stop: bool = True,
):
    x_best = start.astype(np.float64)
    best = INITIAL_TS
    trace: list[tuple[int, float]] = []
    it = 0
    batch = 1
    reason = "max_samples"
    while it < cfg.max_samples:
        k = min(batch, cfg.max_samples - it)
        cands = rng.poisson(x_best, size=(k, x_best.size)).astype(np.float64)
        scores = comparator.scores(fold_batch(cands))
        ok = scores < best
        if cfg.use_accept_floor:
            ok &= scores >= cfg.accept_floor
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            it += k
            batch = min(2 * batch, MAX_BATCH)
            continue
        j = int(hits[0])
        it += j + 1
        x_best = cands[j]
        best = float(scores[j])
        trace.append((it - 1, best))
        if keep is not None:
            keep.append(x_best)
        if on_accept is not None:
            on_accept(it - 1, best)
        batch = max(1, batch // 2)
        if stop:
            why = _should_stop(best, cfg)
            if why:
                reason = why
                break
    return x_best, trace, it, reason


def unfold(
    start: Histogram,
    data: Histogram,
    R: ResponseMatrix,
    cfg: SearchConfig,
    rng: np.random.Generator | None = None,
    on_accept: Callable[[int, float], None] | None = None,
) -> UnfoldRun:
    """Resample around the best truth candidate until its fold matches ``data``.

    ``rng`` defaults to a generator seeded from ``cfg.seed``. ``on_accept``
    is called with ``(iteration, score)`` for every accepted candidate.
    """
    _check_inputs(start, data, R)
    comparator = Comparator(cfg.distance, data)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    probs_t = R.probs.T.copy()

    x_best, trace, used, reason = _search(
        start.counts, lambda c: c @ probs_t, comparator, cfg, rng, on_accept
    )
    best = start if not trace else start.with_counts(x_best)
    result = comparator.result(fold(R, best))
    log.info("search stopped (%s) after %d iterations, score %.4g", reason, used,
             trace[-1][1] if trace else float("nan"))
    return UnfoldRun(best, result, trace, used, cfg, reason)


def unfold_with_systematics(
    start: Histogram,
    data: Histogram,
    bundle: ResponseBundle,
    cfg: SearchConfig,
    threads: int = 1,
) -> tuple[UnfoldRun, UnfoldRun, UnfoldRun]:
    """Independent searches against the same data with nominal, up and down."""
    children = np.random.SeedSequence(cfg.seed).spawn(3)
    matrices = (bundle.nominal, bundle.up, bundle.down)

    def one(i):
        return unfold(start, data, matrices[i], cfg, rng=np.random.default_rng(children[i]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, 3)) as pool:
            return tuple(pool.map(one, range(3)))
    return tuple(one(i) for i in range(3))


@dataclass
class SystematicEnvelope:
    """Nominal best sample with its Poisson errors, plus the per-bin spread
    of the up/down best samples kept as a separate band.
    """

    nominal: Histogram
    low: np.ndarray
    high: np.ndarray

    @property
    def poisson_errors(self) -> np.ndarray:
        return self.nominal.errors


def systematic_envelope(runs: tuple[UnfoldRun, UnfoldRun, UnfoldRun]) -> SystematicEnvelope:
    """Band from the output of :func:`unfold_with_systematics`."""
    stack = np.array([r.best_sample.counts for r in runs])
    return SystematicEnvelope(runs[0].best_sample, stack.min(axis=0), stack.max(axis=0))


def interpolate_response(bundle: ResponseBundle, alpha: np.ndarray | float) -> np.ndarray:
    """Per-entry piecewise-linear response at nuisance values ``alpha``.

    ``alpha = +1`` gives the up matrix and ``-1`` the down matrix; other values
    interpolate or extrapolate linearly from nominal. Negative entries are
    clipped and every column is rescaled to its nominal sum. Returns shape
    ``alpha.shape + probs.shape``.
    """
    nom = bundle.nominal.probs
    a = np.asarray(alpha, dtype=np.float64)[..., None, None]
    out = nom + np.where(a > 0, a * (bundle.up.probs - nom), -a * (bundle.down.probs - nom))
    np.maximum(out, 0.0, out=out)
    target = nom.sum(axis=0)
    sums = out.sum(axis=-2, keepdims=True)
    scale = np.where(sums > 0, target / np.where(sums > 0, sums, 1.0), 0.0)
    return out * scale


def _standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.standard_normal(size)


def unfold_abc(
    start: Histogram,
    data: Histogram,
    bundle: ResponseBundle,
    cfg: SearchConfig,
    n_keep: int = 100,
    quantiles: tuple[float, float] = (0.16, 0.84),
    alpha_sampler: Callable[[np.random.Generator, int], np.ndarray] = _standard_normal,
) -> PosteriorBands:
    """Search with a freshly drawn response R(alpha) for every candidate.

    The accept guard ``score >= accept_floor`` is always on. Bands are per-bin
    quantiles over the last ``n_keep`` accepted truth candidates.
    ``alpha_sampler`` draws the nuisance values; it exists so tests can pin
    alpha. The Poisson stream is seeded exactly as in :func:`unfold`.
    """
    if n_keep < 1:
        raise ConfigError("n_keep must be positive")
    _check_inputs(start, data, bundle.nominal)
    comparator = Comparator(cfg.distance, data)
    cfg_abc = cfg if cfg.use_accept_floor else replace(cfg, use_accept_floor=True)
    rng = np.random.default_rng(cfg.seed)
    alpha_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    def fold_batch(cands):
        alphas = alpha_sampler(alpha_rng, cands.shape[0])
        mats = interpolate_response(bundle, alphas)
        return np.einsum("kij,kj->ki", mats, cands)

    kept: deque = deque(maxlen=n_keep)
    x_best, trace, used, reason = _search(start.counts, fold_batch, comparator, cfg_abc, rng, keep=kept)
    best = start if not trace else start.with_counts(x_best)
    run = UnfoldRun(best, comparator.result(fold(bundle.nominal, best)), trace, used, cfg_abc, reason)

    if not kept:
        raise InsufficientPosteriorError("no candidate was accepted", partial=run)
    samples = np.array(kept)
    lo_q, hi_q = quantiles
    qs = np.quantile(samples, [lo_q, 0.5, hi_q], axis=0)
    bands = PosteriorBands(
        central=start.with_counts(qs[1]),
        low=start.with_counts(qs[0]),
        high=start.with_counts(qs[2]),
        quantiles=quantiles,
        accepted_count=len(trace),
        run=run,
    )
    if len(trace) < n_keep:
        raise InsufficientPosteriorError(
            f"only {len(trace)} accepted candidates, {n_keep} requested", partial=bands
        )
    return bands

