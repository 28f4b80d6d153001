"""Two-sample statistics between a folded candidate (probe) and data (reference).

Every statistic is available both as a function of two histograms and,
through :class:`Comparator`, as a vectorised score over a stack of probe
count vectors against one fixed reference. The search loop uses the latter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import BinningError, ConfigError, DegenerateDataError
from .histogram import BinMerging, Histogram, derive_merging

KINDS = ("pearson", "porter", "bhattacharyya", "wasserstein1", "kl")
CHI2_KINDS = ("pearson", "porter")


@dataclass(frozen=True)
class DistanceSpec:
    """Which statistic to minimise.

    ``pearson`` and ``porter`` are chi-square type: ndof is the merged-bin
    count and the search works on ts/ndof. The other kinds are plain
    distances reported with ndof = 1.
    """

    kind: str = "pearson"
    epsilon: float = 1e-9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown test {self.kind!r}; choose from {', '.join(KINDS)}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")

    @property
    def is_chi2(self) -> bool:
        return self.kind in CHI2_KINDS


@dataclass(frozen=True)
class TestResult:
    ts: float
    ndof: int
    p_value: Optional[float] = None

    @property
    def ts_per_ndof(self) -> float:
        return self.ts / self.ndof

    def to_dict(self) -> dict:
        return {
            "ts": self.ts,
            "ndof": self.ndof,
            "ts_per_ndof": self.ts_per_ndof,
            "p_value": self.p_value,
        }


def _chi2_result(ts: float, ndof: int) -> TestResult:
    return TestResult(float(ts), int(ndof), float(stats.chi2.sf(ts, ndof)))


def _normalise(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateDataError("histogram total must be positive")
    return counts / total


def _check_pair(probe: Histogram, reference: Histogram) -> None:
    if probe.n_bins != reference.n_bins:
        raise BinningError(f"probe has {probe.n_bins} bins, reference {reference.n_bins}")


def pearson(probe: Histogram, reference: Histogram, merging: BinMerging | None = None) -> TestResult:
    """sum (probe - ref)^2 / ref over merged bins; the reference is the data."""
    _check_pair(probe, reference)
    merging = derive_merging(reference) if merging is None else merging
    p = merging.apply(probe.counts)
    q = merging.apply(reference.counts)
    if np.any(q <= 0):
        raise DegenerateDataError("zero reference bin after merging")
    return _chi2_result(np.sum((p - q) ** 2 / q), merging.n_groups)


def porter(probe: Histogram, reference: Histogram, merging: BinMerging | None = None) -> TestResult:
    """sum (p - q)^2 / (p + q); bins empty in both are skipped."""
    _check_pair(probe, reference)
    merging = derive_merging(reference) if merging is None else merging
    p = merging.apply(probe.counts)
    q = merging.apply(reference.counts)
    used = (p + q) > 0
    if not np.any(used):
        raise DegenerateDataError("both histograms are empty")
    ts = np.sum((p[used] - q[used]) ** 2 / (p[used] + q[used]))
    return _chi2_result(ts, int(used.sum()))


def bhattacharyya(probe: Histogram, reference: Histogram) -> TestResult:
    """-ln sum sqrt(p_hat q_hat); ``inf`` for disjoint supports."""
    _check_pair(probe, reference)
    bc = np.sum(np.sqrt(_normalise(probe.counts) * _normalise(reference.counts)))
    if bc <= 0:
        return TestResult(float("inf"), 1)
    return TestResult(max(0.0, float(-np.log(bc))), 1)


def wasserstein1(probe: Histogram, reference: Histogram) -> TestResult:
    """1-D earth mover distance between the normalised histograms."""
    if not probe.same_binning(reference):
        raise BinningError("wasserstein1 needs identical binning")
    cdf_gap = np.cumsum(_normalise(probe.counts) - _normalise(reference.counts))
    return TestResult(float(np.sum(np.abs(cdf_gap) * reference.widths)), 1)


def _floored(counts: np.ndarray, epsilon: float) -> np.ndarray:
    p = np.maximum(_normalise(counts), epsilon)
    return p / p.sum(axis=-1, keepdims=True)


def kl(probe: Histogram, reference: Histogram, epsilon: float = 1e-9) -> TestResult:
    """KL(probe || reference) with every normalised bin floored at ``epsilon``."""
    _check_pair(probe, reference)
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    p = _floored(probe.counts, epsilon)
    q = _floored(reference.counts, epsilon)
    return TestResult(max(0.0, float(np.sum(p * np.log(p / q)))), 1)


def evaluate(
    spec: DistanceSpec,
    probe: Histogram,
    reference: Histogram,
    merging: BinMerging | None = None,
) -> TestResult:
    if spec.kind == "pearson":
        return pearson(probe, reference, merging)
    if spec.kind == "porter":
        return porter(probe, reference, merging)
    if spec.kind == "bhattacharyya":
        return bhattacharyya(probe, reference)
    if spec.kind == "wasserstein1":
        return wasserstein1(probe, reference)
    return kl(probe, reference, spec.epsilon)


class Comparator:
    """A statistic bound to one fixed reference histogram.

    ``scores`` maps an ``(k, n_bins)`` stack of probe counts to ``k`` search
    scores: ts/ndof for chi-square kinds, the raw distance otherwise. It
    agrees with :func:`evaluate` row by row.
    """

    def __init__(self, spec: DistanceSpec, reference: Histogram):
        if reference.total <= 0:
            raise DegenerateDataError("reference histogram is empty")
        self.spec = spec
        self.reference = reference
        self.merging = derive_merging(reference)
        self._q = self.merging.apply(reference.counts)
        self._q_hat = reference.counts / reference.total
        self._sqrt_q = np.sqrt(self._q_hat)
        self._widths = reference.widths
        self._q_floor = _floored(reference.counts, spec.epsilon)

    def scores(self, probes: np.ndarray) -> np.ndarray:
        probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
        kind = self.spec.kind
        if kind == "pearson":
            p = self.merging.apply(probes)
            return np.sum((p - self._q) ** 2 / self._q, axis=-1) / self.merging.n_groups
        if kind == "porter":
            p = self.merging.apply(probes)
            s = p + self._q
            used = s > 0
            num = np.where(used, (p - self._q) ** 2, 0.0)
            ts = np.sum(num / np.where(used, s, 1.0), axis=-1)
            return ts / np.maximum(used.sum(axis=-1), 1)
        totals = probes.sum(axis=-1, keepdims=True)
        # empty candidates can never be the best match
        empty = totals[:, 0] <= 0
        p_hat = probes / np.where(totals > 0, totals, 1.0)
        if kind == "bhattacharyya":
            bc = np.sum(np.sqrt(p_hat) * self._sqrt_q, axis=-1)
            with np.errstate(divide="ignore"):
                out = np.maximum(0.0, -np.log(bc))
        elif kind == "wasserstein1":
            out = np.sum(np.abs(np.cumsum(p_hat - self._q_hat, axis=-1)) * self._widths, axis=-1)
        else:
            p = np.maximum(p_hat, self.spec.epsilon)
            p = p / p.sum(axis=-1, keepdims=True)
            out = np.maximum(0.0, np.sum(p * np.log(p / self._q_floor), axis=-1))
        return np.where(empty, np.inf, out)

    def result(self, probe: Histogram) -> TestResult:
        return evaluate(self.spec, probe, self.reference, self.merging)
