"""Binned spectra: construction, Poisson resampling, and empty-bin merging.

Counts are stored as float64 throughout. Scaled and iterated histograms are
non-integral, and Poisson resampling treats a real count as the mean.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import BinningError, DegenerateDataError, FormatError, MergingError

CSV_HEADER = ("bin_lo", "bin_hi", "count", "error")


def _frozen(a: ArrayLike) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Histogram:
    """Immutable 1-D histogram.

    Parameters
    ----------
    edges : array_like
        ``n_bins + 1`` strictly increasing bin boundaries.
    counts : array_like
        ``n_bins`` non-negative bin contents.
    errors : array_like, optional
        ``n_bins`` non-negative 1-sigma uncertainties. Defaults to
        ``sqrt(counts)``.
    underflow, overflow : int
        Number of samples that fell outside the edges when filling.
    """

    edges: np.ndarray
    counts: np.ndarray
    errors: np.ndarray = None
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self):
        edges = _frozen(self.edges)
        counts = _frozen(self.counts)
        if edges.ndim != 1 or edges.size < 2:
            raise BinningError("need at least 2 bin edges")
        if not np.all(np.diff(edges) > 0):
            raise BinningError("edges must be strictly increasing")
        if counts.shape != (edges.size - 1,):
            raise BinningError(
                f"counts has shape {counts.shape}, expected ({edges.size - 1},)"
            )
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise DegenerateDataError("counts must be finite and non-negative")
        if self.errors is None:
            errors = _frozen(np.sqrt(counts))
        else:
            errors = _frozen(self.errors)
            if errors.shape != counts.shape:
                raise BinningError("errors and counts differ in length")
            if np.any(errors < 0):
                raise DegenerateDataError("errors must be non-negative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "errors", errors)

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def same_binning(self, other: "Histogram") -> bool:
        return self.edges.shape == other.edges.shape and np.array_equal(
            self.edges, other.edges
        )

    def with_counts(self, counts: ArrayLike, errors: ArrayLike | None = None) -> "Histogram":
        """New histogram on the same edges; errors default to sqrt(counts)."""
        return Histogram(self.edges, counts, errors)

    def __eq__(self, other):
        if not isinstance(other, Histogram):
            return NotImplemented
        return (
            self.same_binning(other)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.errors, other.errors)
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for lo, hi, c, e in zip(self.edges[:-1], self.edges[1:], self.counts, self.errors):
                writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(c)), repr(float(e))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Histogram":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
                raise FormatError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 4:
                    raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from None
        if not rows:
            raise FormatError(f"{path}: no bins")
        data = np.array(rows)
        if not np.allclose(data[1:, 0], data[:-1, 1], rtol=0, atol=0):
            raise FormatError(f"{path}: bins are not contiguous")
        edges = np.append(data[:, 0], data[-1, 1])
        return cls(edges, data[:, 2], data[:, 3])


def fill_from_samples(samples: ArrayLike, edges: ArrayLike) -> Histogram:
    """Histogram raw samples into ``[edges[i], edges[i+1])`` bins.

    Out-of-range samples are dropped and tallied in ``underflow`` and
    ``overflow``. The last bin is half-open like every other bin.
    """
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise BinningError("need at least 2 bin edges")
    if not np.all(np.diff(edges) > 0):
        raise BinningError("edges must be strictly increasing")
    x = np.asarray(samples, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise BinningError("samples must be finite")
    idx = np.searchsorted(edges, x, side="right") - 1
    under = int(np.count_nonzero(idx < 0))
    over = int(np.count_nonzero(idx >= edges.size - 1))
    inside = idx[(idx >= 0) & (idx < edges.size - 1)]
    counts = np.bincount(inside, minlength=edges.size - 1).astype(np.float64)
    return Histogram(edges, counts, underflow=under, overflow=over)


def poisson_resample(h: Histogram, rng: np.random.Generator) -> Histogram:
    """Draw each bin independently from Poisson(mean = h.counts)."""
    if np.any(h.counts < 0):
        raise DegenerateDataError("Poisson mean must be non-negative")
    return h.with_counts(rng.poisson(h.counts).astype(np.float64))


@dataclass(frozen=True)
class BinMerging:
    """Ordered partition of bin indices into contiguous groups.

    ``degenerate`` is set when the reference it was derived from had no
    content at all, in which case every bin sits in a single group.
    """

    groups: tuple[tuple[int, ...], ...]
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        flat = [i for g in groups for i in g]
        if any(len(g) == 0 for g in groups) or flat != list(range(len(flat))):
            raise MergingError("groups must be non-empty, contiguous and in order")
        object.__setattr__(self, "groups", groups)

    @property
    def n_bins(self) -> int:
        return self.groups[-1][-1] + 1 if self.groups else 0

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def starts(self) -> np.ndarray:
        """First original index of every group, for ``np.add.reduceat``."""
        return np.array([g[0] for g in self.groups], dtype=np.intp)

    @classmethod
    def identity(cls, n_bins: int) -> "BinMerging":
        return cls(tuple((i,) for i in range(n_bins)))

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Sum ``values`` over groups along the last axis."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.n_bins:
            raise MergingError(
                f"merging covers {self.n_bins} bins, array has {values.shape[-1]}"
            )
        return np.add.reduceat(values, self.starts, axis=-1)


def derive_merging(reference: Histogram | Sequence[float]) -> BinMerging:
    """Group each empty reference bin with the following bins up to the next
    non-empty one. A trailing run of empty bins joins the last group.
    """
    counts = reference.counts if isinstance(reference, Histogram) else np.asarray(reference, float)
    if counts.size == 0:
        raise MergingError("reference has no bins")
    if not np.any(counts > 0):
        warnings.warn("all-zero reference: merging every bin into one group", stacklevel=2)
        return BinMerging((tuple(range(counts.size)),), degenerate=True)
    groups: list[list[int]] = []
    pending: list[int] = []
    for i, c in enumerate(counts):
        pending.append(i)
        if c > 0:
            groups.append(pending)
            pending = []
    if pending:
        groups[-1].extend(pending)
    return BinMerging(tuple(tuple(g) for g in groups))


def merge_bins(h: Histogram, merging: BinMerging) -> Histogram:
    """Sum counts over groups, add errors in quadrature, keep group edges."""
    if merging.n_bins != h.n_bins:
        raise MergingError(f"merging covers {merging.n_bins} bins, histogram has {h.n_bins}")
    counts = merging.apply(h.counts)
    errors = np.sqrt(merging.apply(h.errors**2))
    edges = np.append(h.edges[merging.starts], h.edges[-1])
    return Histogram(edges, counts, errors)
