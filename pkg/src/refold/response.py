"""Detector response: building, folding, conditioning, systematic variants.

``probs`` is stored reco-major: rows are reco bins, columns are gen bins, so
folding a truth vector is ``probs @ x``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConfigError, FoldShapeError, FormatError, ResponseError
from .histogram import Histogram

log = logging.getLogger(__name__)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Column-normalised migration probabilities plus the raw migration counts.

    ``probs[:, j]`` sums to ``efficiency[j]`` for every populated gen bin ``j``
    and is all zeros for an empty one (listed in ``empty_columns``).
    """

    probs: np.ndarray
    raw_counts: np.ndarray
    raw_errors: np.ndarray
    efficiency: np.ndarray
    gen_edges: np.ndarray
    reco_edges: np.ndarray

    def __post_init__(self):
        for name in ("probs", "raw_counts", "raw_errors", "efficiency", "gen_edges", "reco_edges"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        shape = (self.reco_edges.size - 1, self.gen_edges.size - 1)
        for name in ("probs", "raw_counts", "raw_errors"):
            if getattr(self, name).shape != shape:
                raise FoldShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.efficiency.shape != (shape[1],):
            raise FoldShapeError("efficiency length must equal the number of gen bins")
        if np.any(self.probs < 0) or np.any(self.probs > 1 + 1e-12):
            raise ResponseError("probabilities must lie in [0, 1]")

    @property
    def n_reco(self) -> int:
        return self.probs.shape[0]

    @property
    def n_gen(self) -> int:
        return self.probs.shape[1]

    @property
    def empty_columns(self) -> np.ndarray:
        return np.flatnonzero(self.raw_counts.sum(axis=0) == 0)

    def to_dict(self) -> dict:
        return {
            "gen_edges": self.gen_edges.tolist(),
            "reco_edges": self.reco_edges.tolist(),
            "probs": self.probs.tolist(),
            "raw_counts": self.raw_counts.tolist(),
            "raw_errors": self.raw_errors.tolist(),
            "efficiency": self.efficiency.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseMatrix":
        try:
            raw = np.asarray(d["raw_counts"], dtype=float)
            return cls(
                probs=d["probs"],
                raw_counts=raw,
                raw_errors=d.get("raw_errors", np.sqrt(raw)),
                efficiency=d["efficiency"],
                gen_edges=d["gen_edges"],
                reco_edges=d["reco_edges"],
            )
        except KeyError as exc:
            raise FormatError(f"response JSON is missing key {exc}") from None

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path: str | Path) -> "ResponseMatrix":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)


@dataclass(frozen=True)
class ResponseBundle:
    nominal: ResponseMatrix
    up: ResponseMatrix
    down: ResponseMatrix

    def __post_init__(self):
        for m in (self.up, self.down):
            if not (
                np.array_equal(m.gen_edges, self.nominal.gen_edges)
                and np.array_equal(m.reco_edges, self.nominal.reco_edges)
            ):
                raise FoldShapeError("bundle members must share gen and reco edges")

    @classmethod
    def degenerate(cls, nominal: ResponseMatrix) -> "ResponseBundle":
        return cls(nominal, nominal, nominal)


def response_from_counts(
    raw_counts: ArrayLike,
    gen_edges: ArrayLike,
    reco_edges: ArrayLike,
    gen_totals: ArrayLike | None = None,
    raw_errors: ArrayLike | None = None,
) -> ResponseMatrix:
    """Normalise a reco x gen migration matrix column by column.

    ``gen_totals[j]`` is the number of events generated in gen bin ``j``
    including those reconstructed outside every reco bin. When omitted the
    column sums are used, i.e. 100% efficiency.
    """
    raw = np.asarray(raw_counts, dtype=np.float64)
    col = raw.sum(axis=0)
    totals = col if gen_totals is None else np.asarray(gen_totals, dtype=np.float64)
    if np.any(totals < col * (1 - 1e-12)):
        raise ResponseError("gen totals smaller than the migrated counts")
    safe = np.where(totals > 0, totals, 1.0)
    probs = np.where(totals > 0, raw / safe, 0.0)
    eff = np.where(totals > 0, col / safe, 0.0)
    # exact column sums when efficiency is unity
    full = (totals > 0) & (col == totals)
    eff[full] = 1.0
    if raw_errors is None:
        raw_errors = np.sqrt(raw)
    return ResponseMatrix(probs, raw, raw_errors, eff, gen_edges, reco_edges)


def build_response(
    truth_values: ArrayLike,
    reco_values: ArrayLike,
    gen_edges: ArrayLike,
    reco_edges: ArrayLike,
    weights: ArrayLike | None = None,
    unit_efficiency: bool = False,
) -> ResponseMatrix:
    """Build the response from event-paired truth and reco values.

    Events with truth outside ``gen_edges`` are ignored. Events with truth
    inside but reco outside ``reco_edges`` lower the efficiency of their gen
    bin, unless ``unit_efficiency`` is set, in which case each populated
    column is normalised to 1 over the reco bins.
    """
    t = np.asarray(truth_values, dtype=np.float64).ravel()
    r = np.asarray(reco_values, dtype=np.float64).ravel()
    if t.size != r.size:
        raise ResponseError(f"got {t.size} truth values but {r.size} reco values")
    if t.size == 0:
        raise ResponseError("no events to build a response from")
    gen_edges = np.asarray(gen_edges, dtype=np.float64)
    reco_edges = np.asarray(reco_edges, dtype=np.float64)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if w.size != t.size:
        raise ResponseError("weights must pair with events")

    gi = np.searchsorted(gen_edges, t, side="right") - 1
    ri = np.searchsorted(reco_edges, r, side="right") - 1
    ng, nr = gen_edges.size - 1, reco_edges.size - 1
    in_gen = (gi >= 0) & (gi < ng)
    in_reco = (ri >= 0) & (ri < nr)
    both = in_gen & in_reco

    raw = np.zeros((nr, ng))
    sumw2 = np.zeros((nr, ng))
    np.add.at(raw, (ri[both], gi[both]), w[both])
    np.add.at(sumw2, (ri[both], gi[both]), w[both] ** 2)
    gen_totals = np.bincount(gi[in_gen], weights=w[in_gen], minlength=ng)

    resp = response_from_counts(
        raw,
        gen_edges,
        reco_edges,
        gen_totals=None if unit_efficiency else gen_totals,
        raw_errors=np.sqrt(sumw2),
    )
    if resp.empty_columns.size:
        log.info("gen bins with no events: %s", resp.empty_columns.tolist())
    return resp


def fold(R: ResponseMatrix, x: Histogram) -> Histogram:
    """Fold a truth histogram into reco space, ``y = R x``."""
    if x.n_bins != R.n_gen or not np.allclose(x.edges, R.gen_edges, rtol=1e-12, atol=0):
        raise FoldShapeError(
            f"histogram with {x.n_bins} bins does not match the {R.n_gen} gen bins of the response"
        )
    counts = R.probs @ x.counts
    errors = np.sqrt((R.probs**2) @ (x.errors**2))
    return Histogram(R.reco_edges, counts, errors)


def condition_number(R: ResponseMatrix | ArrayLike) -> float:
    """sigma_max / max(0, sigma_min); ``inf`` when the denominator vanishes."""
    probs = R.probs if isinstance(R, ResponseMatrix) else np.asarray(R, dtype=np.float64)
    s = np.linalg.svd(probs, compute_uv=False)
    smin = max(0.0, float(s.min()))
    if smin == 0.0:
        return float("inf")
    return float(s.max()) / smin


def systematic_variants(
    truth_values: ArrayLike,
    reco_values: ArrayLike,
    gen_edges: ArrayLike,
    reco_edges: ArrayLike,
    shift_fraction: float = 0.10,
    mode: str = "weight",
    unit_efficiency: bool = False,
) -> ResponseBundle:
    """Nominal response plus up/down variants from a shifted truth.

    ``mode="weight"`` scales every event weight by ``1 +/- shift_fraction``.
    Column normalisation divides that out, so only the raw counts and their
    errors move. ``mode="scale"`` shifts each truth value to
    ``t * (1 +/- shift_fraction)`` before rebinning, which does deform the
    migration probabilities.
    """
    if not 0 <= shift_fraction < 1:
        raise ConfigError(f"shift_fraction must be in [0, 1), got {shift_fraction}")
    if mode not in ("weight", "scale"):
        raise ConfigError(f"unknown systematic mode {mode!r}")
    t = np.asarray(truth_values, dtype=np.float64)
    args = dict(gen_edges=gen_edges, reco_edges=reco_edges, unit_efficiency=unit_efficiency)
    nominal = build_response(t, reco_values, **args)
    if shift_fraction == 0:
        return ResponseBundle.degenerate(nominal)
    variants = []
    for sign in (+1, -1):
        factor = 1 + sign * shift_fraction
        if mode == "weight":
            variants.append(build_response(t, reco_values, weights=np.full(t.size, factor), **args))
        else:
            variants.append(build_response(t * factor, reco_values, **args))
    return ResponseBundle(nominal, *variants)


def load_bundle(nominal: str | Path, up: str | Path | None, down: str | Path | None) -> ResponseBundle:
    nom = ResponseMatrix.from_json(nominal)
    if up is None and down is None:
        return ResponseBundle.degenerate(nom)
    if up is None or down is None:
        raise FormatError("both up and down responses are required")
    return ResponseBundle(nom, ResponseMatrix.from_json(up), ResponseMatrix.from_json(down))
