"""Iterative Bayesian (D'Agostini) unfolding, run to convergence.

Update rule, with efficiency eff_j = sum_i R_ij::

    x_j <- x_j / eff_j * sum_i R_ij y_i / (R x)_i

No early stopping: iterations continue until the largest relative per-bin
change drops below ``convergence_tol`` or ``max_iterations`` is reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FoldShapeError, StalledIterationError
from .histogram import Histogram
from .response import ResponseMatrix


@dataclass(frozen=True)
class DagostiniConfig:
    max_iterations: int = 10_000
    convergence_tol: float = 1e-4
    prior: Histogram | None = None  # None means flat

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not self.convergence_tol > 0:
            raise ConfigError("convergence_tol must be positive")


@dataclass
class DagostiniResult:
    unfolded: Histogram
    iterations: int
    converged: bool
    trace: list[np.ndarray] = field(repr=False, default_factory=list)
    changes: list[float] = field(repr=False, default_factory=list)


def dagostini_unfold(data: Histogram, R: ResponseMatrix, cfg: DagostiniConfig = DagostiniConfig()) -> DagostiniResult:
    if data.n_bins != R.n_reco or not np.allclose(data.edges, R.reco_edges):
        raise FoldShapeError("data binning differs from the response reco bins")
    probs = R.probs
    eff = probs.sum(axis=0)
    live = eff > 0
    y = data.counts

    if cfg.prior is None:
        x = np.where(live, y.sum() / max(int(live.sum()), 1), 0.0)
    else:
        if cfg.prior.n_bins != R.n_gen:
            raise FoldShapeError("prior binning differs from the response gen bins")
        x = np.where(live, cfg.prior.counts, 0.0).astype(np.float64)

    inv_eff = np.where(live, 1.0 / np.where(live, eff, 1.0), 0.0)
    probs_t = probs.T.copy()
    trace = [x.copy()]
    changes: list[float] = []
    converged = False
    for _ in range(cfg.max_iterations):
        folded = probs @ x
        if np.any((folded <= 0) & (y > 0)):
            raise StalledIterationError("folded prior is zero in a populated data bin")
        ratio = np.divide(y, folded, out=np.zeros_like(y), where=folded > 0)
        x_new = x * inv_eff * (probs_t @ ratio)
        nz = x > 0
        change = float(np.max(np.abs(x_new[nz] - x[nz]) / x[nz])) if np.any(nz) else 0.0
        x = x_new
        trace.append(x)
        changes.append(change)
        if change < cfg.convergence_tol:
            converged = True
            break

    # unfold_matrix[j, i] = R_ij x_j / (eff_j (R x)_i), evaluated at the final x
    folded = probs @ x
    inv_folded = np.divide(1.0, folded, out=np.zeros_like(folded), where=folded > 0)
    unfold_matrix = probs_t * (x * inv_eff)[:, None] * inv_folded[None, :]
    errors = np.sqrt((unfold_matrix**2) @ (data.errors**2))
    unfolded = Histogram(R.gen_edges, np.maximum(x, 0.0), errors)
    return DagostiniResult(unfolded, len(changes), converged, trace, changes)
