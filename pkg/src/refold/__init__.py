"""Unfolding by folding: recover a truth spectrum by Poisson-resampling
candidate truth histograms and keeping those whose folded image best
matches the data.
"""

__version__ = "0.1.0"

from .dagostini import DagostiniConfig, DagostiniResult, dagostini_unfold
from .disttest import (
    Comparator,
    DistanceSpec,
    TestResult,
    bhattacharyya,
    evaluate,
    kl,
    pearson,
    porter,
    wasserstein1,
)
from .errors import RefoldError
from .histogram import BinMerging, Histogram, derive_merging, fill_from_samples, merge_bins, poisson_resample
from .response import (
    ResponseBundle,
    ResponseMatrix,
    build_response,
    condition_number,
    fold,
    systematic_variants,
)
from .scenarios import ScenarioData, ScenarioSpec, builtin_scenarios, generate
from .unfolder import (
    PosteriorBands,
    SearchConfig,
    UnfoldRun,
    SystematicEnvelope,
    flat_start,
    interpolate_response,
    systematic_envelope,
    unfold,
    unfold_abc,
    unfold_with_systematics,
)
