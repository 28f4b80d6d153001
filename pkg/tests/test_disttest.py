import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from refold.disttest import (
    KINDS,
    Comparator,
    DistanceSpec,
    bhattacharyya,
    evaluate,
    kl,
    pearson,
    porter,
    wasserstein1,
)
from refold.errors import BinningError, ConfigError
from refold.histogram import Histogram


def H(counts, edges=None):
    edges = np.arange(len(counts) + 1.0) if edges is None else edges
    return Histogram(edges, counts)


positive_lists = st.lists(st.integers(1, 200).map(float), min_size=2, max_size=10)


class TestPearson:
    def test_identical(self):
        r = pearson(H([4, 5, 6]), H([4, 5, 6]))
        assert r.ts == 0 and r.p_value == 1.0

    def test_single_bin(self):
        r = pearson(H([9]), H([4]))
        assert r.ts == pytest.approx(6.25) and r.ndof == 1

    def test_merged(self):
        r = pearson(H([5, 0, 5]), H([4, 0, 6]))
        assert r.ts == pytest.approx(0.25 + 1 / 6, abs=1e-12)
        assert r.ndof == 2
        # chi2 with 2 dof has survival function exp(-x/2)
        assert r.p_value == pytest.approx(math.exp(-r.ts / 2))

    def test_asymmetric(self):
        assert pearson(H([9, 1]), H([4, 2])).ts != pearson(H([4, 2]), H([9, 1])).ts

    def test_p_value_monotone(self):
        ref = H([10, 10, 10])
        ps = [pearson(H([10 + d, 10, 10 - d]), ref).p_value for d in range(6)]
        assert all(a > b for a, b in zip(ps, ps[1:]))


class TestPorter:
    def test_examples(self):
        assert porter(H([3, 3]), H([3, 3])).ts == 0
        assert porter(H([2]), H([0.0]), merging=None if False else _identity(1)).ts == pytest.approx(2.0)
        assert porter(H([1, 3]), H([3, 1])).ts == pytest.approx(2.0)

    def test_both_empty_bins_skipped(self):
        from refold.histogram import BinMerging

        r = porter(H([1, 0, 3]), H([3, 0, 1]), BinMerging.identity(3))
        assert r.ts == pytest.approx(2.0) and r.ndof == 2


def _identity(n):
    from refold.histogram import BinMerging

    return BinMerging.identity(n)


class TestBhattacharyya:
    def test_identical_shapes(self):
        assert bhattacharyya(H([1, 2, 3]), H([2, 4, 6])).ts == pytest.approx(0, abs=1e-15)

    def test_disjoint(self):
        assert bhattacharyya(H([1, 0]), H([0, 1])).ts == float("inf")

    def test_value(self):
        expected = -math.log(math.sqrt(0.5 * 0.9) + math.sqrt(0.5 * 0.1))
        r = bhattacharyya(H([5, 5]), H([9, 1]))
        assert r.ts == pytest.approx(expected, abs=1e-12)
        assert r.ts == pytest.approx(0.11157, abs=1e-4)


class TestWasserstein:
    def test_unit_shift(self):
        assert wasserstein1(H([1, 0]), H([0, 1])).ts == pytest.approx(1.0)

    @pytest.mark.parametrize("k, w", [(1, 0.5), (2, 2.0), (3, 1.0)])
    def test_translation(self, k, w):
        base = np.array([1.0, 4.0, 2.0, 0, 0, 0])
        edges = np.arange(7) * w
        assert wasserstein1(H(np.roll(base, k), edges), H(base, edges)).ts == pytest.approx(k * w)

    def test_unequal_binning(self):
        with pytest.raises(BinningError):
            wasserstein1(H([1, 1]), H([1, 1], [0, 1, 3]))

    @given(positive_lists)
    def test_matches_scipy_on_centers(self, counts):
        # equal widths: discrete W1 equals W1 between point masses at centers
        rng = np.random.default_rng(len(counts))
        other = rng.integers(1, 50, len(counts)).astype(float)
        c = np.arange(len(counts)) + 0.5
        expected = stats.wasserstein_distance(c, c, counts, other)
        assert wasserstein1(H(counts), H(other)).ts == pytest.approx(expected, abs=1e-9)


class TestKL:
    def test_identical(self):
        assert kl(H([1, 3]), H([2, 6])).ts == pytest.approx(0, abs=1e-15)

    def test_value(self):
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        r = kl(H([2, 2]), H([1, 3]))
        assert r.ts == pytest.approx(expected, abs=1e-8)
        assert r.ts == pytest.approx(0.14384, abs=1e-4)
        assert r.ts == pytest.approx(stats.entropy([0.5, 0.5], [0.25, 0.75]), abs=1e-8)

    def test_asymmetric(self):
        assert kl(H([2, 2]), H([1, 3])).ts != pytest.approx(kl(H([1, 3]), H([2, 2])).ts)

    def test_zero_bins_finite(self):
        assert np.isfinite(kl(H([1, 0]), H([0, 1])).ts)

    def test_bad_epsilon(self):
        with pytest.raises(ConfigError):
            kl(H([1]), H([1]), epsilon=0)


class TestSpec:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            DistanceSpec("hellinger")

    def test_chi2_flags(self):
        assert DistanceSpec("pearson").is_chi2 and DistanceSpec("porter").is_chi2
        assert not DistanceSpec("kl").is_chi2


@given(positive_lists)
@settings(max_examples=40)
def test_all_zero_on_identical(counts):
    for kind in KINDS:
        assert evaluate(DistanceSpec(kind), H(counts), H(counts)).ts == pytest.approx(0, abs=1e-12)


@given(positive_lists, st.integers(0, 2**31))
@settings(max_examples=40)
def test_nonnegative_and_symmetry(counts, seed):
    rng = np.random.default_rng(seed)
    other = rng.integers(1, 200, len(counts)).astype(float)
    p, q = H(counts), H(other)
    for kind in KINDS:
        assert evaluate(DistanceSpec(kind), p, q).ts >= 0
    for kind in ("porter", "bhattacharyya", "wasserstein1"):
        spec = DistanceSpec(kind)
        assert evaluate(spec, p, q).ts == pytest.approx(evaluate(spec, q, p).ts, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_comparator_matches_functions(kind):
    rng = np.random.default_rng(11)
    ref = H([40.0, 0.0, 12.0, 30.0, 0.0])
    probes = rng.integers(0, 50, size=(25, 5)).astype(float)
    probes[0] = 0
    comp = Comparator(DistanceSpec(kind), ref)
    scores = comp.scores(probes)
    assert scores[0] == np.inf or kind in ("pearson", "porter")
    for row, s in zip(probes[1:], scores[1:]):
        r = comp.result(H(row))
        assert s == pytest.approx(r.ts_per_ndof, rel=1e-12, abs=1e-15)
