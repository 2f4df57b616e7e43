import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpscore.errors import EmptyPopulationError, InvalidInputError
from tpscore.rng import SplitMix64, index_block, substream, u64_block, uniform_block
from tpscore.stats import (
    aligned_columns,
    bootstrap_mean,
    bootstrap_paired_diff,
    bootstrap_union_delta_practice,
    mean_replicates,
    union_delta_replicates,
)

REFERENCE_1234567 = [
    6457827717110365317,
    3203168211198807973,
    9817491932198370423,
    4593380528125082431,
    16408922859458223821,
]


class TestRng:
    def test_reference_sequence(self):
        g = SplitMix64(1234567)
        assert [g.next_u64() for _ in range(5)] == REFERENCE_1234567

    def test_vectorized_matches_scalar(self):
        seeds = [0, 1, 2**64 - 1, substream(42, 7, 1)]
        block = u64_block(seeds, 50)
        for s, row in zip(seeds, block):
            g = SplitMix64(s)
            assert row.tolist() == [g.next_u64() for _ in range(50)]

    def test_doubles_and_indices(self):
        s = substream(9, 3)
        g = SplitMix64(s)
        assert uniform_block([s], 20)[0].tolist() == [g.next_double() for _ in range(20)]
        g = SplitMix64(s)
        assert index_block([s], 20, 13)[0].tolist() == [g.next_below(13) for _ in range(20)]

    def test_substreams_distinct(self):
        assert len({substream(42, r) for r in range(1000)}) == 1000


def slow_union_reference(complete, censored, B, seed):
    """Scalar resampler: same streams, plain Python arithmetic."""
    union = list(complete) + list(censored)
    n, n_c = len(union), len(complete)
    reps = []
    for r in range(B):
        attempt = 0
        while True:
            g = SplitMix64(substream(seed, r, attempt))
            idx = [g.next_below(n) for _ in range(n)]
            if any(i < n_c for i in idx):
                break
            attempt += 1
        vals = [union[i] for i in idx]
        comp = [union[i] for i in idx if i < n_c]
        reps.append(math.fsum(vals) / n - math.fsum(comp) / len(comp))
    return reps


class TestBootstrapMean:
    def test_constant(self):
        s = bootstrap_mean([2.5] * 17, B=200, seed=1)
        assert s.estimate == 2.5 and s.se == 0.0 and s.ci_low == s.ci_high == 2.5

    def test_single(self):
        s = bootstrap_mean([0.3], B=50, seed=3)
        assert s.se == 0.0 and s.ci_low == s.ci_high == 0.3

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(size=300)
        assert bootstrap_mean(x, seed=5) == bootstrap_mean(x, seed=5)
        assert bootstrap_mean(x, seed=5) != bootstrap_mean(x, seed=6)

    def test_replicates_match_scalar_reference(self):
        x = np.random.default_rng(1).normal(size=37)
        reps = mean_replicates(x, B=40, seed=11)
        for r in range(40):
            g = SplitMix64(substream(11, r, 0))
            ref = math.fsum(x[g.next_below(37)] for _ in range(37)) / 37
            assert reps[r] == pytest.approx(ref, abs=1e-14)

    def test_se_is_replicate_std(self):
        x = np.random.default_rng(2).normal(size=50)
        reps = mean_replicates(x, B=300, seed=4)
        s = bootstrap_mean(x, B=300, seed=4)
        assert s.se == pytest.approx(float(np.std(reps, ddof=1)), rel=1e-12)
        assert s.ci_low == pytest.approx(float(np.quantile(reps, 0.025)), abs=0)

    def test_percentile_ranks(self):
        x = np.random.default_rng(3).normal(size=60)
        reps = np.sort(mean_replicates(x, B=1000, seed=42))
        s = bootstrap_mean(x, B=1000, seed=42)
        # inclusive linear rule: 1-based rank 1 + 999 * 0.025 = 25.975
        lo = reps[24] + 0.975 * (reps[25] - reps[24])
        hi = reps[974] + 0.025 * (reps[975] - reps[974])
        assert s.ci_low == pytest.approx(lo, abs=1e-15)
        assert s.ci_high == pytest.approx(hi, abs=1e-15)
        assert s.ci_low <= s.estimate <= s.ci_high

    def test_batching_invariance(self, monkeypatch):
        import tpscore.stats as stats

        x = np.random.default_rng(4).normal(size=25)
        full = bootstrap_mean(x, B=120, seed=8)
        monkeypatch.setattr(stats, "_CHUNK_CELLS", 30)
        assert bootstrap_mean(x, B=120, seed=8) == full

    def test_errors(self):
        with pytest.raises(EmptyPopulationError):
            bootstrap_mean([])
        with pytest.raises(InvalidInputError):
            bootstrap_mean([1.0], B=0)
        with pytest.raises(InvalidInputError):
            bootstrap_mean([1.0], level=1.0)


class TestPaired:
    @settings(max_examples=30)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
    def test_identical_columns(self, a):
        s = bootstrap_paired_diff(a, a, B=100, seed=2)
        assert s.estimate == 0.0 and s.se == 0.0 and s.ratio is None

    def test_constant_shift_dyadic(self):
        b = np.arange(40) * 0.25
        s = bootstrap_paired_diff(b + 1, b, B=200, seed=9)
        assert s.estimate == 1.0 and s.se == 0.0

    def test_constant_shift_general(self):
        b = np.random.default_rng(5).random(40)
        s = bootstrap_paired_diff(b + 1, b, B=200, seed=9)
        assert abs(s.estimate - 1) <= 1e-12 and s.se <= 1e-12

    def test_misaligned(self):
        with pytest.raises(InvalidInputError):
            bootstrap_paired_diff([1.0, 2.0], [1.0], B=10)
        with pytest.raises(InvalidInputError):
            aligned_columns({"a": 1.0}, {"b": 1.0})

    def test_aligned_by_id(self):
        a, b = aligned_columns({"y": 2.0, "x": 1.0}, {"x": 3.0, "y": 4.0})
        assert a.tolist() == [1.0, 2.0] and b.tolist() == [3.0, 4.0]

    def test_ratio(self):
        rng = np.random.default_rng(6)
        a = rng.normal(0.5, 1, 200)
        b = rng.normal(0, 1, 200)
        s = bootstrap_paired_diff(a, b, B=300, seed=1)
        assert s.ratio == pytest.approx(s.estimate / s.se)


class TestUnion:
    def test_no_censored(self):
        c = np.random.default_rng(7).normal(size=30)
        s = bootstrap_union_delta_practice(c, [], B=100, seed=3)
        assert s.estimate == 0.0 and s.se == 0.0 and s.ci_low == s.ci_high == 0.0

    def test_all_censored(self):
        with pytest.raises(EmptyPopulationError):
            bootstrap_union_delta_practice([], [0.1, 0.2], B=10)

    def test_matches_slow_reference(self):
        rng = np.random.default_rng(8)
        c = rng.normal(-0.5, 0.2, 6)
        z = rng.normal(-0.2, 0.1, 10)
        est, reps, redraws = union_delta_replicates(c, z, B=300, seed=21)
        ref = slow_union_reference(c, z, 300, 21)
        np.testing.assert_allclose(reps, ref, rtol=0, atol=1e-14)
        assert est == pytest.approx(np.mean(np.r_[c, z]) - np.mean(c), abs=1e-15)

    def test_redraws_counted(self):
        # one complete member among many censored: empty resamples are common
        est, reps, redraws = union_delta_replicates([0.0], [1.0] * 4, B=200, seed=1)
        assert redraws > 0
        ref = slow_union_reference([0.0], [1.0] * 4, 200, 1)
        np.testing.assert_allclose(reps, ref, rtol=0, atol=1e-14)
        s = bootstrap_union_delta_practice([0.0], [1.0] * 4, B=200, seed=1)
        assert s.redraws == redraws


@pytest.mark.slow
def test_paired_coverage():
    rng = np.random.default_rng(2024)
    hits = 0
    n, true = 60, 0.3
    for k in range(1000):
        a = rng.normal(true, 1.0, n)
        b = rng.normal(0.0, 1.0, n)
        s = bootstrap_paired_diff(a, b, B=300, seed=k)
        hits += s.ci_low <= true <= s.ci_high
    assert 0.93 <= hits / 1000 <= 0.97
