import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpscore.diagnostics import (
    Aggregator,
    ScalarSummary,
    aggregate,
    auprc_failure,
    aurc,
    auroc_failure,
    brier_resolution,
    fixed_rank_transform,
    front_weighted_summary,
    reliability_bins,
    t_brier,
    t_ece,
)
from tpscore.errors import EmptyPopulationError, InvalidInputError, UndefinedMetricError
from tpscore.trajectory import TrajectoryRecord, validate_and_clip


def S(pairs):
    return [ScalarSummary(f"r{i:02d}", c, y) for i, (c, y) in enumerate(pairs)]


FOUR = S([(0.9, 1), (0.8, 0), (0.7, 1), (0.6, 0)])


def brute_auroc(pairs):
    fails = [c for c, y in pairs if y == 0]
    succ = [c for c, y in pairs if y == 1]
    total = Fraction(0)
    for f, s in itertools.product(fails, succ):
        rf, rs = 1 - f, 1 - s
        total += 1 if rf > rs else Fraction(1, 2) if rf == rs else 0
    return total / (len(fails) * len(succ))


def brute_auprc(pairs):
    """Mean over failures of the precision of the set {confidence <= that failure's}."""
    n_f = sum(1 for _, y in pairs if y == 0)
    total = Fraction(0)
    for c, y in pairs:
        if y == 0:
            chosen = [yy for cc, yy in pairs if cc <= c]
            total += Fraction(sum(1 for yy in chosen if yy == 0), len(chosen))
    return total / n_f


def brute_aurc(pairs):
    """Average selective risk over every tie-breaking permutation."""
    idx = sorted(range(len(pairs)), key=lambda i: -pairs[i][0])
    blocks = [list(g) for _, g in itertools.groupby(idx, key=lambda i: pairs[i][0])]
    n = len(pairs)
    acc, count = Fraction(0), 0
    for perm in itertools.product(*[itertools.permutations(b) for b in blocks]):
        order = [i for b in perm for i in b]
        errs = 0
        risk = Fraction(0)
        for k, i in enumerate(order, 1):
            errs += pairs[i][1] == 0
            risk += Fraction(errs, k)
        acc += risk / n
        count += 1
    return acc / count


small_sets = st.lists(
    st.tuples(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]), st.sampled_from([0, 1])), min_size=1, max_size=8
)


class TestAggregate:
    def test_basic(self):
        assert aggregate((0.2, 0.8), "last") == 0.8
        assert aggregate((0.2, 0.8), "min") == 0.2
        assert aggregate((0.2, 0.8), "avg") == 0.5

    def test_weighted(self):
        assert aggregate((0.2, 0.8), Aggregator("weighted", (0.75, 0.25))) == pytest.approx(0.35, abs=1e-15)

    def test_weighted_exact_fraction(self):
        got = aggregate((Fraction(1, 5), Fraction(4, 5)), Aggregator("weighted", (Fraction(3, 4), Fraction(1, 4))))
        assert got == Fraction(7, 20)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            aggregate((), "avg")

    def test_weighted_needs_two_positive(self):
        with pytest.raises(InvalidInputError):
            Aggregator("weighted", (1.0, 0.0))

    def test_constant_stream_is_exact(self):
        assert aggregate([0.1] * 7, "avg") == 0.1

    def test_front_weighted_summary_renormalizes(self):
        rec = validate_and_clip(TrajectoryRecord("a", 3, 2, 0, None, "max_steps", {"p": (0.8, 0.2)}))
        # truncated linear-front weights (1/2, 1/3) renormalize to (3/5, 2/5)
        assert front_weighted_summary(rec, "p") == pytest.approx(0.56, abs=1e-15)


class TestAuroc:
    def test_separated(self):
        assert auroc_failure(S([(0.1, 0), (0.2, 0), (0.8, 1), (0.9, 1)])) == 1.0

    def test_constant(self):
        assert auroc_failure(S([(0.4, 0), (0.4, 1), (0.4, 1)])) == 0.5

    def test_four_point(self):
        # pairwise enumeration: 3 of the 4 failure-success pairs are ordered correctly
        pairs = [(s.confidence, s.label) for s in FOUR]
        assert brute_auroc(pairs) == Fraction(3, 4)
        assert auroc_failure(FOUR) == 0.75

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auroc_failure(S([(0.3, 1), (0.6, 1)]))

    @given(small_sets)
    def test_brute_force(self, pairs):
        if len({y for _, y in pairs}) < 2:
            return
        assert auroc_failure(S(pairs)) == float(brute_auroc(pairs))

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0.01, 0.99), st.sampled_from([0, 1])), min_size=2, max_size=40))
    def test_monotone_invariance(self, pairs):
        if len({y for _, y in pairs}) < 2:
            return
        base = auroc_failure(S(pairs))
        mapped = auroc_failure(S([(c**3, y) for c, y in pairs]))
        assert abs(base - mapped) <= 1e-12

    def test_complement_not_computed_through_risk(self):
        # 1 - c would merge these two distinct confidences into one tie
        pairs = [(0.0, 0), (1e-17, 1)]
        assert auroc_failure(S(pairs)) == 1.0


class TestAuprc:
    def test_failures_first(self):
        assert auprc_failure(S([(0.1, 0), (0.2, 0), (0.8, 1), (0.9, 1)])) == 1.0

    def test_constant_is_prevalence(self):
        pairs = [(0.5, 0)] * 3 + [(0.5, 1)] * 7
        assert abs(auprc_failure(S(pairs)) - 0.3) <= 1e-9

    def test_four_point(self):
        assert auprc_failure(FOUR) == pytest.approx(float(brute_auprc([(s.confidence, s.label) for s in FOUR])))
        assert auprc_failure(FOUR) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)

    def test_no_failures(self):
        with pytest.raises(UndefinedMetricError):
            auprc_failure(S([(0.3, 1)]))

    @given(small_sets)
    def test_brute_force(self, pairs):
        if all(y == 1 for _, y in pairs):
            return
        assert auprc_failure(S(pairs)) == pytest.approx(float(brute_auprc(pairs)), abs=1e-15)


class TestAurc:
    def test_all_correct(self):
        assert aurc(S([(0.2, 1), (0.9, 1)])) == 0.0

    def test_all_wrong(self):
        assert aurc(S([(0.2, 0), (0.9, 0)])) == 1.0

    def test_two_point(self):
        assert aurc(S([(0.9, 1), (0.5, 0)])) == 0.25

    def test_full_ties_give_prevalence(self):
        pairs = [(0.7, 0)] * 2 + [(0.7, 1)] * 6
        assert aurc(S(pairs)) == pytest.approx(0.25, abs=1e-15)

    def test_empty(self):
        with pytest.raises(EmptyPopulationError):
            aurc([])

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.sampled_from([0.2, 0.5, 0.8]), st.sampled_from([0, 1])), min_size=1, max_size=7))
    def test_brute_force(self, pairs):
        assert aurc(S(pairs)) == pytest.approx(float(brute_aurc(pairs)), abs=1e-14)


class TestCalibrationMetrics:
    def test_ece_matching_rate(self):
        pairs = [(0.25, 1)] + [(0.25, 0)] * 3
        assert t_ece(S(pairs)) == 0.0

    def test_theorem_A_population_exact(self):
        pairs = [(Fraction(1, 5), 1)] + [(Fraction(1, 5), 0)] * 4 + [(Fraction(4, 5), 1)] * 4 + [(Fraction(4, 5), 0)]
        truthful = S(pairs)
        constant = S([(Fraction(1, 2), y) for _, y in pairs])
        assert t_ece(truthful) == 0
        assert t_ece(constant) == 0
        assert brier_resolution(truthful) == Fraction(9, 100)

    def test_ties_never_straddle(self):
        conf = [0.1] * 5 + [0.2] * 10 + [0.9] * 5
        rows = reliability_bins(S([(c, 0) for c in conf]), bins=10)
        assert [r[0] for r in rows] == [5, 10, 5]

    def test_distinct_values_quantile_bins(self):
        rows = reliability_bins(S([(i / 100, i % 2) for i in range(100)]), bins=10)
        assert [r[0] for r in rows] == [10] * 10

    def test_few_records(self):
        rows = reliability_bins(S([(0.1, 0), (0.9, 1), (0.5, 1)]), bins=10)
        assert sum(r[0] for r in rows) == 3

    def test_base_rate_float_exact(self):
        labels = [1] * 27 + [0] * 64
        ybar = sum(labels) / len(labels)
        assert t_ece(S([(ybar, y) for y in labels])) == 0.0

    def test_brier(self):
        assert t_brier(S([(1.0, 1), (0.0, 0)])) == 0.0
        assert t_brier(S([(0.5, 1), (0.5, 0)])) == 0.25
        assert t_brier(S([(0.7, 1), (0.4, 0)])) == pytest.approx(0.125, abs=1e-15)

    def test_ece_brute_manual(self):
        pairs = [(0.1, 0), (0.2, 1), (0.3, 0), (0.4, 1)]
        # two bins of two under bins=2
        expected = 0.5 * abs(0.5 - 0.15) + 0.5 * abs(0.5 - 0.35)
        assert t_ece(S(pairs), bins=2) == pytest.approx(expected, abs=1e-15)


class TestTransforms:
    def test_identity(self):
        assert fixed_rank_transform([0.3, 0.7], "identity").tolist() == [0.3, 0.7]

    def test_affine(self):
        assert fixed_rank_transform([0.0, 1.0], "affine_compress").tolist() == pytest.approx([0.4, 0.6], abs=1e-15)

    def test_square(self):
        assert fixed_rank_transform([0.5], "square").tolist() == [0.25]

    def test_sqrt(self):
        assert fixed_rank_transform([0.25], "sqrt").tolist() == [0.5]

    def test_platt_requires_model(self):
        with pytest.raises(InvalidInputError):
            fixed_rank_transform([0.5], "platt_model")

    def test_unknown(self):
        with pytest.raises(InvalidInputError):
            fixed_rank_transform([0.5], "cube")
