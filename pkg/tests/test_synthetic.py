import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from tpscore.errors import ExcludedPrefixError, InvalidInputError
from tpscore.score_family import ScoreFamily
from tpscore.synthetic import (
    ContinuationAudit,
    SignalWorld,
    artificial_censor,
    bayes_posterior,
    conditional_projection_check,
    counterexample_theorem_A,
    counterexample_theorem_B,
    generate_population,
    mc_qz,
    population_arrays,
    pseudo_label_population,
    random_audits,
)
from tpscore.trajectory import truncated_weights

FAMILIES = [ScoreFamily.log(), ScoreFamily.brier(), ScoreFamily.beta_family(2, 4)]


class TestBayes:
    def test_single_signal(self):
        assert bayes_posterior(0.5, 0.7, [1]) == pytest.approx([0.7], abs=1e-15)
        assert bayes_posterior(Fraction(1, 2), Fraction(7, 10), [1]) == [Fraction(7, 10)]

    def test_near_noiseless(self):
        assert bayes_posterior(0.5, 1 - 1e-9, [1])[0] == pytest.approx(1.0, abs=1e-8)
        assert bayes_posterior(0.5, 1 - 1e-9, [0])[0] == pytest.approx(0.0, abs=1e-8)

    @pytest.mark.parametrize("T", [1, 3, 6, 10])
    def test_float_matches_exact_enumeration(self, T):
        prior, theta = Fraction(3, 5), Fraction(7, 10)
        for signals in itertools.product((0, 1), repeat=T):
            exact = bayes_posterior(prior, theta, signals)
            approx = bayes_posterior(0.6, 0.7, signals)
            assert max(abs(float(e) - a) for e, a in zip(exact, approx)) <= 1e-14

    @pytest.mark.parametrize("T", [2, 5, 8])
    def test_exact_martingale(self, T):
        prior, theta = Fraction(2, 5), Fraction(4, 5)
        # E[q_{t+1} | s_1..s_t] = q_t, checked for every history
        for t in range(1, T):
            for hist in itertools.product((0, 1), repeat=t):
                q_t = bayes_posterior(prior, theta, hist)[-1]
                p1 = q_t * theta + (1 - q_t) * (1 - theta)
                nxt = p1 * bayes_posterior(prior, theta, hist + (1,))[-1]
                nxt += (1 - p1) * bayes_posterior(prior, theta, hist + (0,))[-1]
                assert nxt == q_t
        # and E[q_1] = prior
        q1 = sum(
            (prior * theta + (1 - prior) * (1 - theta) if s else prior * (1 - theta) + (1 - prior) * theta)
            * bayes_posterior(prior, theta, (s,))[0]
            for s in (0, 1)
        )
        assert q1 == prior

    def test_world_validation(self):
        with pytest.raises(InvalidInputError):
            SignalWorld(4, 0.5, 0.5)
        with pytest.raises(InvalidInputError):
            SignalWorld(0)


class TestGenerate:
    def test_deterministic_and_partitionable(self):
        w = SignalWorld(5, 0.5, 0.7, seed=9)
        full = generate_population(w, 30)
        assert full == generate_population(w, 30)
        parts = generate_population(w, 12) + generate_population(w, 18, start=12)
        # binned averages over the population; every other stream is per trajectory
        for a, b in zip(parts, full):
            assert a.id == b.id and a.outcome_Y == b.outcome_Y
            assert {k: v for k, v in a.streams.items() if k != "binned"} == {
                k: v for k, v in b.streams.items() if k != "binned"
            }

    def test_streams(self):
        recs = generate_population(SignalWorld(6, 0.4, 0.8, seed=1), 50)
        r = recs[0]
        assert set(r.streams) == {"q_true", "shift_up", "shift_down", "binned", "saturated"}
        assert all(len(v) == 6 for v in r.streams.values())
        assert all(1e-6 <= x <= 1 - 1e-6 for v in r.streams.values() for x in v)

    def test_streams_are_exact_posteriors(self):
        w = SignalWorld(5, 0.5, 0.7, seed=3)
        Y, S, Q = population_arrays(w, 20)
        for s_row, q_row in zip(S, Q):
            exact = bayes_posterior(Fraction(1, 2), Fraction(7, 10), s_row.tolist())
            assert max(abs(float(e) - q) for e, q in zip(exact, q_row)) <= 1e-14

    def test_outcome_rate(self):
        Y, _, _ = population_arrays(SignalWorld(2, 0.3, 0.7, seed=5), 50_000)
        assert abs(Y.mean() - 0.3) <= 4 * math.sqrt(0.21 / 50_000)

    def test_martingale_monte_carlo(self):
        _, _, Q = population_arrays(SignalWorld(6, 0.5, 0.7, seed=11), 50_000)
        for t in range(5):
            # E[q_{t+1} - q_t | q_t] = 0 within MC error, per distinct value of q_t
            for v in np.unique(Q[:, t]):
                sel = Q[:, t] == v
                if sel.sum() < 500:
                    continue
                inc = Q[sel, t + 1] - Q[sel, t]
                assert abs(inc.mean()) <= 4 * inc.std() / math.sqrt(sel.sum()) + 1e-12


class TestArtificialCensor:
    @pytest.fixture
    def pop(self):
        recs = []
        for T in (1, 3, 5, 8):
            recs += generate_population(SignalWorld(T, 0.5, 0.7, seed=T), 9, start=100 * T)
        return recs

    def test_rate_zero(self, pop):
        res = artificial_censor(pop, 0)
        assert res.records == pop and res.hidden_outcomes == {}

    def test_single_stratum_half(self):
        recs = generate_population(SignalWorld(4, seed=2), 4)
        res = artificial_censor(recs, 0.5, seed=1)
        assert sum(not r.observed for r in res.records) == 2

    @pytest.mark.parametrize("rate", [0.25, 0.5, 0.75])
    def test_stratified_and_truncated(self, pop, rate):
        res = artificial_censor(pop, rate, seed=4)
        by_id = {r.id: r for r in pop}
        for T, (size, k) in res.per_stratum.items():
            members = [r for r in res.records if r.horizon_T == T]
            cen = [r for r in members if not r.observed]
            assert len(cen) == k
            if T >= 2:
                assert abs(k / size - rate) <= 1 / size
        for r in res.records:
            if not r.observed:
                orig = by_id[r.id]
                assert 1 <= r.stop_Z < r.horizon_T
                assert r.streams["q_true"] == orig.streams["q_true"][: r.stop_Z]
                assert res.hidden_outcomes[r.id] == orig.outcome_Y
                assert r.stop_reason == "max_steps" and not r.informative

    def test_deterministic(self, pop):
        assert artificial_censor(pop, 0.5, seed=3) == artificial_censor(pop, 0.5, seed=3)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_bad_rate(self, pop, rate):
        with pytest.raises(InvalidInputError):
            artificial_censor(pop, rate)


class TestAudits:
    def test_all_fail(self):
        a = ContinuationAudit.from_branches("p", [0] * 6)
        assert mc_qz(a) == 0.0

    def test_half(self):
        assert mc_qz(ContinuationAudit.from_branches("p", [1] * 5 + [0] * 5)) == 0.5

    def test_retention_rule(self):
        a = ContinuationAudit.from_branches("p", [1, 0, 1, None, "parse_error", 0])
        assert a.valid_count == 4 and a.n_unresolved == 1 and a.n_parse_errors == 1
        with pytest.raises(ExcludedPrefixError):
            mc_qz(a)

    def test_unresolved_modes_bracket(self):
        raw = [1, 0, None, None, 1, 0, "parse_error"]
        lo = ContinuationAudit.from_branches("p", raw, unresolved="failure").qz_mc
        hi = ContinuationAudit.from_branches("p", raw, unresolved="success").qz_mc
        mid = ContinuationAudit.from_branches("p", raw).qz_mc
        assert lo == pytest.approx(2 / 6, abs=1e-15) and hi == pytest.approx(4 / 6, abs=1e-15)
        assert lo <= mid <= hi

    def test_invalid_branch(self):
        with pytest.raises(InvalidInputError):
            ContinuationAudit.from_branches("p", [2])

    def test_projection_single_branch(self):
        F = np.array([0.3, 0.8])
        w = truncated_weights("linear_front", 4, 2)
        for fam in FAMILIES:
            assert conditional_projection_check(F, [1], w, fam) == 0.0

    def test_projection_order_independent(self):
        F = np.array([0.3, 0.8, 0.55])
        w = truncated_weights("uniform", 5, 3)
        br = [1, 0, 0, 1, 1, 1, 0, 1, 0, 0]
        assert conditional_projection_check(F, br, w, FAMILIES[0]) == conditional_projection_check(
            F, br[::-1], w, FAMILIES[0]
        )

    def test_projection_fuzz(self):
        for _, F, w, branches, _ in random_audits(300, seed=5):
            for fam in FAMILIES:
                assert conditional_projection_check(F, branches, w, fam) <= 1e-12


class TestCounterexamples:
    def test_theorem_A(self):
        rep = counterexample_theorem_A()
        assert rep["passed"]
        assert rep["values"]["brier_resolution_truthful"] == Fraction(9, 100)

    def test_theorem_B(self):
        rep = counterexample_theorem_B()
        assert rep["passed"]
        v = rep["values"]
        assert v["avg_excess"] == Fraction(1, 100) and v["min_gap_event"] == Fraction(-4, 100)


class TestPseudoLabel:
    def test_no_censoring(self):
        pop = pseudo_label_population(SignalWorld(3, 0.6, 0.7), 0)
        assert all(pop.m[k] == pop.q[k] for k in pop.m)
        assert pop.m_bar == pytest.approx(pop.q_bar, abs=1e-15)

    def test_full_censoring(self):
        pop = pseudo_label_population(SignalWorld(3, 0.6, 0.7), 1)
        assert all(v == 0 for vals in pop.m.values() for v in vals)
        assert all(not r.observed for r in pop.records)

    def test_half(self):
        pop = pseudo_label_population(SignalWorld(4, 0.6, 0.7), 0.5)
        assert pop.q_bar == pytest.approx(0.6, abs=1e-15)
        assert pop.m_bar == pytest.approx(0.3, abs=1e-15)
        for k in pop.m:
            assert pop.m[k] == pytest.approx([0.5 * q for q in pop.q[k]], abs=1e-16)
        assert sum(pop.probabilities) == pytest.approx(1.0, abs=1e-14)

    def test_censored_carry_true_qz(self):
        pop = pseudo_label_population(SignalWorld(3, 0.6, 0.7), 0.25)
        for r in pop.records:
            if not r.observed:
                assert r.qz_estimate == pytest.approx(pop.q[r.id][-1], abs=1e-12)
                assert r.stop_Z == r.horizon_T
