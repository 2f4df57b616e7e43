"""Synthetic trajectory populations with known success processes, censoring
harnesses, continuation audits and the closed-form counterexamples.

The truthful process comes from exact Bayes updating on noisy binary signals:
a success emits ``1`` with probability ``theta`` at each step, a failure with
probability ``1 - theta``. Because ``q_t`` is a posterior it is a martingale by
construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from tpscore.diagnostics import Aggregator, ScalarSummary, aggregate, brier_resolution, t_ece
from tpscore.errors import ExcludedPrefixError, InvalidInputError
from tpscore.rng import index_block, substream, uniform_block
from tpscore.score_family import ClipPolicy
from tpscore.tps import tps_cen_exact, tps_complete
from tpscore.trajectory import TrajectoryRecord, truncated_weights, validate_and_clip

MIN_VALID_BRANCHES = 5
DISTORTION_SHIFT = 0.1
N_BINS = 10

# Leading substream key of the censoring draws, apart from per-trajectory keys.
_CENSOR_TAG = 2


@dataclass(frozen=True)
class SignalWorld:
    horizon_T: int
    prior_q1: float = 0.5
    signal_accuracy_theta: float = 0.7
    seed: int = 42

    def __post_init__(self):
        if isinstance(self.horizon_T, bool) or int(self.horizon_T) != self.horizon_T or self.horizon_T < 1:
            raise InvalidInputError("horizon_T must be a positive integer")
        if not 0 < self.prior_q1 < 1:
            raise InvalidInputError("prior_q1 must lie in (0, 1)")
        if not 0.5 < self.signal_accuracy_theta < 1:
            raise InvalidInputError("signal_accuracy_theta must lie in (0.5, 1)")


def bayes_posterior(prior, theta, signals):
    """Posterior success probabilities after each signal.

    Works on floats or Fractions; the float path goes through log-odds.
    """
    signals = list(signals)
    if isinstance(prior, Fraction) or isinstance(theta, Fraction):
        prior, theta = Fraction(prior), Fraction(theta)
        out, k = [], 0
        for t, s in enumerate(signals, 1):
            k += s
            like1 = theta**k * (1 - theta) ** (t - k)
            like0 = (1 - theta) ** k * theta ** (t - k)
            out.append(prior * like1 / (prior * like1 + (1 - prior) * like0))
        return out
    s = np.asarray(signals, dtype=np.float64)
    return _posterior_matrix(prior, theta, s.reshape(1, -1))[0].tolist()


def _posterior_matrix(prior, theta, S):
    step = math.log(theta) - math.log1p(-theta)
    lo = math.log(prior) - math.log1p(-prior) + step * np.cumsum(2.0 * S - 1.0, axis=1)
    return 1.0 / (1.0 + np.exp(-lo))


def _draw(world, n, start=0):
    """Outcomes and signals for trajectories ``start .. start + n - 1``.

    Each trajectory has its own substream, so a population can be generated
    in pieces and reassembled without changing any draw.
    """
    T = world.horizon_T
    seeds = [substream(world.seed, start + i) for i in range(n)]
    u = uniform_block(seeds, T + 1)
    Y = (u[:, 0] < world.prior_q1).astype(np.int64)
    p_one = np.where(Y[:, None] == 1, world.signal_accuracy_theta, 1.0 - world.signal_accuracy_theta)
    S = (u[:, 1:] < p_one).astype(np.int64)
    return Y, S


def distorted_streams(Q):
    """Sibling forecasters of the truthful matrix ``Q`` (rows are trajectories)."""
    up = np.clip(Q + DISTORTION_SHIFT, 0.0, 1.0)
    down = np.clip(Q - DISTORTION_SHIFT, 0.0, 1.0)
    # per-step bin averages over the population
    binned = np.empty_like(Q)
    bins = np.minimum((Q * N_BINS).astype(np.int64), N_BINS - 1)
    for t in range(Q.shape[1]):
        col, b = Q[:, t], bins[:, t]
        sums = np.bincount(b, weights=col, minlength=N_BINS)
        counts = np.bincount(b, minlength=N_BINS)
        means = np.divide(sums, counts, out=np.zeros(N_BINS), where=counts > 0)
        binned[:, t] = means[b]
    saturated = np.where(Q >= 0.5, 1.0, 0.0)
    return {"shift_up": up, "shift_down": down, "binned": binned, "saturated": saturated}


def generate_population(world, n, *, start=0, distortions=True, policy=ClipPolicy()):
    """Complete trajectories carrying the truthful ``q_true`` stream.

    With ``distortions`` the records also carry ``shift_up``, ``shift_down``,
    ``binned`` and ``saturated`` siblings. Ids are ``syn-<index>``.
    """
    if n < 1:
        raise InvalidInputError("population size must be positive")
    Y, S = _draw(world, n, start)
    Q = _posterior_matrix(world.prior_q1, world.signal_accuracy_theta, S)
    streams = {"q_true": Q}
    if distortions:
        streams.update(distorted_streams(Q))
    lo, hi = policy.bounds
    clipped = {k: np.clip(v, lo, hi) for k, v in streams.items()}
    T = world.horizon_T
    records = []
    for i in range(n):
        rec = TrajectoryRecord(
            id=f"syn-{start + i:06d}", horizon_T=T, stop_Z=T, delta=1, outcome_Y=int(Y[i]),
            stop_reason="clean", streams={k: tuple(v[i].tolist()) for k, v in clipped.items()},
        )
        records.append(rec)
    return records


def population_arrays(world, n, start=0):
    """Raw ``(Y, signals, q)`` arrays, for tests that skip record construction."""
    Y, S = _draw(world, n, start)
    return Y, S, _posterior_matrix(world.prior_q1, world.signal_accuracy_theta, S)


@dataclass(frozen=True)
class CensorResult:
    records: list
    hidden_outcomes: dict  # id -> original Y of each censored record
    per_stratum: dict = field(default_factory=dict)  # T -> (eligible, censored)


def artificial_censor(records, rate, seed=42):
    """Hide outcomes of a rate-``rate`` share of each horizon stratum.

    The count per stratum is ``rate * size`` rounded half up; the chosen
    records are cut at a uniformly drawn step in ``1 .. T - 1`` and marked as
    administratively censored. Records with ``T = 1`` cannot be cut.
    """
    if not 0 <= rate < 1:
        raise InvalidInputError(f"censoring rate must lie in [0, 1), got {rate!r}")
    records = list(records)
    if any(not r.observed for r in records):
        raise InvalidInputError("artificial censoring needs complete records")
    if rate == 0:
        return CensorResult(records, {}, {})
    strata = {}
    for pos, r in enumerate(records):
        strata.setdefault(r.horizon_T, []).append(pos)
    out = list(records)
    hidden, summary = {}, {}
    for T in sorted(strata):
        members = sorted(strata[T], key=lambda p: records[p].id)
        if T < 2:
            summary[T] = (len(members), 0)
            continue
        k = math.floor(rate * len(members) + 0.5)
        u = uniform_block([substream(seed, _CENSOR_TAG, T)], len(members))[0]
        chosen = [members[j] for j in np.argsort(u, kind="stable")[:k]]
        cuts = index_block([substream(seed, _CENSOR_TAG, T, 1)], max(k, 1), T - 1)[0] + 1
        for pos, Z in zip(sorted(chosen, key=lambda p: records[p].id), cuts.tolist()):
            r = records[pos]
            hidden[r.id] = r.outcome_Y
            out[pos] = validate_and_clip(
                TrajectoryRecord(
                    id=r.id, horizon_T=T, stop_Z=Z, delta=0, outcome_Y=None, stop_reason="max_steps",
                    streams={name: vals[:Z] for name, vals in r.streams.items()}, qz_estimate=None,
                )
            )
        summary[T] = (len(members), k)
    return CensorResult(out, hidden, summary)


UNRESOLVED_MODES = ("exclude", "failure", "success")


@dataclass(frozen=True)
class ContinuationAudit:
    """Resolved outcomes of independent continuations of one stopped prefix."""

    prefix_id: str
    branch_outcomes: tuple
    valid_count: int
    qz_mc: float
    n_unresolved: int = 0
    n_parse_errors: int = 0

    @classmethod
    def from_branches(cls, prefix_id, branches, unresolved="exclude"):
        """Build from raw branch values: 0, 1, None (unresolved) or "parse_error".

        Parse-error branches are always dropped; unresolved branches are
        dropped or counted as failures / successes according to ``unresolved``.
        """
        if unresolved not in UNRESOLVED_MODES:
            raise InvalidInputError(f"unresolved mode must be one of {UNRESOLVED_MODES}")
        kept, n_unres, n_parse = [], 0, 0
        for b in branches:
            if b == "parse_error":
                n_parse += 1
            elif b is None:
                n_unres += 1
                if unresolved != "exclude":
                    kept.append(int(unresolved == "success"))
            elif not isinstance(b, bool) and b in (0, 1):
                kept.append(int(b))
            else:
                raise InvalidInputError(f"prefix {prefix_id!r}: invalid branch value {b!r}")
        qz = sum(kept) / len(kept) if kept else math.nan
        return cls(str(prefix_id), tuple(kept), len(kept), qz, n_unres, n_parse)


def mc_qz(audit, minimum=MIN_VALID_BRANCHES):
    """Monte Carlo continuation-success estimate; raises for under-resolved prefixes."""
    if audit.valid_count < minimum:
        raise ExcludedPrefixError(
            f"prefix {audit.prefix_id!r} has {audit.valid_count} valid branches (< {minimum})"
        )
    return audit.qz_mc


def conditional_projection_check(stream, branch_outcomes, w, fam):
    """|exact censored score at the MC estimate - mean complete score over branches|."""
    outcomes = [int(y) for y in branch_outcomes]
    if not outcomes:
        raise InvalidInputError("need at least one branch outcome")
    qz = sum(outcomes) / len(outcomes)
    exact = tps_cen_exact(stream, 0, None, qz, w, fam).total
    by_outcome = {y: tps_complete(stream, y, w, fam).total for y in set(outcomes)}
    branch_mean = math.fsum(by_outcome[y] for y in outcomes) / len(outcomes)
    return abs(exact - branch_mean)


def random_audits(n, seed=42, *, max_T=12, min_branches=1, max_branches=20, policy=ClipPolicy()):
    """Fuzzed (stream, weights, branches) triples for the projection identities."""
    rng = np.random.default_rng(seed)
    schedules = ("linear_front", "uniform", "exponential_front", "linear_back")
    lo, hi = policy.bounds
    out = []
    for i in range(n):
        T = int(rng.integers(2, max_T + 1))
        Z = int(rng.integers(1, T))
        sched = schedules[i % 4]
        F = np.clip(rng.random(Z), lo, hi)
        M = int(rng.integers(min_branches, max_branches + 1))
        branches = (rng.random(M) < rng.random()).astype(int).tolist()
        out.append((f"audit-{i:05d}", F, truncated_weights(sched, T, Z), branches, sched))
    return out


def counterexample_theorem_A():
    """Two equally likely histories with success rates 1/5 and 4/5.

    The truthful and the constant-1/2 forecasts are both perfectly calibrated,
    yet only the truthful one has resolution.
    """
    low, high, half = Fraction(1, 5), Fraction(4, 5), Fraction(1, 2)
    pop = [(low, 1)] + [(low, 0)] * 4 + [(high, 1)] * 4 + [(high, 0)]
    truthful = [ScalarSummary(f"a{i}", c, y) for i, (c, y) in enumerate(pop)]
    constant = [ScalarSummary(f"a{i}", half, y) for i, (_, y) in enumerate(pop)]
    values = {
        "tece_truthful": t_ece(truthful),
        "tece_constant": t_ece(constant),
        "brier_resolution_truthful": brier_resolution(truthful),
        "brier_resolution_constant": brier_resolution(constant),
    }
    expected = {"tece_truthful": Fraction(0), "tece_constant": Fraction(0),
                "brier_resolution_truthful": Fraction(9, 100), "brier_resolution_constant": Fraction(0)}
    return _report(values, expected)


def _conditional_brier(c, q):
    """E[(c - Y)^2] for Y ~ Bernoulli(q)."""
    return (c - q) ** 2 + q * (1 - q)


def counterexample_theorem_B():
    """Three-event analysis of a two-step process q_1 = 1/2, q_2 in {7/10, 3/10}.

    Scalar aggregators followed by Brier loss fail strict propriety on traces:
    the average rewards a distorted trace, the minimum can prefer one on an
    event, the weighted sum is blind to compensating perturbations and the
    last-step summary ignores everything before the final step.
    """
    half = Fraction(1, 2)
    q1 = half
    events = [(half, Fraction(7, 10)), (half, Fraction(3, 10))]  # (probability, q_2)

    def expected(phi, trace_of):
        return sum(p * _conditional_brier(phi(trace_of(q2)), q2) for p, q2 in events)

    avg = lambda tr: aggregate(tr, "avg")  # noqa: E731
    truthful = lambda q2: (q1, q2)  # noqa: E731
    avg_excess = expected(avg, truthful) - expected(avg, lambda q2: (half, 2 * q2 - half))

    q2 = Fraction(7, 10)
    min_gap = _conditional_brier(aggregate((1, q2), "min"), q2) - _conditional_brier(aggregate((q1, q2), "min"), q2)

    w = (half, half)
    c = Fraction(1, 20)
    wagg = Aggregator("weighted", w)
    weighted_diffs = [
        aggregate((q1 + c, q2_ - (w[0] / w[1]) * c), wagg) - aggregate((q1, q2_), wagg) for _, q2_ in events
    ]
    weighted_diff = max(abs(d) for d in weighted_diffs)

    last = lambda tr: aggregate(tr, "last")  # noqa: E731
    last_diff = expected(last, lambda q2_: (Fraction(9, 10), q2_)) - expected(last, truthful)

    values = {
        "avg_excess": avg_excess,
        "min_gap_event": min_gap,
        "weighted_difference": weighted_diff,
        "last_difference": last_diff,
    }
    expected_values = {
        "avg_excess": Fraction(1, 100),
        "min_gap_event": Fraction(-1, 25),
        "weighted_difference": Fraction(0),
        "last_difference": Fraction(0),
    }
    return _report(values, expected_values)


def _report(values, expected):
    checks = {k: values[k] == expected[k] for k in expected}
    return {
        "values": values,
        "expected": expected,
        "checks": checks,
        "passed": all(checks.values()),
    }


@dataclass(frozen=True)
class PseudoLabelPopulation:
    """Probability-weighted finite population with observation probability
    ``1 - c`` independent of the outcome.

    ``records`` and ``probabilities`` are aligned. Censored records stop at the
    horizon and carry the true posterior as ``qz_estimate``. ``m`` and ``q`` map
    each record id to its per-step pseudo-label and success-process values.
    """

    records: list
    probabilities: list
    q: dict
    m: dict
    q_bar: float
    m_bar: float


def pseudo_label_population(world, censor_prob, stream="q_true"):
    """Enumerate every signal sequence of ``world`` with exact probabilities."""
    c = Fraction(censor_prob).limit_denominator(10**9)
    if not 0 <= c <= 1:
        raise InvalidInputError("censoring probability must lie in [0, 1]")
    T = world.horizon_T
    if T > 14:
        raise InvalidInputError("exact enumeration is limited to T <= 14")
    prior = Fraction(world.prior_q1).limit_denominator(10**9)
    theta = Fraction(world.signal_accuracy_theta).limit_denominator(10**9)
    records, probs, q_map, m_map = [], [], {}, {}
    q_num = m_num = Fraction(0)
    for idx, signals in enumerate(itertools.product((0, 1), repeat=T)):
        k = sum(signals)
        p_seq_y1 = prior * theta**k * (1 - theta) ** (T - k)
        p_seq_y0 = (1 - prior) * (1 - theta) ** k * theta ** (T - k)
        q = bayes_posterior(prior, theta, signals)
        q_float = tuple(float(v) for v in q)
        branches = [("s", 1, 1, p_seq_y1 * (1 - c)), ("f", 1, 0, p_seq_y0 * (1 - c)),
                    ("c", 0, None, (p_seq_y1 + p_seq_y0) * c)]
        for tag, delta, y, p in branches:
            if p == 0:
                continue
            rid = f"pl-{idx:05d}-{tag}"
            rec = validate_and_clip(
                TrajectoryRecord(
                    id=rid, horizon_T=T, stop_Z=T, delta=delta, outcome_Y=y,
                    stop_reason="clean" if delta else "max_steps",
                    streams={stream: q_float}, qz_estimate=None if delta else float(q[-1]),
                )
            )
            records.append(rec)
            probs.append(float(p))
            q_map[rid] = q_float
            m_map[rid] = tuple(float((1 - c) * v) for v in q)
        seq_p = p_seq_y1 + p_seq_y0
        q_num += seq_p * sum(q) / T
        m_num += seq_p * (1 - c) * sum(q) / T
    return PseudoLabelPopulation(records, probs, q_map, m_map, float(q_num), float(m_num))
