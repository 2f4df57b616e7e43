"""Scalar trajectory diagnostics: aggregators, ranking metrics, binned calibration.

AUROC and AUPRC treat failure (label 0) as the positive class, with risk
``1 - confidence``. They are computed from the confidence ordering directly, so
any strictly increasing map of the confidences leaves them unchanged.

The calibration helpers (``aggregate``, ``t_ece``, ``t_brier``,
``brier_resolution``) are plain Python over numbers and accept
:class:`fractions.Fraction` inputs for exact evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from tpscore.errors import EmptyPopulationError, InvalidInputError, UndefinedMetricError
from tpscore.trajectory import truncated_weights

AGGREGATORS = ("last", "avg", "min", "weighted")
TRANSFORMS = ("identity", "affine_compress", "sqrt", "square", "platt_model")


def _sum(values):
    values = list(values)
    if any(isinstance(v, Fraction) for v in values):
        return sum(values, Fraction(0))
    return math.fsum(values)


def _mean(values):
    """Mean computed around the first value, so constant inputs return it exactly."""
    values = list(values)
    if not values:
        raise EmptyPopulationError("mean of an empty collection")
    x0 = values[0]
    return x0 + _sum(v - x0 for v in values) / len(values)


def _weighted_mean(values, weights):
    values, weights = list(values), list(weights)
    x0 = values[0]
    return x0 + _sum(w * (v - x0) for v, w in zip(values, weights)) / _sum(weights)


@dataclass(frozen=True)
class Aggregator:
    kind: str
    weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in AGGREGATORS:
            raise InvalidInputError(f"unknown aggregator {self.kind!r}; expected one of {AGGREGATORS}")
        if self.kind == "weighted" and self.weights is not None:
            w = tuple(self.weights)
            if any(x < 0 for x in w) or sum(1 for x in w if x > 0) < 2:
                raise InvalidInputError("weighted aggregator needs >= 2 positive, non-negative weights")
            object.__setattr__(self, "weights", w)

    @classmethod
    def parse(cls, text):
        return cls(text.strip().lower())


@dataclass(frozen=True)
class ScalarSummary:
    record_id: str
    confidence: float
    label: int


def aggregate(stream, agg, schedule_weights=None):
    """Collapse a forecast stream to one scalar."""
    F = list(stream)
    if not F:
        raise InvalidInputError("cannot aggregate an empty stream")
    if isinstance(agg, str):
        agg = Aggregator.parse(agg)
    if agg.kind == "last":
        return F[-1]
    if agg.kind == "min":
        return min(F)
    if agg.kind == "avg":
        return _mean(F)
    w = agg.weights if agg.weights is not None else schedule_weights
    if w is None:
        raise InvalidInputError("weighted aggregator needs weights")
    w = list(w)
    if len(w) != len(F):
        raise InvalidInputError(f"{len(w)} weights for a stream of {len(F)} steps")
    return _weighted_mean(F, w)


def front_weighted_summary(record, stream_name, schedule="linear_front"):
    """Schedule-weighted mean of the observed prefix, weights renormalized to 1."""
    F = record.streams.get(stream_name)
    if F is None:
        raise InvalidInputError(f"record {record.id!r} has no stream {stream_name!r}")
    w = truncated_weights(schedule, record.horizon_T, record.stop_Z).tolist()
    return _weighted_mean(F, w)


def summaries_from_records(records, stream_name, *, aggregator=None, schedule="linear_front", transform=None):
    """Scalar summaries for the complete records that carry ``stream_name``.

    Without ``aggregator`` the front-weighted normalized summary is used.
    ``transform`` (a callable) is applied to the scalar after aggregation.
    """
    out = []
    for r in records:
        if not r.observed or stream_name not in r.streams:
            continue
        if aggregator is None:
            c = front_weighted_summary(r, stream_name, schedule)
        else:
            w = truncated_weights(schedule, r.horizon_T, r.stop_Z).tolist()
            c = aggregate(r.streams[stream_name], aggregator, w)
        if transform is not None:
            c = transform(c)
        out.append(ScalarSummary(r.id, float(c), r.outcome_Y))
    return out


def _columns(summaries):
    summaries = list(summaries)
    if not summaries:
        raise EmptyPopulationError("no scalar summaries")
    conf = np.array([s.confidence for s in summaries], dtype=np.float64)
    if not np.all(np.isfinite(conf)):
        raise InvalidInputError("confidences must be finite")
    labels = np.array([s.label for s in summaries])
    if not np.all((labels == 0) | (labels == 1)):
        raise InvalidInputError("labels must be binary")
    ids = [s.record_id for s in summaries]
    return conf, labels.astype(np.int64), ids


def _tie_blocks(sorted_conf):
    """Start indices of runs of equal values, plus the end sentinel."""
    starts = np.flatnonzero(np.r_[True, sorted_conf[1:] != sorted_conf[:-1]])
    return np.r_[starts, sorted_conf.size]


def auroc_failure(summaries):
    """P(a failure is riskier than a success) + half the tie probability."""
    conf, labels, _ = _columns(summaries)
    n_s = int(labels.sum())
    n_f = labels.size - n_s
    if n_s == 0 or n_f == 0:
        raise UndefinedMetricError("AUROC needs both successes and failures")
    order = np.argsort(conf, kind="stable")
    bounds = _tie_blocks(conf[order])
    # doubled midranks stay integral: 2 * mean(start+1 .. end) = start + 1 + end
    twice_mid = np.repeat(bounds[:-1] + 1 + bounds[1:], np.diff(bounds))
    twice_rank_sum = int(twice_mid[labels[order] == 1].sum())
    return (twice_rank_sum - n_s * (n_s + 1)) / (2 * n_s * n_f)


def auprc_failure(summaries):
    """Average precision for detecting failures, ranking by ascending confidence.

    Thresholds sit at distinct confidence values, so a tied block enters the
    positive set as a whole.
    """
    conf, labels, _ = _columns(summaries)
    fail = 1 - labels
    n_f = int(fail.sum())
    if n_f == 0:
        raise UndefinedMetricError("AUPRC needs at least one failure")
    order = np.argsort(conf, kind="stable")
    bounds = _tie_blocks(conf[order])
    cum_fail = np.r_[0, np.cumsum(fail[order])]
    ends = bounds[1:]
    tp_end = cum_fail[ends]
    tp_block = np.diff(cum_fail[bounds])
    terms = [int(b) * int(t) / int(k) for b, t, k in zip(tp_block, tp_end, ends) if b]
    return math.fsum(terms) / n_f


def aurc(summaries):
    """Mean selective risk (failure rate) over coverages 1/n..n/n.

    Records are taken most-confident first. Within a tied block the error count
    at a partial coverage is the expectation over random tie-breaking, which
    makes a fully tied population score exactly its failure prevalence.
    """
    conf, labels, ids = _columns(summaries)
    n = conf.size
    id_order = sorted(range(n), key=ids.__getitem__)
    id_order = np.array(id_order, dtype=np.int64)
    order = id_order[np.argsort(-conf[id_order], kind="stable")]
    errs = 1 - labels[order]
    bounds = _tie_blocks(-conf[order])
    sizes = np.diff(bounds)
    block_err = np.add.reduceat(errs, bounds[:-1])
    before = np.r_[0, np.cumsum(block_err)][:-1]
    k = np.arange(1, n + 1, dtype=np.float64)
    start = np.repeat(bounds[:-1], sizes).astype(np.float64)
    expected = np.repeat(before, sizes) + (k - start) * np.repeat(block_err / sizes, sizes)
    return math.fsum((expected / k).tolist()) / n


def _tie_aware_bins(sorted_conf, bins):
    n = len(sorted_conf)
    edges = set()
    for k in range(1, bins):
        e = (2 * k * n + bins) // (2 * bins)  # round half up of k*n/bins
        while 0 < e < n and sorted_conf[e - 1] == sorted_conf[e]:
            e += 1
        if 0 < e < n:
            edges.add(e)
    cuts = [0, *sorted(edges), n]
    return list(zip(cuts[:-1], cuts[1:]))


def reliability_bins(summaries, bins=10):
    """Per-bin rows ``(count, mean_confidence, mean_label)`` of the tie-aware quantile binning."""
    if isinstance(bins, bool) or int(bins) != bins or bins < 1:
        raise InvalidInputError(f"bins must be a positive integer, got {bins!r}")
    pairs = sorted(((s.confidence, s.label) for s in summaries), key=lambda p: p[0])
    if not pairs:
        raise EmptyPopulationError("no scalar summaries")
    conf = [c for c, _ in pairs]
    rows = []
    for lo, hi in _tie_aware_bins(conf, int(bins)):
        chunk = pairs[lo:hi]
        mean_y = Fraction(sum(y for _, y in chunk), len(chunk))
        mc = _mean(c for c, _ in chunk)
        rows.append((len(chunk), mc, mean_y if isinstance(mc, Fraction) else float(mean_y)))
    return rows


def t_ece(summaries, bins=10):
    """Binwise-weighted mean |mean label - mean confidence| over tie-aware quantile bins."""
    summaries = list(summaries)
    rows = reliability_bins(summaries, bins)
    n = len(summaries)
    return _sum(Fraction(cnt, n) * abs(my - mc) if isinstance(mc, Fraction) else cnt / n * abs(my - mc)
                for cnt, mc, my in rows)


def t_brier(summaries):
    summaries = list(summaries)
    if not summaries:
        raise EmptyPopulationError("no scalar summaries")
    return _sum((s.confidence - s.label) ** 2 for s in summaries) / len(summaries)


def brier_resolution(summaries):
    """Spread of the per-forecast-value outcome rates around the overall rate."""
    summaries = list(summaries)
    if not summaries:
        raise EmptyPopulationError("no scalar summaries")
    n = len(summaries)
    groups = {}
    for s in summaries:
        groups.setdefault(s.confidence, []).append(s.label)
    exact = any(isinstance(s.confidence, Fraction) for s in summaries)
    ybar = Fraction(sum(s.label for s in summaries), n)
    terms = []
    for ys in groups.values():
        gap = Fraction(sum(ys), len(ys)) - ybar
        terms.append(Fraction(len(ys), n) * gap * gap)
    total = sum(terms, Fraction(0))
    return total if exact else float(total)


def fixed_rank_transform(stream, kind, model=None):
    """Apply one of the fixed monotone maps elementwise."""
    if kind not in TRANSFORMS:
        raise InvalidInputError(f"unknown transform {kind!r}; expected one of {TRANSFORMS}")
    x = np.asarray(stream, dtype=np.float64)
    if kind == "identity":
        out = x.copy()
    elif kind == "affine_compress":
        out = 0.4 + 0.2 * x
    elif kind == "sqrt":
        out = np.sqrt(x)
    elif kind == "square":
        out = x * x
    else:
        if model is None:
            raise InvalidInputError("platt_model transform needs a fitted model")
        from tpscore.calibration import apply_platt

        out = apply_platt(model, x)
    return out
