"""Trajectory proper scores for complete and censored trajectories.

A score is the weighted sum of per-step binary scores of the forecast stream
against the terminal outcome. Censored prefixes inherit the full-horizon
weights truncated at the stop step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tpscore import kernels
from tpscore.errors import (
    EmptyPopulationError,
    InvalidInputError,
    MissingNuisanceError,
    WrongModeError,
)
from tpscore.score_family import score_pair
from tpscore.trajectory import truncated_weights

MODES = ("complete", "cen_simple", "cen_exact")


@dataclass(frozen=True)
class ScoredResult:
    record_id: str
    mode: str
    total: float
    per_step: tuple  # (step, weight, step score) triples
    branch_weight_used: float | None = None
    observed: bool = True

    @property
    def contributions(self):
        return np.array([w * s for _, w, s in self.per_step])


@dataclass(frozen=True)
class PopulationSummary:
    mode: str
    mean: float
    n: int
    delta_practice: float | None = None
    n_complete: int | None = None


def _as_inputs(stream, w):
    F = np.asarray(stream, dtype=np.float64).reshape(-1)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if F.size == 0:
        raise InvalidInputError("empty forecast stream")
    if F.shape != w.shape:
        raise InvalidInputError(f"stream has {F.size} steps but {w.size} weights were given")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("weights must be finite and non-negative")
    return F, w


def _binary(value, name):
    if isinstance(value, bool) or value not in (0, 1):
        raise InvalidInputError(f"{name} must be 0 or 1, got {value!r}")
    return int(value)


def _result(record_id, mode, w, steps, qz=None, observed=True):
    contrib = w * steps
    total = kernels.compensated_sum(contrib)
    per_step = tuple((t + 1, float(wt), float(s)) for t, (wt, s) in enumerate(zip(w, steps)))
    return ScoredResult(record_id, mode, float(total), per_step, qz, observed)


def _step_scores(F, fam, delta, Y, qz):
    s1, s0 = score_pair(fam, F)
    if delta == 1:
        return s1 if Y == 1 else s0
    if qz is None:
        return s0
    return qz * s1 + (1.0 - qz) * s0


def tps_complete(stream, Y, w, fam, *, record_id=""):
    """Sum of ``w_t * S(F_t, Y)`` over an observed trajectory."""
    if Y is None:
        raise WrongModeError("complete-data score needs an observed outcome")
    Y = _binary(Y, "Y")
    F, w = _as_inputs(stream, w)
    return _result(record_id, "complete", w, _step_scores(F, fam, 1, Y, None))


def tps_cen_simple(stream, delta, Y, w, fam, *, record_id=""):
    """Censored score that scores an unresolved prefix as a failure."""
    delta = _binary(delta, "delta")
    F, w = _as_inputs(stream, w)
    if delta == 1:
        if Y is None:
            raise WrongModeError("delta=1 requires an outcome")
        Y = _binary(Y, "Y")
    return _result(record_id, "cen_simple", w, _step_scores(F, fam, delta, Y, None), observed=delta == 1)


def tps_cen_exact(stream, delta, Y, qz, w, fam, *, record_id=""):
    """Censored score mixing both branches on an unresolved prefix with weight ``qz``."""
    delta = _binary(delta, "delta")
    F, w = _as_inputs(stream, w)
    if delta == 1:
        if Y is None:
            raise WrongModeError("delta=1 requires an outcome")
        Y = _binary(Y, "Y")
        return _result(record_id, "cen_exact", w, _step_scores(F, fam, 1, Y, None))
    if qz is None:
        raise MissingNuisanceError(
            f"record {record_id!r}: exact censored score needs qz_estimate; use cen_simple instead"
        )
    qz = float(qz)
    if not 0.0 <= qz <= 1.0:
        raise InvalidInputError(f"qz must lie in [0, 1], got {qz!r}")
    return _result(record_id, "cen_exact", w, _step_scores(F, fam, 0, None, qz), qz, observed=False)


def delta_exact_minus_simple_log(stream, w, qz):
    """``qz * sum_t w_t * logit(F_t)``, the log-family exact-minus-simple gap."""
    F, w = _as_inputs(stream, w)
    if np.any(F <= 0) or np.any(F >= 1):
        raise InvalidInputError("log-odds need clipped probabilities")
    return float(qz) * kernels.compensated_sum(w * (np.log(F) - np.log1p(-F)))


def decompose_censoring_shift(full_stream, Y, Z, w, fam):
    """Split ``cen_simple(prefix at Z) - complete(full)`` into two closed-form terms.

    Returns ``(prefix_swap, tail_omission)``. The swap term replaces the realized
    branch by the failure branch on steps ``1..Z``; the omission term removes the
    suffix and is never negative.
    """
    F, w = _as_inputs(full_stream, w)
    Y = _binary(Y, "Y")
    T = F.size
    if isinstance(Z, bool) or int(Z) != Z or not 1 <= Z < T:
        raise InvalidInputError(f"cut step must satisfy 1 <= Z < T={T}, got {Z!r}")
    Z = int(Z)
    s1, s0 = score_pair(fam, F)
    sy = s1 if Y == 1 else s0
    prefix_swap = 0.0 if Y == 0 else kernels.compensated_sum(w[:Z] * (s0[:Z] - sy[:Z]))
    tail_omission = -kernels.compensated_sum(w[Z:] * sy[Z:])
    return float(prefix_swap), float(tail_omission)


def record_weights(record, schedule):
    return truncated_weights(schedule, record.horizon_T, record.stop_Z)


def score_record(record, stream_name, fam, schedule, mode, *, qz=None):
    """Score one validated record. ``qz`` overrides the record's own estimate."""
    F = record.stream(stream_name)
    if F is None:
        raise InvalidInputError(f"record {record.id!r} has no stream {stream_name!r}")
    w = record_weights(record, schedule)
    if mode == "complete":
        if not record.observed:
            raise WrongModeError(f"record {record.id!r} is censored; complete mode needs delta=1")
        return tps_complete(F, record.outcome_Y, w, fam, record_id=record.id)
    if mode == "cen_simple":
        return tps_cen_simple(F, record.delta, record.outcome_Y, w, fam, record_id=record.id)
    if mode == "cen_exact":
        q = record.qz_estimate if qz is None else qz
        return tps_cen_exact(F, record.delta, record.outcome_Y, q, w, fam, record_id=record.id)
    raise InvalidInputError(f"unknown mode {mode!r}; expected one of {MODES}")


def score_matrix(F, W, fam, *, delta, Y, qz=None):
    """Vectorized totals over a padded ``n x L`` forecast matrix.

    Padding cells must carry weight 0 (their forecast value is irrelevant but
    must be valid for the family). ``Y`` entries of censored rows are ignored;
    ``qz`` is a per-row array used for censored rows, or None for the simple
    score. Returns the row totals computed with compensated summation.
    """
    F = np.asarray(F, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if F.shape != W.shape or F.ndim != 2:
        raise InvalidInputError("forecasts and weights must be matching 2-d arrays")
    delta = np.asarray(delta).reshape(-1, 1)
    Y = np.asarray(Y).reshape(-1, 1)
    s1, s0 = score_pair(fam, F)
    observed = np.where(Y == 1, s1, s0)
    if qz is None:
        censored = s0
    else:
        q = np.asarray(qz, dtype=np.float64).reshape(-1, 1)
        censored = q * s1 + (1.0 - q) * s0
    steps = np.where(delta == 1, observed, censored)
    return kernels.row_compensated_sums(W * steps)


def score_records(records, stream_name, fam, schedule, mode):
    """Totals for many records at once; agrees with :func:`score_record` per row."""
    records = list(records)
    if not records:
        return np.zeros(0)
    if mode not in MODES:
        raise InvalidInputError(f"unknown mode {mode!r}; expected one of {MODES}")
    L = max(r.stop_Z for r in records)
    n = len(records)
    F = np.full((n, L), 0.5)
    W = np.zeros((n, L))
    delta = np.empty(n, dtype=np.int64)
    Y = np.zeros(n, dtype=np.int64)
    qz = np.zeros(n)
    for i, r in enumerate(records):
        s = r.stream(stream_name)
        if s is None:
            raise InvalidInputError(f"record {r.id!r} has no stream {stream_name!r}")
        F[i, : r.stop_Z] = s
        W[i, : r.stop_Z] = record_weights(r, schedule)
        delta[i] = r.delta
        if r.observed:
            Y[i] = r.outcome_Y
        elif mode == "complete":
            raise WrongModeError(f"record {r.id!r} is censored; complete mode needs delta=1")
        elif mode == "cen_exact":
            if r.qz_estimate is None:
                raise MissingNuisanceError(f"record {r.id!r} has no qz_estimate for cen_exact")
            qz[i] = r.qz_estimate
    return score_matrix(F, W, fam, delta=delta, Y=Y, qz=qz if mode == "cen_exact" else None)


def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values)


def population_summary(results, baseline=None):
    """Mean total and count; with ``baseline`` (complete-only results) also the
    difference of means, the practical censoring shift."""
    results = list(results)
    if not results:
        raise EmptyPopulationError("cannot summarize an empty population")
    totals = [r.total if isinstance(r, ScoredResult) else float(r) for r in results]
    modes = {r.mode for r in results if isinstance(r, ScoredResult)}
    mode = modes.pop() if len(modes) == 1 else "mixed"
    mean = _mean(totals)
    if baseline is None:
        return PopulationSummary(mode, mean, len(totals))
    base = [r.total if isinstance(r, ScoredResult) else float(r) for r in baseline]
    if not base:
        raise EmptyPopulationError("complete-only baseline is empty")
    return PopulationSummary(mode, mean, len(totals), mean - _mean(base), len(base))
