"""Trajectory-level bootstrap: means, paired differences, union censoring shift.

Replicate ``r`` draws its resample indices from ``substream(seed, r, attempt)``,
so any replicate can be reproduced on its own and results do not depend on
how replicates are batched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from tpscore.errors import EmptyPopulationError, InvalidInputError
from tpscore.rng import index_block, substream

DEFAULT_B = 1000
DEFAULT_LEVEL = 0.95
DEFAULT_SEED = 42
_CHUNK_CELLS = 4_000_000


@dataclass(frozen=True)
class BootstrapSummary:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    replicates: int
    seed: int
    level: float = DEFAULT_LEVEL
    redraws: int = 0

    @property
    def ratio(self):
        """Estimate divided by its bootstrap standard error; None when se is 0."""
        return None if self.se == 0 else self.estimate / self.se

    def to_dict(self):
        d = asdict(self)
        d["ratio"] = self.ratio
        return d


def _check(B, level):
    if isinstance(B, bool) or int(B) != B or B < 1:
        raise InvalidInputError(f"replicate count must be a positive integer, got {B!r}")
    if not 0 < level < 1:
        raise InvalidInputError(f"level must lie in (0, 1), got {level!r}")
    return int(B)


def _values(values, name="values"):
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptyPopulationError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} must be finite")
    return x


def centered_mean(x):
    """Mean around the first element; exact for constant input."""
    x0 = x[0]
    return float(x0 + math.fsum((x - x0).tolist()) / x.size)


def resample_indices(seed, replicate, n, attempt=0):
    return index_block([substream(seed, replicate, attempt)], n, n)[0]


def _chunks(B, n):
    size = max(1, _CHUNK_CELLS // max(n, 1))
    for start in range(0, B, size):
        yield np.arange(start, min(B, start + size))


def _replicate_means(x, B, seed):
    n = x.size
    d = x - x[0]
    out = np.empty(B)
    for reps in _chunks(B, n):
        seeds = [substream(seed, int(r), 0) for r in reps]
        idx = index_block(seeds, n, n)
        out[reps] = x[0] + d[idx].sum(axis=1) / n
    return out


def _summarize(estimate, reps, B, level, seed, redraws=0):
    se = float(np.std(reps - reps[0], ddof=1)) if B > 1 else 0.0
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(reps, [100 * alpha, 100 * (1 - alpha)], method="linear")
    return BootstrapSummary(float(estimate), se, float(lo), float(hi), B, int(seed), float(level), redraws)


def mean_replicates(values, B=DEFAULT_B, seed=DEFAULT_SEED):
    return _replicate_means(_values(values), _check(B, DEFAULT_LEVEL), seed)


def bootstrap_mean(values, B=DEFAULT_B, level=DEFAULT_LEVEL, seed=DEFAULT_SEED):
    """Percentile bootstrap for the mean of per-trajectory values."""
    B = _check(B, level)
    x = _values(values)
    return _summarize(centered_mean(x), _replicate_means(x, B, seed), B, level, seed)


def bootstrap_paired_diff(values_a, values_b, B=DEFAULT_B, level=DEFAULT_LEVEL, seed=DEFAULT_SEED):
    """Bootstrap of mean(a - b), resampling trajectories jointly for both columns."""
    B = _check(B, level)
    a, b = _values(values_a, "values_a"), _values(values_b, "values_b")
    if a.shape != b.shape:
        raise InvalidInputError(f"paired columns differ in length ({a.size} vs {b.size})")
    d = a - b
    return _summarize(centered_mean(d), _replicate_means(d, B, seed), B, level, seed)


def aligned_columns(a_by_id, b_by_id):
    """Align two id -> value mappings; raises if the id sets differ."""
    if set(a_by_id) != set(b_by_id):
        missing = sorted(set(a_by_id) ^ set(b_by_id))[:5]
        raise InvalidInputError(f"paired columns are not aligned by id (e.g. {missing})")
    ids = sorted(a_by_id)
    return np.array([a_by_id[i] for i in ids]), np.array([b_by_id[i] for i in ids])


def _union_stat(u, mask, x0):
    d = u - x0
    n = u.shape[-1]
    mean_u = x0 + d.sum(axis=-1) / n
    mean_c = x0 + (d * mask).sum(axis=-1) / mask.sum(axis=-1)
    return mean_u - mean_c


def union_delta_replicates(complete_scores, censored_scores, B=DEFAULT_B, seed=DEFAULT_SEED):
    """Point estimate, replicate array and redraw count for the union shift."""
    B = _check(B, DEFAULT_LEVEL)
    c = np.asarray(complete_scores, dtype=np.float64).reshape(-1)
    z = np.asarray(censored_scores, dtype=np.float64).reshape(-1)
    if c.size == 0:
        raise EmptyPopulationError("no complete trajectories: the complete-only mean is undefined")
    union = np.concatenate([c, z])
    if not np.all(np.isfinite(union)):
        raise InvalidInputError("scores must be finite")
    n, n_c = union.size, c.size
    is_complete = np.arange(n) < n_c
    x0 = union[0]
    estimate = float(_union_stat(union, is_complete.astype(np.float64), x0))
    reps = np.empty(B)
    redraws = 0
    for chunk in _chunks(B, n):
        idx = index_block([substream(seed, int(r), 0) for r in chunk], n, n)
        for row, r in enumerate(chunk):
            attempt = 0
            while not is_complete[idx[row]].any():
                redraws += 1
                attempt += 1
                if redraws > 10 * B:
                    raise EmptyPopulationError("too many resamples without complete trajectories")
                idx[row] = resample_indices(seed, int(r), n, attempt)
        reps[chunk] = _union_stat(union[idx], is_complete[idx].astype(np.float64), x0)
    return estimate, reps, redraws


def bootstrap_union_delta_practice(complete_scores, censored_scores, B=DEFAULT_B, level=DEFAULT_LEVEL,
                                   seed=DEFAULT_SEED):
    """Bootstrap of mean(union) - mean(complete members).

    The union of complete and censored trajectories is resampled as one
    population. A resample without complete members is redrawn from the next
    attempt stream; more than ``10 * B`` redraws in total is an error.
    """
    B = _check(B, level)
    estimate, reps, redraws = union_delta_replicates(complete_scores, censored_scores, B, seed)
    return _summarize(estimate, reps, B, level, seed, redraws)
