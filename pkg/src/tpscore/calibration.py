"""Single-split cross-fitted Platt recalibration of per-step forecast streams."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from tpscore.errors import InvalidInputError
from tpscore.trajectory import WeightSchedule, truncated_weights

logger = logging.getLogger(__name__)

EPSILON = 1e-6
SIGMA_FLOOR = 1e-6
GRAD_TOL = 1e-10
MAX_ITER = 200
PROBES = (0.90, 0.95, 1.00)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _sigmoid(u):
    return np.where(u >= 0, 1.0 / (1.0 + np.exp(-np.abs(u))), np.exp(-np.abs(u)) / (1.0 + np.exp(-np.abs(u))))


@dataclass(frozen=True)
class PlattModel:
    intercept_a: float
    slope_b: float
    mu_train: float
    sigma_train: float
    fallback_triggered: bool
    train_base_rate: float
    schedule: str = WeightSchedule.LINEAR_FRONT.value
    lam: float = 1.0
    fitted_slope: float | None = None  # slope before the fallback, if one was fitted
    sigma_floored: bool = False
    converged: bool = True
    n_records: int = 0
    n_rows: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CrossFitReport:
    stream: str
    schedule: str
    models: dict  # "A" / "B" -> PlattModel
    assignment: dict = field(repr=False)  # record id -> half
    calibrated_range: tuple = (math.nan, math.nan)

    def to_dict(self):
        out = {
            "stream": self.stream,
            "calibrated_stream": f"{self.stream}.platt",
            "schedule": self.schedule,
            "fallback_triggered": any(m.fallback_triggered for m in self.models.values()),
            "calibrated_range": list(self.calibrated_range),
            "splits": {},
        }
        for half, m in sorted(self.models.items()):
            entry = m.to_dict()
            entry["probe_map"] = {f"{p:.2f}": float(apply_platt(m, p)) for p in PROBES}
            out["splits"][half] = entry
        return out


def split_assignment(records):
    """Map record id to half "A"/"B".

    Complete records are stratified by outcome; within each stratum they are
    sorted by id and alternated A, B, A, ... Censored records form a third
    stratum handled the same way, so they also receive a held-out model.
    """
    strata = {0: [], 1: [], None: []}
    for r in records:
        strata[r.outcome_Y if r.observed else None].append(r.id)
    out = {}
    for key, ids in strata.items():
        if key is not None and len(ids) == 1:
            logger.warning("only one record with outcome %s; the split is degenerate", key)
        for i, rid in enumerate(sorted(ids)):
            out[rid] = "AB"[i % 2]
    return out


def stratified_split(records):
    """Complete records partitioned into halves (A, B)."""
    records = [r for r in records if r.observed]
    assign = split_assignment(records)
    a = [r for r in records if assign[r.id] == "A"]
    b = [r for r in records if assign[r.id] == "B"]
    return a, b


def _rows(records, stream_name, schedule, epsilon=EPSILON):
    xs, ws, ys = [], [], []
    n = 0
    for r in records:
        F = r.stream(stream_name)
        if F is None or not r.observed:
            continue
        n += 1
        xs.append(_logit(np.clip(F, epsilon, 1 - epsilon)))
        ws.append(truncated_weights(schedule, r.horizon_T, r.stop_Z))
        ys.append(np.full(F.size, float(r.outcome_Y)))
    if not xs:
        return np.zeros(0), np.zeros(0), np.zeros(0), 0
    return np.concatenate(xs), np.concatenate(ws), np.concatenate(ys), n


def _weighted_moments(x, w):
    x0 = x[0]
    sw = math.fsum(w.tolist())
    mu = x0 + math.fsum((w * (x - x0)).tolist()) / sw
    var = math.fsum((w * (x - mu) ** 2).tolist()) / sw
    return float(mu), math.sqrt(max(var, 0.0))


def _objective(a, b, x, w, y, lam):
    u = a + b * x
    ll = -(y * np.logaddexp(0.0, -u) + (1.0 - y) * np.logaddexp(0.0, u))
    return math.fsum((w * ll).tolist()) - 0.5 * lam * b * b


def _gradient_hessian(a, b, x, w, y, lam):
    p = _sigmoid(a + b * x)
    r = w * (y - p)
    g = np.array([math.fsum(r.tolist()), math.fsum((r * x).tolist()) - lam * b])
    v = w * p * (1.0 - p)
    h = np.array(
        [
            [math.fsum(v.tolist()), math.fsum((v * x).tolist())],
            [math.fsum((v * x).tolist()), math.fsum((v * x * x).tolist()) + lam],
        ]
    )
    return g, h


def _newton(x, w, y, lam, a0):
    a, b = a0, 0.0
    f = _objective(a, b, x, w, y, lam)
    for _ in range(MAX_ITER):
        g, h = _gradient_hessian(a, b, x, w, y, lam)
        if np.max(np.abs(g)) <= GRAD_TOL:
            return a, b, True
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            return a, b, False
        t = 1.0
        while t > 1e-12:
            na, nb = a + t * step[0], b + t * step[1]
            nf = _objective(na, nb, x, w, y, lam)
            if nf >= f - 1e-15 * abs(f):
                break
            t *= 0.5
        else:
            return a, b, False
        if na == a and nb == b:
            g, _ = _gradient_hessian(a, b, x, w, y, lam)
            return a, b, bool(np.max(np.abs(g)) <= GRAD_TOL * 1e3)
        a, b, f = na, nb, nf
    g, _ = _gradient_hessian(a, b, x, w, y, lam)
    return a, b, bool(np.max(np.abs(g)) <= GRAD_TOL)


def _profile_intercept(b, x, w, y, a):
    for _ in range(100):
        p = _sigmoid(a + b * x)
        g = math.fsum((w * (y - p)).tolist())
        h = math.fsum((w * p * (1 - p)).tolist())
        if h <= 0:
            break
        a_new = a + g / h
        if abs(a_new - a) <= 1e-15 * max(1.0, abs(a)):
            return a_new
        a = a_new
    return a


def _profile_bisection(x, w, y, lam, a0):
    """Slope root of the profiled score equation; used when Newton stalls."""

    def slope_grad(b, a):
        a = _profile_intercept(b, x, w, y, a)
        p = _sigmoid(a + b * x)
        return math.fsum((w * (y - p) * x).tolist()) - lam * b, a

    g0, a = slope_grad(0.0, a0)
    if g0 == 0.0:
        return a, 0.0
    lo, hi = (0.0, 1.0) if g0 > 0 else (-1.0, 0.0)
    while True:
        edge = hi if g0 > 0 else lo
        ge, _ = slope_grad(edge, a)
        if (ge > 0) != (g0 > 0) or abs(edge) > 1e6:
            break
        if g0 > 0:
            lo, hi = hi, hi * 2
        else:
            lo, hi = lo * 2, lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm, a = slope_grad(mid, a)
        if (gm > 0) == (g0 > 0):
            lo, hi = (mid, hi) if g0 > 0 else (lo, mid)
        else:
            lo, hi = (lo, mid) if g0 > 0 else (mid, hi)
        if hi - lo <= 1e-14 * max(1.0, abs(mid)):
            break
    b = 0.5 * (lo + hi)
    return _profile_intercept(b, x, w, y, a), b


def fit_platt(train_records, stream_name, schedule="linear_front", lam=1.0, *, epsilon=EPSILON):
    """Weighted, slope-penalized logistic fit on standardized log-odds.

    Rows are the per-step forecasts of complete training records, weighted by
    the record's truncated schedule weights. A negative fitted slope is
    replaced by the intercept-only base-rate model.
    """
    schedule = WeightSchedule.parse(schedule)
    if lam < 0:
        raise InvalidInputError("penalty must be non-negative")
    x_raw, w, y, n_rec = _rows(train_records, stream_name, schedule, epsilon)
    if n_rec == 0:
        raise InvalidInputError(f"no complete training records carry stream {stream_name!r}")
    mu, sigma = _weighted_moments(x_raw, w)
    floored = sigma < SIGMA_FLOOR
    if floored:
        logger.warning("stream %r is (nearly) constant; sigma floor %g active", stream_name, SIGMA_FLOOR)
    sigma = max(sigma, SIGMA_FLOOR)
    x = (x_raw - mu) / sigma
    ybar = math.fsum((w * y).tolist()) / math.fsum(w.tolist())
    base = min(max(ybar, epsilon), 1 - epsilon)
    a_base = float(_logit(base))
    common = dict(
        mu_train=mu, sigma_train=sigma, train_base_rate=base, schedule=schedule.value,
        lam=float(lam), sigma_floored=floored, n_records=n_rec, n_rows=int(x.size),
    )
    if ybar <= 0.0 or ybar >= 1.0:
        return PlattModel(a_base, 0.0, fallback_triggered=True, fitted_slope=None, **common)
    a, b, ok = _newton(x, w, y, lam, a_base)
    if not ok:
        logger.info("Newton did not converge; switching to profile bisection")
        a, b = _profile_bisection(x, w, y, lam, a_base)
        g, _ = _gradient_hessian(a, b, x, w, y, lam)
        ok = bool(np.max(np.abs(g)) <= 1e-8)
    if b < 0:
        return PlattModel(a_base, 0.0, fallback_triggered=True, fitted_slope=float(b), converged=ok, **common)
    return PlattModel(float(a), float(b), fallback_triggered=False, fitted_slope=float(b), converged=ok, **common)


def apply_platt(model, F, *, schedule=None, epsilon=EPSILON):
    """Calibrated probability for forecast(s) ``F`` in [0, 1]."""
    if schedule is not None and WeightSchedule.parse(schedule).value != model.schedule:
        raise InvalidInputError(
            f"model was fitted under schedule {model.schedule!r}; refit for {WeightSchedule.parse(schedule).value!r}"
        )
    arr = np.asarray(F, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise InvalidInputError("forecasts must lie in [0, 1]")
    x = (_logit(np.clip(arr, epsilon, 1 - epsilon)) - model.mu_train) / model.sigma_train
    out = np.clip(_sigmoid(model.intercept_a + model.slope_b * x), EPSILON, 1 - EPSILON)
    return float(out) if out.ndim == 0 else out


def cross_fit(records, stream_name, schedule="linear_front", lam=1.0, *, split=None):
    """Add ``<stream>.platt`` to every record carrying ``stream_name``.

    Each record is calibrated by the model fitted on the other half. ``split``
    (id -> "A"/"B") overrides the default assignment.
    """
    records = list(records)
    schedule = WeightSchedule.parse(schedule)
    assign = split_assignment(records) if split is None else dict(split)
    halves = {h: [r for r in records if r.observed and assign.get(r.id) == h] for h in "AB"}
    models = {h: fit_platt(halves[h], stream_name, schedule, lam) for h in "AB"}
    new_name = f"{stream_name}.platt"
    out, lo, hi = [], math.inf, -math.inf
    for r in records:
        F = r.stream(stream_name)
        if F is None or r.id not in assign:
            out.append(r)
            continue
        other = models["B" if assign[r.id] == "A" else "A"]
        cal = np.atleast_1d(apply_platt(other, F))
        lo, hi = min(lo, float(cal.min())), max(hi, float(cal.max()))
        out.append(r.with_streams(**{new_name: cal.tolist()}))
    report = CrossFitReport(stream_name, schedule.value, models, assign, (lo, hi))
    return out, report
