"""Trajectory records, weight schedules, validation and JSONL ingestion."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from tpscore.errors import InvalidInputError, ValidationError
from tpscore.score_family import ClipPolicy

logger = logging.getLogger(__name__)

STOP_REASONS = ("clean", "max_steps", "parse_error", "tool_error", "env_terminated", "other")
ADMIN_STOP_REASONS = frozenset({"max_steps"})
KNOWN_KEYS = frozenset(
    {"id", "horizon_T", "stop_Z", "delta", "outcome_Y", "stop_reason", "qz_estimate", "streams"}
)


class WeightSchedule(str, enum.Enum):
    LINEAR_FRONT = "linear_front"
    UNIFORM = "uniform"
    EXPONENTIAL_FRONT = "exponential_front"
    LINEAR_BACK = "linear_back"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError:
            raise InvalidInputError(
                f"unknown weight schedule {value!r}; expected one of {[s.value for s in cls]}"
            ) from None


def weights(schedule, T):
    """Normalized per-step weights w_1..w_T for a horizon of ``T`` steps."""
    schedule = WeightSchedule.parse(schedule)
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise InvalidInputError(f"horizon must be a positive integer, got {T!r}")
    T = int(T)
    t = np.arange(1, T + 1, dtype=np.float64)
    denom = float(T * (T + 1))
    if schedule is WeightSchedule.LINEAR_FRONT:
        return 2.0 * (T - t + 1.0) / denom
    if schedule is WeightSchedule.LINEAR_BACK:
        return 2.0 * t / denom
    if schedule is WeightSchedule.UNIFORM:
        return np.full(T, 1.0 / T)
    return np.power(2.0, -(t - 1.0)) / (2.0 * (1.0 - 2.0**-T))


def truncated_weights(schedule, T, Z):
    """First ``Z`` weights of the horizon-``T`` schedule, deliberately not renormalized."""
    if isinstance(Z, bool) or int(Z) != Z or Z < 1:
        raise InvalidInputError(f"stop step must be a positive integer, got {Z!r}")
    if Z > T:
        raise InvalidInputError(f"stop step {Z} exceeds horizon {T}")
    return weights(schedule, T)[: int(Z)]


@dataclass(frozen=True)
class TrajectoryRecord:
    """One logged episode.

    ``streams`` maps predictor names to forecast tuples of length ``stop_Z``.
    Streams that contained a non-numeric value are kept out of ``streams`` and
    listed in ``invalid_streams`` instead, so they are skipped, never partially
    scored. ``informative`` is set by :func:`validate_and_clip`.
    """

    id: str
    horizon_T: int
    stop_Z: int
    delta: int
    outcome_Y: int | None = None
    stop_reason: str = "clean"
    streams: dict = field(default_factory=dict)
    qz_estimate: float | None = None
    invalid_streams: tuple = ()
    informative: bool = False

    @property
    def observed(self):
        return self.delta == 1

    def stream(self, name):
        return None if name not in self.streams else np.asarray(self.streams[name], dtype=np.float64)

    def with_streams(self, **extra):
        merged = dict(self.streams)
        merged.update({k: tuple(float(v) for v in vals) for k, vals in extra.items()})
        return replace(self, streams=merged)

    def to_json(self):
        out = {
            "id": self.id,
            "horizon_T": self.horizon_T,
            "stop_Z": self.stop_Z,
            "delta": self.delta,
            "stop_reason": self.stop_reason,
            "streams": {k: list(v) for k, v in self.streams.items()},
        }
        if self.outcome_Y is not None:
            out["outcome_Y"] = self.outcome_Y
        if self.qz_estimate is not None:
            out["qz_estimate"] = self.qz_estimate
        return out


def _is_binary(v):
    return isinstance(v, (int, np.integer)) and v in (0, 1)


def validate_and_clip(record, policy=ClipPolicy()):
    """Check the record invariants, clip every stream into [eps, 1 - eps] and
    set the informative-censoring flag. Idempotent."""
    rid = record.id

    def fail(fld, msg):
        raise ValidationError(msg, record_id=rid, field=fld)

    if not isinstance(rid, str) or not rid:
        fail("id", "must be a non-empty string")
    for name in ("horizon_T", "stop_Z"):
        value = getattr(record, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
            fail(name, f"must be a positive integer, got {value!r}")
    if record.stop_Z > record.horizon_T:
        fail("stop_Z", f"{record.stop_Z} exceeds horizon_T {record.horizon_T}")
    if not _is_binary(record.delta):
        fail("delta", f"must be 0 or 1, got {record.delta!r}")
    if record.delta == 1 and record.outcome_Y is None:
        fail("outcome_Y", "required when delta=1")
    if record.delta == 0 and record.outcome_Y is not None:
        fail("outcome_Y", "must be absent when delta=0")
    if record.outcome_Y is not None and not _is_binary(record.outcome_Y):
        fail("outcome_Y", f"must be 0 or 1, got {record.outcome_Y!r}")
    if record.stop_reason not in STOP_REASONS:
        fail("stop_reason", f"unknown stop reason {record.stop_reason!r}")
    qz = record.qz_estimate
    if qz is not None and (not isinstance(qz, (int, float)) or not math.isfinite(qz) or not 0 <= qz <= 1):
        fail("qz_estimate", f"must be a real in [0, 1], got {qz!r}")

    lo, hi = policy.bounds
    clipped = {}
    invalid = list(record.invalid_streams)
    for name, values in record.streams.items():
        values = tuple(values)
        if len(values) != record.stop_Z:
            fail(f"streams.{name}", f"has {len(values)} values, expected stop_Z={record.stop_Z}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in values):
            invalid.append(name)
            continue
        if any(v < 0 or v > 1 for v in values):
            fail(f"streams.{name}", "values must lie in [0, 1]")
        clipped[name] = tuple(min(max(float(v), lo), hi) for v in values)

    informative = record.delta == 0 and record.stop_reason not in ADMIN_STOP_REASONS
    return replace(
        record,
        delta=int(record.delta),
        outcome_Y=None if record.outcome_Y is None else int(record.outcome_Y),
        streams=clipped,
        invalid_streams=tuple(sorted(set(invalid))),
        informative=informative,
        qz_estimate=None if qz is None else float(qz),
    )


def record_from_json(obj, policy=ClipPolicy(), *, where=""):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}expected a JSON object")
    unknown = sorted(set(obj) - KNOWN_KEYS)
    if unknown:
        logger.warning("%signoring unknown keys %s in record %r", where, unknown, obj.get("id"))
    missing = [k for k in ("id", "horizon_T", "stop_Z", "delta", "streams") if k not in obj]
    if missing:
        raise ValidationError(f"{where}missing keys {missing}", record_id=obj.get("id"))
    streams = obj["streams"]
    if not isinstance(streams, dict) or not all(isinstance(v, list) for v in streams.values()):
        raise ValidationError("must map names to arrays", record_id=obj.get("id"), field="streams")
    rec = TrajectoryRecord(
        id=str(obj["id"]),
        horizon_T=obj["horizon_T"],
        stop_Z=obj["stop_Z"],
        delta=obj["delta"],
        outcome_Y=obj.get("outcome_Y"),
        stop_reason=obj.get("stop_reason", "clean"),
        streams={k: tuple(v) for k, v in streams.items()},
        qz_estimate=obj.get("qz_estimate"),
    )
    return validate_and_clip(rec, policy)


def read_jsonl(path, policy=ClipPolicy()):
    """Parse and validate a JSONL trajectory file. Duplicate ids are rejected."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{Path(path).name}:{lineno}: "
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{where}invalid JSON ({exc.msg})") from None
            rec = record_from_json(obj, policy, where=where)
            if rec.id in seen:
                raise ValidationError(f"{where}duplicate id", record_id=rec.id, field="id")
            seen.add(rec.id)
            records.append(rec)
    return records


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
