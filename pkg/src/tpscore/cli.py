"""Command-line interface.

Every subcommand reads its options from flags and, optionally, from a JSON
file given with ``--config`` whose keys are the long option names; a flag on
the command line wins over the file. Exit codes: 0 success, 2 invalid input,
3 undefined metric, 4 identity check failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from tpscore import __version__
from tpscore.calibration import cross_fit
from tpscore.diagnostics import (
    AGGREGATORS,
    TRANSFORMS,
    Aggregator,
    auprc_failure,
    aurc,
    auroc_failure,
    fixed_rank_transform,
    reliability_bins,
    summaries_from_records,
    t_brier,
    t_ece,
)
from tpscore.errors import (
    EmptyPopulationError,
    IdentityCheckError,
    InvalidInputError,
    MissingNuisanceError,
    TPSError,
    UndefinedMetricError,
)
from tpscore.report import Table, dumps
from tpscore.score_family import ClipPolicy, ScoreFamily
from tpscore.stats import bootstrap_mean, bootstrap_paired_diff, bootstrap_union_delta_practice
from tpscore.synthetic import (
    MIN_VALID_BRANCHES,
    UNRESOLVED_MODES,
    ContinuationAudit,
    SignalWorld,
    artificial_censor,
    conditional_projection_check,
    counterexample_theorem_A,
    counterexample_theorem_B,
    generate_population,
)
from tpscore.tps import (
    MODES,
    decompose_censoring_shift,
    delta_exact_minus_simple_log,
    population_summary,
    record_weights,
    score_records,
    tps_cen_exact,
    tps_cen_simple,
)
from tpscore.trajectory import WeightSchedule, read_jsonl, weights, write_jsonl

log = logging.getLogger("tpscore")

BASE_RATE = "base_rate"
IDENTITY_TOL = 1e-12
DEFAULT_FAMILIES = ("log", "brier", "beta(2,4)")
SUMMARY_KINDS = ("front_weighted",) + AGGREGATORS
CENSORING_ASSUMPTION = "administrative stop independent of the outcome given the observed prefix"

ORIENTATION = {
    "mean_tps": "higher is better",
    "auroc": "higher is better",
    "auprc": "higher is better",
    "aurc": "lower is better",
    "t_ece": "lower is better",
    "t_brier": "lower is better",
}


# ---------------------------------------------------------------- options


@dataclass(frozen=True)
class Opt:
    name: str
    default: object = None
    kind: str = "value"  # value | list | flag
    type: type = str
    help: str = ""
    choices: tuple | None = None

    @property
    def dest(self):
        return self.name.replace("-", "_")


COMMON = (
    Opt("out-dir", ".", help="directory for output tables"),
    Opt("format", ("csv", "json"), "list", help="output formats", choices=("csv", "json")),
    Opt("epsilon", 1e-6, type=float, help="forecast clip epsilon"),
    Opt("jobs", 1, type=int, help="worker threads over table cells"),
)
SCORING = (
    Opt("stream", (), "list", help="predictor streams (default: all, with base_rate last)"),
    Opt("family", DEFAULT_FAMILIES, "list", help="score families, e.g. log, brier, beta(2,4)"),
    Opt("schedule", ("linear_front",), "list", help="weight schedules"),
)
BOOT = (
    Opt("bootstrap-b", 1000, type=int, help="bootstrap replicates (0 disables intervals)"),
    Opt("level", 0.95, type=float, help="interval level"),
    Opt("seed", 42, type=int, help="bootstrap seed"),
)
CENSORED = (
    Opt("audit", None, help="continuation audit JSONL supplying q_Z for cen_exact"),
    Opt("include-informative", False, "flag", help="score informatively censored records too"),
    Opt("min-branches", MIN_VALID_BRANCHES, type=int, help="valid branches needed to keep an audit"),
)

COMMAND_OPTS = {
    "score": SCORING + BOOT + CENSORED + (
        Opt("mode", ("complete",), "list", help="evaluation modes", choices=MODES),
        Opt("no-base-rate", False, "flag", help="omit the synthesized base_rate stream"),
        Opt("per-record", False, "flag", help="also write per-record totals"),
        Opt("bins", 10, type=int, help="T-ECE bins"),
    ),
    "calibrate": (
        Opt("stream", (), "list", help="streams to calibrate (default: all uncalibrated)"),
        Opt("schedule", "linear_front", help="weight schedule used by the fit"),
        Opt("lam", 1.0, type=float, help="L2 penalty on the slope"),
        Opt("output", None, help="calibrated JSONL path (default: <out-dir>/calibrated.jsonl)"),
    ),
    "diagnose": (
        Opt("stream", (), "list", help="predictor streams"),
        Opt("schedule", "linear_front", help="schedule for front-weighted and weighted summaries"),
        Opt("aggregator", SUMMARY_KINDS, "list", help="scalar summaries", choices=SUMMARY_KINDS),
        Opt("bins", 10, type=int, help="T-ECE bins"),
        Opt("fixed-rank", False, "flag", help="transform the stream with the ranking scalar held fixed"),
        Opt("family", ("log",), "list", help="families scored in fixed-rank mode"),
        Opt("lam", 1.0, type=float, help="Platt penalty for the platt_model transform"),
        Opt("series", False, "flag", help="write reliability-bin series"),
        Opt("no-base-rate", False, "flag", help="omit the synthesized base_rate stream"),
    ),
    "censor-sim": (
        Opt("stream", (), "list", help="predictor streams"),
        Opt("family", DEFAULT_FAMILIES, "list", help="score families"),
        Opt("schedule", tuple(s.value for s in WeightSchedule), "list", help="weight schedules"),
        Opt("rate", (0.25, 0.5, 0.75), "list", float, help="censoring rates"),
        Opt("seed", 42, type=int, help="censoring seed"),
    ),
    "qz-audit": (
        Opt("audit", None, help="continuation audit JSONL (required)"),
        Opt("stream", (), "list", help="predictor streams"),
        Opt("family", ("log",), "list", help="score families"),
        Opt("schedule", ("linear_front",), "list", help="weight schedules"),
        Opt("min-branches", MIN_VALID_BRANCHES, type=int, help="valid branches needed to keep an audit"),
        Opt("unresolved", "exclude", help="treatment of unresolved branches", choices=UNRESOLVED_MODES),
    ),
    "counterexamples": (),
    "generate": (
        Opt("horizon", None, type=int, help="trajectory length T (required)"),
        Opt("n", None, type=int, help="number of trajectories (required)"),
        Opt("prior", 0.5, type=float, help="P(Y = 1)"),
        Opt("theta", 0.7, type=float, help="signal accuracy"),
        Opt("seed", 42, type=int, help="generator seed"),
        Opt("start", 0, type=int, help="index of the first trajectory"),
        Opt("censor-rate", 0.0, type=float, help="artificial censoring rate"),
        Opt("no-distortions", False, "flag", help="emit only the truthful stream"),
        Opt("output", None, help="JSONL path (default: <out-dir>/synthetic.jsonl)"),
    ),
    "bootstrap": BOOT + CENSORED + (
        Opt("stream", None, help="predictor stream (required)"),
        Opt("against", None, help="second stream for a paired difference"),
        Opt("family", DEFAULT_FAMILIES, "list", help="score families"),
        Opt("schedule", ("linear_front",), "list", help="weight schedules"),
        Opt("mode", "complete", help="evaluation mode", choices=MODES + ("delta_practice",)),
    ),
}
TAKES_INPUT = {"score", "calibrate", "diagnose", "qz-audit", "bootstrap"}
COMMAND_HELP = {
    "score": "mean trajectory scores per predictor, family, schedule and mode",
    "calibrate": "cross-fitted Platt calibration of forecast streams",
    "diagnose": "ranking and calibration diagnostics of scalar summaries",
    "censor-sim": "artificial-censoring sweep with decomposition residuals",
    "qz-audit": "exact Monte Carlo versus simple censored scores on audited prefixes",
    "counterexamples": "check the exact constants of the two counterexample constructions",
    "generate": "write a synthetic signal-world population",
    "bootstrap": "bootstrap interval for a mean score or a paired score difference",
}


def _options(command):
    return COMMON + COMMAND_OPTS[command]


def build_parser():
    parser = argparse.ArgumentParser(prog="tpscore", description="Trajectory proper scoring toolkit.")
    parser.add_argument("--version", action="version", version=f"tpscore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, text in COMMAND_HELP.items():
        p = sub.add_parser(command, help=text, description=text)
        if command in TAKES_INPUT:
            p.add_argument("input", nargs="?", default=argparse.SUPPRESS, help="trajectory JSONL")
        elif command == "censor-sim":
            p.add_argument("input", nargs="*", default=argparse.SUPPRESS, help="complete trajectory JSONL files")
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option values")
        for opt in _options(command):
            flag = f"--{opt.name}"
            if opt.kind == "flag":
                p.add_argument(flag, action="store_true", default=argparse.SUPPRESS, help=opt.help)
            elif opt.kind == "list":
                p.add_argument(flag, action="append", default=argparse.SUPPRESS, help=opt.help + " (repeatable)")
            else:
                p.add_argument(flag, default=argparse.SUPPRESS, help=opt.help)
    return parser


def _convert(opt, value):
    def one(v):
        try:
            out = opt.type(v)
        except (TypeError, ValueError):
            raise InvalidInputError(f"--{opt.name}: cannot read {v!r} as {opt.type.__name__}") from None
        if opt.choices is not None and out not in opt.choices:
            raise InvalidInputError(f"--{opt.name}: {out!r} is not one of {list(opt.choices)}")
        return out

    if opt.kind == "flag":
        if not isinstance(value, bool):
            raise InvalidInputError(f"{opt.name}: expected true or false, got {value!r}")
        return value
    if opt.kind == "list":
        items = value if isinstance(value, (list, tuple)) else [value]
        flat = []
        for item in items:
            if isinstance(item, str):
                flat.extend(part.strip() for part in item.split(",") if part.strip())
            else:
                flat.append(item)
        # beta(2,4) contains a comma; re-join fragments split inside parentheses
        merged = []
        for part in flat:
            if merged and isinstance(merged[-1], str) and merged[-1].count("(") > merged[-1].count(")"):
                merged[-1] = f"{merged[-1]},{part}"
            else:
                merged.append(part)
        return tuple(one(v) for v in merged)
    if value is None:
        return None
    return one(value)


def resolve_config(args):
    """Merge defaults, the ``--config`` file and explicit flags, in that order."""
    opts = {o.dest: o for o in _options(args.command)}
    cfg = {dest: o.default for dest, o in opts.items()}
    cfg["input"] = None
    explicit = vars(args)
    if "config" in explicit:
        try:
            with open(explicit["config"], encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config {explicit['config']}: invalid JSON ({exc.msg})") from None
        if not isinstance(file_cfg, dict):
            raise InvalidInputError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            dest = key.replace("-", "_")
            if dest == "input":
                cfg["input"] = value
            elif dest in opts:
                cfg[dest] = _convert(opts[dest], value)
            else:
                raise InvalidInputError(f"config key {key!r} is not an option of {args.command!r}")
    for dest, value in explicit.items():
        if dest in opts:
            cfg[dest] = _convert(opts[dest], value)
    if "input" in explicit and explicit["input"] not in (None, []):
        cfg["input"] = explicit["input"]
    for dest in ("jobs", "bins", "min_branches"):
        if dest in cfg and cfg[dest] < 1:
            raise InvalidInputError(f"--{dest.replace('_', '-')} must be positive")
    ClipPolicy(cfg["epsilon"])
    cfg["command"] = args.command
    return cfg


# ---------------------------------------------------------------- shared helpers


def _run_cells(fn, cells, jobs):
    cells = list(cells)
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load(cfg):
    path = cfg.get("input")
    if not path:
        raise InvalidInputError("no input file given")
    records = read_jsonl(path, ClipPolicy(cfg["epsilon"]))
    if not records:
        raise EmptyPopulationError(f"{path}: no trajectory records")
    return records


def _input_meta(path):
    return {"name": Path(path).name, "sha256": _sha256(path)}


def _families(cfg):
    return [ScoreFamily.parse(f) for f in cfg["family"]]


def _schedules(values):
    values = values if isinstance(values, (list, tuple)) else [values]
    return [WeightSchedule.parse(s).value for s in values]


def calibration_status(name):
    if name == BASE_RATE:
        return "reference constant (complete-subset success rate)"
    if name.endswith(".platt"):
        return "cross-fitted Platt"
    return "as supplied"


def _predictors(records, requested, base_rate):
    """Canonical predictor order: stream names sorted, base_rate last."""
    names = sorted({k for r in records for k in r.streams} | {k for r in records for k in r.invalid_streams})
    if BASE_RATE in names:
        raise InvalidInputError(f"stream name {BASE_RATE!r} is reserved for the synthesized reference")
    if requested:
        unknown = [s for s in requested if s not in names and s != BASE_RATE]
        if unknown:
            raise InvalidInputError(f"unknown streams {unknown}; available: {names}")
        chosen = sorted(set(requested) - {BASE_RATE})
        return chosen + ([BASE_RATE] if BASE_RATE in requested else [])
    return names + ([BASE_RATE] if base_rate else [])


def _with_base_rate(records, eps):
    complete = [r for r in records if r.observed]
    if not complete:
        raise EmptyPopulationError("no complete records: the base-rate reference is undefined")
    ybar = sum(r.outcome_Y for r in complete) / len(complete)
    p = min(max(ybar, eps), 1.0 - eps)
    return [r.with_streams(**{BASE_RATE: (p,) * r.stop_Z}) for r in records], ybar


def read_audits(path):
    """Audit JSONL: one ``{"prefix_id": ..., "branches": [...]}`` object per line."""
    audits = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{Path(path).name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{where}: invalid JSON ({exc.msg})") from None
            pid = obj.get("prefix_id", obj.get("id")) if isinstance(obj, dict) else None
            branches = obj.get("branches") if isinstance(obj, dict) else None
            if pid is None or not isinstance(branches, list):
                raise InvalidInputError(f"{where}: audit lines need 'prefix_id' and a 'branches' list")
            if str(pid) in audits:
                raise InvalidInputError(f"{where}: duplicate prefix id {pid!r}")
            audits[str(pid)] = branches
    return audits


def _attach_audit_qz(records, cfg):
    """Replace q_Z on censored records by audited estimates.

    Returns the records and the ids whose audit fell below the retention
    minimum; those are excluded from exact censored scoring.
    """
    if not cfg.get("audit"):
        return records, set(), []
    raw = read_audits(cfg["audit"])
    by_id = {r.id: r for r in records}
    unmatched = sorted(pid for pid in raw if pid not in by_id or by_id[pid].observed)
    excluded, out = set(), []
    for r in records:
        if not r.observed and r.id in raw:
            audit = ContinuationAudit.from_branches(r.id, raw[r.id])
            if audit.valid_count >= cfg["min_branches"]:
                r = replace(r, qz_estimate=float(audit.qz_mc))
            else:
                excluded.add(r.id)
        out.append(r)
    return out, excluded, unmatched


def _population(records, stream, mode, include_informative, qz_excluded=frozenset()):
    have = [r for r in records if stream in r.streams]
    if mode == "complete":
        return [r for r in have if r.observed]
    pop = [r for r in have if r.observed or include_informative or not r.informative]
    if mode == "cen_exact":
        pop = [r for r in pop if r.id not in qz_excluded]
        missing = [r.id for r in pop if not r.observed and r.qz_estimate is None]
        if missing:
            raise MissingNuisanceError(
                f"cen_exact needs qz_estimate or audit branches for every censored record; missing for "
                f"{len(missing)} record(s), e.g. {missing[:5]}"
            )
    return pop


def _exclusions(records, stream, include_informative, qz_excluded):
    missing = sum(stream not in r.streams for r in records)
    invalid = sum(stream in r.invalid_streams for r in records)
    informative = sum(
        (not r.observed) and r.informative and stream in r.streams for r in records
    ) if not include_informative else 0
    return {
        "missing_stream": missing - invalid,
        "invalid_stream": invalid,
        "informative_censored": informative,
        "qz_under_resolved": sum(r.id in qz_excluded and stream in r.streams for r in records),
    }


def _metrics(summaries, bins):
    """Rank and calibration metrics; undefined ones come back as None with a reason."""
    out, undefined = {}, []
    fns = {
        "auroc": auroc_failure,
        "auprc": auprc_failure,
        "aurc": aurc,
        "t_ece": lambda s: t_ece(s, bins),
        "t_brier": t_brier,
    }
    for name, fn in fns.items():
        try:
            out[name] = float(fn(summaries))
        except (UndefinedMetricError, EmptyPopulationError) as exc:
            out[name] = None
            undefined.append((name, str(exc)))
    return out, undefined


def _summaries(records, stream, kind, schedule):
    agg = None if kind == "front_weighted" else Aggregator(kind)
    return summaries_from_records(records, stream, aggregator=agg, schedule=schedule)


def _common_meta(cfg, **extra):
    meta = {
        "tool": f"tpscore {__version__}",
        "command": cfg["command"],
        "clip_epsilon": cfg["epsilon"],
    }
    meta.update(extra)
    return meta


def _write(tables, cfg):
    for table in tables:
        table.write(cfg["out_dir"], cfg["format"])


def _censoring_meta(cfg, qz_source=None):
    return {
        "assumption": CENSORING_ASSUMPTION,
        "include_informative": bool(cfg.get("include_informative", False)),
        "qz_source": qz_source,
    }


# ---------------------------------------------------------------- score


SCORE_COLUMNS = [
    "predictor", "calibration", "family", "schedule", "mode", "n", "n_complete", "n_censored",
    "mean_tps", "se", "ci_low", "ci_high", "auroc", "auprc", "aurc", "t_ece", "t_brier",
]


def _interval(values, cfg):
    if cfg["bootstrap_b"] == 0 or len(values) == 0:
        return None
    return bootstrap_mean(values, cfg["bootstrap_b"], cfg["level"], cfg["seed"])


def cmd_score(cfg):
    records = _load(cfg)
    input_meta = _input_meta(cfg["input"])
    predictors = _predictors(records, cfg["stream"], not cfg["no_base_rate"])
    ybar = None
    if BASE_RATE in predictors:
        records, ybar = _with_base_rate(records, cfg["epsilon"])
    families = _families(cfg)
    schedules = _schedules(cfg["schedule"])
    modes = [m for m in MODES if m in cfg["mode"]]
    if cfg["bootstrap_b"] < 0:
        raise InvalidInputError("--bootstrap-b must be >= 0")
    records, qz_excluded, unmatched = (
        _attach_audit_qz(records, cfg) if "cen_exact" in modes else (records, set(), [])
    )
    inc = cfg["include_informative"]

    def diag_cell(cell):
        stream, schedule = cell
        pop = _population(records, stream, "complete", inc)
        if not pop:
            return {k: None for k in ORIENTATION if k != "mean_tps"}, [("all", "no complete records")]
        return _metrics(_summaries(pop, stream, "front_weighted", schedule), cfg["bins"])

    diag_cells = [(s, sch) for s in predictors for sch in schedules]
    diag = dict(zip(diag_cells, _run_cells(diag_cell, diag_cells, cfg["jobs"])))

    def score_cell(cell):
        stream, fam, schedule = cell
        out = {}
        for mode in modes:
            pop = _population(records, stream, mode, inc, qz_excluded)
            totals = score_records(pop, stream, fam, schedule, mode) if pop else np.zeros(0)
            out[mode] = (pop, totals)
        return out

    cells = [(s, f, sch) for s in predictors for f in families for sch in schedules]
    results = _run_cells(score_cell, cells, cfg["jobs"])

    table = Table("score", SCORE_COLUMNS)
    per_record = Table("score_records", ["predictor", "family", "schedule", "mode", "id", "total"])
    undefined = []
    for (stream, fam, schedule), by_mode in zip(cells, results):
        metrics, why = diag[(stream, schedule)]
        undefined += [f"{stream}/{schedule}/{m}: {reason}" for m, reason in why]
        base = dict(predictor=stream, calibration=calibration_status(stream), family=fam.name,
                    schedule=schedule, **metrics)
        for mode in modes:
            pop, totals = by_mode[mode]
            observed = np.array([r.observed for r in pop], dtype=bool)
            row = dict(base, mode=mode, n=len(pop), n_complete=int(observed.sum()),
                       n_censored=int((~observed).sum()))
            if len(pop):
                row["mean_tps"] = population_summary(totals.tolist()).mean
                boot = _interval(totals, cfg)
                if boot is not None:
                    row.update(se=boot.se, ci_low=boot.ci_low, ci_high=boot.ci_high)
            table.add(**row)
            if cfg["per_record"]:
                for r, t in zip(pop, totals.tolist()):
                    per_record.add(predictor=stream, family=fam.name, schedule=schedule, mode=mode, id=r.id, total=t)
        if "complete" in modes:
            for mode in modes[1:]:
                pop, totals = by_mode[mode]
                observed = np.array([r.observed for r in pop], dtype=bool)
                row = dict(base, mode=f"delta_practice[{mode}]", n=len(pop), n_complete=int(observed.sum()),
                           n_censored=int((~observed).sum()))
                if observed.any():
                    summary = population_summary(totals.tolist(), baseline=totals[observed].tolist())
                    row["mean_tps"] = summary.delta_practice
                    if cfg["bootstrap_b"]:
                        boot = bootstrap_union_delta_practice(
                            totals[observed], totals[~observed], cfg["bootstrap_b"], cfg["level"], cfg["seed"]
                        )
                        row.update(se=boot.se, ci_low=boot.ci_low, ci_high=boot.ci_high)
                table.add(**row)

    table.metadata = _common_meta(
        cfg,
        input=input_meta,
        families=[f.name for f in families],
        schedules=schedules,
        modes=modes,
        predictor_order=predictors,
        calibration_status={p: calibration_status(p) for p in predictors},
        censoring=_censoring_meta(cfg, "audit" if cfg.get("audit") else ("record" if "cen_exact" in modes else None)),
        exclusions={p: _exclusions(records, p, inc, qz_excluded) for p in predictors},
        unmatched_audit_ids=unmatched,
        base_rate=ybar,
        bootstrap={"B": cfg["bootstrap_b"], "level": cfg["level"], "seed": cfg["seed"]},
        diagnostics_summary="front-weighted normalized mean of the stream, complete records only",
        undefined_metrics=undefined,
        orientation=ORIENTATION,
        delta_practice="mean over the censored-mode population minus mean over its complete members",
    )
    tables = [table]
    if cfg["per_record"]:
        per_record.metadata = table.metadata
        tables.append(per_record)
    for p, info in table.metadata["exclusions"].items():
        if info["missing_stream"] or info["invalid_stream"]:
            log.warning("stream %s: %d record(s) without it, %d invalid", p, info["missing_stream"], info["invalid_stream"])
    _write(tables, cfg)
    return 0


# ---------------------------------------------------------------- calibrate


CALIBRATE_COLUMNS = [
    "stream", "split", "applied_to", "intercept_a", "slope_b", "fitted_slope", "fallback_triggered",
    "sigma_floored", "converged", "mu_train", "sigma_train", "train_base_rate", "n_records", "n_rows",
]


def cmd_calibrate(cfg):
    records = _load(cfg)
    names = sorted({k for r in records for k in r.streams})
    streams = list(cfg["stream"]) or [s for s in names if not s.endswith(".platt")]
    unknown = [s for s in streams if s not in names]
    if unknown:
        raise InvalidInputError(f"unknown streams {unknown}; available: {names}")
    streams = sorted(streams)
    schedule = WeightSchedule.parse(cfg["schedule"]).value
    reports = {}
    for s in streams:
        records, rep = cross_fit(records, s, schedule, cfg["lam"])
        reports[s] = rep.to_dict()
    output = Path(cfg["output"]) if cfg["output"] else Path(cfg["out_dir"]) / "calibrated.jsonl"
    output.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, output)

    table = Table("calibrate", CALIBRATE_COLUMNS)
    for s in streams:
        for split, model in sorted(reports[s]["splits"].items()):
            table.add(stream=s, split=split, applied_to="B" if split == "A" else "A",
                      **{k: model.get(k) for k in CALIBRATE_COLUMNS[3:]})
    table.metadata = _common_meta(
        cfg,
        input=_input_meta(cfg["input"]),
        schedules=[schedule],
        lam=cfg["lam"],
        calibration_status={s: "cross-fitted Platt" for s in streams},
        output_streams=[f"{s}.platt" for s in streams],
        censoring={"censored_records": "calibrated by the opposite split, never used for fitting"},
        exclusions={"censored_records_in_fit": 0},
        predictor_order=streams,
    )
    _write([table], cfg)
    report_path = Path(cfg["out_dir"]) / "calibrate_report.json"
    with open(report_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps({"metadata": table.metadata, "reports": reports}))
    return 0


# ---------------------------------------------------------------- diagnose


DIAG_COLUMNS = ["predictor", "calibration", "summary", "n", "n_failures", "auroc", "auprc", "aurc", "t_ece", "t_brier"]
FIXED_COLUMNS = ["predictor", "transform", "family", "n", "auroc", "auprc", "aurc", "mean_tps"]


def _fixed_rank_rows(records, predictors, cfg, schedule):
    families = _families(cfg)
    rows = []
    for stream in predictors:
        pop = _population(records, stream, "complete", False)
        if not pop:
            continue
        scalar = _summaries(pop, stream, "front_weighted", schedule)
        rank = {"auroc": auroc_failure(scalar), "auprc": auprc_failure(scalar), "aurc": aurc(scalar)}
        platt, _ = cross_fit(pop, stream, schedule, cfg["lam"])
        lo, hi = cfg["epsilon"], 1.0 - cfg["epsilon"]
        for kind in TRANSFORMS:
            name = f"{stream}~{kind}"
            transformed = []
            for r, rp in zip(pop, platt):
                vals = (rp.streams[f"{stream}.platt"] if kind == "platt_model"
                        else fixed_rank_transform(r.streams[stream], kind))
                transformed.append(r.with_streams(**{name: np.clip(vals, lo, hi).tolist()}))
            for fam in families:
                totals = score_records(transformed, name, fam, schedule, "complete")
                rows.append(dict(predictor=stream, transform=kind, family=fam.name, n=len(pop),
                                 mean_tps=population_summary(totals.tolist()).mean, **rank))
    return rows


def cmd_diagnose(cfg):
    records = _load(cfg)
    predictors = _predictors(records, cfg["stream"], not cfg["no_base_rate"])
    if BASE_RATE in predictors:
        records, _ = _with_base_rate(records, cfg["epsilon"])
    schedule = WeightSchedule.parse(cfg["schedule"]).value
    kinds = [k for k in SUMMARY_KINDS if k in cfg["aggregator"]]

    def cell(c):
        stream, kind = c
        pop = _population(records, stream, "complete", False)
        if not pop:
            return 0, 0, {k: None for k in DIAG_COLUMNS[5:]}, [("all", "no complete records")], []
        summaries = _summaries(pop, stream, kind, schedule)
        metrics, why = _metrics(summaries, cfg["bins"])
        bins = reliability_bins(summaries, cfg["bins"]) if cfg["series"] else []
        return len(pop), sum(1 - s.label for s in summaries), metrics, why, bins

    cells = [(s, k) for s in predictors for k in kinds]
    table = Table("diagnose", DIAG_COLUMNS)
    series = Table("diagnose_reliability", ["predictor", "summary", "bin", "count", "mean_confidence", "mean_label"])
    undefined = []
    for (stream, kind), (n, n_f, metrics, why, bins) in zip(cells, _run_cells(cell, cells, cfg["jobs"])):
        table.add(predictor=stream, calibration=calibration_status(stream), summary=kind, n=n, n_failures=n_f,
                  **metrics)
        undefined += [f"{stream}/{kind}/{m}: {reason}" for m, reason in why]
        for i, (count, mc, my) in enumerate(bins):
            series.add(predictor=stream, summary=kind, bin=i, count=count, mean_confidence=mc, mean_label=my)
    excl = {p: _exclusions(records, p, False, set()) for p in predictors}
    n_censored = sum(not r.observed for r in records)
    table.metadata = _common_meta(
        cfg,
        input=_input_meta(cfg["input"]),
        schedules=[schedule],
        families=[],
        predictor_order=predictors,
        calibration_status={p: calibration_status(p) for p in predictors},
        censoring={"censored_records_excluded": n_censored, "note": "diagnostics use complete records only"},
        exclusions=excl,
        bins=cfg["bins"],
        undefined_metrics=undefined,
        orientation={k: v for k, v in ORIENTATION.items() if k != "mean_tps"},
        positive_class="failure (Y = 0), ranked by ascending confidence",
    )
    tables = [table]
    if cfg["series"]:
        series.metadata = table.metadata
        tables.append(series)
    if cfg["fixed_rank"]:
        fixed = Table("diagnose_fixed_rank", FIXED_COLUMNS)
        try:
            for row in _fixed_rank_rows(records, [p for p in predictors if p != BASE_RATE], cfg, schedule):
                fixed.add(**row)
        except UndefinedMetricError as exc:
            undefined.append(f"fixed-rank: {exc}")
        fixed.metadata = dict(table.metadata, families=[f.name for f in _families(cfg)],
                              orientation=ORIENTATION,
                              fixed_scalar="front-weighted summary of the untransformed stream",
                              transforms=list(TRANSFORMS))
        tables.append(fixed)
    _write(tables, cfg)
    if undefined:
        raise UndefinedMetricError("undefined metrics: " + "; ".join(undefined))
    return 0


# ---------------------------------------------------------------- censor-sim


CENSOR_COLUMNS = [
    "dataset", "predictor", "family", "schedule", "rate", "n", "n_censored", "tps_complete", "tps_cen_simple",
    "delta_mean", "delta_y0", "delta_y1", "prefix_swap_mean", "tail_omission_mean", "max_identity_residual",
]


def _fsum_mean(values):
    values = list(values)
    return math.fsum(values) / len(values) if values else None


def cmd_censor_sim(cfg):
    inputs = cfg["input"] or []
    if isinstance(inputs, str):
        inputs = [inputs]
    if not inputs:
        raise InvalidInputError("no input file given")
    families = _families(cfg)
    schedules = _schedules(cfg["schedule"])
    rates = list(cfg["rate"])
    table = Table("censor_sim", CENSOR_COLUMNS)
    worst = 0.0
    datasets = {}
    for path in inputs:
        records = read_jsonl(path, ClipPolicy(cfg["epsilon"]))
        if not records:
            raise EmptyPopulationError(f"{path}: no trajectory records")
        if any(not r.observed for r in records):
            raise InvalidInputError(f"{path}: censoring simulation needs a complete population")
        name = Path(path).stem
        datasets[name] = _input_meta(path)
        predictors = _predictors(records, cfg["stream"], False)
        censored = {rate: artificial_censor(records, rate, cfg["seed"]) for rate in rates}

        def cell(c):
            stream, fam, schedule, rate = c
            keep = [i for i, r in enumerate(records) if stream in r.streams]
            full = [records[i] for i in keep]
            cut = [censored[rate].records[i] for i in keep]
            comp = score_records(full, stream, fam, schedule, "complete")
            simple = score_records(cut, stream, fam, schedule, "cen_simple")
            diff = (simple - comp).tolist()
            ps, to, resid = [], [], [0.0]
            for r_full, r_cut, d in zip(full, cut, diff):
                if r_cut.observed:
                    ps.append(0.0)
                    to.append(0.0)
                    resid.append(abs(d))
                    continue
                w = weights(schedule, r_full.horizon_T)
                a, b = decompose_censoring_shift(r_full.stream(stream), r_full.outcome_Y, r_cut.stop_Z, w, fam)
                ps.append(a)
                to.append(b)
                resid.append(abs(a + b - d))
            ys = [r.outcome_Y for r in full]
            return dict(
                predictor=stream, family=fam.name, schedule=schedule, rate=rate, n=len(full),
                n_censored=sum(not r.observed for r in cut),
                tps_complete=_fsum_mean(comp.tolist()), tps_cen_simple=_fsum_mean(simple.tolist()),
                delta_mean=_fsum_mean(diff),
                delta_y0=_fsum_mean(d for d, y in zip(diff, ys) if y == 0),
                delta_y1=_fsum_mean(d for d, y in zip(diff, ys) if y == 1),
                prefix_swap_mean=_fsum_mean(ps), tail_omission_mean=_fsum_mean(to),
                max_identity_residual=max(resid),
            )

        cells = [(s, f, sch, rate) for s in predictors for f in families for sch in schedules for rate in rates]
        for row in _run_cells(cell, cells, cfg["jobs"]):
            worst = max(worst, row["max_identity_residual"])
            table.add(dataset=name, **row)
    table.metadata = _common_meta(
        cfg,
        inputs=datasets,
        families=[f.name for f in families],
        schedules=schedules,
        rates=rates,
        seed=cfg["seed"],
        calibration_status="as supplied",
        censoring=dict(_censoring_meta(cfg), mode="artificial, length-stratified, cut uniform on 1..T-1"),
        exclusions={"horizon_1_records": "cannot be cut; kept complete"},
        predictor_order=sorted({row["predictor"] for row in table.rows}),
        identity_tolerance=IDENTITY_TOL,
        max_identity_residual=worst,
        delta_definition="per-record cen_simple minus complete score, averaged over all records "
                         "(y0/y1: over records with that hidden outcome)",
        orientation={"delta_mean": "signed"},
    )
    _write([table], cfg)
    if worst > IDENTITY_TOL:
        raise IdentityCheckError(f"decomposition residual {worst:.3g} exceeds {IDENTITY_TOL:g}")
    return 0


# ---------------------------------------------------------------- qz-audit


AUDIT_COLUMNS = [
    "prefix_id", "predictor", "family", "schedule", "stop_Z", "branches", "valid_branches", "unresolved",
    "parse_errors", "retained", "qz_mc", "simple", "exact_mc", "delta", "delta_formula", "formula_residual",
    "projection_residual", "delta_unresolved_failure", "delta_unresolved_success",
]


def cmd_qz_audit(cfg):
    if not cfg["audit"]:
        raise InvalidInputError("qz-audit needs --audit")
    records = _load(cfg)
    raw = read_audits(cfg["audit"])
    by_id = {r.id: r for r in records}
    unmatched = sorted(pid for pid in raw if pid not in by_id)
    not_censored = sorted(pid for pid in raw if pid in by_id and by_id[pid].observed)
    matched = sorted(pid for pid in raw if pid in by_id and not by_id[pid].observed)
    if unmatched or not_censored:
        log.warning("audit ids without a censored record: %d unmatched, %d complete",
                    len(unmatched), len(not_censored))
    if not matched:
        raise InvalidInputError("no audit prefix id matches a censored record")
    predictors = _predictors(records, cfg["stream"], False)
    families = _families(cfg)
    schedules = _schedules(cfg["schedule"])
    minimum = cfg["min_branches"]
    table = Table("qz_audit", AUDIT_COLUMNS)
    worst = {"projection": 0.0, "formula": 0.0}
    retained = 0
    for pid in matched:
        rec = by_id[pid]
        audit = ContinuationAudit.from_branches(pid, raw[pid], cfg["unresolved"])
        keep = audit.valid_count >= minimum
        retained += keep
        sens = {m: ContinuationAudit.from_branches(pid, raw[pid], m) for m in ("failure", "success")}
        for stream in predictors:
            F = rec.stream(stream)
            if F is None:
                continue
            for fam in families:
                for schedule in schedules:
                    row = dict(prefix_id=pid, predictor=stream, family=fam.name, schedule=schedule,
                               stop_Z=rec.stop_Z, branches=len(raw[pid]), valid_branches=audit.valid_count,
                               unresolved=audit.n_unresolved, parse_errors=audit.n_parse_errors, retained=keep)
                    if keep:
                        w = record_weights(rec, schedule)
                        q = float(audit.qz_mc)
                        simple = tps_cen_simple(F, 0, None, w, fam).total
                        exact = tps_cen_exact(F, 0, None, q, w, fam).total
                        row.update(qz_mc=q, simple=simple, exact_mc=exact, delta=exact - simple)
                        row["projection_residual"] = conditional_projection_check(F, audit.branch_outcomes, w, fam)
                        worst["projection"] = max(worst["projection"], row["projection_residual"])
                        for m, a in sens.items():
                            if a.valid_count:
                                row[f"delta_unresolved_{m}"] = (
                                    tps_cen_exact(F, 0, None, float(a.qz_mc), w, fam).total - simple
                                )
                        if fam.kind == "log":
                            formula = delta_exact_minus_simple_log(F, w, q)
                            row.update(delta_formula=formula, formula_residual=abs(formula - (exact - simple)))
                            worst["formula"] = max(worst["formula"], row["formula_residual"])
                    table.add(**row)
    table.metadata = _common_meta(
        cfg,
        input=_input_meta(cfg["input"]),
        audit=_input_meta(cfg["audit"]),
        families=[f.name for f in families],
        schedules=schedules,
        predictor_order=predictors,
        calibration_status={p: calibration_status(p) for p in predictors},
        censoring=_censoring_meta(cfg, "audit"),
        retention={"min_valid_branches": minimum, "audited": len(matched), "retained": retained,
                   "excluded": len(matched) - retained, "unresolved_mode": cfg["unresolved"]},
        exclusions={"unmatched_prefix_ids": unmatched, "complete_prefix_ids": not_censored},
        identity_tolerance=IDENTITY_TOL,
        max_residuals=worst,
        orientation={"delta": "exact_mc minus simple"},
    )
    _write([table], cfg)
    bad = [k for k, v in worst.items() if v > IDENTITY_TOL]
    if bad:
        raise IdentityCheckError(f"{', '.join(bad)} residual exceeds {IDENTITY_TOL:g}: {worst}")
    return 0


# ---------------------------------------------------------------- counterexamples


def cmd_counterexamples(cfg):
    table = Table("counterexamples", ["construction", "quantity", "value", "expected", "value_float", "match"])
    failing = []
    for label, fn in (("theorem_A", counterexample_theorem_A), ("theorem_B", counterexample_theorem_B)):
        rep = fn()
        for key in sorted(rep["expected"]):
            value, expected = rep["values"][key], rep["expected"][key]
            table.add(construction=label, quantity=key, value=str(value), expected=str(expected),
                      value_float=float(value), match=rep["checks"][key])
            if not rep["checks"][key]:
                failing.append(f"{label}.{key}: got {value}, expected {expected}")
    table.metadata = _common_meta(
        cfg, arithmetic="exact rationals", families=["brier (scalar summaries)"], schedules=[],
        calibration_status="n/a", censoring="none", exclusions={}, passed=not failing,
    )
    _write([table], cfg)
    if failing:
        raise IdentityCheckError("constant mismatch: " + "; ".join(failing))
    return 0


# ---------------------------------------------------------------- generate


def cmd_generate(cfg):
    for key in ("horizon", "n"):
        if cfg[key] is None:
            raise InvalidInputError(f"generate needs --{key}")
    world = SignalWorld(cfg["horizon"], cfg["prior"], cfg["theta"], cfg["seed"])
    policy = ClipPolicy(cfg["epsilon"])
    if cfg["start"] < 0:
        raise InvalidInputError("--start must be >= 0")
    records = generate_population(world, cfg["n"], start=cfg["start"],
                                  distortions=not cfg["no_distortions"], policy=policy)
    hidden = {}
    if cfg["censor_rate"]:
        res = artificial_censor(records, cfg["censor_rate"], cfg["seed"])
        records, hidden = res.records, res.hidden_outcomes
    output = Path(cfg["output"]) if cfg["output"] else Path(cfg["out_dir"]) / "synthetic.jsonl"
    output.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, output)
    meta = _common_meta(
        cfg,
        world={"horizon_T": world.horizon_T, "prior_q1": world.prior_q1,
               "signal_accuracy_theta": world.signal_accuracy_theta, "seed": world.seed},
        n=cfg["n"], start=cfg["start"], output=output.name,
        predictor_order=sorted(records[0].streams),
        censoring={"rate": cfg["censor_rate"], "censored": len(hidden)},
    )
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "generate.json", "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps({"metadata": meta, "hidden_outcomes": dict(sorted(hidden.items()))}))
    return 0


# ---------------------------------------------------------------- bootstrap


BOOT_COLUMNS = [
    "predictor", "against", "family", "schedule", "mode", "n", "estimate", "se", "ci_low", "ci_high", "ratio",
    "redraws",
]


def cmd_bootstrap(cfg):
    if not cfg["stream"]:
        raise InvalidInputError("bootstrap needs --stream")
    if cfg["bootstrap_b"] < 1:
        raise InvalidInputError("--bootstrap-b must be positive")
    records = _load(cfg)
    wanted = [cfg["stream"]] + ([cfg["against"]] if cfg["against"] else [])
    predictors = _predictors(records, wanted, False)
    if BASE_RATE in wanted:
        records, _ = _with_base_rate(records, cfg["epsilon"])
    mode = cfg["mode"]
    if mode == "delta_practice" and cfg["against"]:
        raise InvalidInputError("delta_practice is a single-stream quantity; drop --against")
    score_mode = "cen_simple" if mode == "delta_practice" else mode
    records, qz_excluded, unmatched = (
        _attach_audit_qz(records, cfg) if mode == "cen_exact" else (records, set(), [])
    )
    inc = cfg["include_informative"]
    families = _families(cfg)
    schedules = _schedules(cfg["schedule"])
    B, level, seed = cfg["bootstrap_b"], cfg["level"], cfg["seed"]

    def cell(c):
        fam, schedule = c
        pop = _population(records, cfg["stream"], score_mode, inc, qz_excluded)
        if cfg["against"]:
            pop = [r for r in pop if cfg["against"] in r.streams]
        if not pop:
            raise EmptyPopulationError(f"no records to score in mode {score_mode}")
        a = score_records(pop, cfg["stream"], fam, schedule, score_mode)
        if cfg["against"]:
            b = score_records(pop, cfg["against"], fam, schedule, score_mode)
            s = bootstrap_paired_diff(a, b, B, level, seed)
        elif mode == "delta_practice":
            observed = np.array([r.observed for r in pop], dtype=bool)
            s = bootstrap_union_delta_practice(a[observed], a[~observed], B, level, seed)
        else:
            s = bootstrap_mean(a, B, level, seed)
        return dict(predictor=cfg["stream"], against=cfg["against"], family=fam.name, schedule=schedule,
                    mode=mode, n=len(pop), estimate=s.estimate, se=s.se, ci_low=s.ci_low, ci_high=s.ci_high,
                    ratio=s.ratio, redraws=s.redraws)

    cells = [(f, s) for f in families for s in schedules]
    table = Table("bootstrap", BOOT_COLUMNS)
    for row in _run_cells(cell, cells, cfg["jobs"]):
        table.add(**row)
    table.metadata = _common_meta(
        cfg,
        input=_input_meta(cfg["input"]),
        families=[f.name for f in families],
        schedules=schedules,
        predictor_order=predictors,
        calibration_status={p: calibration_status(p) for p in predictors},
        censoring=_censoring_meta(cfg, "audit" if cfg.get("audit") else None),
        exclusions={p: _exclusions(records, p, inc, qz_excluded) for p in predictors},
        unmatched_audit_ids=unmatched,
        bootstrap={"B": B, "level": level, "seed": seed, "interval": "percentile (linear interpolation)",
                   "se": "replicate standard deviation (ddof=1)"},
        estimate="mean(stream) - mean(against)" if cfg["against"] else "mean",
    )
    _write([table], cfg)
    return 0


# ---------------------------------------------------------------- entry point


COMMANDS = {
    "score": cmd_score,
    "calibrate": cmd_calibrate,
    "diagnose": cmd_diagnose,
    "censor-sim": cmd_censor_sim,
    "qz-audit": cmd_qz_audit,
    "counterexamples": cmd_counterexamples,
    "generate": cmd_generate,
    "bootstrap": cmd_bootstrap,
}


def _error(exc, code):
    payload = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="tpscore: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](resolve_config(args))
    except TPSError as exc:
        return _error(exc, exc.exit_code)
    except OSError as exc:
        return _error(exc, InvalidInputError.exit_code)


if __name__ == "__main__":
    sys.exit(main())
