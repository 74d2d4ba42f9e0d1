"""Text formats: flat dotted config files, mechanism exports, and CSV/summary outputs.

Config files hold one ``key = value`` pair per line. Keys use dotted section
prefixes (``scenario.requests``); ``#`` starts a comment. Mechanism exports are
JSON; Python's shortest round-trip float repr keeps them lossless.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .errors import ConfigError
from .mechanism import AggregatedMechanism, mechanism_from_dict

LOG_COLUMNS = ("request_id", "slot", "bid", "price", "cv_j", "spend", "cumulative_cpa")
VIOLATION_COLUMNS = ("request_id", "cpa_slack", "cv_slack")
AUDIT_COLUMNS = ("report", "seed", "utility", "delivered_cpa_or_roi", "constraint_satisfied",
                 "violations")
FRONTIER_COLUMNS = ("value_class", "report", "conversions", "per_conversion_bid")
MECHANISM_FORMAT = 1


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into a flat ``{key: raw string}`` map."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", f"line {lineno}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key", f"line {lineno}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key", key)
        out[key] = value
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "config") from exc
    return parse_config(text)


def fmt(x) -> str:
    """Deterministic text for a CSV cell."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def episode_log_csv(log) -> str:
    cum = log.cumulative_cpa()
    rows = []
    for k in range(len(log)):
        c = float(cum[k])
        rows.append((int(log.request_id[k]), int(log.slot[k]), float(log.bid[k]),
                     float(log.price[k]), float(log.conversions[k]), float(log.spend[k]),
                     None if math.isnan(c) else c))
    return csv_text(LOG_COLUMNS, rows)


def violations_csv(log) -> str:
    return csv_text(VIOLATION_COLUMNS, log.violations())


def audit_rows_csv(report) -> str:
    rows = [(r.report, r.seed, r.utility, r.delivered, r.constraint_satisfied, r.violations)
            for r in report.rows]
    return csv_text(AUDIT_COLUMNS, rows)


def frontier_csv(frontiers) -> str:
    """``frontiers`` maps a value class to its :class:`Frontier`."""
    rows = []
    for h, f in sorted(frontiers.items()):
        rows += [(h, r, c, b) for r, c, b in zip(f.reports, f.conversions, f.per_conversion_bids)]
    return csv_text(FRONTIER_COLUMNS, rows)


def summary_text(pairs) -> str:
    """``key = value`` lines in the given order."""
    return "".join(f"{k} = {fmt(v)}\n" for k, v in pairs)


def episode_summary_pairs(summary, targets=None):
    pairs = [("total_conversions", summary.total_conversions),
             ("total_spend", summary.total_spend),
             ("revenue", summary.revenue),
             ("delivered_cpa", summary.delivered_cpa),
             ("delivered_roi", summary.delivered_roi),
             ("utility", summary.utility),
             ("constraint_satisfied", summary.constraint_satisfied),
             ("n_requests", summary.n_requests),
             ("violation_count", summary.violation_count)]
    for h, (cpa, cv) in sorted((targets or {}).items()):
        pairs.append((f"promise.{h}.cpa", float(cpa)))
        pairs.append((f"promise.{h}.cv", float(cv)))
    return pairs


def audit_summary_pairs(report):
    pairs = [("mode", report.mode), ("truth", report.truth), ("grid_points", len(report.grid)),
             ("argmax", report.argmax), ("gap", report.gap), ("ic", report.ic),
             ("ir", report.ir), ("truth_in_top3", report.truth_in_top(3))]
    for d in report.draws:
        tag = "closed_form" if d.seed is None else f"seed.{d.seed}"
        pairs += [(f"{tag}.argmax", d.argmax), (f"{tag}.gap", d.gap),
                  (f"{tag}.tolerance", d.tolerance), (f"{tag}.truth_rank", d.truth_rank),
                  (f"{tag}.ic", d.ic), (f"{tag}.ir", d.ir)]
    for note in report.notes:
        pairs.append(("note", note))
    return pairs


def mechanism_to_text(mech: AggregatedMechanism) -> str:
    data = {"format": MECHANISM_FORMAT, **mech.to_dict()}
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def mechanism_from_text(text: str) -> AggregatedMechanism:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"mechanism file is not valid JSON: {exc}", "mechanism.file") from exc
    if data.get("format") != MECHANISM_FORMAT:
        raise ConfigError(f"unsupported mechanism format {data.get('format')!r}", "mechanism.file")
    return mechanism_from_dict(data)


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
