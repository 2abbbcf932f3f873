"""Turn run records into grid tables (csv, json or a text table)."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from typing import Iterable

from purebox.errors import EmptyRecords
from purebox.orchestrate.pipeline import RunRecord
from purebox.transfer import GridEntry, GridKey, GridTable, TransferReport, aggregate_grid

FORMATS = ("csv", "json", "text_table")


def grids(records: Iterable[RunRecord]) -> dict[tuple[str, str], GridTable]:
    """One table per (target, phase); variant columns are ``<generator>/<noise>``."""
    groups: dict[tuple[str, str], list[GridEntry]] = defaultdict(list)
    for rec in records:
        for e in rec.entries:
            groups[(e["target"], e["phase"])].append(GridEntry(
                GridKey(e["ensemble"], e["n_sms"], e["n_classes"]),
                TransferReport.from_dict(e["report"]),
                f"{e['variant']}/{e['noise']}"))
    return {k: aggregate_grid(v) for k, v in sorted(groups.items())}


def emit_report(records: Iterable[RunRecord], format: str = "text_table") -> str:
    records = list(records)
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    tables = grids(records)
    if not tables:
        raise EmptyRecords("no transfer results in the given records")
    if format == "json":
        out = {"tables": [{"target": t, "phase": p, **json.loads(tab.to_json())} for (t, p), tab in tables.items()],
               "query": {r.run_id: r.query for r in records if r.query}}
        return json.dumps(out, indent=1, sort_keys=True)
    if format == "csv":
        variants = sorted({v for tab in tables.values() for v in tab.variants()})
        header = ["target", "phase", "ensemble", "n_sms", "n_classes", "mean_drop", "n_reports"] + \
                 [f"drop_{v}" for v in variants]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for (t, p), tab in tables.items():
            for row in tab.rows:
                w.writerow({"target": t, "phase": p,
                            **{k: (repr(v) if isinstance(v, float) else v) for k, v in row.as_dict().items()}})
        return buf.getvalue()
    parts = [f"target={t} phase={p}\n{tab.to_text()}" for (t, p), tab in tables.items()]
    return "\n".join(parts)
