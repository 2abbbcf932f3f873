from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from purebox.errors import ProtocolMismatch
from purebox.transfer.evaluate import TransferReport

COLUMNS = ("ensemble", "n_sms", "n_classes", "mean_drop")


@dataclass(frozen=True)
class GridKey:
    ensemble: str
    n_sms: int
    n_classes: int


@dataclass
class GridEntry:
    key: GridKey
    report: TransferReport
    variant: str = ""


@dataclass
class GridRow:
    key: GridKey
    mean_drop: float
    n_reports: int
    per_variant: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"ensemble": self.key.ensemble, "n_sms": self.key.n_sms, "n_classes": self.key.n_classes,
             "mean_drop": self.mean_drop, "n_reports": self.n_reports}
        d.update({f"drop_{v}": val for v, val in sorted(self.per_variant.items())})
        return d


@dataclass
class GridTable:
    rows: list[GridRow]
    eval_digest: str = ""

    def __len__(self):
        return len(self.rows)

    def sorted(self, by: str = "key", reverse: bool = False) -> "GridTable":
        if by == "drop":
            rows = sorted(self.rows, key=lambda r: r.mean_drop, reverse=reverse)
        else:
            rows = sorted(self.rows, key=lambda r: (r.key.n_sms, r.key.n_classes, r.key.ensemble), reverse=reverse)
        return GridTable(rows, self.eval_digest)

    def variants(self) -> list[str]:
        return sorted({v for r in self.rows for v in r.per_variant})

    def to_json(self) -> str:
        return json.dumps({"eval_digest": self.eval_digest, "rows": [r.as_dict() for r in self.rows]},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridTable":
        raw = json.loads(text)
        return cls([_row_from_dict(d) for d in raw["rows"]], raw.get("eval_digest", ""))

    def to_csv(self) -> str:
        header = list(COLUMNS) + ["n_reports"] + [f"drop_{v}" for v in self.variants()]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.as_dict().items()})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, eval_digest: str = "") -> "GridTable":
        return cls([_row_from_dict(d) for d in csv.DictReader(io.StringIO(text))], eval_digest)

    def to_text(self) -> str:
        header = ["Ensemble", "#SMs", "#Classes", "Drop (%)"]
        body = [[r.key.ensemble, str(r.key.n_sms), str(r.key.n_classes), f"{r.mean_drop:.2f}"] for r in self.rows]
        widths = [max(len(row[i]) for row in [header] + body) for i in range(4)]

        def line(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

        sep = "|-" + "-|-".join("-" * w for w in widths) + "-|"
        return "\n".join([line(header), sep] + [line(b) for b in body]) + "\n"


def _row_from_dict(d: Mapping) -> GridRow:
    per_variant = {k[len("drop_"):]: float(v) for k, v in d.items() if k.startswith("drop_") and v not in ("", None)}
    return GridRow(GridKey(d["ensemble"], int(d["n_sms"]), int(d["n_classes"])), float(d["mean_drop"]),
                   int(d["n_reports"]), per_variant)


def aggregate_grid(entries: Iterable[GridEntry | tuple]) -> GridTable:
    """Mean accuracy drop per (ensemble, #SMs, #classes), with per-variant means alongside."""
    items = [e if isinstance(e, GridEntry) else GridEntry(*e) for e in entries]
    if not items:
        return GridTable([])
    digests = {e.report.eval_digest for e in items}
    if len(digests) > 1:
        raise ProtocolMismatch(f"reports come from {len(digests)} different evaluation sets")
    groups: dict[GridKey, list[GridEntry]] = defaultdict(list)
    for e in items:
        groups[e.key].append(e)
    rows = []
    for key, group in groups.items():
        by_variant: dict[str, list[float]] = defaultdict(list)
        for e in group:
            if e.variant:
                by_variant[e.variant].append(e.report.accuracy_drop)
        rows.append(GridRow(
            key,
            sum(e.report.accuracy_drop for e in group) / len(group),
            len(group),
            {v: sum(d) / len(d) for v, d in by_variant.items()},
        ))
    return GridTable(rows, digests.pop()).sorted()


def grid_from_rows(rows: Sequence[Mapping]) -> GridTable:
    return GridTable([_row_from_dict(r) for r in rows])
