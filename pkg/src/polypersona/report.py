"""Aggregate per-example metric vectors into per-model and per-domain tables.

Pure functions over lists; rendering is deterministic byte-for-byte for
identical rows so reports can be frozen as golden files.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import EmptyInputError, MissingDomainError
from .eval_stack import METRIC_FIELDS, MetricVector

#: Report column order and display labels.
COLUMN_LABELS: tuple[tuple[str, str], ...] = (
    ("bleu", "BLEU"),
    ("rouge1_f", "R1"),
    ("rouge2_f", "R2"),
    ("rougeL_f", "RL"),
    ("semantic_f1", "BERT-F1"),
    ("quality", "Qual."),
    ("length_sim", "Len."),
    ("sentence_count_sim", "Sent."),
    ("sentiment_sim", "SentSim"),
)

MISSING_CELL = "—"


@dataclass(frozen=True)
class AggregateRow:
    """Mean of every metric field over one group of examples."""

    key: tuple[str, ...]
    count: int
    means: Mapping[str, float]

    def label(self) -> str:
        return " / ".join(self.key)


GroupedVector = tuple[tuple[str, ...] | str, MetricVector]


def _as_key(key) -> tuple[str, ...]:
    if isinstance(key, str):
        return (key,)
    return tuple(key)


def aggregate(vectors: Iterable[GroupedVector]) -> list[AggregateRow]:
    """Arithmetic mean per metric field per group, sorted by group key."""
    sums: dict[tuple[str, ...], dict[str, float]] = {}
    counts: dict[tuple[str, ...], int] = {}
    for key, vector in vectors:
        k = _as_key(key)
        bucket = sums.setdefault(k, {name: 0.0 for name in METRIC_FIELDS})
        for name in METRIC_FIELDS:
            bucket[name] += getattr(vector, name)
        counts[k] = counts.get(k, 0) + 1
    if not sums:
        raise EmptyInputError("no metric vectors to aggregate")
    rows = []
    for key in sorted(sums):
        n = counts[key]
        rows.append(
            AggregateRow(
                key=key,
                count=n,
                means={name: value / n for name, value in sums[key].items()},
            )
        )
    return rows


def macro_average(rows: Sequence[AggregateRow]) -> list[AggregateRow]:
    """Collapse (model, domain) rows to per-model rows by unweighted mean
    over domains (macro averaging; :func:`aggregate` on raw vectors is the
    micro average)."""
    if not rows:
        raise EmptyInputError("no rows to macro-average")
    grouped: dict[tuple[str, ...], list[AggregateRow]] = {}
    for row in rows:
        if len(row.key) < 2:
            raise ValueError("macro averaging needs (model, domain) keys")
        grouped.setdefault(row.key[:-1], []).append(row)
    out = []
    for key in sorted(grouped):
        members = grouped[key]
        means = {
            name: sum(r.means[name] for r in members) / len(members)
            for name in METRIC_FIELDS
        }
        out.append(AggregateRow(key=key, count=sum(r.count for r in members), means=means))
    return out


@dataclass(frozen=True)
class DomainWinner:
    """Best model for one domain under the chosen criterion."""

    domain: str
    model: str
    bleu: float
    rouge1_f: float
    quality: float


def best_per_domain(
    rows: Sequence[AggregateRow],
    criterion: str = "quality",
    domains: Sequence[str] | None = None,
) -> list[DomainWinner]:
    """Per-domain argmax over (model, domain) rows.

    Ties break toward the lexicographically smaller model name. When
    ``domains`` is given, each one must have at least one row.
    """
    if criterion not in METRIC_FIELDS:
        raise ValueError(f"unknown criterion {criterion!r}")
    by_domain: dict[str, list[AggregateRow]] = {}
    for row in rows:
        if len(row.key) != 2:
            raise ValueError("best_per_domain expects (model, domain) keyed rows")
        by_domain.setdefault(row.key[1], []).append(row)

    wanted = list(domains) if domains is not None else sorted(by_domain)
    winners = []
    for domain in wanted:
        contenders = by_domain.get(domain)
        if not contenders:
            raise MissingDomainError(f"no rows for domain {domain!r}")
        best = min(contenders, key=lambda r: (-r.means[criterion], r.key[0]))
        winners.append(
            DomainWinner(
                domain=domain,
                model=best.key[0],
                bleu=best.means["bleu"],
                rouge1_f=best.means["rouge1_f"],
                quality=best.means["quality"],
            )
        )
    return winners


def _fmt(value: float | None, fmt: str) -> str:
    if value is None:
        return MISSING_CELL
    return format(value, ".3f") if fmt == "markdown" else repr(float(value))


def _emit(headers: Sequence[str], table: Sequence[Sequence[str]], fmt: str) -> str:
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(headers) + " |",
            "| " + " | ".join("---" for _ in headers) + " |",
        ]
        lines.extend("| " + " | ".join(row) + " |" for row in table)
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(table)
        return buffer.getvalue()
    raise ValueError(f"unknown format {fmt!r}; expected 'markdown' or 'csv'")


def render(rows: Sequence[AggregateRow], fmt: str = "markdown") -> str:
    """Render aggregate rows with the nine-column metric header.

    Markdown cells use fixed 3-decimal formatting; CSV carries full float
    precision so re-parsing reproduces the means exactly.
    """
    key_width = max((len(r.key) for r in rows), default=1)
    key_headers = ["group"] if key_width == 1 else ["model", "domain"][:key_width]
    headers = [*key_headers, "n", *(label for _, label in COLUMN_LABELS)]
    table = []
    for row in rows:
        cells = [*row.key, *[""] * (key_width - len(row.key)), str(row.count)]
        cells.extend(_fmt(row.means.get(name), fmt) for name, _ in COLUMN_LABELS)
        table.append(cells)
    return _emit(headers, table, fmt)


def render_winners(winners: Sequence[DomainWinner], fmt: str = "markdown") -> str:
    """Render the per-domain winners table (domain, model, BLEU, R1, Qual.)."""
    headers = ["Domain", "Top Model", "BLEU", "ROUGE-1", "Survey Quality"]
    table = [
        [
            w.domain,
            w.model,
            _fmt(w.bleu, fmt),
            _fmt(w.rouge1_f, fmt),
            _fmt(w.quality, fmt),
        ]
        for w in winners
    ]
    return _emit(headers, table, fmt)
