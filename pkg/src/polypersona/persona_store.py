"""Persona cards: ingestion, keyword categorization, sampling, reuse stats.

Stores are immutable after ingestion and safe for concurrent readers.
Categorization is a fixed first-match-wins keyword rule table (documented
below) rather than a learned clusterer, so the mapping from description to
category is total, deterministic, and easy to audit.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    EmptyFileError,
    InsufficientPersonasError,
    ParseError,
)
from .sampling import largest_remainder, rng_from

#: Rule table for categorization, applied in order; first match wins.
#: Keywords match on word boundaries against the lowercased description.
CATEGORY_RULES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("educator", ("teacher", "professor", "educator", "lecturer", "tutor",
                  "instructor", "principal", "headmaster")),
    ("student", ("student", "undergraduate", "postgraduate", "pupil",
                 "apprentice", "phd candidate", "trainee")),
    ("healthcare_worker", ("nurse", "doctor", "physician", "surgeon", "dentist",
                           "pharmacist", "paramedic", "therapist", "midwife",
                           "veterinarian", "caregiver", "medical")),
    ("technical_specialist", ("engineer", "developer", "programmer", "software",
                              "technician", "data scientist", "sysadmin",
                              "it specialist", "web designer")),
    ("creative", ("artist", "musician", "writer", "author", "designer",
                  "photographer", "actor", "filmmaker", "poet", "illustrator",
                  "sculptor")),
    ("service_worker", ("waiter", "waitress", "barista", "cashier", "bartender",
                        "chef", "cook", "server", "cleaner", "janitor",
                        "hairdresser", "retail worker", "driver")),
    ("professional", ("lawyer", "attorney", "accountant", "manager", "executive",
                      "consultant", "entrepreneur", "banker", "analyst",
                      "administrator", "director", "marketer", "business owner",
                      "realtor", "economist")),
)

FALLBACK_CATEGORY = "other"

CATEGORIES: tuple[str, ...] = tuple(name for name, _ in CATEGORY_RULES) + (FALLBACK_CATEGORY,)

_RULE_PATTERNS = [
    (name, re.compile(r"\b(?:" + "|".join(re.escape(k) for k in kws) + r")\b"))
    for name, kws in CATEGORY_RULES
]

_AGE_PATTERN = re.compile(r"\b(\d{1,3})[-\s]year[-\s]old\b|\baged\s+(\d{1,3})\b")


@dataclass(frozen=True)
class PersonaCard:
    """A respondent profile used to condition generation."""

    id: str
    description: str
    category: str = FALLBACK_CATEGORY
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.description or not self.description.strip():
            raise ValueError("persona description must be nonempty")


@dataclass(frozen=True)
class SkippedLine:
    """One rejected input line and the reason it was skipped."""

    line: int
    reason: str


@dataclass(frozen=True)
class ReuseReport:
    """How many distinct domains each persona was assigned to."""

    domain_counts: Mapping[str, int]
    fraction_single_domain: float
    fraction_multi_domain: float
    empty: bool = False


class PersonaStore:
    """Immutable collection of persona cards with id lookup."""

    def __init__(self, cards: Sequence[PersonaCard], skipped: Sequence[SkippedLine] = ()):
        self._cards = tuple(cards)
        self.skipped = tuple(skipped)
        self._by_id = {c.id: c for c in self._cards}
        if len(self._by_id) != len(self._cards):
            raise ValueError("persona ids must be unique within a store")

    @property
    def cards(self) -> tuple[PersonaCard, ...]:
        return self._cards

    def get(self, persona_id: str) -> PersonaCard | None:
        return self._by_id.get(persona_id)

    def __len__(self) -> int:
        return len(self._cards)

    def __iter__(self) -> Iterator[PersonaCard]:
        return iter(self._cards)

    def __contains__(self, persona_id: str) -> bool:
        return persona_id in self._by_id


def content_id(description: str) -> str:
    """Stable id for id-less persona sources, derived from the text itself."""
    digest = hashlib.sha256(description.strip().encode("utf-8")).hexdigest()
    return "p-" + digest[:12]


def categorize_text(description: str) -> str:
    lowered = description.lower()
    for name, pattern in _RULE_PATTERNS:
        if pattern.search(lowered):
            return name
    return FALLBACK_CATEGORY


def categorize(persona: PersonaCard) -> str:
    """Category tag for a persona per the fixed keyword rule table."""
    return categorize_text(persona.description)


def _extract_attributes(description: str) -> dict[str, str]:
    attrs: dict[str, str] = {}
    m = _AGE_PATTERN.search(description.lower())
    if m:
        attrs["age"] = m.group(1) or m.group(2)
    return attrs


def ingest_personas(path: str | Path, fmt: str = "auto") -> PersonaStore:
    """Read persona cards from a line-delimited file.

    Two formats are accepted: JSON lines ``{"id"?, "description",
    "attributes"?}`` and plain text with one description per line. ``fmt``
    may be ``jsonl``, ``text``, or ``auto`` (sniffed from the first
    non-blank line). Missing ids are derived from a content hash so repeated
    ingestion of the same file yields identical ids. Lines with a blank
    description or a duplicate id are skipped and reported in the store's
    ``skipped`` list rather than aborting the ingest.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read persona file: {exc}", path=str(path)) from exc

    lines = raw.splitlines()
    nonblank = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    if not nonblank:
        raise EmptyFileError("persona file contains no records", path=str(path))

    if fmt == "auto":
        fmt = "jsonl" if nonblank[0][1].lstrip().startswith("{") else "text"
    if fmt not in ("jsonl", "text"):
        raise ValueError(f"unknown persona format {fmt!r}")

    cards: list[PersonaCard] = []
    skipped: list[SkippedLine] = []
    seen: set[str] = set()
    for lineno, line in nonblank:
        if fmt == "jsonl":
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"persona line is not valid JSON: {exc.msg}",
                    path=str(path),
                    line=lineno,
                ) from exc
            if not isinstance(obj, dict):
                raise ParseError(
                    "persona line must be a JSON object", path=str(path), line=lineno
                )
            description = str(obj.get("description", "") or "")
            explicit_id = obj.get("id")
            raw_attrs = obj.get("attributes") or {}
            if not isinstance(raw_attrs, dict):
                skipped.append(SkippedLine(lineno, "attributes must be an object"))
                continue
            attributes = {str(k): str(v) for k, v in raw_attrs.items()}
        else:
            description = line.strip()
            explicit_id = None
            attributes = {}

        if not description.strip():
            skipped.append(SkippedLine(lineno, "blank description"))
            continue
        pid = str(explicit_id) if explicit_id else content_id(description)
        if pid in seen:
            skipped.append(SkippedLine(lineno, f"duplicate id {pid!r}"))
            continue
        seen.add(pid)
        merged_attrs = {**_extract_attributes(description), **attributes}
        cards.append(
            PersonaCard(
                id=pid,
                description=description,
                category=categorize_text(description),
                attributes=merged_attrs,
            )
        )
    if not cards:
        raise EmptyFileError("persona file yielded no valid records", path=str(path))
    return PersonaStore(cards, skipped)


def reuse_stats(assignments: Iterable[tuple[str, str]]) -> ReuseReport:
    """Distinct-domain histogram per persona plus single/multi-domain shares."""
    domains_by_persona: dict[str, set[str]] = {}
    for persona_id, domain in assignments:
        domains_by_persona.setdefault(persona_id, set()).add(domain)
    if not domains_by_persona:
        return ReuseReport({}, 0.0, 0.0, empty=True)
    counts = {pid: len(ds) for pid, ds in sorted(domains_by_persona.items())}
    single = sum(1 for n in counts.values() if n == 1)
    total = len(counts)
    return ReuseReport(
        domain_counts=counts,
        fraction_single_domain=single / total,
        fraction_multi_domain=(total - single) / total,
    )


def sample_personas(
    store: PersonaStore,
    n: int,
    strategy: str = "uniform",
    seed: int = 0,
) -> list[PersonaCard]:
    """Draw ``n`` distinct personas, uniformly or balanced across categories.

    ``category_balanced`` apportions ``n`` over the observed categories by
    largest remainder of their frequencies (ties to the larger category,
    then category name), then samples within each category without
    replacement.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > len(store):
        raise InsufficientPersonasError(
            f"asked for {n} personas but the store holds {len(store)}"
        )
    rng = rng_from(seed, "sample_personas", strategy)
    if strategy == "uniform":
        return rng.sample(store.cards, n)
    if strategy == "category_balanced":
        groups: dict[str, list[PersonaCard]] = {}
        for card in store.cards:
            groups.setdefault(card.category, []).append(card)
        ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
        sizes = [len(members) for _, members in ordered]
        alloc = largest_remainder(n, sizes)
        out: list[PersonaCard] = []
        for (_, members), take in zip(ordered, alloc):
            out.extend(rng.sample(members, take))
        return out
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def category_distribution(store: PersonaStore) -> dict[str, float]:
    """Observed category shares, reported for analytics only."""
    counts = Counter(card.category for card in store.cards)
    total = len(store)
    return {cat: counts.get(cat, 0) / total for cat in CATEGORIES if total}


def default_personas_path() -> Path:
    """Path of the bundled starter persona file."""
    return Path(__file__).parent / "data" / "personas.jsonl"
