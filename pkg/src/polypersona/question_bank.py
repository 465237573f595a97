"""Hierarchical survey question bank: loading, validation, and sampling.

A bank is a two-level map ``domain -> question type -> [questions]`` backed
by a JSON file (see :func:`load_question_bank` for the format). Banks are
immutable after construction and safe for concurrent readers; sampling takes
an explicit seed so parallel callers own independent generator states.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import (
    DuplicateIdError,
    EmptyInputError,
    EmptyPoolError,
    ParseError,
    SchemaError,
)
from .sampling import rng_from, stochastic_remainder

DOMAINS: tuple[str, ...] = (
    "demographics",
    "healthcare",
    "education",
    "work_experience",
    "technology",
    "consumer_preferences",
    "finance",
    "social_issues",
    "environment",
    "lifestyle",
)

#: Canonical question-type order; also the tie-break order for apportionment.
QUESTION_TYPES: tuple[str, ...] = ("open", "likert", "yesno", "agreement")


@dataclass(frozen=True)
class SurveyQuestion:
    """A single survey item, tagged with its domain and question type."""

    id: str
    domain: str
    qtype: str
    text: str
    scale: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise SchemaError("question id must be nonempty")
        if self.domain not in DOMAINS:
            raise SchemaError(f"question {self.id!r}: unknown domain {self.domain!r}")
        if self.qtype not in QUESTION_TYPES:
            raise SchemaError(f"question {self.id!r}: unknown question type {self.qtype!r}")
        if not self.text or not self.text.strip():
            raise SchemaError(f"question {self.id!r}: text must be nonempty")
        if self.qtype == "likert":
            if self.scale is None or len(self.scale) < 2:
                raise SchemaError(
                    f"question {self.id!r}: likert items need a scale with >= 2 anchors"
                )
        elif self.scale is not None:
            raise SchemaError(
                f"question {self.id!r}: only likert items may carry a scale"
            )
        if self.scale is not None:
            object.__setattr__(self, "scale", tuple(self.scale))


@dataclass(frozen=True)
class TypeRatios:
    """Target fraction of each question type in a sample."""

    open: float = 0.427
    likert: float = 0.317
    yesno: float = 0.183
    agreement: float = 0.073

    def __post_init__(self) -> None:
        values = self.as_tuple()
        if any(v < 0 for v in values):
            raise SchemaError("type ratios must be nonnegative")
        if abs(sum(values) - 1.0) > 1e-9:
            raise SchemaError(f"type ratios must sum to 1.0, got {sum(values)!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.open, self.likert, self.yesno, self.agreement)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(QUESTION_TYPES, self.as_tuple()))


#: Observed corpus mix: open 42.7%, likert 31.7%, yes/no 18.3%, agreement 7.3%.
DEFAULT_TYPE_RATIOS = TypeRatios()


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate_bank`."""

    kind: str
    subject: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}[{self.subject}]: {self.detail}"


class QuestionBank:
    """Immutable domain -> qtype -> questions map with a provenance note."""

    def __init__(
        self,
        by_domain: Mapping[str, Mapping[str, Sequence[SurveyQuestion]]],
        provenance: str = "",
    ):
        table: dict[str, dict[str, tuple[SurveyQuestion, ...]]] = {}
        for domain in by_domain:
            if domain not in DOMAINS:
                raise SchemaError(f"unknown domain {domain!r}")
        for domain in DOMAINS:
            node = by_domain.get(domain, {})
            for qtype in node:
                if qtype not in QUESTION_TYPES:
                    raise SchemaError(f"domain {domain!r}: unknown question type {qtype!r}")
            table[domain] = {
                qtype: tuple(node.get(qtype, ())) for qtype in QUESTION_TYPES
            }
        self._table = table
        self.provenance = provenance

    def questions(self) -> Iterator[SurveyQuestion]:
        """All questions in canonical domain/type order."""
        for domain in DOMAINS:
            for qtype in QUESTION_TYPES:
                yield from self._table[domain][qtype]

    def pool(self, domain: str, qtype: str) -> tuple[SurveyQuestion, ...]:
        if domain not in DOMAINS:
            raise SchemaError(f"unknown domain {domain!r}")
        if qtype not in QUESTION_TYPES:
            raise SchemaError(f"unknown question type {qtype!r}")
        return self._table[domain][qtype]

    def domain_size(self, domain: str) -> int:
        return sum(len(self.pool(domain, q)) for q in QUESTION_TYPES)

    def find(self, question_id: str) -> SurveyQuestion | None:
        return self._index().get(question_id)

    def _index(self) -> dict[str, SurveyQuestion]:
        index = getattr(self, "_id_index", None)
        if index is None:
            index = {}
            for q in self.questions():
                index.setdefault(q.id, q)
            self._id_index = index
        return index

    def __len__(self) -> int:
        return sum(1 for _ in self.questions())

    def __contains__(self, question_id: str) -> bool:
        return question_id in self._index()


def load_question_bank(path: str | Path) -> QuestionBank:
    """Load and validate a bank file.

    Format: UTF-8 JSON whose top level maps each of the ten domains to a node
    ``{"open": [...], "likert": [...], "yesno": [...], "agreement": [...]}``;
    lists may be omitted or empty. Each question object carries ``id`` and
    ``text``, plus ``scale`` (a list of anchors) for likert items. An
    optional top-level ``provenance`` string records where the items came
    from.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read bank file: {exc}", path=str(path)) from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bank file is not valid JSON: {exc.msg}", path=str(path), line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise SchemaError("bank file must be a JSON object mapping domains to nodes")

    provenance = data.get("provenance", "")
    if not isinstance(provenance, str):
        raise SchemaError("provenance must be a string")
    for key in data:
        if key != "provenance" and key not in DOMAINS:
            raise SchemaError(f"unknown domain {key!r}")
    missing = [d for d in DOMAINS if d not in data]
    if missing:
        raise SchemaError(f"missing domain nodes: {', '.join(missing)}")

    by_domain: dict[str, dict[str, list[SurveyQuestion]]] = {}
    seen: dict[str, str] = {}
    for domain in DOMAINS:
        node = data[domain]
        if not isinstance(node, dict):
            raise SchemaError(f"domain {domain!r}: node must be an object")
        for qtype in node:
            if qtype not in QUESTION_TYPES:
                raise SchemaError(f"domain {domain!r}: unknown question type {qtype!r}")
        lists: dict[str, list[SurveyQuestion]] = {}
        for qtype in QUESTION_TYPES:
            items = node.get(qtype, [])
            if not isinstance(items, list):
                raise SchemaError(f"domain {domain!r}/{qtype}: expected a list")
            questions = []
            for obj in items:
                if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                    raise SchemaError(
                        f"domain {domain!r}/{qtype}: each question needs 'id' and 'text'"
                    )
                scale = obj.get("scale")
                question = SurveyQuestion(
                    id=str(obj["id"]),
                    domain=domain,
                    qtype=qtype,
                    text=str(obj["text"]),
                    scale=tuple(scale) if scale is not None else None,
                )
                if question.id in seen:
                    raise DuplicateIdError(
                        f"duplicate question id {question.id!r} "
                        f"(first in {seen[question.id]}, again in {domain}/{qtype})"
                    )
                seen[question.id] = f"{domain}/{qtype}"
                questions.append(question)
            lists[qtype] = questions
        by_domain[domain] = lists
    return QuestionBank(by_domain, provenance=provenance)


def validate_bank(bank: QuestionBank) -> list[Violation]:
    """Check bank invariants; returns one descriptor per violation.

    Total function: never raises on a constructed bank. Catches duplicate
    ids and questions filed under a domain or type that contradicts their
    own tags (possible when a bank is assembled programmatically).
    """
    violations: list[Violation] = []
    seen: dict[str, str] = {}
    for domain in DOMAINS:
        for qtype in QUESTION_TYPES:
            for q in bank.pool(domain, qtype):
                where = f"{domain}/{qtype}"
                if q.id in seen:
                    violations.append(
                        Violation("DuplicateId", q.id, f"also present in {seen[q.id]}")
                    )
                else:
                    seen[q.id] = where
                if q.domain != domain:
                    violations.append(
                        Violation("DomainMismatch", q.id, f"tagged {q.domain!r} but filed under {domain!r}")
                    )
                if q.qtype != qtype:
                    violations.append(
                        Violation("TypeMismatch", q.id, f"tagged {q.qtype!r} but filed under {qtype!r}")
                    )
    return violations


def sample_questions(
    bank: QuestionBank,
    domain: str,
    count: int,
    ratios: TypeRatios = DEFAULT_TYPE_RATIOS,
    seed: int = 0,
) -> list[SurveyQuestion]:
    """Draw ``count`` questions from one domain with a type-balanced mix.

    The per-type allocation floors the exact quotas and assigns leftover
    seats randomly in proportion to the fractional remainders (seeded), so
    single-question draws follow the ratios exactly in the long run while
    every allocation stays within one question of the quota. Within a type,
    draws are without replacement until the pool is exhausted, then with
    replacement. Identical inputs and seed produce the identical sequence.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return []
    if domain not in DOMAINS:
        raise SchemaError(f"unknown domain {domain!r}")

    rng = rng_from(seed, "sample_questions", domain)
    alloc = stochastic_remainder(count, ratios.as_tuple(), rng)
    out: list[SurveyQuestion] = []
    for qtype, want in zip(QUESTION_TYPES, alloc):
        if want == 0:
            continue
        pool = bank.pool(domain, qtype)
        if not pool:
            raise EmptyPoolError(
                f"domain {domain!r} has no {qtype!r} questions but {want} were allocated"
            )
        distinct = rng.sample(pool, min(want, len(pool)))
        out.extend(distinct)
        for _ in range(want - len(distinct)):
            out.append(rng.choice(pool))
    return out


def type_distribution(questions: Sequence[SurveyQuestion]) -> TypeRatios:
    """Empirical question-type fractions of a nonempty question list."""
    if not questions:
        raise EmptyInputError("cannot compute a type distribution of no questions")
    counts = Counter(q.qtype for q in questions)
    n = len(questions)
    return TypeRatios(**{qtype: counts.get(qtype, 0) / n for qtype in QUESTION_TYPES})


def default_bank_path() -> Path:
    """Path of the bundled 82-question bank."""
    return Path(__file__).parent / "data" / "default_bank.json"


def load_default_bank() -> QuestionBank:
    return load_question_bank(default_bank_path())
