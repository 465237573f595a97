"""Assemble chat-format instruction records from personas and questions.

One record is a (system, user, assistant) message triplet plus metadata
linking back to the persona and question that produced it. Records render
to model-ready text in two template modes, split into train/val/test with
stratified largest-remainder allocation, and persist as JSONL. Everything
here is a pure function of its inputs and seeds; rebuilding with the same
inputs is byte-identical.
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EmptyDatasetError, EmptyPoolError, IoError, ParseError, SchemaError
from .persona_store import PersonaCard, PersonaStore
from .question_bank import (
    DOMAINS,
    QUESTION_TYPES,
    DEFAULT_TYPE_RATIOS,
    QuestionBank,
    SurveyQuestion,
    TypeRatios,
    sample_questions,
)
from .sampling import largest_remainder, rng_from

ROLES = ("system", "user", "assistant")

#: Fixed role instruction for every record's system turn.
SYSTEM_INSTRUCTION = (
    "You are a survey respondent. Answer entirely in character as the persona "
    "described, staying consistent with that persona's background, opinions, "
    "and way of speaking."
)

_USER_TEMPLATE = (
    "You are answering a survey.\n"
    "Persona: {description}\n"
    "Domain: {domain}\n"
    "Question ({qtype}): {text}"
)

TEMPLATES = ("fallback", "native_passthrough")


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class RecordMeta:
    persona_id: str
    domain: str
    question_id: str
    question_type: str


@dataclass(frozen=True)
class ChatRecord:
    """One instruction-tuning example: three ordered messages plus metadata."""

    id: str
    messages: tuple[Message, Message, Message]
    meta: RecordMeta

    def __post_init__(self) -> None:
        roles = tuple(m.role for m in self.messages)
        if roles != ROLES:
            raise SchemaError(f"record {self.id!r}: message roles must be {ROLES}, got {roles}")
        if not self.messages[0].content or not self.messages[1].content:
            raise SchemaError(f"record {self.id!r}: system and user content must be nonempty")

    @property
    def pending(self) -> bool:
        """True while the assistant turn has not been generated yet."""
        return self.messages[2].content == ""

    @property
    def system(self) -> str:
        return self.messages[0].content

    @property
    def user(self) -> str:
        return self.messages[1].content

    @property
    def assistant(self) -> str:
        return self.messages[2].content

    def with_response(self, text: str) -> "ChatRecord":
        """Copy of this record with the assistant turn filled in."""
        return ChatRecord(
            id=self.id,
            messages=(self.messages[0], self.messages[1], Message("assistant", text)),
            meta=self.meta,
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "meta": {
                "persona_id": self.meta.persona_id,
                "domain": self.meta.domain,
                "question_id": self.meta.question_id,
                "question_type": self.meta.question_type,
            },
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ChatRecord":
        try:
            messages = tuple(
                Message(m["role"], m["content"]) for m in obj["messages"]
            )
            meta = obj["meta"]
            return cls(
                id=obj["id"],
                messages=messages,  # type: ignore[arg-type]
                meta=RecordMeta(
                    persona_id=meta["persona_id"],
                    domain=meta["domain"],
                    question_id=meta["question_id"],
                    question_type=meta["question_type"],
                ),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed record object: {exc}") from exc


@dataclass(frozen=True)
class RenderedPair:
    """Prompt-side text and prompt+target text for one record."""

    input_text: str
    full_text: str

    def __post_init__(self) -> None:
        if not self.input_text or not self.full_text:
            raise SchemaError("rendered texts must be nonempty")
        if not self.full_text.startswith(self.input_text):
            raise SchemaError("input_text must be a prefix of full_text")


@dataclass(frozen=True)
class SplitSpec:
    """Fractions, stratification keys, and seed for a dataset split."""

    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    stratify_keys: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if any(f < 0 for f in self.fractions):
            raise SchemaError("split fractions must be nonnegative")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SchemaError(f"split fractions must sum to 1.0, got {sum(self.fractions)!r}")
        bad = set(self.stratify_keys) - {"domain", "qtype"}
        if bad:
            raise SchemaError(f"unknown stratify keys: {sorted(bad)}")


def record_id(persona_id: str, question_id: str, index: int) -> str:
    material = f"{persona_id}\x1f{question_id}\x1f{index}".encode("utf-8")
    return "rec-" + hashlib.sha256(material).hexdigest()[:16]


def compose_user_message(persona: PersonaCard, question: SurveyQuestion) -> str:
    text = _USER_TEMPLATE.format(
        description=persona.description,
        domain=question.domain,
        qtype=question.qtype,
        text=question.text,
    )
    if question.scale:
        text += "\nScale: " + " | ".join(question.scale)
    return text


def build_record(
    persona: PersonaCard,
    question: SurveyQuestion,
    response: str | None = None,
    index: int = 0,
) -> ChatRecord:
    """Build one chat record; leaves the assistant turn empty when no
    response is supplied (the record then reports ``pending`` until a
    generator fills it)."""
    return ChatRecord(
        id=record_id(persona.id, question.id, index),
        messages=(
            Message("system", SYSTEM_INSTRUCTION),
            Message("user", compose_user_message(persona, question)),
            Message("assistant", response or ""),
        ),
        meta=RecordMeta(
            persona_id=persona.id,
            domain=question.domain,
            question_id=question.id,
            question_type=question.qtype,
        ),
    )


def render_chatml(record: ChatRecord, template: str = "fallback") -> RenderedPair:
    """Render a record to prompt text and prompt+target text.

    ``fallback`` is the exact compact-chat-model format
    ``<|system|>\\n{system}</s>\\n<|user|>\\n{user}</s>\\n<|assistant|>\\n{assistant}</s>``
    and is frozen by golden-file tests. ``native_passthrough`` is a neutral
    role-tagged form for endpoints that apply their own chat template
    server-side. In both modes ``input_text`` excludes the assistant
    content and is a strict prefix of ``full_text``.
    """
    if template == "fallback":
        input_text = (
            f"<|system|>\n{record.system}</s>\n"
            f"<|user|>\n{record.user}</s>\n"
            f"<|assistant|>\n"
        )
        full_text = input_text + f"{record.assistant}</s>"
    elif template == "native_passthrough":
        input_text = (
            f"### system\n{record.system}\n\n"
            f"### user\n{record.user}\n\n"
            f"### assistant\n"
        )
        full_text = input_text + record.assistant
    else:
        raise ValueError(f"unknown template {template!r}; expected one of {TEMPLATES}")
    return RenderedPair(input_text=input_text, full_text=full_text)


def _draw_with_reuse(store: PersonaStore, count: int, rng) -> list[PersonaCard]:
    # Without replacement inside each pass; new pass once the store is
    # exhausted, so heavy plans reuse personas evenly.
    out: list[PersonaCard] = []
    while len(out) < count:
        take = min(count - len(out), len(store))
        out.extend(rng.sample(store.cards, take))
    return out


def _effective_ratios(bank: QuestionBank, domain: str, ratios: TypeRatios) -> TypeRatios:
    # Zero out types the domain has no questions for and renormalize, so a
    # bank with sparse agreement coverage still satisfies the sampler's
    # nonempty-pool precondition for every seed.
    base = ratios.as_tuple()
    weights = [
        r if bank.pool(domain, qtype) else 0.0
        for qtype, r in zip(QUESTION_TYPES, base)
    ]
    total = sum(weights)
    if total <= 0:
        raise EmptyPoolError(
            f"domain {domain!r} has no questions for any type with nonzero ratio"
        )
    normalized = [w / total for w in weights]
    return TypeRatios(**dict(zip(QUESTION_TYPES, normalized)))


def assemble_dataset(
    store: PersonaStore,
    bank: QuestionBank,
    plan: Mapping[str, int],
    ratios: TypeRatios = DEFAULT_TYPE_RATIOS,
    seed: int = 0,
) -> list[ChatRecord]:
    """Build ``plan[domain]`` pending records per domain.

    Questions come from :func:`sample_questions` (with the type ratios
    restricted per domain to the types that domain actually stocks),
    personas from seeded store passes with reuse; the output order and
    every id are a pure function of (store, bank, plan, ratios, seed).
    """
    if len(store) == 0:
        raise EmptyDatasetError("persona store is empty")
    for domain, count in plan.items():
        if domain not in DOMAINS:
            raise SchemaError(f"plan names unknown domain {domain!r}")
        if count < 0:
            raise SchemaError(f"plan count for {domain!r} must be nonnegative")

    records: list[ChatRecord] = []
    index = 0
    for domain in DOMAINS:
        count = plan.get(domain, 0)
        if count == 0:
            continue
        questions = sample_questions(
            bank,
            domain,
            count,
            _effective_ratios(bank, domain, ratios),
            seed=_child(seed, domain, "questions"),
        )
        personas = _draw_with_reuse(store, count, rng_from(seed, domain, "personas"))
        for persona, question in zip(personas, questions):
            records.append(build_record(persona, question, index=index))
            index += 1
    return records


def _child(seed: int, *scope: str) -> int:
    from .sampling import derive_seed

    return derive_seed(seed, *scope)


def _stratum_key(record: ChatRecord, keys: Sequence[str]) -> tuple[str, ...]:
    parts = []
    for key in keys:
        parts.append(record.meta.domain if key == "domain" else record.meta.question_type)
    return tuple(parts)


def split_dataset(
    records: Sequence[ChatRecord],
    spec: SplitSpec,
) -> tuple[list[ChatRecord], list[ChatRecord], list[ChatRecord]]:
    """Partition records into (train, val, test).

    Within every stratum the three sizes come from largest-remainder
    apportionment of the fractions; remainder ties are resolved toward the
    split that is furthest below its exact running target (then toward
    train), which keeps the overall sizes within one record of the
    unstratified allocation. Membership is decided by a seeded shuffle per
    stratum; output preserves the input's relative order.
    """
    if not records:
        raise EmptyDatasetError("cannot split an empty dataset")

    strata: dict[tuple[str, ...], list[int]] = {}
    for pos, record in enumerate(records):
        strata.setdefault(_stratum_key(record, spec.stratify_keys), []).append(pos)

    assigned: dict[int, int] = {}
    totals = [0.0, 0.0, 0.0]
    allocated = [0, 0, 0]
    for key in sorted(strata):
        positions = strata[key]
        for i, f in enumerate(spec.fractions):
            totals[i] += len(positions) * f
        deficits = [totals[i] - allocated[i] for i in range(3)]
        alloc = largest_remainder(len(positions), spec.fractions, tie_break=deficits)
        for i in range(3):
            allocated[i] += alloc[i]
        shuffled = list(positions)
        rng_from(spec.seed, "split", *key).shuffle(shuffled)
        cursor = 0
        for split_idx, take in enumerate(alloc):
            for pos in shuffled[cursor : cursor + take]:
                assigned[pos] = split_idx
            cursor += take

    out: tuple[list[ChatRecord], list[ChatRecord], list[ChatRecord]] = ([], [], [])
    for pos, record in enumerate(records):
        out[assigned[pos]].append(record)
    return out


def write_jsonl(items: Iterable, path: str | Path) -> int:
    """Write records, rendered pairs, or plain dicts as one JSON object per
    line (UTF-8). Returns the number of lines written."""
    path = Path(path)
    count = 0
    try:
        with path.open("w", encoding="utf-8") as fh:
            for item in items:
                if isinstance(item, ChatRecord):
                    obj = item.to_dict()
                elif isinstance(item, RenderedPair):
                    obj = {"input_text": item.input_text, "full_text": item.full_text}
                elif isinstance(item, Mapping):
                    obj = dict(item)
                else:
                    raise TypeError(f"cannot serialize {type(item).__name__} to JSONL")
                fh.write(json.dumps(obj, ensure_ascii=False))
                fh.write("\n")
                count += 1
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return count


def read_jsonl(path: str | Path, kind: str = "records") -> list:
    """Read a JSONL file written by :func:`write_jsonl`.

    ``kind`` selects the deserialized shape: ``records`` (ChatRecord),
    ``pairs`` (RenderedPair), or ``dicts`` (raw objects). Malformed lines
    raise :class:`ParseError` naming the line number.
    """
    if kind not in ("records", "pairs", "dicts"):
        raise ValueError(f"unknown kind {kind!r}")
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    items = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(
                f"invalid JSON: {exc.msg}", path=str(path), line=lineno
            ) from exc
        if kind == "records":
            try:
                items.append(ChatRecord.from_dict(obj))
            except SchemaError as exc:
                raise ParseError(str(exc), path=str(path), line=lineno) from exc
        elif kind == "pairs":
            try:
                items.append(RenderedPair(obj["input_text"], obj["full_text"]))
            except (KeyError, TypeError, SchemaError) as exc:
                raise ParseError(f"malformed pair: {exc}", path=str(path), line=lineno) from exc
        else:
            items.append(obj)
    return items
