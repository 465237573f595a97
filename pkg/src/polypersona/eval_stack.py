"""Per-example evaluation metrics for generated survey responses.

The stack mirrors a nine-column report: BLEU, ROUGE-1/2/L F1, semantic F1
(greedy token-embedding matching), survey quality, length similarity,
sentence-count similarity, and sentiment similarity, plus distinct-1/2 as
auxiliary diversity numbers. Every function here is pure and safe for
unrestricted parallel evaluation.

Formula notes live next to each function. The survey-structure metrics
(quality, length, sentence count, sentiment similarity) are this toolkit's
own definitions: simple, bounded in [0, 1], and configurable, chosen to
fill report columns that have no standard formula.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dataset_builder import ChatRecord
from .errors import EmptyInputError, ParseError, ProviderError
from .question_bank import QUESTION_TYPES, SurveyQuestion

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

#: Metric fields of a :class:`MetricVector`, in report column order.
METRIC_FIELDS = (
    "bleu",
    "rouge1_f",
    "rouge2_f",
    "rougeL_f",
    "semantic_f1",
    "quality",
    "length_sim",
    "sentence_count_sim",
    "sentiment_sim",
    "distinct1",
    "distinct2",
)


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation is dropped at boundaries."""
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    if n < 1 or len(tokens) < n:
        return []
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _clipped_matches(cand: Sequence[tuple], ref: Sequence[tuple]) -> int:
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    return sum(min(c, ref_counts[g]) for g, c in cand_counts.items())


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU: geometric mean of clipped n-gram precisions times a
    brevity penalty.

    Orders the candidate is too short to produce are skipped (so identical
    short texts still score 1.0); an order with zero matches falls back to
    the smoothed precision ``1 / (2 * candidate n-gram count)``. Empty
    candidate or reference scores 0.
    """
    c = tokenize(candidate)
    r = tokenize(reference)
    if not c or not r:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, max_n + 1):
        cand_ngrams = ngrams(c, n)
        if not cand_ngrams:
            break
        matches = _clipped_matches(cand_ngrams, ngrams(r, n))
        p = matches / len(cand_ngrams) if matches else 1.0 / (2.0 * len(cand_ngrams))
        log_sum += math.log(p)
        orders += 1
    if orders == 0:
        return 0.0
    bp = 1.0 if len(c) >= len(r) else math.exp(1.0 - len(r) / len(c))
    return bp * math.exp(log_sum / orders)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _prf(matches: float, cand_total: int, ref_total: int) -> RougeScore:
    p = matches / cand_total if cand_total else 0.0
    r = matches / ref_total if ref_total else 0.0
    f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return RougeScore(p, r, f)


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1.

    When neither side is long enough to produce a single n-gram, the score
    degenerates to exact token-sequence agreement ((1,1,1) for identical
    sequences, else (0,0,0)), which keeps the identity law ``m(x,x)=1``
    intact for nonempty one-token texts.
    """
    c_tokens = tokenize(candidate)
    r_tokens = tokenize(reference)
    cand_ngrams = ngrams(c_tokens, n)
    ref_ngrams = ngrams(r_tokens, n)
    if not cand_ngrams and not ref_ngrams:
        if c_tokens and c_tokens == r_tokens:
            return RougeScore(1.0, 1.0, 1.0)
        return RougeScore(0.0, 0.0, 0.0)
    matches = _clipped_matches(cand_ngrams, ref_ngrams)
    return _prf(matches, len(cand_ngrams), len(ref_ngrams))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length, O(len(a)*len(b)) two-row DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            curr[j] = prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """LCS-based precision/recall/F1 over token sequences."""
    c = tokenize(candidate)
    r = tokenize(reference)
    matches = lcs_length(c, r)
    return _prf(matches, len(c), len(r))


def distinct_n(texts: Sequence[str] | str, n: int) -> float:
    """Distinct / total n-gram ratio across a corpus; 0 when no n-grams."""
    if isinstance(texts, str):
        texts = [texts]
    seen: set[tuple[str, ...]] = set()
    total = 0
    for text in texts:
        grams = ngrams(tokenize(text), n)
        total += len(grams)
        seen.update(grams)
    return len(seen) / total if total else 0.0


class EmbeddingProvider(Protocol):
    """Maps a token sequence to one fixed-dimension vector per token.

    Implementations must be deterministic for identical input and return
    an array of shape ``(len(tokens), dim)``.
    """

    dim: int

    def embed(self, tokens: Sequence[str]) -> np.ndarray: ...


class HashedTrigramProvider:
    """Deterministic offline embedding provider.

    Each token's vector is the normalized sum of fixed pseudo-random
    direction vectors derived (via SHAKE-256) from the character trigrams
    of ``^token$``. No model weights, no network, identical on every
    platform; similar surface forms get similar vectors. Real
    contextual-embedding providers plug in through the same interface.
    """

    def __init__(self, dim: int = 64):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def _trigram_vector(self, trigram: str) -> np.ndarray:
        raw = hashlib.shake_256(trigram.encode("utf-8")).digest(self.dim * 4)
        ints = np.frombuffer(raw, dtype="<u4").astype(np.float64)
        return ints / 2**31 - 1.0  # uniform in [-1, 1)

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            padded = f"^{token}$"
            acc = np.zeros(self.dim)
            for i in range(len(padded) - 2):
                acc += self._trigram_vector(padded[i : i + 3])
            norm = float(np.linalg.norm(acc))
            vec = acc / norm if norm > 0 else acc
            self._cache[token] = vec
        return vec

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self._token_vector(t) for t in tokens])


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return matrix / safe  # zero rows stay zero, so cos with them is 0


def semantic_f1(
    candidate: str,
    reference: str,
    provider: EmbeddingProvider,
    idf: Mapping[str, float] | None = None,
) -> tuple[float, float, float]:
    """Greedy token-matching similarity (precision, recall, F1).

    Recall averages, over reference tokens, the best cosine against any
    candidate token; precision is symmetric from the candidate side; both
    are optionally idf-weighted on their own side and clamped to [0, 1]
    before the harmonic mean. Either side empty gives (0, 0, 0).
    """
    c_tokens = tokenize(candidate)
    r_tokens = tokenize(reference)
    if not c_tokens or not r_tokens:
        return (0.0, 0.0, 0.0)
    try:
        c_emb = _normalize_rows(np.asarray(provider.embed(c_tokens), dtype=float))
        r_emb = _normalize_rows(np.asarray(provider.embed(r_tokens), dtype=float))
    except Exception as exc:  # provider contract violation
        raise ProviderError(f"embedding provider failed: {exc}") from exc
    if c_emb.shape[0] != len(c_tokens) or r_emb.shape[0] != len(r_tokens):
        raise ProviderError("provider returned a vector count != token count")

    sims = c_emb @ r_emb.T
    cand_best = sims.max(axis=1)
    ref_best = sims.max(axis=0)

    def _weighted(values: np.ndarray, tokens: Sequence[str]) -> float:
        if idf is None:
            return float(values.mean())
        weights = np.array([idf.get(t, 1.0) for t in tokens], dtype=float)
        denom = float(weights.sum())
        if denom <= 0:
            return float(values.mean())
        return float((values * weights).sum() / denom)

    p = min(1.0, max(0.0, _weighted(cand_best, c_tokens)))
    r = min(1.0, max(0.0, _weighted(ref_best, r_tokens)))
    f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return (p, r, f)


def length_similarity(candidate: str, reference: str) -> float:
    """min/max ratio of character counts; 1.0 when both are empty."""
    lc, lr = len(candidate), len(reference)
    if lc == 0 and lr == 0:
        return 1.0
    if lc == 0 or lr == 0:
        return 0.0
    return min(lc, lr) / max(lc, lr)


#: Trailing words that end with a period without ending a sentence.
ABBREVIATIONS = frozenset(
    "dr mr mrs ms prof rev gen sen rep st jr sr vs etc al approx dept fig no".split()
)

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])[\"')\]]*\s+")


def count_sentences(text: str) -> int:
    """Sentence count via terminal punctuation with an abbreviation guard.

    A trailing fragment without terminal punctuation still counts as one
    sentence; empty or whitespace-only text counts zero.
    """
    stripped = text.strip()
    if not stripped:
        return 0
    chunks = _SENTENCE_SPLIT_RE.split(stripped)
    merged: list[str] = []
    for chunk in chunks:
        if merged:
            last_word = merged[-1].rstrip("\"')]").rstrip(".").split()
            if last_word and last_word[-1].lower().rstrip(".") in ABBREVIATIONS:
                merged[-1] += " " + chunk
                continue
        merged.append(chunk)
    return sum(1 for chunk in merged if _TOKEN_RE.search(chunk))


def sentence_count_similarity(candidate: str, reference: str) -> float:
    """min/max ratio of sentence counts; 1.0 when both have none."""
    sc, sr = count_sentences(candidate), count_sentences(reference)
    if sc == 0 and sr == 0:
        return 1.0
    if sc == 0 or sr == 0:
        return 0.0
    return min(sc, sr) / max(sc, sr)


@dataclass(frozen=True)
class SentimentLexicon:
    """Token -> polarity (+1/-1) map; tokens lowercase and unique."""

    polarity: Mapping[str, int]

    def __post_init__(self) -> None:
        for token, value in self.polarity.items():
            if token != token.lower():
                raise ParseError(f"lexicon token {token!r} must be lowercase")
            if value not in (1, -1):
                raise ParseError(f"lexicon polarity for {token!r} must be +1 or -1")

    def __len__(self) -> int:
        return len(self.polarity)


def load_lexicon(path: str | Path) -> SentimentLexicon:
    """Read a two-column lexicon: ``token<TAB>+1`` or ``token<TAB>-1`` per
    line; blank lines and ``#`` comments are ignored."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read lexicon: {exc}", path=str(path)) from exc
    polarity: dict[str, int] = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("+1", "-1"):
            raise ParseError(
                "expected 'token<TAB>+1|-1'", path=str(path), line=lineno
            )
        token = parts[0].strip().lower()
        if token in polarity:
            raise ParseError(f"duplicate lexicon token {token!r}", path=str(path), line=lineno)
        polarity[token] = 1 if parts[1] == "+1" else -1
    return SentimentLexicon(polarity)


_default_lexicon: SentimentLexicon | None = None


def default_lexicon() -> SentimentLexicon:
    """The bundled polarity list (about 600 common sentiment words)."""
    global _default_lexicon
    if _default_lexicon is None:
        _default_lexicon = load_lexicon(Path(__file__).parent / "data" / "sentiment_lexicon.txt")
    return _default_lexicon


def sentiment_score(text: str, lexicon: SentimentLexicon) -> float:
    """Net polarity (pos - neg) / max(1, pos + neg), in [-1, 1]."""
    pos = neg = 0
    for token in tokenize(text):
        polarity = lexicon.polarity.get(token)
        if polarity == 1:
            pos += 1
        elif polarity == -1:
            neg += 1
    return (pos - neg) / max(1, pos + neg)


def sentiment_similarity(candidate: str, reference: str, lexicon: SentimentLexicon) -> float:
    """1 - |score(candidate) - score(reference)| / 2, in [0, 1]."""
    return 1.0 - abs(sentiment_score(candidate, lexicon) - sentiment_score(reference, lexicon)) / 2.0


#: Plausible character-length bands per question type; the band midpoint is
#: the reference point for the quality length sub-score.
DEFAULT_LENGTH_BANDS: Mapping[str, tuple[int, int]] = {
    "open": (120, 600),
    "likert": (40, 240),
    "yesno": (20, 200),
    "agreement": (30, 220),
}

AFFIRMATION_TOKENS = frozenset(
    "yes yeah yep absolutely definitely certainly sure indeed no nope never nah".split()
)

AGREEMENT_STEMS = ("agree", "disagree")


@dataclass(frozen=True)
class QualityConfig:
    """Weights and thresholds for the survey-quality composite."""

    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    length_bands: Mapping[str, tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_LENGTH_BANDS)
    )
    open_min_sentences: int = 2
    open_min_tokens: int = 15
    distinct2_target: float = 0.5

    def __post_init__(self) -> None:
        if abs(sum(self.weights) - 1.0) > 1e-9 or any(w < 0 for w in self.weights):
            raise ValueError("quality weights must be nonnegative and sum to 1")


DEFAULT_QUALITY_CONFIG = QualityConfig()

#: Anchors assumed for likert items whose full question is unavailable.
GENERIC_LIKERT_ANCHORS = (
    "Strongly disagree",
    "Disagree",
    "Neither agree nor disagree",
    "Agree",
    "Strongly agree",
)


def _format_compliance(response: str, qtype: str, scale: Sequence[str] | None,
                       cfg: QualityConfig) -> float:
    tokens = tokenize(response)
    if not tokens:
        return 0.0
    if qtype == "yesno":
        if tokens[0] in AFFIRMATION_TOKENS:
            return 1.0
        return 0.5 if any(t in AFFIRMATION_TOKENS for t in tokens) else 0.0
    if qtype == "likert":
        anchors = scale if scale else GENERIC_LIKERT_ANCHORS
        lowered = response.lower()
        return 1.0 if any(a.lower() in lowered for a in anchors) else 0.0
    if qtype == "agreement":
        lowered = response.lower()
        return 1.0 if any(stem in lowered for stem in AGREEMENT_STEMS) else 0.0
    # open
    enough_sentences = count_sentences(response) >= cfg.open_min_sentences
    enough_tokens = len(tokens) >= cfg.open_min_tokens
    return 1.0 if (enough_sentences and enough_tokens) else 0.0


def survey_quality(
    response: str,
    question: SurveyQuestion | None = None,
    qtype: str | None = None,
    cfg: QualityConfig = DEFAULT_QUALITY_CONFIG,
) -> float:
    """Composite response quality in [0, 1].

    Weighted mean of three sub-scores: question-type format compliance,
    length plausibility (min/max ratio of the response length against the
    configured band midpoint), and non-degeneracy
    (``min(1, distinct-2 / target)``). Pass either the full question or a
    bare ``qtype``; likert anchor checks fall back to generic anchors when
    only the type is known.
    """
    if question is not None:
        qtype = question.qtype
        scale = question.scale
    else:
        scale = None
    if qtype not in QUESTION_TYPES:
        raise ValueError(f"unknown question type {qtype!r}")

    fmt = _format_compliance(response, qtype, scale, cfg)

    lo, hi = cfg.length_bands[qtype]
    midpoint = (lo + hi) / 2
    n_chars = len(response)
    if n_chars == 0 and midpoint == 0:
        length = 1.0
    elif n_chars == 0 or midpoint == 0:
        length = 0.0
    else:
        length = min(n_chars, midpoint) / max(n_chars, midpoint)

    d2 = distinct_n(response, 2)
    nondegen = min(1.0, d2 / cfg.distinct2_target) if cfg.distinct2_target > 0 else 1.0

    w_fmt, w_len, w_deg = cfg.weights
    return w_fmt * fmt + w_len * length + w_deg * nondegen


@dataclass(frozen=True)
class MetricVector:
    """The per-example evaluation row; every metric lies in [0, 1]."""

    bleu: float
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float
    semantic_f1: float
    quality: float
    length_sim: float
    sentence_count_sim: float
    sentiment_sim: float
    distinct1: float
    distinct2: float
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}

    @classmethod
    def fields(cls) -> tuple[str, ...]:
        return METRIC_FIELDS


@dataclass(frozen=True)
class EvalContext:
    """Shared evaluation dependencies: embeddings, lexicon, quality config,
    and an optional question lookup for anchor-aware quality scoring."""

    provider: EmbeddingProvider
    lexicon: SentimentLexicon
    quality: QualityConfig = DEFAULT_QUALITY_CONFIG
    questions: Mapping[str, SurveyQuestion] | None = None
    idf: Mapping[str, float] | None = None


def evaluate_pair(
    record: ChatRecord,
    generated: str,
    reference: str,
    ctx: EvalContext,
) -> MetricVector:
    """Score one generated response against its nonempty reference."""
    if not reference or not reference.strip():
        raise EmptyInputError(f"record {record.id!r}: reference must be nonempty")

    flags: list[str] = []
    if not generated.strip():
        flags.append("empty_candidate")

    question = None
    if ctx.questions is not None:
        question = ctx.questions.get(record.meta.question_id)
    if question is None:
        flags.append("question_unresolved")

    _, _, sem_f = semantic_f1(generated, reference, ctx.provider, ctx.idf)
    vector = MetricVector(
        bleu=bleu(generated, reference),
        rouge1_f=rouge_n(generated, reference, 1).f1,
        rouge2_f=rouge_n(generated, reference, 2).f1,
        rougeL_f=rouge_l(generated, reference).f1,
        semantic_f1=sem_f,
        quality=survey_quality(
            generated,
            question=question,
            qtype=None if question else record.meta.question_type,
            cfg=ctx.quality,
        ),
        length_sim=length_similarity(generated, reference),
        sentence_count_sim=sentence_count_similarity(generated, reference),
        sentiment_sim=sentiment_similarity(generated, reference, ctx.lexicon),
        distinct1=distinct_n(generated, 1),
        distinct2=distinct_n(generated, 2),
        flags=tuple(flags),
    )
    return vector
