"""Persona-grounded synthetic survey response toolkit.

Builds chat-format instruction datasets from persona cards and a
hierarchical question bank, orchestrates generation against chat-completion
endpoints, and scores outputs with a nine-metric evaluation stack plus
aggregate reporting. All sampling is seeded (MT19937 via
:class:`random.Random`) and reproducible across platforms.
"""

__version__ = "0.1.0"

from .errors import (
    AuthError,
    ConfigError,
    DuplicateIdError,
    EmptyDatasetError,
    EmptyFileError,
    EmptyInputError,
    EmptyPoolError,
    EndpointError,
    InsufficientPersonasError,
    IoError,
    MissingDomainError,
    ParseError,
    PolypersonaError,
    ProviderError,
    SchemaError,
    TimeoutExhaustedError,
)
from .question_bank import (
    DOMAINS,
    QUESTION_TYPES,
    DEFAULT_TYPE_RATIOS,
    QuestionBank,
    SurveyQuestion,
    TypeRatios,
    Violation,
    default_bank_path,
    load_default_bank,
    load_question_bank,
    sample_questions,
    type_distribution,
    validate_bank,
)
from .persona_store import (
    CATEGORIES,
    PersonaCard,
    PersonaStore,
    ReuseReport,
    categorize,
    category_distribution,
    default_personas_path,
    ingest_personas,
    reuse_stats,
    sample_personas,
)
from .dataset_builder import (
    ChatRecord,
    Message,
    RecordMeta,
    RenderedPair,
    SplitSpec,
    SYSTEM_INSTRUCTION,
    assemble_dataset,
    build_record,
    read_jsonl,
    render_chatml,
    split_dataset,
    write_jsonl,
)
from .generation_client import (
    API_KEY_ENV,
    DiskCache,
    EndpointConfig,
    GenerationResult,
    generate,
    generate_batch,
    mock_completion,
)
from .eval_stack import (
    EvalContext,
    HashedTrigramProvider,
    MetricVector,
    QualityConfig,
    RougeScore,
    SentimentLexicon,
    bleu,
    count_sentences,
    default_lexicon,
    distinct_n,
    evaluate_pair,
    lcs_length,
    length_similarity,
    load_lexicon,
    ngrams,
    rouge_l,
    rouge_n,
    semantic_f1,
    sentence_count_similarity,
    sentiment_score,
    sentiment_similarity,
    survey_quality,
    tokenize,
)
from .report import (
    AggregateRow,
    DomainWinner,
    aggregate,
    best_per_domain,
    macro_average,
    render,
    render_winners,
)
from .sampling import derive_seed, largest_remainder, rng_from, stochastic_remainder
