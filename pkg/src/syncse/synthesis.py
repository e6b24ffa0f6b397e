"""Triplet dataset synthesis: generate unlabeled sentences, annotate, emit.

Two entry points mirror the two synthesis settings: `generate_unlabeled`
creates raw sentences from genre/topic-conditioned prompts (the "scratch"
setting; `mode="naive"` drops the diversity controls), and
`assemble_dataset` annotates any sentence list with positives and hard
negatives (fed with external sentences it is the "partial" setting).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from syncse.gateway import (
    ChatGateway,
    GatewayError,
    GenerationConfig,
    stage_config,
)
from syncse.pools import (
    Exemplar,
    Genre,
    Message,
    ChatTranscript,
    PoolSet,
    PromptTemplate,
    UNLABELED_SYSTEM,
    build_annotation_chat,
    build_unlabeled_prompt,
    sample_exemplars,
    sample_genre_and_topics,
    sample_prompt,
    uses_caption_pool,
)
from syncse.seeding import derive_rng
from syncse.textops import (
    dedup,
    distinct_ngram_ratio,
    filter_max_words,
    normalize_sentence,
    parse_sentence_list,
    strip_enumeration,
    word_count,
)

__all__ = [
    "UnlabeledSentence",
    "Triplet",
    "DatasetManifest",
    "SynthesisError",
    "AnnotationError",
    "parse_sentence_list",
    "filter_max_words",
    "dedup",
    "distinct_ngram_ratio",
    "generate_unlabeled",
    "annotate_positive",
    "annotate_hard_negative",
    "assemble_dataset",
    "load_sentences",
    "load_dataset",
    "export_csv",
    "NAIVE_TEMPLATE",
]

DEFAULT_BATCH_SIZE = 20  # sentences requested per generation call
DEFAULT_WORD_LIMIT = 32
DEFAULT_SHOTS = 5

_ENUM_MARKER = ("-", "*")


class SynthesisError(Exception):
    """Pipeline-level synthesis failure (for example a shortfall budget)."""


class AnnotationError(SynthesisError):
    """A single annotation attempt produced unusable output."""


# The stripped-down generation instruction for the no-diversity-controls
# ablation: same task, no genre or topic conditioning.  Constructed directly
# (not pool-loaded), so the genre/topic slot requirement does not apply.
NAIVE_TEMPLATE = PromptTemplate(
    id="naive",
    kind="unlabeled",
    text=(
        "Devise {number} distinct and diverse sentences. These sentences should "
        "present a mix of complexity levels, from elementary structures akin to "
        '"Birds fly in the sky." to more sophisticated ones. Aim for a low degree '
        "of lexical overlap and an extensive vocabulary. Incorporate a variety of "
        "sentence modes - declarative, interrogative, exclamatory, imperative, and "
        "descriptive. The sentences should oscillate in tone between informative, "
        "persuasive, descriptive, and narrative, and should present varied "
        "perspectives. Vary the length of the sentences, ranging from concise "
        "phrases of 3-5 words to longer sentences containing 20-40 words."
    ),
)


@dataclass(frozen=True)
class UnlabeledSentence:
    text: str
    genre_id: int
    topics: tuple[str, ...]
    prompt_id: str
    batch_index: int

    def __post_init__(self):
        if not self.text.strip():
            raise SynthesisError("unlabeled sentence text is empty")
        if self.text != self.text.strip():
            raise SynthesisError("unlabeled sentence carries surrounding whitespace")
        first = self.text.split(None, 1)[0]
        if first in _ENUM_MARKER or (first.rstrip(".)").isdigit() and first != self.text):
            raise SynthesisError(f"unlabeled sentence keeps a list marker: {self.text!r}")

    def as_dict(self) -> dict:
        return {
            "text": self.text,
            "genre_id": self.genre_id,
            "topics": list(self.topics),
            "prompt_id": self.prompt_id,
            "batch_index": self.batch_index,
        }


@dataclass(frozen=True)
class Triplet:
    sent0: str
    sent1: str
    hard_neg: str
    provenance: dict

    def __post_init__(self):
        for name, value in (("sent0", self.sent0), ("sent1", self.sent1), ("hard_neg", self.hard_neg)):
            if not value.strip():
                raise SynthesisError(f"triplet field {name} is empty")
        anchor = normalize_sentence(self.sent0)
        if normalize_sentence(self.sent1) == anchor:
            raise SynthesisError("positive equals the anchor after normalization")
        if normalize_sentence(self.hard_neg) == anchor:
            raise SynthesisError("hard negative equals the anchor after normalization")

    def as_dict(self) -> dict:
        return {
            "sent0": self.sent0,
            "sent1": self.sent1,
            "hard_neg": self.hard_neg,
            "provenance": self.provenance,
        }


@dataclass
class DatasetManifest:
    n: int
    seed: int
    pool_hash: str
    mode: str
    source: str
    configs: dict
    created_at: str
    skipped: int = 0
    skip_reasons: dict = field(default_factory=dict)
    k_shot: int = DEFAULT_SHOTS
    filter_limit: int | None = DEFAULT_WORD_LIMIT

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "DatasetManifest":
        return cls(**payload)


# ---------------------------------------------------------------------------
# Unlabeled sentence generation (the "scratch" first stage)
# ---------------------------------------------------------------------------


def _naive_generation_chat(pools: PoolSet, seed: int, count: int) -> tuple[ChatTranscript, str]:
    rng = derive_rng(seed, "naive-unlabeled")
    exemplar = sample_exemplars(pools.exemplars_for("unlabeled"), 1, rng)[0]
    filled = NAIVE_TEMPLATE.text.format(number=count)
    transcript = ChatTranscript(
        (
            Message("system", UNLABELED_SYSTEM),
            Message("user", exemplar.input),
            Message("assistant", exemplar.output),
            Message("user", filled),
        )
    )
    return transcript, NAIVE_TEMPLATE.id


def generate_unlabeled(
    n: int,
    pools: PoolSet,
    gateway: ChatGateway,
    seed: int,
    *,
    mode: str = "pooled",
    batch_size: int = DEFAULT_BATCH_SIZE,
    config: GenerationConfig | None = None,
    filter_limit: int | None = DEFAULT_WORD_LIMIT,
    dedup_sentences: bool = True,
    max_batches: int | None = None,
) -> list[UnlabeledSentence]:
    """Generate exactly n unlabeled sentences in batched calls.

    Each pooled batch samples a fresh (template, genre, topics, exemplar);
    naive mode reuses one fixed instruction with no genre or topic
    conditioning.  Sentences that fail the word filter or duplicate earlier
    ones do not count toward n; extra batches cover shortfalls until the
    batch budget runs out.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in ("pooled", "naive"):
        raise ValueError(f"unknown mode '{mode}'")
    config = config or stage_config("unlabeled")
    planned = math.ceil(n / batch_size)
    if max_batches is None:
        max_batches = planned * 2 + 2
    kept: list[UnlabeledSentence] = []
    seen: set[str] = set()
    batch_index = 0
    while len(kept) < n:
        if batch_index >= max_batches:
            raise SynthesisError(
                f"generated only {len(kept)}/{n} sentences after {batch_index} batches"
            )
        rng = derive_rng(seed, "unlabeled", batch_index)
        if mode == "pooled":
            genre, topics = sample_genre_and_topics(pools, rng)
            pool = pools.caption_prompts if uses_caption_pool(genre) else pools.unlabeled_prompts
            template = sample_prompt(pool, rng)
            exemplar = sample_exemplars(pools.exemplars_for("unlabeled"), 1, rng)[0]
            transcript = build_unlabeled_prompt(template, genre, topics, batch_size, exemplar)
            genre_id, topic_tuple, prompt_id = genre.id, tuple(topics), template.id
        else:
            transcript, prompt_id = _naive_generation_chat(pools, seed, batch_size)
            genre_id, topic_tuple = -1, ()
        text, _ = gateway.complete(transcript, config, stage="unlabeled")
        parsed, _ = parse_sentence_list(text, batch_size)
        for sentence in parsed:
            if filter_limit is not None and word_count(sentence) > filter_limit:
                continue
            key = normalize_sentence(sentence)
            if dedup_sentences and key in seen:
                continue
            seen.add(key)
            kept.append(
                UnlabeledSentence(
                    text=sentence,
                    genre_id=genre_id,
                    topics=topic_tuple,
                    prompt_id=prompt_id,
                    batch_index=batch_index,
                )
            )
            if len(kept) == n:
                break
        batch_index += 1
    return kept


# ---------------------------------------------------------------------------
# Annotation (positives and hard negatives)
# ---------------------------------------------------------------------------


def _annotate(
    kind: str,
    sentence: str,
    pools: PoolSet,
    gateway: ChatGateway,
    rng,
    *,
    config: GenerationConfig | None,
    k: int,
    fixed: tuple[PromptTemplate, list[Exemplar]] | None = None,
) -> tuple[str, dict]:
    if not sentence.strip():
        raise AnnotationError("cannot annotate an empty sentence")
    if fixed is not None:
        template, exemplars = fixed
    else:
        template = sample_prompt(pools.prompts_for(kind), rng)
        exemplars = sample_exemplars(pools.exemplars_for(kind), k, rng)
    transcript = build_annotation_chat(template, exemplars, sentence)
    config = config or stage_config(kind)
    text, _ = gateway.complete(transcript, config, stage=kind)
    text = strip_enumeration(text.strip())
    if not text:
        raise AnnotationError(f"{kind} annotation returned an empty completion")
    provenance = {
        "prompt_id": template.id,
        "exemplar_ids": [ex.id for ex in exemplars],
        "model": config.model,
        "config": config.as_dict(),
    }
    return text, provenance


def annotate_positive(sentence, pools, gateway, rng, *, config=None, k=DEFAULT_SHOTS, fixed=None):
    """Sample a positive template and k exemplars, complete, return (text, provenance)."""
    return _annotate("positive", sentence, pools, gateway, rng, config=config, k=k, fixed=fixed)


def annotate_hard_negative(sentence, pools, gateway, rng, *, config=None, k=DEFAULT_SHOTS, fixed=None):
    """As annotate_positive but with the hard-negative pool and config."""
    return _annotate(
        "hard_negative", sentence, pools, gateway, rng, config=config, k=k, fixed=fixed
    )


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


def _annotate_with_retry(kind, sentence, pools, gateway, rng, *, config, k, fixed):
    """One resample after a failed attempt, then give up on the sentence."""
    last_error: Exception | None = None
    for _ in range(2):
        try:
            text, provenance = _annotate(
                kind, sentence, pools, gateway, rng, config=config, k=k, fixed=fixed
            )
            if normalize_sentence(text) == normalize_sentence(sentence):
                raise AnnotationError(f"{kind} annotation echoed the input")
            return text, provenance
        except (AnnotationError, GatewayError) as exc:
            last_error = exc
    raise AnnotationError(f"{kind} annotation failed twice: {last_error}")


def assemble_dataset(
    sentences: Sequence[UnlabeledSentence | str],
    pools: PoolSet,
    gateway: ChatGateway,
    seed: int,
    out_dir: str | Path,
    *,
    mode: str = "pooled",
    source: str | None = None,
    k: int = DEFAULT_SHOTS,
    positive_config: GenerationConfig | None = None,
    negative_config: GenerationConfig | None = None,
    filter_limit: int | None = DEFAULT_WORD_LIMIT,
    max_in_flight: int = 1,
    rate: float | None = None,
) -> DatasetManifest:
    """Annotate every sentence into a triplet and write data.jsonl + manifest.json.

    Sentences whose annotations fail twice are dropped and counted; with the
    filter enabled, a triplet is also dropped when any field exceeds the word
    limit.  Output order equals input order regardless of completion order.
    """
    if mode not in ("pooled", "naive"):
        raise ValueError(f"unknown mode '{mode}'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    positive_config = positive_config or stage_config("positive")
    negative_config = negative_config or stage_config("hard_negative")
    if source is None:
        source = "scratch" if any(isinstance(s, UnlabeledSentence) for s in sentences) else "partial"

    fixed_pos = fixed_neg = None
    if mode == "naive":
        rng_pos = derive_rng(seed, "naive-positive")
        fixed_pos = (
            sample_prompt(pools.positive_prompts, rng_pos),
            sample_exemplars(pools.exemplars_for("positive"), k, rng_pos),
        )
        rng_neg = derive_rng(seed, "naive-hard-negative")
        fixed_neg = (
            sample_prompt(pools.hard_negative_prompts, rng_neg),
            sample_exemplars(pools.exemplars_for("hard_negative"), k, rng_neg),
        )

    def annotate_one(indexed) -> Triplet | str:
        index, item = indexed
        text = item.text if isinstance(item, UnlabeledSentence) else str(item)
        if filter_limit is not None and word_count(text) > filter_limit:
            return "filtered_input"
        try:
            positive, pos_prov = _annotate_with_retry(
                "positive",
                text,
                pools,
                gateway,
                derive_rng(seed, "positive", index),
                config=positive_config,
                k=k,
                fixed=fixed_pos,
            )
            negative, neg_prov = _annotate_with_retry(
                "hard_negative",
                text,
                pools,
                gateway,
                derive_rng(seed, "hard_negative", index),
                config=negative_config,
                k=k,
                fixed=fixed_neg,
            )
        except AnnotationError:
            return "annotation_failed"
        if filter_limit is not None and (
            word_count(positive) > filter_limit or word_count(negative) > filter_limit
        ):
            return "filtered_annotation"
        provenance = {
            "source": source,
            "positive_prompt_id": pos_prov["prompt_id"],
            "negative_prompt_id": neg_prov["prompt_id"],
            "exemplar_ids": {
                "positive": pos_prov["exemplar_ids"],
                "hard_negative": neg_prov["exemplar_ids"],
            },
            "model": pos_prov["model"],
            "configs": {
                "positive": pos_prov["config"],
                "hard_negative": neg_prov["config"],
            },
        }
        if isinstance(item, UnlabeledSentence):
            provenance["unlabeled"] = {
                "genre_id": item.genre_id,
                "topics": list(item.topics),
                "prompt_id": item.prompt_id,
                "batch_index": item.batch_index,
            }
        try:
            return Triplet(sent0=text, sent1=positive, hard_neg=negative, provenance=provenance)
        except SynthesisError:
            return "invariant_violation"

    from syncse.gateway import throttled_map

    outcomes = throttled_map(
        annotate_one, list(enumerate(sentences)), max_in_flight=max_in_flight, rate=rate
    )

    skip_reasons: dict[str, int] = {}
    records = []
    for outcome in outcomes:
        if isinstance(outcome, Triplet):
            records.append(outcome)
        else:
            skip_reasons[outcome] = skip_reasons.get(outcome, 0) + 1

    data_path = out_dir / "data.jsonl"
    with data_path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.as_dict(), sort_keys=True, ensure_ascii=False) + "\n")

    manifest = DatasetManifest(
        n=len(records),
        seed=seed,
        pool_hash=pools.source_hash,
        mode=mode,
        source=source,
        configs={
            "positive": positive_config.as_dict(),
            "hard_negative": negative_config.as_dict(),
        },
        created_at=datetime.now(timezone.utc).isoformat(),
        skipped=sum(skip_reasons.values()),
        skip_reasons=skip_reasons,
        k_shot=k,
        filter_limit=filter_limit,
    )
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.as_dict(), indent=2, sort_keys=True) + "\n"
    )
    return manifest


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_sentences(sentences: Sequence[UnlabeledSentence], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for sentence in sentences:
            handle.write(json.dumps(sentence.as_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def load_sentences(path: str | Path) -> list[UnlabeledSentence | str]:
    """Read either the sentences JSONL of `synth scratch` or plain text lines."""
    items: list[UnlabeledSentence | str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        parsed = None
        if line.startswith("{"):
            try:
                parsed = json.loads(line)
            except json.JSONDecodeError:
                parsed = None
        if isinstance(parsed, dict) and "text" in parsed:
            items.append(
                UnlabeledSentence(
                    text=parsed["text"],
                    genre_id=int(parsed.get("genre_id", -1)),
                    topics=tuple(parsed.get("topics", ())),
                    prompt_id=str(parsed.get("prompt_id", "external")),
                    batch_index=int(parsed.get("batch_index", 0)),
                )
            )
        else:
            items.append(line)
    return items


def load_dataset(path: str | Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SynthesisError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        for fieldname in ("sent0", "sent1", "hard_neg"):
            if fieldname not in record:
                raise SynthesisError(f"{path}:{lineno}: missing field '{fieldname}'")
        records.append(record)
    return records


def export_csv(data_path: str | Path, out_path: str | Path):
    """Emit the headerless three-column CSV consumed by SimCSE-style trainers."""
    import csv

    records = load_dataset(data_path)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        for record in records:
            writer.writerow([record["sent0"], record["sent1"], record["hard_neg"]])
