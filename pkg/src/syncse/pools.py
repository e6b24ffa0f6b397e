"""Prompt / exemplar / genre / topic pools and chat transcript assembly.

A pool file is a single JSON document with top-level arrays
`positive_prompts`, `hard_negative_prompts`, `unlabeled_prompts`,
`caption_prompts`, `exemplars`, `genres`, `topics`.  Pools are immutable
after load and safe to share across workers; every sampling operation takes
an explicit random stream.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

PROMPT_KINDS = ("positive", "hard_negative", "unlabeled", "image_caption")
EXEMPLAR_KINDS = ("positive", "hard_negative", "unlabeled")
ANNOTATION_KINDS = ("positive", "hard_negative")

TOPIC_SLOTS = tuple(f"topic_{i}" for i in range(1, 7))

# System messages for the three transcript families.  Generation prompts vary
# per call; the system line is fixed per family.
POSITIVE_SYSTEM = (
    "You are a helpful assistant that generates a paraphrased sentence of the input."
)
HARD_NEGATIVE_SYSTEM = (
    "You are a helpful assistant that generates a sentence whose meaning differs from the input."
)
UNLABELED_SYSTEM = "You are a helpful assistant that generates diverse sentences."

INPUT_MARKER = "The input sentence is: "
OUTPUT_QUESTION = "What is your generated sentence?"

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z_0-9]*)\}")
_EXAMPLE_SLOT_RE = re.compile(r"^example_[1-9]$")

_PROMPT_ARRAYS = {
    "positive_prompts": "positive",
    "hard_negative_prompts": "hard_negative",
    "unlabeled_prompts": "unlabeled",
    "caption_prompts": "image_caption",
}


class PoolError(ValueError):
    """Malformed pool file or violated pool invariant."""


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    kind: str
    text: str
    weight: float = 1.0  # parsed and stored; sampling is uniform

    def placeholders(self) -> set[str]:
        names = set()
        for _, name, _, _ in string.Formatter().parse(self.text):
            if name:
                names.add(name)
        return names


@dataclass(frozen=True)
class Exemplar:
    id: str
    kind: str
    input: str
    output: str


@dataclass(frozen=True)
class Genre:
    id: int
    description: str


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatTranscript:
    """A multi-turn chat: system message, alternating user/assistant, ends on user."""

    messages: tuple[Message, ...]

    def __post_init__(self):
        if not self.messages:
            raise PoolError("transcript has no messages")
        if self.messages[0].role != "system":
            raise PoolError("first transcript message must have role=system")
        for i, msg in enumerate(self.messages[1:]):
            expected = "user" if i % 2 == 0 else "assistant"
            if msg.role != expected:
                raise PoolError(
                    f"transcript message {i + 1} has role={msg.role}, expected {expected}"
                )
        if self.messages[-1].role != "user":
            raise PoolError("last transcript message must have role=user")

    def to_wire(self) -> list[dict]:
        return [{"role": m.role, "content": m.content} for m in self.messages]


@dataclass(frozen=True)
class PoolSet:
    positive_prompts: tuple[PromptTemplate, ...]
    hard_negative_prompts: tuple[PromptTemplate, ...]
    unlabeled_prompts: tuple[PromptTemplate, ...]
    caption_prompts: tuple[PromptTemplate, ...]
    exemplars: Mapping[str, tuple[Exemplar, ...]]
    genres: tuple[Genre, ...]
    topics: tuple[str, ...]
    source_hash: str = ""

    def prompts_for(self, kind: str) -> tuple[PromptTemplate, ...]:
        return {
            "positive": self.positive_prompts,
            "hard_negative": self.hard_negative_prompts,
            "unlabeled": self.unlabeled_prompts,
            "image_caption": self.caption_prompts,
        }[kind]

    def exemplars_for(self, kind: str) -> tuple[Exemplar, ...]:
        return self.exemplars.get(kind, ())

    def find_prompt(self, prompt_id: str) -> PromptTemplate | None:
        for kind in PROMPT_KINDS:
            for tpl in self.prompts_for(kind):
                if tpl.id == prompt_id:
                    return tpl
        return None

    def find_exemplar(self, kind: str, exemplar_id: str) -> Exemplar | None:
        for ex in self.exemplars_for(kind):
            if ex.id == exemplar_id:
                return ex
        return None


def find_unfilled(text: str) -> list[str]:
    """Names of any `{placeholder}` tokens still present in `text`."""
    return _PLACEHOLDER_RE.findall(text)


def _require(condition: bool, where: str, message: str):
    if not condition:
        raise PoolError(f"{where}: {message}")


def _validate_template(tpl: PromptTemplate, where: str):
    names = tpl.placeholders()
    diversity_slots = {"number", "genre_description", *TOPIC_SLOTS}
    if tpl.kind == "unlabeled":
        missing = sorted(diversity_slots - names)
        _require(not missing, where, f"template '{tpl.id}' missing placeholder(s) {missing}")
    elif tpl.kind == "image_caption":
        missing = sorted({"number", "genre_description"} - names)
        _require(not missing, where, f"template '{tpl.id}' missing placeholder(s) {missing}")
    else:  # annotation prompts carry no placeholders; they are sent verbatim
        _require(
            not names,
            where,
            f"template '{tpl.id}' must not contain placeholders, found {sorted(names)}",
        )
    if tpl.kind in ("unlabeled", "image_caption"):
        allowed = diversity_slots | {n for n in names if _EXAMPLE_SLOT_RE.match(n)}
        unknown = sorted(names - allowed)
        _require(not unknown, where, f"template '{tpl.id}' has unknown placeholder(s) {unknown}")


def _parse_templates(raw: object, array: str, kind: str) -> tuple[PromptTemplate, ...]:
    _require(isinstance(raw, list) and raw, array, "must be a nonempty array")
    templates = []
    seen_ids = set()
    for i, entry in enumerate(raw):
        where = f"{array}[{i}]"
        _require(isinstance(entry, dict), where, "must be an object")
        tpl_id = entry.get("id")
        text = entry.get("text")
        _require(isinstance(tpl_id, str) and tpl_id, where, "missing string field 'id'")
        _require(isinstance(text, str) and text.strip(), where, "missing string field 'text'")
        weight = entry.get("weight", 1.0)
        _require(
            isinstance(weight, (int, float)) and weight > 0,
            where,
            "'weight' must be a positive number",
        )
        _require(tpl_id not in seen_ids, where, f"duplicate template id '{tpl_id}'")
        seen_ids.add(tpl_id)
        tpl = PromptTemplate(id=tpl_id, kind=kind, text=text, weight=float(weight))
        _validate_template(tpl, where)
        templates.append(tpl)
    return tuple(templates)


def _parse_exemplars(raw: object) -> dict[str, tuple[Exemplar, ...]]:
    _require(isinstance(raw, list), "exemplars", "must be an array")
    by_kind: dict[str, list[Exemplar]] = {kind: [] for kind in EXEMPLAR_KINDS}
    for i, entry in enumerate(raw):
        where = f"exemplars[{i}]"
        _require(isinstance(entry, dict), where, "must be an object")
        kind = entry.get("kind")
        _require(kind in EXEMPLAR_KINDS, where, f"'kind' must be one of {EXEMPLAR_KINDS}")
        text_in = entry.get("input")
        text_out = entry.get("output")
        _require(isinstance(text_in, str) and text_in.strip(), where, "'input' must be nonempty")
        _require(isinstance(text_out, str) and text_out.strip(), where, "'output' must be nonempty")
        if kind == "unlabeled":
            lines = [ln for ln in text_out.splitlines() if ln.strip()]
            _require(bool(lines), where, "unlabeled exemplar output must list at least one sentence")
        ex_id = entry.get("id") or f"{kind}-{len(by_kind[kind]) + 1}"
        _require(
            all(ex.id != ex_id for ex in by_kind[kind]),
            where,
            f"duplicate exemplar id '{ex_id}' for kind '{kind}'",
        )
        by_kind[kind].append(Exemplar(id=ex_id, kind=kind, input=text_in, output=text_out))
    for kind in EXEMPLAR_KINDS:
        _require(bool(by_kind[kind]), "exemplars", f"no exemplars of kind '{kind}'")
    return {kind: tuple(items) for kind, items in by_kind.items()}


def _parse_genres(raw: object) -> tuple[Genre, ...]:
    _require(isinstance(raw, list) and raw, "genres", "must be a nonempty array")
    genres = []
    seen_ids: set[int] = set()
    seen_desc: set[str] = set()
    for i, entry in enumerate(raw):
        where = f"genres[{i}]"
        _require(isinstance(entry, dict), where, "must be an object")
        gid = entry.get("id")
        desc = entry.get("description")
        _require(isinstance(gid, int), where, "'id' must be an integer")
        _require(isinstance(desc, str) and desc.strip(), where, "'description' must be nonempty")
        _require(gid not in seen_ids, where, f"duplicate genre id {gid}")
        _require(desc not in seen_desc, where, f"duplicate genre description '{desc}'")
        seen_ids.add(gid)
        seen_desc.add(desc)
        genres.append(Genre(id=gid, description=desc))
    return tuple(genres)


def _parse_topics(raw: object) -> tuple[str, ...]:
    _require(isinstance(raw, list), "topics", "must be an array")
    topics = []
    seen = set()
    for i, entry in enumerate(raw):
        where = f"topics[{i}]"
        _require(isinstance(entry, str) and entry.strip(), where, "must be a nonempty string")
        _require(entry not in seen, where, f"duplicate topic '{entry}'")
        seen.add(entry)
        topics.append(entry)
    _require(len(topics) >= 6, "topics", f"need at least 6 topics, found {len(topics)}")
    return tuple(topics)


def parse_pools(document: object, source_hash: str = "") -> PoolSet:
    _require(isinstance(document, dict), "pool file", "top level must be a JSON object")
    missing = sorted(
        key
        for key in (*_PROMPT_ARRAYS, "exemplars", "genres", "topics")
        if key not in document
    )
    _require(not missing, "pool file", f"missing top-level array(s) {missing}")
    prompts = {
        array: _parse_templates(document[array], array, kind)
        for array, kind in _PROMPT_ARRAYS.items()
    }
    return PoolSet(
        positive_prompts=prompts["positive_prompts"],
        hard_negative_prompts=prompts["hard_negative_prompts"],
        unlabeled_prompts=prompts["unlabeled_prompts"],
        caption_prompts=prompts["caption_prompts"],
        exemplars=_parse_exemplars(document["exemplars"]),
        genres=_parse_genres(document["genres"]),
        topics=_parse_topics(document["topics"]),
        source_hash=source_hash,
    )


def pool_file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_pools(path: str | Path) -> PoolSet:
    """Load and validate a pool file; raises PoolError naming the bad entry."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise PoolError(f"cannot read pool file {path}: {exc}") from exc
    try:
        document = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        line = getattr(exc, "lineno", "?")
        raise PoolError(f"{path} is not valid JSON (line {line}): {exc}") from exc
    return parse_pools(document, source_hash=hashlib.sha256(raw).hexdigest())


def default_pool_path() -> Path:
    """Path of the bundled pool file (4 prompts per pool, 21 genres, 37 topics)."""
    return Path(resources.files("syncse").joinpath("data/default_pools.json"))


def load_default_pools() -> PoolSet:
    return load_pools(default_pool_path())


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_prompt(pool: Sequence[PromptTemplate], rng: np.random.Generator) -> PromptTemplate:
    """Uniform draw from a prompt pool."""
    if not pool:
        raise PoolError("cannot sample from an empty prompt pool")
    return pool[int(rng.integers(len(pool)))]


def sample_exemplars(
    pool: Sequence[Exemplar], k: int, rng: np.random.Generator
) -> list[Exemplar]:
    """Draw k distinct exemplars without replacement, in draw order."""
    if k < 0:
        raise PoolError("k must be >= 0")
    if k > len(pool):
        raise PoolError(f"cannot sample {k} exemplars from a pool of {len(pool)}")
    indices = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in indices]


def sample_genre_and_topics(
    pools: PoolSet, rng: np.random.Generator
) -> tuple[Genre, list[str]]:
    """A uniform genre plus six distinct topics, sampled without replacement."""
    if len(pools.topics) < 6:
        raise PoolError(f"need at least 6 topics, pool has {len(pools.topics)}")
    genre = pools.genres[int(rng.integers(len(pools.genres)))]
    indices = rng.choice(len(pools.topics), size=6, replace=False)
    return genre, [pools.topics[int(i)] for i in indices]


def uses_caption_pool(genre: Genre) -> bool:
    """Image-caption genres route to the dedicated caption prompt pool."""
    return "image" in genre.description.lower()


# ---------------------------------------------------------------------------
# Transcript assembly
# ---------------------------------------------------------------------------


def annotation_user_message(instruction: str, sentence: str) -> str:
    return f"{instruction}\n\n{INPUT_MARKER}{sentence}\n{OUTPUT_QUESTION}"


def build_annotation_chat(
    template: PromptTemplate, exemplars: Sequence[Exemplar], input_sentence: str
) -> ChatTranscript:
    """System message, one (user, assistant) turn per exemplar, final user turn."""
    if template.kind not in ANNOTATION_KINDS:
        raise PoolError(f"annotation chat needs a positive/hard_negative template, got {template.kind}")
    for ex in exemplars:
        if ex.kind != template.kind:
            raise PoolError(
                f"exemplar '{ex.id}' has kind {ex.kind}, template '{template.id}' is {template.kind}"
            )
    system = POSITIVE_SYSTEM if template.kind == "positive" else HARD_NEGATIVE_SYSTEM
    messages = [Message("system", system)]
    for ex in exemplars:
        messages.append(Message("user", annotation_user_message(template.text, ex.input)))
        messages.append(Message("assistant", ex.output))
    messages.append(Message("user", annotation_user_message(template.text, input_sentence)))
    return ChatTranscript(tuple(messages))


def fill_template(template: PromptTemplate, mapping: Mapping[str, str]) -> str:
    """Substitute placeholders; raises if any would remain unfilled."""
    names = template.placeholders()
    missing = sorted(n for n in names if n not in mapping)
    if missing:
        raise PoolError(f"template '{template.id}': no value for placeholder(s) {missing}")
    filled = template.text.format(**{n: mapping[n] for n in names})
    leftover = find_unfilled(filled)
    if leftover:
        raise PoolError(f"template '{template.id}': unfilled placeholder(s) {leftover}")
    return filled


def _exemplar_output_sentences(exemplar: Exemplar) -> list[str]:
    # Local import: textops depends on nothing, but synthesis depends on pools.
    from syncse.textops import strip_enumeration

    sentences = []
    for line in exemplar.output.splitlines():
        text = strip_enumeration(line)
        if text:
            sentences.append(text)
    return sentences


def build_unlabeled_prompt(
    template: PromptTemplate,
    genre: Genre,
    topics: Sequence[str],
    count: int,
    exemplar: Exemplar,
) -> ChatTranscript:
    """One-shot generation chat: system, exemplar (user, assistant) pair, filled prompt.

    `{example_i}` slots in caption templates are filled from the exemplar's
    output sentences, cycled when the template asks for more than it has.
    """
    if template.kind not in ("unlabeled", "image_caption"):
        raise PoolError(f"generation chat needs an unlabeled/caption template, got {template.kind}")
    if count < 1:
        raise PoolError("count must be >= 1")
    if exemplar.kind != "unlabeled":
        raise PoolError(f"generation exemplar must have kind 'unlabeled', got {exemplar.kind}")
    mapping: dict[str, str] = {"number": str(count), "genre_description": genre.description}
    names = template.placeholders()
    topic_names = sorted(n for n in names if n in TOPIC_SLOTS)
    if topic_names and len(topics) < 6:
        raise PoolError(f"template '{template.id}' needs 6 topics, got {len(topics)}")
    for i, slot in enumerate(TOPIC_SLOTS):
        if slot in names:
            mapping[slot] = topics[i]
    example_slots = sorted(n for n in names if _EXAMPLE_SLOT_RE.match(n))
    if example_slots:
        samples = _exemplar_output_sentences(exemplar)
        if not samples:
            raise PoolError(f"exemplar '{exemplar.id}' has no parseable output sentences")
        for j, slot in enumerate(example_slots):
            mapping[slot] = samples[j % len(samples)]
    filled = fill_template(template, mapping)
    messages = (
        Message("system", UNLABELED_SYSTEM),
        Message("user", exemplar.input),
        Message("assistant", exemplar.output),
        Message("user", filled),
    )
    return ChatTranscript(messages)
