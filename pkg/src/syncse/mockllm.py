"""Deterministic offline stand-in for a chat-completion backend.

ScriptedLLM answers the same three request families the pipeline issues:

* sentence generation: emits a numbered list whose vocabulary is keyed to
  the topic words found in the prompt, so topic-conditioned prompts yield
  measurably more diverse corpora than prompts without topics;
* positive annotation: a canned paraphrase when one is scripted for the
  input sentence, otherwise a deterministic synonym rewrite;
* hard-negative annotation: a canned contradiction when scripted, otherwise
  a deterministic detail swap or negation.

Responses are OpenAI-shaped bodies with fixed per-family token usage, so a
recorded run exercises the cost ledger with stable numbers.  Repeated
identical requests get varied completions (a per-key counter emulates
sampling), which recorded fixtures then freeze.
"""

from __future__ import annotations

import hashlib
import re
import threading

import numpy as np

from syncse.gateway import TransportError, payload_key
from syncse.pools import HARD_NEGATIVE_SYSTEM, INPUT_MARKER, POSITIVE_SYSTEM

# Fixed usage per request family: a 20-sentence generation batch costs
# $0.0014 (0.00007/sentence), a positive annotation $0.00067, and a hard
# negative $0.00076 at the default prices.
GENERATION_USAGE = (600, 250)
POSITIVE_USAGE = (380, 50)
HARD_NEGATIVE_USAGE = (440, 50)

SCRIPTED_POSITIVES = {
    "One of our number will carry out your instructions minutely.":
        "One person from our group will execute your instructions with great attention to detail.",
    "You have access to the facts.": "The facts are accessible to you.",
    "A young man is getting ready to release a red kite.":
        "A young man is preparing to let go of a red kite.",
}

SCRIPTED_NEGATIVES = {
    "A young man is getting ready to release a red kite.":
        "A young man getting ready to release a blue kite.",
    "One of the hotel's rooms": "None of the hotel's rooms.",
}

_SYNONYMS = {
    "quickly": "rapidly",
    "big": "large",
    "small": "little",
    "happy": "glad",
    "old": "aged",
    "new": "fresh",
    "house": "home",
    "car": "vehicle",
    "city": "town",
    "beautiful": "lovely",
    "begins": "starts",
    "said": "stated",
    "shows": "reveals",
    "report": "account",
    "reshapes": "transforms",
    "notes": "remarks",
    "surprised": "astonished",
    "debate": "discussion",
    "question": "query",
    "quietly": "softly",
    "discuss": "examine",
    "praises": "commends",
}

_SWAPS = [
    ("red", "blue"),
    ("blue", "green"),
    ("two", "three"),
    ("three", "four"),
    ("morning", "evening"),
    ("always", "never"),
    ("rises", "falls"),
    ("grows", "shrinks"),
    ("open", "closed"),
]

_OPENERS = [
    "A new report on",
    "Local voices debate",
    "Few people expected",
    "Researchers revisit",
    "A quiet shift in",
    "Critics question",
    "The festival celebrated",
    "An old letter mentions",
]

_TAILS = [
    "surprised the entire region",
    "drew a careful crowd",
    "reshapes daily routines",
    "remains hard to ignore",
    "sparked a lively exchange",
    "deserves a second look",
    "changed one family forever",
    "quietly gained momentum",
]

_EXTRAS = [
    "notable",
    "recent",
    "curious",
    "modest",
    "sweeping",
    "unexpected",
    "careful",
    "renewed",
]

# Vocabulary used when the prompt names no topics (the "naive" setting).
_FALLBACK_TOPICS = [
    "the weather",
    "the harvest",
    "the market",
    "the river",
    "the old mill",
    "the town hall",
]

_COUNT_RE = re.compile(r"\b(\d+)\b")


class ScriptedLLM:
    """Transport-compatible scripted backend (see gateway.Transport)."""

    def __init__(self, topics: list[str] | None = None, fail_attempts: int = 0):
        if topics is None:
            from syncse.pools import load_default_pools

            topics = list(load_default_pools().topics)
        # Longest first so multi-word topics win over any substrings.
        self.topics = sorted(topics, key=len, reverse=True)
        self.fail_attempts = fail_attempts
        self.calls = 0
        self._attempts: dict[str, int] = {}
        self._lock = threading.Lock()

    def send(self, payload: dict) -> dict:
        key = payload_key(payload)
        with self._lock:
            self.calls += 1
            seen = self._attempts.get(key, 0)
            self._attempts[key] = seen + 1
        if seen < self.fail_attempts:
            raise TransportError("scripted rate limit", retryable=True, status=429)
        text, usage = self._answer(payload, repeat_index=max(0, seen - self.fail_attempts))
        prompt_tokens, completion_tokens = usage
        return {
            "id": f"scripted-{key[:12]}",
            "object": "chat.completion",
            "model": payload.get("model", ""),
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "total_tokens": prompt_tokens + completion_tokens,
            },
        }

    # -- request families ---------------------------------------------------

    def _answer(self, payload: dict, repeat_index: int) -> tuple[str, tuple[int, int]]:
        messages = payload.get("messages", [])
        system = messages[0]["content"] if messages else ""
        final = messages[-1]["content"] if messages else ""
        rng = _request_rng(payload, repeat_index)
        if INPUT_MARKER in final:
            sentence = _input_sentence(final)
            if system == POSITIVE_SYSTEM:
                return self._paraphrase(sentence, rng), POSITIVE_USAGE
            if system == HARD_NEGATIVE_SYSTEM:
                return self._contradict(sentence, rng), HARD_NEGATIVE_USAGE
            # Unknown annotation family: answer like a paraphrase.
            return self._paraphrase(sentence, rng), POSITIVE_USAGE
        return self._generate(final, rng), GENERATION_USAGE

    def _generate(self, prompt: str, rng: np.random.Generator) -> str:
        match = _COUNT_RE.search(prompt)
        count = int(match.group(1)) if match else 10
        lowered = prompt.lower()
        found = [t for t in self.topics if t.lower() in lowered]
        vocabulary = found or _FALLBACK_TOPICS
        base_opener = int(rng.integers(len(_OPENERS)))
        base_tail = int(rng.integers(len(_TAILS)))
        base_extra = int(rng.integers(len(_EXTRAS)))

        def compose(i: int, level: int) -> str:
            topic = vocabulary[i % len(vocabulary)]
            opener = _OPENERS[(base_opener + i) % len(_OPENERS)]
            tail = _TAILS[(base_tail + 3 * i) % len(_TAILS)]
            if level == 0:
                return f"{opener} {topic} {tail}."
            extra = _EXTRAS[(base_extra + i + level - 1) % len(_EXTRAS)]
            return f"{opener} {extra} {topic} {tail}."

        lines = []
        used: set[str] = set()
        for i in range(count):
            level = 0
            sentence = compose(i, level)
            while sentence in used:  # bounded: the extras ladder breaks repeats
                level += 1
                sentence = compose(i, level)
            used.add(sentence)
            lines.append(f"{i + 1}. {sentence}")
        return "\n".join(lines)

    def _paraphrase(self, sentence: str, rng: np.random.Generator) -> str:
        if sentence in SCRIPTED_POSITIVES:
            return SCRIPTED_POSITIVES[sentence]
        words = sentence.split()
        rewritten = []
        changed = False
        for word in words:
            bare = word.strip(".,!?;:").lower()
            if bare in _SYNONYMS:
                replacement = _match_case(_SYNONYMS[bare], word)
                rewritten.append(word.replace(_strip_outer(word), replacement, 1))
                changed = True
            else:
                rewritten.append(word)
        if not changed:
            return "Put differently, " + _lower_first(sentence)
        return " ".join(rewritten)

    def _contradict(self, sentence: str, rng: np.random.Generator) -> str:
        if sentence in SCRIPTED_NEGATIVES:
            return SCRIPTED_NEGATIVES[sentence]
        lowered = sentence.lower()
        for a, b in _SWAPS:
            pattern = re.compile(rf"\b{a}\b", re.IGNORECASE)
            if pattern.search(sentence):
                return pattern.sub(b, sentence, count=1)
        if " is " in lowered:
            return re.sub(r"\bis\b", "is not", sentence, count=1, flags=re.IGNORECASE)
        return "It is not true that " + _lower_first(sentence)


def _request_rng(payload: dict, repeat_index: int) -> np.random.Generator:
    digest = hashlib.sha256((payload_key(payload) + f":{repeat_index}").encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence(words))


def _input_sentence(content: str) -> str:
    start = content.index(INPUT_MARKER) + len(INPUT_MARKER)
    end = content.find("\n", start)
    return content[start:end if end != -1 else None].strip()


def _strip_outer(word: str) -> str:
    return word.strip(".,!?;:")


def _match_case(replacement: str, original: str) -> str:
    bare = _strip_outer(original)
    if bare[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def _lower_first(sentence: str) -> str:
    return sentence[:1].lower() + sentence[1:] if sentence else sentence
