"""Templated toy corpus: paraphrase positives, contradiction negatives.

Small enough to train in seconds, structured enough that a linear head over
hashed character n-grams can learn it: positives swap every content word for
a synonym, negatives flip exactly one detail (verb, adjective, or an
inserted negation), so the untrained feature space ranks the contradiction
closer to the anchor than the paraphrase and training has to invert that.
"""

from __future__ import annotations

import json
from pathlib import Path

from syncse.seeding import derive_rng

# (word, synonym, opposite)
ADJECTIVES = [
    ("cheerful", "joyful", "miserable"),
    ("speedy", "swift", "sluggish"),
    ("shiny", "gleaming", "dull"),
    ("enormous", "gigantic", "tiny"),
    ("silent", "quiet", "noisy"),
    ("tidy", "neat", "filthy"),
    ("cozy", "snug", "freezing"),
    ("sturdy", "robust", "flimsy"),
]

# (word, synonym)
NOUNS = [
    ("engineer", "technician"),
    ("musician", "performer"),
    ("teacher", "instructor"),
    ("sailor", "mariner"),
    ("chef", "cook"),
    ("farmer", "grower"),
    ("painter", "artist"),
    ("runner", "sprinter"),
]

# (word, synonym, opposite)
VERBS = [
    ("praised", "complimented", "criticized"),
    ("repaired", "restored", "wrecked"),
    ("opened", "unlocked", "sealed"),
    ("cleaned", "scrubbed", "soiled"),
    ("finished", "completed", "abandoned"),
    ("admired", "adored", "despised"),
    ("guarded", "protected", "ignored"),
    ("painted", "decorated", "stripped"),
]

# (phrase, synonym phrase)
OBJECTS = [
    ("the wooden boat", "the timber vessel"),
    ("the garden gate", "the yard entrance"),
    ("the copper kettle", "the metal pot"),
    ("the narrow bridge", "the slim crossing"),
    ("the village mural", "the town fresco"),
    ("the market stall", "the bazaar booth"),
    ("the stone tower", "the rock turret"),
    ("the glass lantern", "the crystal lamp"),
]

# (phrase, synonym phrase)
PLACES = [
    ("near the river", "by the stream"),
    ("in the valley", "within the dale"),
    ("after the storm", "once the tempest passed"),
    ("at the harbor", "by the docks"),
    ("before sunrise", "prior to dawn"),
    ("during the festival", "amid the celebration"),
]


def _sentence(adj, noun, verb, obj, place):
    return f"The {adj} {noun} {verb} {obj} {place}."


def _make_triplet(rng) -> dict:
    adj = ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]
    noun = NOUNS[int(rng.integers(len(NOUNS)))]
    verb = VERBS[int(rng.integers(len(VERBS)))]
    obj = OBJECTS[int(rng.integers(len(OBJECTS)))]
    place = PLACES[int(rng.integers(len(PLACES)))]
    anchor = _sentence(adj[0], noun[0], verb[0], obj[0], place[0])
    positive = _sentence(adj[1], noun[1], verb[1], obj[1], place[1])
    flip = int(rng.integers(3))
    if flip == 0:
        negative = _sentence(adj[0], noun[0], verb[2], obj[0], place[0])
    elif flip == 1:
        negative = _sentence(adj[2], noun[0], verb[0], obj[0], place[0])
    else:
        negative = f"The {adj[0]} {noun[0]} never {verb[0]} {obj[0]} {place[0]}."
    return {"sent0": anchor, "sent1": positive, "hard_neg": negative}


def build_toy_triplets(n: int, seed: int, split: str = "train") -> list[dict]:
    rng = derive_rng(seed, f"toy-{split}")
    return [_make_triplet(rng) for _ in range(n)]


def build_toy_sts(n: int, seed: int) -> list[dict]:
    """Graded pairs; gold reflects how much of the template tuple is shared."""
    rng = derive_rng(seed, "toy-sts")
    pairs = []
    for i in range(n):
        adj = ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]
        noun = NOUNS[int(rng.integers(len(NOUNS)))]
        verb = VERBS[int(rng.integers(len(VERBS)))]
        obj = OBJECTS[int(rng.integers(len(OBJECTS)))]
        place = PLACES[int(rng.integers(len(PLACES)))]
        anchor = _sentence(adj[0], noun[0], verb[0], obj[0], place[0])
        level = i % 5
        if level == 0:  # full paraphrase
            other = _sentence(adj[1], noun[1], verb[1], obj[1], place[1])
            score = 1.0
        elif level == 1:  # same actor and action, new scene
            obj2 = OBJECTS[int(rng.integers(len(OBJECTS)))]
            place2 = PLACES[int(rng.integers(len(PLACES)))]
            other = _sentence(adj[1], noun[1], verb[1], obj2[0], place2[0])
            score = 0.7
        elif level == 2:  # same actor only
            verb2 = VERBS[int(rng.integers(len(VERBS)))]
            obj2 = OBJECTS[int(rng.integers(len(OBJECTS)))]
            place2 = PLACES[int(rng.integers(len(PLACES)))]
            other = _sentence(adj[1], noun[1], verb2[0], obj2[0], place2[0])
            score = 0.4
        elif level == 3:  # contradiction: one flipped detail
            other = _sentence(adj[0], noun[0], verb[2], obj[0], place[0])
            score = 0.2
        else:  # unrelated tuple
            other = _sentence(
                ADJECTIVES[int(rng.integers(len(ADJECTIVES)))][0],
                NOUNS[int(rng.integers(len(NOUNS)))][0],
                VERBS[int(rng.integers(len(VERBS)))][0],
                OBJECTS[int(rng.integers(len(OBJECTS)))][0],
                PLACES[int(rng.integers(len(PLACES)))][0],
            )
            score = 0.0
        pairs.append({"text_a": anchor, "text_b": other, "score": score})
    return pairs


def write_jsonl(rows: list[dict], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
