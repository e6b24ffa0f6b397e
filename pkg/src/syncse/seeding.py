"""Deterministic derivation of per-stage random streams.

Every source of randomness in the pipeline is a stream derived from a single
64-bit master seed plus a stage name and an item index.  Streams are
independent, so adding items to one stage never perturbs the draws of another
(or of earlier items in the same stage), and results are reproducible across
platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_rng(master_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    """Return the random stream for (master_seed, stage, index).

    The stage name is hashed so that distinct stages can never collide, and
    the index is mixed in separately so per-item streams are cheap to derive.
    """
    digest = hashlib.sha256(stage.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    seq = np.random.SeedSequence([int(master_seed) & _MASK64, *words, int(index) & _MASK64])
    return np.random.default_rng(seq)
