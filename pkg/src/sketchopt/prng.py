"""Seeded PRNG stream splitting.

One root seed is split into independent named streams so that toggling a
stage (e.g. disabling augmentation) never perturbs the randomness seen by
the other stages. Streams are numpy Generators over PCG64; the spawn keys
are stable, so equal seeds reproduce bit-for-bit across runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# Fixed spawn order; appending new streams keeps existing ones stable.
_STREAMS = ("init", "augment", "backend")


@dataclass(frozen=True)
class RngStreams:
    init: np.random.Generator
    augment: np.random.Generator
    backend_seed: int


def split_streams(seed: int) -> RngStreams:
    """Split a root seed into the fixed per-stage streams."""
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    backend_entropy = children[2].generate_state(2)
    return RngStreams(
        init=np.random.default_rng(children[0]),
        augment=np.random.default_rng(children[1]),
        backend_seed=int(backend_entropy[0]) ^ (int(backend_entropy[1]) << 32),
    )


def text_entropy(text: str) -> int:
    """Stable 64-bit entropy for a string, identical across processes."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
