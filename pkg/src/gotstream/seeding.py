"""Deterministic RNG fan-out from a single root seed.

Every consumer asks for a named stream (`rng(root, "synth", dialogue_id)`).
Streams are derived with a counter-based generator (Philox) keyed by a
hash of the labels, so adding or reordering consumers never perturbs the
randomness another consumer sees.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_words(labels: tuple) -> list[int]:
    digest = hashlib.sha256(repr(labels).encode("utf-8")).digest()
    # four 64-bit words of entropy derived from the labels
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def child_seed(root: int, *labels) -> np.random.SeedSequence:
    """Derive an independent seed sequence for the given stream labels."""
    return np.random.SeedSequence(entropy=[int(root)] + _label_words(labels))


def rng(root: int, *labels) -> np.random.Generator:
    """Counter-based generator for the stream named by `labels`."""
    return np.random.Generator(np.random.Philox(child_seed(root, *labels)))
