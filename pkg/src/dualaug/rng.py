"""Deterministic RNG stream derivation.

Every random draw in the pipeline comes from a generator derived from
(master_seed, episode_key, frame_id, stream_tag) via numpy's SeedSequence,
so outputs are independent of worker count and scheduling order.

Python's builtin hash() is salted per process; episode keys are therefore
hashed with blake2b before entering the seed material.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# Stream tags keep draws for different purposes statistically independent
# even when episode/frame ids coincide.
STREAM_REL = 1
STREAM_IRR = 2
STREAM_SPRITE = 3
STREAM_SCENE = 4
STREAM_TRAIN = 5
STREAM_NET = 6


def stable_key(text: str) -> int:
    """Map a string to a stable 64-bit integer (process-independent)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(*entropy: int) -> np.random.Generator:
    """Generator seeded from a mix of integer entropy words."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


@dataclass(frozen=True)
class FrameRng:
    """RNG context for augmenting one frame of one episode.

    episode_stream draws are constant across frames of an episode;
    frame_stream draws differ per frame.
    """

    master_seed: int
    episode_key: str
    frame_id: int

    def episode_stream(self, tag: int, *extra: int) -> np.random.Generator:
        return derive_rng(self.master_seed, stable_key(self.episode_key), tag, *extra)

    def frame_stream(self, tag: int, *extra: int) -> np.random.Generator:
        return derive_rng(
            self.master_seed, stable_key(self.episode_key), self.frame_id, tag, *extra
        )
