"""Batch selection strategies: minimum-certainty and uniform-random.

Random sampling is reproducible across platforms and builds: the generator is
numpy's PCG64, and the stream for iteration ``i`` of a run with seed ``s`` is
seeded with ``(s XOR (i * STREAM_STRIDE)) mod 2**64`` where STREAM_STRIDE is
the fixed odd constant below. Inserting or re-running an iteration therefore
never shifts the samples drawn by other iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

STREAM_STRIDE = 0x9E3779B97F4A7C15  # odd 64-bit constant (golden-ratio multiplier)
_MASK64 = (1 << 64) - 1

STRATEGIES = ("min_certainty", "random")


@dataclass(frozen=True)
class SamplerConfig:
    batch_size: int = 100
    strategy: str = "min_certainty"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")


def substream_seed(seed: int, iteration: int) -> int:
    """Derive the per-iteration RNG seed from the run seed."""
    return (seed ^ ((iteration * STREAM_STRIDE) & _MASK64)) & _MASK64


def sample_min_certainty(ranking: Sequence[tuple[str, float]], n: int) -> list[str]:
    """First n image ids of an ascending (image_id, c_min) ranking."""
    if n > len(ranking):
        raise ValidationError(f"cannot sample {n} images from a pool of {len(ranking)}")
    return [image_id for image_id, _ in ranking[:n]]


def sample_random(pool_ids: Sequence[str], n: int, seed: int, iteration: int) -> list[str]:
    """Uniform sample of n ids without replacement, sorted lexicographically.

    Deterministic for a given (pool, n, seed, iteration).
    """
    if n > len(pool_ids):
        raise ValidationError(f"cannot sample {n} images from a pool of {len(pool_ids)}")
    rng = np.random.Generator(np.random.PCG64(substream_seed(seed, iteration)))
    chosen = rng.choice(len(pool_ids), size=n, replace=False)
    return sorted(pool_ids[i] for i in chosen)
