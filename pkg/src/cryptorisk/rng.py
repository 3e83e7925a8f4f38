"""Seeded random substreams.

Every sampler in the package draws through :func:`block_draws`, which splits
``n`` draws into fixed-size blocks and gives block ``b`` its own generator
spawned from ``SeedSequence(entropy=seed_key, spawn_key=(b,))``.  The output
therefore depends only on ``(seed_key, n)``, never on how blocks are
scheduled, and a shorter run is a prefix of a longer one.
"""
from __future__ import annotations

import zlib
from typing import Callable, Sequence, Union

import numpy as np

SeedKey = Union[int, Sequence[int]]

BLOCK_SIZE = 1024


def stream_id(name: str) -> int:
    """Stable integer id for a named substream (module, command, ...)."""
    return zlib.crc32(name.encode("utf-8"))


def seed_key(seed: SeedKey, *keys: int) -> tuple[int, ...]:
    """Extend ``seed`` with extra integer keys, e.g. ``(seed, roll)``."""
    if isinstance(seed, (int, np.integer)):
        base = (int(seed),)
    else:
        base = tuple(int(s) for s in seed)
    if any(k < 0 for k in base + tuple(keys)):
        raise ValueError("seed components must be non-negative")
    return base + tuple(int(k) for k in keys)


def generator(seed: SeedKey, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(seed_key(seed, *keys))))


def block_generator(seed: SeedKey, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(list(seed_key(seed)), spawn_key=(int(block),))
    return np.random.default_rng(ss)


def block_draws(
    seed: SeedKey,
    n: int,
    draw: Callable[[np.random.Generator, int], np.ndarray],
    block_size: int = BLOCK_SIZE,
) -> np.ndarray:
    """Concatenate ``draw(rng_b, size_b)`` over fixed-size blocks along axis 0."""
    if n < 0:
        raise ValueError("n must be non-negative")
    parts = []
    for b, start in enumerate(range(0, n, block_size)):
        size = min(block_size, n - start)
        parts.append(np.asarray(draw(block_generator(seed, b), size)))
    if not parts:
        probe = np.asarray(draw(block_generator(seed, 0), 0))
        return probe
    return np.concatenate(parts, axis=0)
