"""Seeded randomness built only on the raw PCG64 uniform stream.

Everything stochastic in the pipeline (sampling, weight init, scenario
generation) goes through these helpers. They consume ``Generator.random``
exclusively, whose bit stream numpy guarantees stable across releases, so
seeded runs and golden report files stay reproducible.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *streams: object) -> np.random.Generator:
    """Independent generator for ``seed`` plus a tuple of stream labels."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for s in streams:
        for byte in str(s).encode("utf-8"):
            entropy.append(byte)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def randint(rng: np.random.Generator, low: int, high: int) -> int:
    """Uniform integer in [low, high] inclusive."""
    if high < low:
        raise ValueError("empty range")
    span = high - low + 1
    return low + min(span - 1, int(rng.random() * span))


def shuffled(rng: np.random.Generator, items: list) -> list:
    keys = rng.random(len(items))
    return [items[i] for i in np.argsort(keys, kind="stable")]


def subsample(rng: np.random.Generator, items: list, k: int) -> list:
    """Draw k items uniformly without replacement, order randomized."""
    if k > len(items):
        raise ValueError(f"cannot draw {k} from {len(items)} items")
    return shuffled(rng, items)[:k]


def uniform(rng: np.random.Generator, low: float, high: float, shape) -> np.ndarray:
    return low + (high - low) * rng.random(shape)


def normal(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    """Box-Muller normals from the uniform stream."""
    n = int(np.prod(shape)) if shape else 1
    half = (n + 1) // 2
    u1 = rng.random(half)
    u2 = rng.random(half)
    u1 = np.clip(u1, 1e-300, None)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
    return (scale * z).reshape(shape)
