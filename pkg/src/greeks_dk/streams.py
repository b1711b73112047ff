"""Reproducible counter-based random streams.

Draws are produced in fixed-size blocks, each block from its own Philox
generator keyed by ``(seed, family tag, block index)``. The block layout is a
constant of the implementation, so a run regenerates bit-identically no
matter how the consuming loops are scheduled or how many worker threads the
caller uses. Distinct stream families keep parameter draws, path noise and
auxiliary noise independent even when they share a seed.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

BLOCK = 8192

_FAMILIES = {
    "lambda": 0x4C,   # randomized-parameter draws
    "path": 0x5A,     # model / path noise
    "noise": 0x4E,    # auxiliary noise (e.g. perturbed weights)
    "quadrature": 0x51,
}

_MASK64 = (1 << 64) - 1


def stream(seed: int, family: str, block: int) -> np.random.Generator:
    """Generator for one block of the named stream family."""
    if family not in _FAMILIES:
        raise ValueError(f"unknown stream family {family!r}")
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64, spawn_key=(_FAMILIES[family], int(block))
    )
    return np.random.Generator(np.random.Philox(ss))


def block_ranges(n: int):
    """Yield ``(block_index, start, stop)`` covering ``range(n)``."""
    for b in range((n + BLOCK - 1) // BLOCK):
        lo = b * BLOCK
        yield b, lo, min(lo + BLOCK, n)


def generate_blocked(seed: int, family: str, n: int, draw: Callable) -> np.ndarray:
    """Assemble ``draw(gen, count)`` outputs over all blocks of an n-draw run.

    ``draw`` must return an array whose leading axis has length ``count``.
    """
    if n <= 0:
        raise ValueError("number of draws must be positive")
    parts = [draw(stream(seed, family, b), hi - lo) for b, lo, hi in block_ranges(n)]
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)


def mix_seed(base: int, *parts: int) -> int:
    """Stable 64-bit mix of a base seed with integer tags (splitmix64 rounds)."""
    x = int(base) & _MASK64
    for p in parts:
        x = (x + 0x9E3779B97F4A7C15 + (int(p) & _MASK64)) & _MASK64
        x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
        x = x ^ (x >> 31)
    return x
