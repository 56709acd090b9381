"""Seeded replica streams and a thread fan-out.

Counter scheme: replicas are grouped into fixed-size blocks, and block ``b``
of stream ``tag`` draws from

    Generator(PCG64(SeedSequence(master, spawn_key=(tag, b))))

consuming its replicas in order. Adding replicas only appends blocks or
extends the last one, so the first replicas never change. The kernels release
the GIL, which is why plain threads are enough for the fan-out.
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, NamedTuple

import numpy as np

BLOCK = 1024


class Block(NamedTuple):
    index: int
    start: int
    count: int
    rng: np.random.Generator


def stream_tag(name: str) -> int:
    """Stable 32-bit tag for a named stream (crc32, not Python's salted hash)."""
    return zlib.crc32(name.encode())


def make_rng(master: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))))


def blocks(master: int, tag, replicas: int, block: int = BLOCK) -> list[Block]:
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if isinstance(tag, str):
        tag = stream_tag(tag)
    out = []
    for b, start in enumerate(range(0, replicas, block)):
        out.append(Block(b, start, min(block, replicas - start), make_rng(master, tag, b)))
    return out


def default_workers() -> int:
    return os.cpu_count() or 1


def fan_out(fn: Callable[[Block], np.ndarray], bl: list[Block], workers: int | None = None):
    """Run ``fn`` on every block and concatenate the results in replica order.

    ``fn`` returns an array (or tuple of arrays) whose leading axis has
    ``block.count`` rows.
    """
    workers = workers or default_workers()
    if workers <= 1 or len(bl) <= 1:
        parts = [fn(b) for b in bl]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, bl))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))
    return np.concatenate(parts)
