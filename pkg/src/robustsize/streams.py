"""Reproducible random streams and chunked parallel execution.

Each replication owns a fixed slice of a Philox counter stream keyed by
``(seed, stream id)``. A replication with index ``i`` therefore sees the
same random numbers no matter how replications are grouped into chunks
or how many worker threads run. Standard normals come from the inverse
normal CDF so that every draw consumes exactly one 64-bit word.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, TypeVar

import numpy as np
from scipy import special

T = TypeVar("T")

_MASK64 = (1 << 64) - 1

# stream ids; fixed so reports stay reproducible across versions
STREAM_GAUSSIAN = 0
STREAM_RADIAL = 1
STREAM_SPHERE = 2
STREAM_CERTIFY = 3
STREAM_DESIGNS = 4
STREAM_DIRECTIONS = 5


@dataclass(frozen=True)
class McConfig:
    """Replication count, master seed and work granularity."""

    reps: int = 100_000
    seed: int = 0
    chunk: int = 8192

    def __post_init__(self):
        if int(self.reps) < 100:
            raise ValueError("reps must be at least 100")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if int(self.chunk) < 1:
            raise ValueError("chunk must be positive")
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "chunk", int(self.chunk))


def _key(seed: int, stream: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & _MASK64, int(stream)]).generate_state(2, np.uint64)


def raw_block(seed: int, stream: int, start: int, count: int, width: int) -> np.ndarray:
    """Raw 64-bit words for replications ``start .. start+count-1``, ``width`` words each."""
    blocks = -(-width // 4)  # Philox emits four words per counter increment
    counter = np.array([start * blocks, 0, 0, 0], dtype=np.uint64)
    bitgen = np.random.Philox(key=_key(seed, stream), counter=counter)
    raw = bitgen.random_raw(count * blocks * 4).reshape(count, blocks * 4)
    return raw[:, :width]


def uniform_block(seed: int, stream: int, start: int, count: int, width: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1)."""
    raw = raw_block(seed, stream, start, count, width)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal_block(seed: int, stream: int, start: int, count: int, width: int) -> np.ndarray:
    """Standard normals by inversion, one word per draw."""
    return special.ndtri(uniform_block(seed, stream, start, count, width))


def worker_count() -> int:
    """Worker threads, capped by ``ROBUSTSIZE_THREADS``; affects speed only."""
    env = os.environ.get("ROBUSTSIZE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(os.cpu_count() or 1, 8))


def chunk_ranges(reps: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(chunk, reps - s)) for s in range(0, reps, chunk)]


def map_chunks(fn: Callable[[int, int], T], reps: int, chunk: int) -> list[T]:
    """Apply ``fn(start, count)`` to every chunk; results come back in chunk order."""
    ranges = chunk_ranges(reps, chunk)
    workers = min(worker_count(), len(ranges))
    if workers <= 1:
        return [fn(s, c) for s, c in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda rc: fn(*rc), ranges))
