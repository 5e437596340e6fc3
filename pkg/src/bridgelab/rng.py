"""Deterministic, named random streams.

All randomness in the library flows from a single 64-bit experiment seed
through counter-based Philox streams addressed by ``(seed, purpose, index)``.
The purpose string is digested with SHA-256, so adding a new purpose (a new
experiment, a new sampler) never perturbs the draws of any existing one, and
streams with distinct addresses are independent and safe to consume from
concurrent workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


def stream_key(seed: int, purpose: str, index: int = 0) -> tuple[int, int]:
    """Two-word Philox key derived from (seed, purpose, index)."""
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=True))
    h.update(purpose.encode("utf-8"))
    h.update(int(index).to_bytes(8, "little", signed=False))
    d = h.digest()
    return tuple(int.from_bytes(d[8 * i : 8 * (i + 1)], "little") for i in range(2))


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent Philox generator for the given stream address."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, purpose, index)))


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream; the address doubles as a replayable id."""

    seed: int = 42
    purpose: str = "default"
    index: int = 0

    @property
    def id(self) -> str:
        return f"{self.seed}/{self.purpose}/{self.index}"

    def generator(self) -> np.random.Generator:
        """Fresh generator at the start of this stream (replays identically)."""
        return stream(self.seed, self.purpose, self.index)

    def child(self, index: int) -> "RngStream":
        """Sub-stream for e.g. one chunk of a path ensemble."""
        return RngStream(self.seed, self.purpose, index)
