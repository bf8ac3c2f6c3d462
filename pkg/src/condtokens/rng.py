"""Deterministic seeded pseudorandom numbers.

splitmix64 expands a single 64-bit seed into generator state and mixes
stream labels; xoshiro256** produces the actual draws.  Every consumer
derives its own named stream from a master seed, so a model initialized
matrix-by-matrix gets the same bytes no matter which order (or thread)
touches each matrix first.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(state: int):
    """Advance a splitmix64 state once; returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def derive_stream_seed(seed: int, *labels: str) -> int:
    """Fold string labels into a 64-bit sub-seed, deterministically.

    Label bytes are absorbed through the splitmix64 mixer, so
    derive_stream_seed(s, "a") and derive_stream_seed(s, "b") give
    independent-looking streams for any master seed s.
    """
    state = seed & _MASK64
    for label in labels:
        for byte in label.encode("utf-8"):
            state = (state ^ byte) & _MASK64
            _, state = splitmix64(state)
        out, state = splitmix64(state)
        state = out
    return state


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seeding.

    Pure-Python integer arithmetic: identical output on every platform,
    which is what keeps golden files and paired training runs stable.
    """

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            out, state = splitmix64(state)
            s.append(out)
        self._s = s

    @classmethod
    def for_stream(cls, seed: int, *labels: str) -> "Xoshiro256StarStar":
        return cls(derive_stream_seed(seed, *labels))

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s
        x = (s1 * 5) & _MASK64
        result = (((x << 7) | (x >> 57)) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Double in [0, 1) with 53 random bits."""
        return (self.next_uint64() >> 11) * (1.0 / (1 << 53))

    def uniform_matrix(self, rows: int, cols: int, low: float, high: float) -> np.ndarray:
        span = high - low
        data = [low + span * self.uniform() for _ in range(rows * cols)]
        return np.array(data, dtype=np.float64).reshape(rows, cols)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_uint64() % (i + 1)
            items[i], items[j] = items[j], items[i]
