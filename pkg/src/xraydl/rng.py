"""Deterministic, platform-independent random number generation.

The scalar stream is xoshiro256** with its 256-bit state filled by four
successive splitmix64 outputs of the seed. Bulk draws (dropout masks,
weight init) take one 64-bit key from the scalar stream and expand it in
counter mode: element ``i`` is ``splitmix64_mix(key + (i + 1) * GOLDEN)``,
which numpy evaluates exactly with wrapping uint64 arithmetic.

Constants:
    GOLDEN = 0x9E3779B97F4A7C15
    MIX1   = 0xBF58476D1CE4E5B9  (shift 30 before)
    MIX2   = 0x94D049BB133111EB  (shift 27 before, 31 after)
    xoshiro256**: result = rotl(s1 * 5, 7) * 9; t = s1 << 17; rotations 45.

Floats are ``(x >> 11) * 2**-53``, uniform on [0, 1).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
_TWO_M53 = 1.0 / (1 << 53)


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Seeded generator; identical seed and call sequence give identical output."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        sm = self.seed
        state = []
        for _ in range(4):
            sm = (sm + GOLDEN) & MASK64
            state.append(splitmix64_mix(sm))
        if not any(state):
            state[0] = GOLDEN
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * _TWO_M53

    def uniform_scalar(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def bits(self, shape) -> np.ndarray:
        """Counter-mode uint64 block of the given shape."""
        key = np.uint64(self.next_u64())
        n = int(np.prod(shape, dtype=np.int64))
        counter = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = key + counter * np.uint64(GOLDEN)
            out = _mix_array(z)
        return out.reshape(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.bits(shape) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        if low == 0.0 and high == 1.0:
            return u
        return low + (high - low) * u

    def shuffle(self, items: list) -> list:
        """Fisher-Yates; returns a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def derive(self, index: int) -> "Rng":
        """Independent child stream keyed by ``index``; does not advance self."""
        s0 = self._s[0]
        return Rng(splitmix64_mix(s0 ^ splitmix64_mix((index * GOLDEN) & MASK64)))
