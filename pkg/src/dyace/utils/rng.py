import hashlib
from typing import Tuple, Union

import numpy as np

Key = Union[int, str]


def stable_key(value: Key) -> int:
    """Map a stream key to a non-negative int that is stable across processes"""
    if isinstance(value, (int, np.integer)):
        if value < 0:
            raise ValueError(f"stream keys must be non-negative, got {value}")
        return int(value)
    digest = hashlib.sha256(str(value).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class RandomStream:
    """Seeded, splittable stream backed by the counter-based Philox generator.

    A stream is fully determined by ``(seed, key)``. ``derive`` appends to the
    key, so children never overlap with their parent or their siblings and the
    same derivation always yields the same numbers.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def derive(self, *key: Key) -> "RandomStream":
        return RandomStream(self.seed, self.key + tuple(stable_key(k) for k in key))

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, low: int, high: int) -> int:
        """Uniform int in [low, high)"""
        return int(self.generator.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def shuffle(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, copy=True)
        self.generator.shuffle(out)
        return out

    def choice(self, n: int, p=None) -> int:
        return int(self.generator.choice(n, p=p))

    def child_seed(self) -> int:
        """Plain int seed for consumers that build their own generator"""
        return int(self.generator.integers(0, 2**31 - 1))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, key={self.key})"
