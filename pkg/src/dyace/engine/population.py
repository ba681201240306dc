import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from ..problems.evaluation import encoding_cost
from ..problems.instances import Domain, ProblemInstance, Solution
from ..utils.rng import RandomStream

# pairs sampled for the diversity estimate once full enumeration gets too large
DIVERSITY_SAMPLE_PAIRS = 256
FULL_ENUMERATION_LIMIT = 32


def frozen_array(values: np.ndarray, dtype) -> np.ndarray:
    out = np.array(values, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Population:
    """Value-semantic snapshot P_t; nothing in the package mutates one in place"""

    instance: ProblemInstance
    encodings: np.ndarray
    costs: np.ndarray
    generation: int
    best_encoding: np.ndarray
    best_cost: float
    last_improvement: int
    diversity: float

    @classmethod
    def from_encodings(
        cls,
        instance: ProblemInstance,
        encodings: Sequence[np.ndarray],
        rng: RandomStream,
        generation: int = 0,
    ) -> "Population":
        """Evaluate raw encodings into a fresh snapshot (best-ever starts from these members)"""
        matrix = frozen_array(np.vstack([np.asarray(e) for e in encodings]), np.int64)
        costs = frozen_array([encoding_cost(instance, e) for e in matrix], np.float64)
        best = int(np.argmin(costs))
        return cls(
            instance=instance,
            encodings=matrix,
            costs=costs,
            generation=generation,
            best_encoding=frozen_array(matrix[best], np.int64),
            best_cost=float(costs[best]),
            last_improvement=generation,
            diversity=population_diversity(matrix, rng.derive("diversity")),
        )

    @property
    def domain(self) -> Domain:
        return self.instance.domain

    @property
    def size(self) -> int:
        return int(self.encodings.shape[0])

    @property
    def stagnation_len(self) -> int:
        return self.generation - self.last_improvement

    @property
    def best_ever(self) -> Solution:
        return Solution(self.domain, self.best_encoding, self.best_cost)

    @property
    def members(self) -> List[Solution]:
        return [Solution(self.domain, e, float(c)) for e, c in zip(self.encodings, self.costs)]

    def fingerprint(self) -> str:
        """Content hash used to prove that rollouts start from the same snapshot"""
        digest = hashlib.sha256()
        digest.update(self.instance.name.encode("utf-8"))
        digest.update(np.int64(self.generation).tobytes())
        digest.update(np.ascontiguousarray(self.encodings).tobytes())
        digest.update(np.ascontiguousarray(self.costs).tobytes())
        digest.update(np.float64(self.best_cost).tobytes())
        digest.update(np.int64(self.last_improvement).tobytes())
        return digest.hexdigest()


def init_population(instance: ProblemInstance, n: int, rng: RandomStream) -> Population:
    """n uniformly random valid encodings at generation 0"""
    if n < 2:
        raise ValueError(f"population size must be at least 2, got {n}")
    draws = rng.derive("init")
    return Population.from_encodings(instance, [instance.random_encoding(draws) for _ in range(n)], rng)


def population_diversity(
    pop: Union[Population, np.ndarray],
    rng: Optional[RandomStream] = None,
) -> float:
    """Mean positional disagreement over member pairs, in [0, 1].

    Every pair is enumerated up to 32 members; above that a fixed number of
    distinct pairs is drawn from ``rng``.
    """
    encodings = pop.encodings if isinstance(pop, Population) else np.asarray(pop)
    n, length = encodings.shape
    if n < 2 or length == 0:
        return 0.0
    if n <= FULL_ENUMERATION_LIMIT:
        first, second = np.triu_indices(n, k=1)
    else:
        gen = (rng or RandomStream(0, (0,))).generator
        first = gen.integers(0, n, size=DIVERSITY_SAMPLE_PAIRS)
        second = (first + gen.integers(1, n, size=DIVERSITY_SAMPLE_PAIRS)) % n
    agreement = np.count_nonzero(encodings[first] == encodings[second], axis=1) / length
    return float(np.mean(1.0 - agreement))
