from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import ClassVar, Optional, Tuple, Union

import numpy as np

from ..errors import InstanceParseError


class Domain(str, Enum):
    JSSP = "jssp"
    TSP = "tsp"
    CVRP = "cvrp"


def euclidean_matrix(coords: np.ndarray) -> np.ndarray:
    """Exact double-precision Euclidean distances (no TSPLIB rounding)"""
    diff = coords[:, None, :] - coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


@dataclass(frozen=True, eq=False)
class JsspInstance:
    """Job shop instance in Taillard convention: every job visits every machine once"""

    name: str
    num_jobs: int
    num_machines: int
    routing: Tuple[Tuple[Tuple[int, int], ...], ...]
    bks: float
    metric: str = "exact"

    domain: ClassVar[Domain] = Domain.JSSP

    def __post_init__(self):
        if len(self.routing) != self.num_jobs:
            raise InstanceParseError(
                f"dimension mismatch: {len(self.routing)} job routings for {self.num_jobs} jobs"
            )
        for job, route in enumerate(self.routing):
            if len(route) != self.num_machines:
                raise InstanceParseError(
                    f"dimension mismatch: job {job} has {len(route)} operations, expected {self.num_machines}"
                )
            machines = sorted(m for m, _ in route)
            if machines != list(range(self.num_machines)):
                raise InstanceParseError(f"job {job} does not visit each machine exactly once")
            if any(p <= 0 for _, p in route):
                raise InstanceParseError(f"job {job} has a non-positive processing time")

    @property
    def encoding_length(self) -> int:
        return self.num_jobs * self.num_machines

    @cached_property
    def lower_bound(self) -> float:
        """max(per-job total processing, per-machine total processing)"""
        per_job = [sum(p for _, p in route) for route in self.routing]
        per_machine = [0] * self.num_machines
        for route in self.routing:
            for m, p in route:
                per_machine[m] += p
        return float(max(max(per_job), max(per_machine)))

    def random_encoding(self, rng) -> np.ndarray:
        base = np.repeat(np.arange(self.num_jobs), self.num_machines)
        return rng.shuffle(base)

    def is_valid(self, encoding: np.ndarray) -> bool:
        if len(encoding) != self.encoding_length:
            return False
        counts = np.bincount(np.asarray(encoding), minlength=self.num_jobs)
        return len(counts) == self.num_jobs and bool(np.all(counts == self.num_machines))

    def to_tokens(self, encoding: np.ndarray) -> np.ndarray:
        """Label the k-th occurrence of job j as j*M+k so sequences become plain permutations"""
        seen = np.zeros(self.num_jobs, dtype=np.int64)
        tokens = np.empty(len(encoding), dtype=np.int64)
        for i, job in enumerate(encoding):
            tokens[i] = job * self.num_machines + seen[job]
            seen[job] += 1
        return tokens

    def from_tokens(self, tokens: np.ndarray) -> np.ndarray:
        return np.asarray(tokens, dtype=np.int64) // self.num_machines


@dataclass(frozen=True, eq=False)
class TspInstance:
    """Symmetric Euclidean TSP"""

    name: str
    coords: np.ndarray
    bks: float
    metric: str = "exact"

    domain: ClassVar[Domain] = Domain.TSP

    def __post_init__(self):
        object.__setattr__(self, "coords", np.array(self.coords, dtype=np.float64))
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise InstanceParseError("dimension mismatch: TSP coordinates must be 2-D")
        if self.num_nodes < 3:
            raise InstanceParseError(f"TSP needs at least 3 nodes, got {self.num_nodes}")
        if not np.all(np.isfinite(self.coords)):
            raise InstanceParseError("TSP coordinates must be finite")
        self.coords.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return int(self.coords.shape[0])

    @property
    def encoding_length(self) -> int:
        return self.num_nodes

    @cached_property
    def distances(self) -> np.ndarray:
        matrix = euclidean_matrix(self.coords)
        matrix.setflags(write=False)
        return matrix

    def random_encoding(self, rng) -> np.ndarray:
        return rng.permutation(self.num_nodes)

    def is_valid(self, encoding: np.ndarray) -> bool:
        return len(encoding) == self.num_nodes and bool(
            np.array_equal(np.sort(encoding), np.arange(self.num_nodes))
        )

    def to_tokens(self, encoding: np.ndarray) -> np.ndarray:
        return np.asarray(encoding, dtype=np.int64)

    def from_tokens(self, tokens: np.ndarray) -> np.ndarray:
        return np.asarray(tokens, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class CvrpInstance:
    """Capacitated VRP with a single depot; solutions are giant tours over customers"""

    name: str
    coords: np.ndarray
    demands: np.ndarray
    capacity: int
    bks: float
    depot: int = 0
    metric: str = "exact"

    domain: ClassVar[Domain] = Domain.CVRP

    def __post_init__(self):
        object.__setattr__(self, "coords", np.array(self.coords, dtype=np.float64))
        object.__setattr__(self, "demands", np.array(self.demands, dtype=np.int64))
        if len(self.demands) != len(self.coords):
            raise InstanceParseError(
                f"dimension mismatch: {len(self.demands)} demands for {len(self.coords)} nodes"
            )
        if self.capacity <= 0:
            raise InstanceParseError(f"capacity must be positive, got {self.capacity}")
        if not 0 <= self.depot < len(self.coords):
            raise InstanceParseError(f"depot {self.depot} is not a node")
        if self.demands[self.depot] != 0:
            raise InstanceParseError("depot demand must be 0")
        if np.any(self.demands < 0):
            raise InstanceParseError("demands must be non-negative")
        over = np.flatnonzero(self.demands > self.capacity)
        if len(over):
            raise InstanceParseError(f"customer {int(over[0])} demand exceeds capacity {self.capacity}")
        self.coords.setflags(write=False)
        self.demands.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return int(self.coords.shape[0])

    @cached_property
    def customers(self) -> np.ndarray:
        ids = np.array([n for n in range(self.num_nodes) if n != self.depot], dtype=np.int64)
        ids.setflags(write=False)
        return ids

    @property
    def encoding_length(self) -> int:
        return self.num_nodes - 1

    @cached_property
    def distances(self) -> np.ndarray:
        matrix = euclidean_matrix(self.coords)
        matrix.setflags(write=False)
        return matrix

    def random_encoding(self, rng) -> np.ndarray:
        return rng.shuffle(self.customers)

    def is_valid(self, encoding: np.ndarray) -> bool:
        return len(encoding) == len(self.customers) and bool(
            np.array_equal(np.sort(encoding), self.customers)
        )

    def to_tokens(self, encoding: np.ndarray) -> np.ndarray:
        return np.asarray(encoding, dtype=np.int64)

    def from_tokens(self, tokens: np.ndarray) -> np.ndarray:
        return np.asarray(tokens, dtype=np.int64)


ProblemInstance = Union[JsspInstance, TspInstance, CvrpInstance]


@dataclass(frozen=True, eq=False)
class Solution:
    """Domain-tagged encoding with an optional cached cost"""

    domain: Domain
    encoding: np.ndarray
    cached_cost: Optional[float] = field(default=None)

    def __post_init__(self):
        encoding = np.array(self.encoding, dtype=np.int64)
        encoding.setflags(write=False)
        object.__setattr__(self, "encoding", encoding)
