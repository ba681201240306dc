import io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..dsl.interpreter import apply_operator
from ..dsl.spec import OperatorSpec
from ..errors import RolloutTimeout
from ..problems.evaluation import optimality_gap
from ..problems.instances import ProblemInstance
from ..utils.rng import RandomStream
from .population import Population, frozen_array, population_diversity

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["generation", "best_cost", "mean_cost", "diversity", "successes", "total_gain", "offspring"]


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_cost: float
    mean_cost: float
    diversity: float
    successes: int
    total_gain: float
    offspring: int


@dataclass
class GenerationTrace:
    """Per-generation statistics of one trajectory, in generation order"""

    records: List[GenerationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: GenerationRecord) -> None:
        self.records.append(record)

    def extend(self, other: Iterable[GenerationRecord]) -> None:
        self.records.extend(other)

    def tail(self, count: int) -> "GenerationTrace":
        return GenerationTrace(self.records[-count:] if count > 0 else [])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=TRACE_COLUMNS)

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        """RFC-4180 CSV export; floats keep full precision so features can be recomputed from it"""
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format="%.17g", lineterminator="\r\n")
        text = buffer.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "GenerationTrace":
        return cls([
            GenerationRecord(
                generation=int(row.generation),
                best_cost=float(row.best_cost),
                mean_cost=float(row.mean_cost),
                diversity=float(row.diversity),
                successes=int(row.successes),
                total_gain=float(row.total_gain),
                offspring=int(row.offspring),
            )
            for row in frame.itertuples(index=False)
        ])

    @classmethod
    def from_csv(cls, source: Union[str, Path, io.StringIO]) -> "GenerationTrace":
        return cls.from_frame(pd.read_csv(source, float_precision="round_trip"))


def step(pop: Population, spec: OperatorSpec, rng: RandomStream) -> Tuple[Population, GenerationRecord]:
    """One transition P_t -> P_t+1: spec-driven variation, then (mu+lambda) truncation"""
    variation = apply_operator(spec, pop, rng.derive("variation"))

    successes = 0
    total_gain = 0.0
    for child_cost, parents in zip(variation.costs, variation.parents):
        reference = min(float(pop.costs[p]) for p in parents)
        if child_cost < reference:
            successes += 1
            total_gain += reference - float(child_cost)

    # parents first so equal costs keep the incumbent; the stable sort keeps the elite
    pool_encodings = np.vstack([pop.encodings, variation.encodings])
    pool_costs = np.concatenate([pop.costs, variation.costs])
    order = np.argsort(pool_costs, kind="stable")[: pop.size]
    encodings = frozen_array(pool_encodings[order], np.int64)
    costs = frozen_array(pool_costs[order], np.float64)

    generation = pop.generation + 1
    best_encoding, best_cost, last_improvement = pop.best_encoding, pop.best_cost, pop.last_improvement
    if costs[0] < pop.best_cost:
        best_encoding, best_cost, last_improvement = frozen_array(encodings[0], np.int64), float(costs[0]), generation

    diversity = population_diversity(encodings, rng.derive("diversity"))
    next_pop = Population(
        instance=pop.instance,
        encodings=encodings,
        costs=costs,
        generation=generation,
        best_encoding=best_encoding,
        best_cost=best_cost,
        last_improvement=last_improvement,
        diversity=diversity,
    )
    record = GenerationRecord(
        generation=generation,
        best_cost=best_cost,
        mean_cost=float(costs.mean()),
        diversity=diversity,
        successes=successes,
        total_gain=total_gain,
        offspring=len(variation.costs),
    )
    logger.debug("generation %d best %.4f diversity %.4f", generation, best_cost, diversity)
    return next_pop, record


def run_horizon(
    pop: Population,
    spec: OperatorSpec,
    h: int,
    rng: RandomStream,
    deadline: Optional[float] = None,
) -> Tuple[Population, GenerationTrace]:
    """h consecutive steps; generation t draws from ``rng.derive(t)`` so horizons compose.

    ``deadline`` is a ``time.monotonic()`` value checked between generations.
    """
    if h < 1:
        raise ValueError(f"horizon must be at least 1, got {h}")
    trace = GenerationTrace()
    for _ in range(h):
        if deadline is not None and time.monotonic() > deadline:
            raise RolloutTimeout(f"rollout of {spec.id} passed its time limit at generation {pop.generation}")
        pop, record = step(pop, spec, rng.derive(pop.generation))
        trace.append(record)
    return pop, trace


def trajectory_metric(trace: GenerationTrace, instance: ProblemInstance) -> float:
    """Gap of the best cost seen anywhere on the trajectory"""
    if not len(trace):
        raise ValueError("trajectory metric needs at least one generation")
    return optimality_gap(float(trace.column("best_cost").min()), instance.bks)
