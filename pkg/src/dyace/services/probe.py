import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..dsl.spec import OperatorSpec
from ..engine.engine import GenerationTrace, run_horizon
from ..engine.population import Population
from ..errors import DyaceError
from ..problems.evaluation import optimality_gap
from ..problems.instances import ProblemInstance
from ..utils.rng import RandomStream, stable_key

logger = logging.getLogger(__name__)

MIN_FEATURE_GENERATIONS = 3


@dataclass(frozen=True)
class TrajectoryFeatures:
    """Search trajectory state vector; gap kinematics are in percent of the BKS"""

    velocity: float
    acceleration: float
    diversity: float
    diversity_loss_rate: float
    operator_precision: float
    operator_impact: float
    stagnation_len: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def mean(cls, items: Sequence["TrajectoryFeatures"]) -> "TrajectoryFeatures":
        """Field-wise mean over rollouts"""
        return cls(**{
            f.name: math.fsum(getattr(item, f.name) for item in items) / len(items) for f in fields(cls)
        })


def extract_features(trace: GenerationTrace, instance: ProblemInstance) -> TrajectoryFeatures:
    """Distill a trajectory into kinematics, diversity dynamics and operator telemetry"""
    if len(trace) < MIN_FEATURE_GENERATIONS:
        raise ValueError(f"feature extraction needs {MIN_FEATURE_GENERATIONS} generations, got {len(trace)}")
    best = trace.column("best_cost")
    gaps = np.array([optimality_gap(c, instance.bks) for c in best])
    diversity = trace.column("diversity")
    successes = float(trace.column("successes").sum())
    offspring = float(trace.column("offspring").sum())
    gain = float(trace.column("total_gain").sum())

    improved = np.flatnonzero(best[1:] < best[:-1])
    last_improvement = int(improved[-1]) + 1 if len(improved) else 0

    return TrajectoryFeatures(
        velocity=float(np.mean(-np.diff(gaps))),
        acceleration=float(np.mean(np.diff(gaps, n=2))),
        diversity=float(diversity[-1]),
        diversity_loss_rate=float(np.mean(-np.diff(diversity))),
        operator_precision=successes / offspring if offspring else 0.0,
        operator_impact=(gain / successes) * 100.0 / instance.bks if successes else 0.0,
        stagnation_len=float(len(best) - 1 - last_improvement),
    )


def render_features(features: TrajectoryFeatures) -> str:
    """Prompt block: one ``name: value`` line per field, fixed order, four decimals"""
    return "\n".join(f"{f.name}: {getattr(features, f.name):.4f}" for f in fields(features))


def score(gaps: Sequence[float]) -> float:
    """Expected final gap J(h) of a candidate: the arithmetic mean of its rollout gaps"""
    if not len(gaps):
        raise ValueError("score needs at least one rollout gap")
    return math.fsum(gaps) / len(gaps)


@dataclass
class RolloutOutcome:
    spec_id: str
    index: int
    snapshot: str
    gap: Optional[float] = None
    trace: Optional[GenerationTrace] = None
    error: Optional[str] = None
    elapsed: float = 0.0


@dataclass
class CandidateResult:
    spec_id: str
    gaps: List[float] = field(default_factory=list)
    score: Optional[float] = None
    features: Optional[TrajectoryFeatures] = None
    error: Optional[str] = None
    traces: List[GenerationTrace] = field(default_factory=list, repr=False)

    @property
    def failed(self) -> bool:
        return self.score is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "spec_id": self.spec_id,
            "status": "failed" if self.failed else "ok",
            "score": self.score,
            "gaps": list(self.gaps),
            "features": self.features.to_dict() if self.features else None,
            "error": self.error,
        }


@dataclass
class RolloutReport:
    """Iso-state comparison of candidate operators from one population snapshot"""

    generation: int
    snapshot: str
    probe_generations: int
    rollouts: int
    candidates: List[CandidateResult]
    anchor_id: Optional[str] = None
    anchor_real: Optional[TrajectoryFeatures] = None
    anchor_probe: Optional[TrajectoryFeatures] = None
    elapsed: Optional[float] = None

    @property
    def units(self) -> int:
        """Ledger units: every rollout started, failed or not"""
        return len(self.candidates) * self.rollouts

    def result(self, spec_id: str) -> CandidateResult:
        for candidate in self.candidates:
            if candidate.spec_id == spec_id:
                return candidate
        raise KeyError(spec_id)

    def scores(self) -> Dict[str, Optional[float]]:
        return {c.spec_id: c.score for c in self.candidates}

    def to_dict(self, record_timings: bool = False) -> Dict[str, Any]:
        document = {
            "generation": self.generation,
            "snapshot": self.snapshot,
            "probe_generations": self.probe_generations,
            "rollouts": self.rollouts,
            "candidates": [c.to_dict() for c in self.candidates],
            "anchor": {
                "spec_id": self.anchor_id,
                "real": self.anchor_real.to_dict() if self.anchor_real else None,
                "probe": self.anchor_probe.to_dict() if self.anchor_probe else None,
            },
        }
        if record_timings:
            document["elapsed"] = self.elapsed
        return document


def rollout_stream(rng: RandomStream, spec_id: str, index: int) -> RandomStream:
    """Sub-stream of rollout ``index`` for one candidate; independent of the other candidates"""
    return rng.derive(stable_key(spec_id), index)


def _rollout(
    pop: Population,
    spec: OperatorSpec,
    index: int,
    t_probe: int,
    rng: RandomStream,
    time_limit: Optional[float],
) -> RolloutOutcome:
    started = time.monotonic()
    outcome = RolloutOutcome(spec.id, index, pop.fingerprint())
    deadline = started + time_limit if time_limit is not None else None
    try:
        final, trace = run_horizon(pop, spec, t_probe, rollout_stream(rng, spec.id, index), deadline)
        outcome.gap = optimality_gap(final.best_cost, pop.instance.bks)
        outcome.trace = trace
    except DyaceError as e:
        outcome.error = f"{type(e).__name__}: {e}"
        logger.warning("rollout %d of %s failed: %s", index, spec.id, outcome.error)
    outcome.elapsed = time.monotonic() - started
    return outcome


def probe(
    pop: Population,
    candidates: Sequence[OperatorSpec],
    t_probe: int,
    m: int,
    rng: RandomStream,
    workers: int = 1,
    time_limit: Optional[float] = None,
    anchor_id: Optional[str] = None,
    anchor_trace: Optional[GenerationTrace] = None,
) -> RolloutReport:
    """Score every candidate by m look-ahead rollouts of t_probe generations from ``pop``.

    Candidates whose rollouts raise are marked failed and carry no score.
    ``anchor_trace`` is the incumbent's recent real trajectory; its features
    are reported next to the incumbent's probe features.
    """
    if not candidates:
        raise ValueError("probe needs at least one candidate")
    if t_probe < 2:
        raise ValueError(f"probe horizon must be at least 2 generations, got {t_probe}")
    if m < 1:
        raise ValueError(f"probe needs at least one rollout per candidate, got {m}")
    if t_probe < MIN_FEATURE_GENERATIONS:
        logger.warning(
            "probe horizon of %d generations is shorter than the %d feature extraction needs; candidates carry no features",
            t_probe, MIN_FEATURE_GENERATIONS,
        )

    started = time.monotonic()
    snapshot = pop.fingerprint()
    tasks: List[Tuple[OperatorSpec, int]] = [(spec, r) for spec in candidates for r in range(m)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda task: _rollout(pop, task[0], task[1], t_probe, rng, time_limit), tasks))
    else:
        outcomes = [_rollout(pop, spec, r, t_probe, rng, time_limit) for spec, r in tasks]

    if any(o.snapshot != snapshot for o in outcomes):
        raise DyaceError("probe rollouts did not start from the same population snapshot")

    results = []
    for i, spec in enumerate(candidates):
        mine = outcomes[i * m:(i + 1) * m]
        result = CandidateResult(spec.id)
        errors = [o.error for o in mine if o.error]
        if errors:
            result.error = errors[0]
            result.gaps = [o.gap for o in mine if o.gap is not None]
        else:
            result.gaps = [o.gap for o in mine]
            result.score = score(result.gaps)
            result.traces = [o.trace for o in mine]
            if t_probe >= MIN_FEATURE_GENERATIONS:
                result.features = TrajectoryFeatures.mean(
                    [extract_features(t, pop.instance) for t in result.traces]
                )
        results.append(result)

    report = RolloutReport(
        generation=pop.generation,
        snapshot=snapshot,
        probe_generations=t_probe,
        rollouts=m,
        candidates=results,
        anchor_id=anchor_id,
    )
    if anchor_trace is not None and len(anchor_trace) >= MIN_FEATURE_GENERATIONS:
        report.anchor_real = extract_features(anchor_trace, pop.instance)
    if anchor_id is not None:
        anchored = [c for c in results if c.spec_id == anchor_id]
        if anchored and anchored[0].features is not None:
            report.anchor_probe = anchored[0].features
    report.elapsed = time.monotonic() - started
    logger.info(
        "probe at generation %d: %d candidates x %d rollouts, %d failed",
        pop.generation, len(candidates), m, sum(1 for r in results if r.failed),
    )
    return report
