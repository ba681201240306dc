import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ..assets import asset_path
from ..config import RunConfig, Variant
from ..dsl.spec import Lineage, OperatorSpec, validate_spec
from ..engine.engine import GenerationTrace, run_horizon
from ..engine.population import Population, init_population
from ..errors import ApplyError, ConfigError, DyaceError
from ..problems.evaluation import optimality_gap
from ..problems.instances import Domain, ProblemInstance
from ..problems.parsers import BksRegistry, load_instance
from ..utils.rng import RandomStream
from .backends import ControllerBackend, create_backend
from .controller import AlgorithmPopulation, MetaController, ScoredSpec, evolve_algorithms
from .probe import MIN_FEATURE_GENERATIONS, extract_features, probe, render_features
from .trace import SCHEMA_VERSION, BudgetLedger, ControlTrace, summarize

logger = logging.getLogger(__name__)

# consecutive synthesis failures after which the offline search gives up
MAX_OFFLINE_FAILURES = 10


def load_seed_specs(domain: Domain, path: Optional[Path] = None, limit: Optional[int] = None) -> List[OperatorSpec]:
    """Validated seed algorithms with ids S1..Sn, from a JSON list of DSL documents"""
    path = Path(path) if path is not None else asset_path("seeds", f"{Domain(domain).value}.json")
    try:
        documents = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read seed population {path}: {e}") from e
    if not isinstance(documents, list) or not documents:
        raise ConfigError(f"seed population {path} must be a non-empty JSON list")
    documents = documents[:limit] if limit is not None else documents
    seeds = []
    for i, document in enumerate(documents):
        document = {k: v for k, v in document.items() if k not in ("id", "lineage")}
        seeds.append(validate_spec(document, domain=domain, spec_id=f"S{i + 1}", lineage=Lineage(mode="seed")))
    return seeds


class ControlLoop:
    """Shared state of one run: instance, streams, ledger, trace and the meta-controller"""

    def __init__(self, config: RunConfig, backend: Optional[ControllerBackend] = None):
        self.config = config
        self.logger = logging.getLogger(__name__)
        registry = BksRegistry.from_file(config.instance.bks_registry) if config.instance.bks_registry else None
        self.instance: ProblemInstance = load_instance(
            config.instance.path, config.instance.format, name=config.instance.name, registry=registry
        )
        self.rng = RandomStream(config.run.seed)
        self.ledger = BudgetLedger(config.run.budget)
        self.trace = ControlTrace(record_timings=config.limits.record_timings)
        seeds = load_seed_specs(
            self.instance.domain, config.controller.seed_population, config.run.algorithm_population_size
        )
        self.algpop = AlgorithmPopulation(tuple(ScoredSpec(s, None, age=i + 1) for i, s in enumerate(seeds)))
        self.controller = MetaController(
            backend if backend is not None else create_backend(config),
            config.controller,
            self.instance.domain,
            capacity=config.run.algorithm_population_size,
            blind=config.variant.is_blind,
            trace=self.trace,
            first_id=len(seeds) + 1,
        )

    def start(self) -> None:
        self.trace.emit(
            "run_start",
            schema_version=SCHEMA_VERSION,
            config=self.config.to_record(),
            instance={
                "name": self.instance.name,
                "domain": self.instance.domain.value,
                "bks": self.instance.bks,
                "metric": self.instance.metric,
            },
        )
        for member in self.algpop.members:
            self.trace.embed_spec(member.spec, origin="seed")

    async def seed_with_controller(self) -> None:
        if not self.config.controller.llm_seeding:
            return
        members = await self.controller.initialize(self.algpop.members)
        self.algpop = AlgorithmPopulation(tuple(members), self.algpop.generation)
        self.trace.emit("population", step=None, members=self.algpop.to_dict())

    def charge(self, kind: str, units: int, step: Optional[int]) -> None:
        total = self.ledger.charge(kind, units)
        self.trace.emit("ledger", step=step, kind=kind, units=units, total=total)

    def apply(
        self,
        step: int,
        pop: Population,
        spec: OperatorSpec,
        fallback: Optional[OperatorSpec],
        stream: RandomStream,
    ) -> Tuple[Population, GenerationTrace, OperatorSpec]:
        """Advance the real population h generations, falling back to the last applied spec on failure"""
        h = self.config.run.horizon
        try:
            final, horizon_trace = run_horizon(pop, spec, h, stream)
        except DyaceError as e:
            if fallback is None or fallback.id == spec.id:
                self.trace.emit("apply_failed", step=step, spec_id=spec.id, fallback=None, reason=str(e))
                raise ApplyError(
                    f"step {step}: {spec.id} could not be applied at generation {pop.generation} "
                    f"and no earlier spec is available: {e}"
                ) from e
            self.logger.warning("step %d: applying %s failed (%s), keeping %s", step, spec.id, e, fallback.id)
            self.trace.emit("apply_failed", step=step, spec_id=spec.id, fallback=fallback.id, reason=str(e))
            spec = fallback
            final, horizon_trace = run_horizon(pop, spec, h, stream)
        self.trace.emit("apply", step=step, spec_id=spec.id, start_generation=pop.generation, generations=h)
        for record in horizon_trace:
            self.trace.emit(
                "generation",
                generation=record.generation,
                gap=optimality_gap(record.best_cost, self.instance.bks),
                best_cost=record.best_cost,
                mean_cost=record.mean_cost,
                diversity=record.diversity,
            )
        return final, horizon_trace, spec

    def finish(self) -> ControlTrace:
        summary = summarize(self.trace.events)
        self.trace.emit("run_end", summary=summary)
        self.logger.info(
            "run on %s (%s, seed %d) finished: final gap %.4f%%, ledger %d/%d",
            self.instance.name, self.config.variant.value, self.config.run.seed,
            summary["final_gap"], self.ledger.total, self.ledger.budget,
        )
        return self.trace


async def run_dyace(config: RunConfig, backend: Optional[ControllerBackend] = None) -> ControlTrace:
    """Receding-horizon run: probe, evolve and apply for every decision step"""
    if config.variant not in (Variant.DYACE, Variant.BLIND):
        raise ConfigError(f"run_dyace cannot run the {config.variant.value} variant")
    loop = ControlLoop(config, backend)
    loop.start()
    await loop.seed_with_controller()
    run, limits = config.run, config.limits

    pop = init_population(loop.instance, run.population_size, loop.rng.derive("population"))
    real = loop.rng.derive("real")
    applied: Optional[OperatorSpec] = None
    recent: Optional[GenerationTrace] = None
    frozen = False

    for k in range(run.meta_generations):
        step_cost = (len(loop.algpop) + 1) * run.rollouts
        if not frozen and not loop.ledger.can_afford(step_cost):
            frozen = True
            loop.logger.info(
                "step %d: %d units left, a decision step needs %d; freezing %s",
                k, loop.ledger.remaining, step_cost, loop.algpop.best().id,
            )
            loop.trace.emit("freeze", step=k, remaining=loop.ledger.remaining, needed=step_cost)

        if not frozen:
            stream = loop.rng.derive("step", k, "probe")
            report = probe(
                pop, loop.algpop.specs, run.probe_generations, run.rollouts, stream,
                workers=limits.workers, time_limit=limits.probe_time_limit,
                anchor_id=applied.id if applied is not None else None, anchor_trace=recent,
            )
            loop.charge("reevaluation", report.units, k)
            loop.trace.emit("probe", step=k, role="incumbents", report=report.to_dict(limits.record_timings))

            def score_offspring(spec: OperatorSpec) -> Optional[float]:
                offspring_report = probe(
                    pop, [spec], run.probe_generations, run.rollouts, stream,
                    workers=limits.workers, time_limit=limits.probe_time_limit,
                )
                loop.charge("probe", offspring_report.units, k)
                loop.trace.emit(
                    "probe", step=k, role="offspring", report=offspring_report.to_dict(limits.record_timings)
                )
                return offspring_report.result(spec.id).score

            loop.algpop = await evolve_algorithms(
                loop.algpop, report, loop.controller, loop.rng.derive("step", k, "meta"), score_offspring, step=k
            )
            loop.trace.emit("population", step=k, members=loop.algpop.to_dict())

        winner = loop.algpop.best()
        loop.trace.emit(
            "decision", step=k, spec_id=winner.id, score=winner.score, frozen=frozen, generation=pop.generation
        )
        loop.logger.info("step %d (generation %d): applying %s, score %s", k, pop.generation, winner.id, winner.score)
        pop, recent, applied = loop.apply(k, pop, winner.spec, applied, real)

    return loop.finish()


def _offline_evaluator(loop: ControlLoop, features: Dict[str, Optional[str]], counter: List[int]):
    """Full-horizon rollouts from fresh random populations; 1 ledger unit each"""
    run, limits = loop.config.run, loop.config.limits
    total = loop.config.total_generations

    def evaluate(spec: OperatorSpec) -> Optional[float]:
        gaps, traces, failed = [], [], False
        for _ in range(run.offline_rollouts):
            index = counter[0]
            counter[0] += 1
            stream = loop.rng.derive("offline", index)
            loop.charge("offline", 1, None)
            try:
                start = init_population(loop.instance, run.population_size, stream.derive("population"))
                deadline = time.monotonic() + limits.offline_time_limit
                final, trajectory = run_horizon(start, spec, total, stream.derive("rollout"), deadline)
            except DyaceError as e:
                loop.logger.warning("offline rollout %d of %s failed: %s", index, spec.id, e)
                failed = True
                continue
            gaps.append(optimality_gap(final.best_cost, loop.instance.bks))
            traces.append(trajectory)
        score = None if failed else math.fsum(gaps) / len(gaps)
        if score is not None and total >= MIN_FEATURE_GENERATIONS:
            # prompts see the full trajectory of the first rollout
            features[spec.id] = "full rollout:\n" + render_features(extract_features(traces[0], loop.instance))
        loop.trace.emit("offline_eval", spec_id=spec.id, gaps=gaps, score=score, failed=failed)
        return score

    return evaluate


async def run_static(config: RunConfig, backend: Optional[ControllerBackend] = None) -> ControlTrace:
    """Offline search for one algorithm under the budget, then a single frozen deployment"""
    if not config.variant.is_static:
        raise ConfigError(f"run_static cannot run the {config.variant.value} variant")
    loop = ControlLoop(config, backend)
    loop.start()
    run = config.run

    if not run.offline_search:
        frozen = loop.algpop.members[0]
        loop.logger.info("offline search disabled; freezing %s", frozen.id)
    else:
        await loop.seed_with_controller()
        features: Dict[str, Optional[str]] = {}
        evaluate = _offline_evaluator(loop, features, [0])

        members = []
        for member in loop.algpop.members:
            if not loop.ledger.can_afford(run.offline_rollouts):
                members.append(member)
                continue
            members.append(ScoredSpec(member.spec, evaluate(member.spec), member.age))
        loop.algpop = AlgorithmPopulation(tuple(members), loop.algpop.generation)
        loop.trace.emit("population", step=None, members=loop.algpop.to_dict())

        failures = 0
        while loop.ledger.can_afford(run.offline_rollouts) and failures < MAX_OFFLINE_FAILURES:
            g = loop.algpop.generation
            loop.algpop, offspring = await loop.controller.evolve(
                loop.algpop, loop.rng.derive("offline_meta", g), g, features.get, evaluate
            )
            failures = 0 if offspring is not None else failures + 1
            loop.trace.emit("population", step=g, members=loop.algpop.to_dict())
        if failures >= MAX_OFFLINE_FAILURES:
            loop.logger.warning("offline search stopped after %d consecutive failed meta-generations", failures)
        frozen = loop.algpop.best()

    loop.trace.emit("freeze", step=0, spec_id=frozen.id, score=frozen.score, remaining=loop.ledger.remaining)
    pop = init_population(loop.instance, run.population_size, loop.rng.derive("population"))
    real = loop.rng.derive("real")
    for k in range(run.meta_generations):
        loop.trace.emit("decision", step=k, spec_id=frozen.id, score=frozen.score, frozen=True, generation=pop.generation)
        pop, _, _ = loop.apply(k, pop, frozen.spec, None, real)
    return loop.finish()


async def run_variant(config: RunConfig, backend: Optional[ControllerBackend] = None) -> ControlTrace:
    if config.variant.is_static:
        return await run_static(config, backend)
    return await run_dyace(config, backend)


def run_artifacts(trace: ControlTrace) -> Dict[str, Any]:
    """Summary document of a finished trace"""
    return trace.of_kind("run_end")[-1]["summary"]
