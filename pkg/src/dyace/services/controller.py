import asyncio
import json
import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import ControllerSection, ModeWeights
from ..dsl.catalog import render_catalog
from ..dsl.spec import Lineage, OperatorSpec, validate_spec
from ..dsl.tree_distance import tree_edit_distance
from ..errors import BackendError, DiagnosisError, DyaceError, SpecValidationError, SynthesisError
from ..problems.instances import Domain
from ..utils.rng import RandomStream
from . import prompts
from .backends import BackendReply, BackendRequest, ControllerBackend
from .probe import RolloutReport, render_features
from .trace import ControlTrace

logger = logging.getLogger(__name__)


class ReasoningMode(str, Enum):
    COMBINE = "combine"
    MUTATE = "mutate"
    EXPLORE = "explore"


@dataclass(frozen=True)
class ScoredSpec:
    spec: OperatorSpec
    score: Optional[float]
    age: int

    @property
    def id(self) -> str:
        return self.spec.id

    def rank_key(self) -> Tuple[float, int]:
        """Lower is better; unscored or failed specs sort last, older specs win ties"""
        return (self.score if self.score is not None else float("inf"), self.age)

    def parent_key(self) -> Tuple[float, int, str]:
        """Parent choice order: score, then spec id (S2 before S10)"""
        digits = self.id[1:]
        number = int(digits) if self.id[:1] == "S" and digits.isdigit() else 1 << 62
        return (self.score if self.score is not None else float("inf"), number, self.id)


@dataclass(frozen=True)
class AlgorithmPopulation:
    members: Tuple[ScoredSpec, ...]
    generation: int = 0

    def __len__(self) -> int:
        return len(self.members)

    @property
    def specs(self) -> List[OperatorSpec]:
        return [m.spec for m in self.members]

    def get(self, spec_id: str) -> ScoredSpec:
        for member in self.members:
            if member.id == spec_id:
                return member
        raise KeyError(spec_id)

    def best(self) -> ScoredSpec:
        return min(self.members, key=ScoredSpec.rank_key)

    def ranked(self) -> List[ScoredSpec]:
        return sorted(self.members, key=ScoredSpec.rank_key)

    def rescored(self, report: RolloutReport) -> "AlgorithmPopulation":
        scores = report.scores()
        members = tuple(replace(m, score=scores[m.id]) if m.id in scores else m for m in self.members)
        return AlgorithmPopulation(members, self.generation)

    def admit(self, offspring: Optional[ScoredSpec], capacity: int) -> "AlgorithmPopulation":
        """Keep the best ``capacity`` of incumbents plus offspring; advances the meta generation"""
        pool = list(self.members) + ([offspring] if offspring is not None else [])
        survivors = sorted(pool, key=ScoredSpec.rank_key)[:capacity]
        # keep birth order in the stored tuple so traces list members stably
        survivors.sort(key=lambda m: m.age)
        return AlgorithmPopulation(tuple(survivors), self.generation + 1)

    def to_dict(self) -> List[Dict[str, object]]:
        return [{"spec_id": m.id, "score": m.score, "age": m.age} for m in self.members]


@dataclass(frozen=True)
class VerbalGradient:
    analysis: str
    direction: str
    features: Tuple[Optional[str], ...] = ()


# mode and parent selection ---------------------------------------------------

def choose_mode(
    meta_generation: int,
    rng: RandomStream,
    weights: ModeWeights = ModeWeights(),
    population_size: int = 2,
) -> ReasoningMode:
    """Sample a reasoning mode; combine is impossible below two specs"""
    modes = [ReasoningMode.COMBINE, ReasoningMode.MUTATE, ReasoningMode.EXPLORE]
    w = np.array([weights.combine, weights.mutate, weights.explore], dtype=float)
    if population_size < 2:
        w[0] = 0.0
    if w.sum() <= 0:
        w = np.array([0.0, 1.0, 0.0])
    draw = rng.derive("mode", meta_generation).choice(3, p=w / w.sum())
    return modes[draw]


def select_parents(
    algpop: AlgorithmPopulation,
    mode: ReasoningMode,
    rng: RandomStream,
) -> List[ScoredSpec]:
    """Combine pairs the best spec with its structurally farthest peer; the other modes sample one parent"""
    if not len(algpop):
        raise DyaceError("cannot select parents from an empty algorithm population")
    ranked = sorted(algpop.members, key=ScoredSpec.parent_key)
    if mode == ReasoningMode.COMBINE:
        if len(ranked) < 2:
            raise DyaceError("combine mode needs at least two specs")
        primary = ranked[0]
        others = ranked[1:]
        distances = {m.id: tree_edit_distance(primary.spec.graph, m.spec.graph) for m in others}
        secondary = min(others, key=lambda m: (-distances[m.id],) + m.parent_key())
        return [primary, secondary]
    # fitness-proportional over inverse rank: best gets 1, second 1/2, ...
    weights = np.array([1.0 / (r + 1) for r in range(len(ranked))])
    index = rng.choice(len(ranked), p=weights / weights.sum())
    return [ranked[index]]


# reply parsing ---------------------------------------------------------------

def extract_tag(text: str, tag: str) -> Optional[str]:
    """Contents of <tag>...</tag>; a repeated opening tag is accepted as the closer"""
    match = re.search(rf"<{tag}>(.*?)</{tag}>", text, re.S) or re.search(rf"<{tag}>(.*?)<{tag}>", text, re.S)
    if match is None:
        return None
    value = match.group(1).strip()
    return value or None


def _strip_fences(code: str) -> str:
    fenced = re.match(r"^```[a-zA-Z]*\s*(.*?)\s*```$", code.strip(), re.S)
    return fenced.group(1) if fenced else code


def _parameter_region(text: Optional[str]) -> Dict[str, float]:
    if not text:
        return {}
    try:
        parsed = json.loads(_strip_fences(text))
        if isinstance(parsed, dict):
            return {k: float(v) for k, v in parsed.items() if isinstance(v, (int, float))}
    except (json.JSONDecodeError, TypeError, ValueError):
        pass
    values = {}
    for line in text.splitlines():
        match = re.match(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*[=:]\s*(-?[0-9.eE+-]+)", line)
        if match:
            try:
                values[match.group(1)] = float(match.group(2))
            except ValueError:
                continue
    return values


# the controller ----------------------------------------------------------------

FeatureSource = Callable[[str], Optional[str]]
OffspringScorer = Callable[[OperatorSpec], Optional[float]]


class MetaController:
    """Two-stage diagnosis then coding policy over a pluggable back end.

    With ``blind`` set, every feature placeholder renders empty; nothing else changes.
    """

    def __init__(
        self,
        backend: ControllerBackend,
        settings: ControllerSection,
        domain: Domain,
        capacity: int,
        blind: bool = False,
        trace: Optional[ControlTrace] = None,
        first_id: int = 1,
    ):
        self.backend = backend
        self.settings = settings
        self.domain = Domain(domain)
        self.capacity = capacity
        self.blind = blind
        self.trace = trace if trace is not None else ControlTrace()
        self.next_number = first_id
        self.logger = logging.getLogger(__name__)

    def issue_id(self) -> str:
        spec_id = f"S{self.next_number}"
        self.next_number += 1
        return spec_id

    def temperature(self, mode: str) -> float:
        return getattr(self.settings.temperatures, mode if mode != "initialize" else "explore")

    async def _call(self, request: BackendRequest, step: int) -> Optional[BackendReply]:
        """One back-end round trip, logged verbatim; None on timeout or transport failure"""
        reply, error = None, None
        try:
            reply = await asyncio.wait_for(self.backend.complete(request), timeout=self.settings.request_timeout)
        except asyncio.TimeoutError:
            error = f"timed out after {self.settings.request_timeout:g}s"
        except BackendError as e:
            error = str(e)
        self.trace.emit(
            "backend_call",
            step=step,
            stage=request.stage,
            mode=request.mode,
            attempt=request.attempt,
            request=request.to_dict(),
            reply=reply.to_dict() if reply is not None else None,
            error=error,
        )
        if error:
            self.logger.warning("%s request (attempt %d) failed: %s", request.stage, request.attempt, error)
        return reply

    def _context(self, parents: Sequence[ScoredSpec], stream_key: Sequence[int]) -> Dict[str, object]:
        return {
            "domain": self.domain.value,
            "parent_ids": [p.id for p in parents],
            "parents": [
                {"description": p.spec.description, "parameters": p.spec.parameters,
                 "graph": p.spec.graph.model_dump(mode="json")}
                for p in parents
            ],
            "parent_scores": [p.score for p in parents],
            "stream_key": list(stream_key),
        }

    def _parent_values(self, mode: str, parents: Sequence[ScoredSpec], features: Sequence[Optional[str]]) -> Dict[str, str]:
        blocks = [prompts.feature_section(None if self.blind else f) for f in features]
        values = {"problem_type": prompts.problem_type(self.domain)}
        if mode == ReasoningMode.COMBINE.value:
            values.update(
                parent1=prompts.describe_spec(parents[0].spec, parents[0].score),
                parent1_feature=blocks[0],
                parent2=prompts.describe_spec(parents[1].spec, parents[1].score),
                parent2_feature=blocks[1],
            )
        else:
            values.update(parent=prompts.describe_spec(parents[0].spec, parents[0].score), parent_feature=blocks[0])
        return values

    async def diagnose(
        self,
        mode: ReasoningMode,
        parents: Sequence[ScoredSpec],
        features: Sequence[Optional[str]],
        step: int,
        stream_key: Sequence[int] = (),
    ) -> VerbalGradient:
        """Diagnosis stage: render, ask, and parse <analysis>/<direction>, retrying on missing tags"""
        prompt = prompts.render(f"diagnosis_{mode.value}", self._parent_values(mode.value, parents, features))
        context = self._context(parents, stream_key)
        for attempt in range(self.settings.retries + 1):
            request = BackendRequest(
                prompt=prompt,
                temperature=self.temperature(mode.value),
                max_tokens=self.settings.max_tokens,
                stage="diagnosis",
                mode=mode.value,
                attempt=attempt,
                context=context,
            )
            reply = await self._call(request, step)
            if reply is None:
                continue
            analysis, direction = extract_tag(reply.text, "analysis"), extract_tag(reply.text, "direction")
            if analysis and direction:
                return VerbalGradient(analysis, direction, tuple(None if self.blind else f for f in features))
            self.logger.info("diagnosis reply missing tags on attempt %d, retrying", attempt)
        raise DiagnosisError(f"no tagged diagnosis after {self.settings.retries + 1} attempts")

    async def synthesize(
        self,
        mode: str,
        parents: Sequence[ScoredSpec],
        gradient: Optional[VerbalGradient],
        step: int,
        features: Sequence[Optional[str]] = (),
        stream_key: Sequence[int] = (),
        spec_id: Optional[str] = None,
    ) -> OperatorSpec:
        """Coding stage: ask for a DSL document and validate it, re-prompting with the violations"""
        mode = mode.value if isinstance(mode, ReasoningMode) else mode
        anchor = parents[0].spec
        values = self._parent_values(mode, parents, list(features) or [None] * len(parents))
        values.update(
            optimization_direction=prompts.direction_section(gradient.direction if gradient else None),
            parameter_to_evolve=prompts.parameter_listing(anchor),
            algorithm_to_evolve=prompts.algorithm_listing(anchor),
            dsl_grammar=render_catalog(self.domain),
        )
        if mode == "initialize":
            values.pop("optimization_direction")
        base_prompt = prompts.render(f"coding_{mode}", values)
        context = self._context(parents, stream_key)
        lineage = Lineage(parents=tuple(p.id for p in parents), mode=mode)
        spec_id = spec_id or self.issue_id()

        prompt = base_prompt
        errors: List[str] = []
        for attempt in range(self.settings.retries + 1):
            request = BackendRequest(
                prompt=prompt,
                temperature=self.temperature(mode),
                max_tokens=self.settings.max_tokens,
                stage="coding",
                mode=mode,
                attempt=attempt,
                context=context,
            )
            reply = await self._call(request, step)
            if reply is None:
                continue
            try:
                return self._parse_spec(reply.text, spec_id, lineage)
            except SpecValidationError as e:
                errors = e.errors
                self.logger.info("coding reply rejected on attempt %d: %s", attempt, "; ".join(errors))
                prompt = (
                    base_prompt
                    + "\n\nYour previous answer was rejected for these reasons:\n"
                    + "\n".join(f"- {err}" for err in errors)
                    + "\nReturn a corrected answer in the same three-section format."
                )
        raise SynthesisError(f"no valid operator spec after {self.settings.retries + 1} attempts", errors)

    def _parse_spec(self, text: str, spec_id: str, lineage: Lineage) -> OperatorSpec:
        code = extract_tag(text, "code")
        if code is None:
            raise SpecValidationError(["reply has no <code> section"])
        try:
            document = json.loads(_strip_fences(code))
        except json.JSONDecodeError as e:
            raise SpecValidationError([f"<code> is not valid JSON: {e}"])
        if not isinstance(document, dict):
            raise SpecValidationError(["<code> must hold a JSON object"])
        description = extract_tag(text, "description")
        if description:
            document["description"] = description
        chosen = _parameter_region(extract_tag(text, "parameter"))
        if chosen and isinstance(document.get("parameters"), dict):
            document["parameters"] = {**document["parameters"], **{k: v for k, v in chosen.items() if k in document["parameters"]}}
        document.pop("id", None)
        document.pop("lineage", None)
        return validate_spec(document, domain=self.domain, spec_id=spec_id, lineage=lineage)

    async def evolve(
        self,
        algpop: AlgorithmPopulation,
        rng: RandomStream,
        step: int,
        feature_of: FeatureSource,
        score_offspring: OffspringScorer,
    ) -> Tuple[AlgorithmPopulation, Optional[ScoredSpec]]:
        """One meta-generation: mode, parents, diagnosis, coding, scoring, truncation"""
        mode = choose_mode(algpop.generation, rng, self.settings.mode_weights, len(algpop))
        parents = select_parents(algpop, mode, rng.derive("parents"))
        features = [feature_of(p.id) for p in parents]
        stream_key = list(rng.key)
        parent_ids = [p.id for p in parents]
        try:
            gradient = await self.diagnose(mode, parents, features, step, stream_key)
            spec = await self.synthesize(mode, parents, gradient, step, features, stream_key)
        except (DiagnosisError, SynthesisError) as e:
            self.trace.emit("synthesis_failed", step=step, mode=mode.value, parents=parent_ids, reason=str(e))
            self.logger.warning("step %d: synthesis failed in %s mode: %s", step, mode.value, e)
            return algpop.admit(None, self.capacity), None

        self.trace.embed_spec(spec, origin=mode.value)
        offspring_score = score_offspring(spec)
        self.trace.emit(
            "synthesis", step=step, mode=mode.value, parents=parent_ids, spec_id=spec.id, score=offspring_score,
        )
        if offspring_score is None:
            self.logger.warning("step %d: offspring %s failed its rollouts and is discarded", step, spec.id)
            return algpop.admit(None, self.capacity), None
        offspring = ScoredSpec(spec, offspring_score, age=self.next_number)
        return algpop.admit(offspring, self.capacity), offspring

    async def initialize(self, seeds: Sequence[ScoredSpec], step: int = 0) -> List[ScoredSpec]:
        """Seed the algorithm population through the initialize coding prompt, keeping seeds that fail"""
        out = []
        for member in seeds:
            try:
                spec = await self.synthesize("initialize", [member], None, step, stream_key=[member.age])
            except SynthesisError as e:
                self.logger.warning("initialize from %s failed, keeping the seed: %s", member.id, e)
                out.append(member)
                continue
            self.trace.embed_spec(spec, origin="initialize")
            out.append(ScoredSpec(spec, None, member.age))
        return out


def report_features(report: RolloutReport) -> FeatureSource:
    """Feature blocks for prompts, with the real-trajectory anchor labelled separately"""

    def feature_of(spec_id: str) -> Optional[str]:
        try:
            result = report.result(spec_id)
        except KeyError:
            return None
        if result.features is None:
            return None
        block = (
            f"probe rollouts ({report.rollouts} x {report.probe_generations} generations from generation "
            f"{report.generation}):\n{render_features(result.features)}"
        )
        if spec_id == report.anchor_id and report.anchor_real is not None:
            block += f"\nincumbent on the real trajectory (recent window):\n{render_features(report.anchor_real)}"
        return block

    return feature_of


async def evolve_algorithms(
    algpop: AlgorithmPopulation,
    report: RolloutReport,
    controller: MetaController,
    rng: RandomStream,
    score_offspring: OffspringScorer,
    step: int = 0,
) -> AlgorithmPopulation:
    """Re-score incumbents from ``report`` and run one meta-generation"""
    rescored = algpop.rescored(report)
    evolved, _ = await controller.evolve(rescored, rng, step, report_features(report), score_offspring)
    return evolved
