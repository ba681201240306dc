import json
import logging
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from openai import AsyncOpenAI, OpenAIError

from ..config import RunConfig, settings
from ..dsl.catalog import NodeKind, ParamBound, catalog_primitives, get_primitive
from ..errors import BackendError, ConfigError
from ..problems.instances import Domain
from ..utils.rng import RandomStream

logger = logging.getLogger(__name__)


@dataclass
class BackendRequest:
    """One prompt plus decoding options.

    ``context`` carries the structured inputs the prompt was rendered from
    (domain, parent documents, stream key). Network back ends only read the
    prompt; the scripted back end only reads the context.
    """

    prompt: str
    temperature: float
    max_tokens: int
    stage: str
    mode: str
    attempt: int = 0
    context: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class BackendReply:
    text: str
    usage: Dict[str, int] = field(default_factory=dict)
    model: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ControllerBackend(ABC):
    name = "backend"

    @abstractmethod
    async def complete(self, request: BackendRequest) -> BackendReply:
        """Answer one request or raise BackendError"""


class OpenAIBackend(ControllerBackend):
    """Chat-completions client for any OpenAI-compatible endpoint"""

    name = "openai"

    def __init__(
        self,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        base_url: Optional[str] = None,
        timeout: float = 60.0,
    ):
        key = api_key or settings.openai_api_key
        if not key:
            raise ConfigError("the openai back end needs OPENAI_API_KEY in the environment or .env")
        self.model = model or settings.llm_model
        self.client = AsyncOpenAI(api_key=key, base_url=base_url or settings.llm_base_url, timeout=timeout)
        self.system_prompt = "You are an expert in evolutionary computation who designs search operators."

    async def complete(self, request: BackendRequest) -> BackendReply:
        try:
            response = await self.client.chat.completions.create(
                model=self.model,
                messages=[
                    {"role": "system", "content": self.system_prompt},
                    {"role": "user", "content": request.prompt},
                ],
                temperature=request.temperature,
                max_tokens=request.max_tokens,
            )
        except OpenAIError as e:
            raise BackendError(f"chat completion failed: {e}") from e
        usage = {}
        if response.usage is not None:
            usage = {
                "prompt_tokens": response.usage.prompt_tokens,
                "completion_tokens": response.usage.completion_tokens,
            }
        return BackendReply(text=response.choices[0].message.content or "", usage=usage, model=response.model)


# scripted controller ---------------------------------------------------------

def _draw(bound: ParamBound, gen) -> float:
    if bound.integer:
        return float(gen.integers(int(bound.low), int(bound.high) + 1))
    return round(float(gen.uniform(bound.low, bound.high)), 4)


def _jitter(value: float, bound: ParamBound, gen) -> float:
    if bound.integer:
        return float(min(max(int(value) + int(gen.integers(-1, 2)), int(bound.low)), int(bound.high)))
    moved = value + float(gen.normal(0.0, 0.1 * (bound.high - bound.low)))
    return round(bound.clamp(moved), 4)


class _GraphBuilder:
    """Rebuilds graphs with fresh parameter names p0, p1, ... and explicit values"""

    def __init__(self):
        self.parameters: Dict[str, float] = {}

    def bind(self, value: float) -> str:
        name = f"p{len(self.parameters)}"
        self.parameters[name] = value
        return name

    def leaf(self, op: str, values: Dict[str, float]) -> Dict[str, Any]:
        return {"op": op, "params": {attr: self.bind(v) for attr, v in values.items()}}

    def copy(self, node: Dict[str, Any], parameters: Dict[str, float]) -> Dict[str, Any]:
        params = {}
        for attr, binding in node.get("params", {}).items():
            if isinstance(binding, list):
                params[attr] = [self.bind(parameters[n]) for n in binding]
            else:
                params[attr] = self.bind(parameters[binding])
        out = {"op": node["op"], "params": params}
        if node.get("children"):
            out["children"] = [self.copy(c, parameters) for c in node["children"]]
        return out


def _leaf_values(node: Dict[str, Any], parameters: Dict[str, float]) -> Dict[str, float]:
    primitive = get_primitive(node["op"])
    values = {attr: bound.default for attr, bound in primitive.params.items() if attr not in primitive.list_params}
    for attr, binding in node.get("params", {}).items():
        if not isinstance(binding, list):
            values[attr] = parameters[binding]
    return values


def _leaves(node: Dict[str, Any]) -> List[Dict[str, Any]]:
    found = [node] if not node.get("children") else []
    for child in node.get("children", []):
        found.extend(_leaves(child))
    return found


class ScriptedBackend(ControllerBackend):
    """Network-free controller that recombines catalog primitives.

    Replies depend only on ``request.context`` and the back end's own seed,
    never on the prompt text, so prompt-level ablations leave its decisions
    unchanged.
    """

    name = "scripted"

    def __init__(self, seed: int = 0):
        self.seed = seed

    async def complete(self, request: BackendRequest) -> BackendReply:
        ctx = request.context
        gen = RandomStream(self.seed).derive(*ctx.get("stream_key", []), request.stage, request.attempt).generator
        if request.stage == "diagnosis":
            return BackendReply(self._diagnosis(request.mode, ctx), model=self.name)
        domain = Domain(ctx["domain"])
        parents: Sequence[Dict[str, Any]] = ctx.get("parents", [])
        if request.mode == "combine" and len(parents) >= 2:
            document, title = self._combine(parents[0], parents[1], domain, gen), "Combined operator"
        elif request.mode == "explore" or not parents:
            document, title = self._explore(domain, gen), "Exploratory operator"
        else:
            document, title = self._mutate(parents[0], domain, gen), "Tuned operator"
        document["description"] = f"{title}\nScripted {request.mode} of {', '.join(ctx.get('parent_ids', [])) or 'the catalog'}."
        text = (
            f"<description>{document['description']}</description>\n"
            f"<parameter>{json.dumps(document['parameters'], sort_keys=True)}</parameter>\n"
            f"<code>{json.dumps(document, sort_keys=True)}</code>"
        )
        return BackendReply(text, model=self.name)

    def _diagnosis(self, mode: str, ctx: Dict[str, Any]) -> str:
        parents = ", ".join(ctx.get("parent_ids", [])) or "none"
        directions = {
            "combine": "Keep the selection of the first parent and borrow the variation operators of the second.",
            "mutate": "Keep the structure and retune its parameters, swapping at most one variation operator.",
            "explore": "Assemble a new operator from the catalog with a different structure.",
        }
        return (
            f"<analysis>Scripted diagnosis of {parents} in {mode} mode.</analysis>\n"
            f"<direction>{directions.get(mode, directions['mutate'])}</direction>"
        )

    def _mutate(self, parent: Dict[str, Any], domain: Domain, gen) -> Dict[str, Any]:
        parameters = dict(parent["parameters"])
        graph = json.loads(json.dumps(parent["graph"]))
        bounds: Dict[str, ParamBound] = {}
        for node in _walk(graph):
            primitive = get_primitive(node["op"])
            for attr, binding in node.get("params", {}).items():
                for name in binding if isinstance(binding, list) else [binding]:
                    bounds.setdefault(name, primitive.params[attr])
        for name, bound in sorted(bounds.items()):
            parameters[name] = _jitter(parameters[name], bound, gen)

        leaves = [n for n in _walk(graph) if get_primitive(n["op"]).kind in (NodeKind.CROSSOVER, NodeKind.MUTATION)]
        if leaves and gen.random() < 0.5:
            target = leaves[int(gen.integers(0, len(leaves)))]
            kind = get_primitive(target["op"]).kind
            options = [p.name for p in catalog_primitives(domain) if p.kind == kind and p.name != target["op"]]
            if options:
                replacement = get_primitive(options[int(gen.integers(0, len(options)))])
                # rebinding keeps only attributes the new primitive declares
                target["op"] = replacement.name
                kept = {a: b for a, b in target.get("params", {}).items() if a in replacement.params}
                for attr, bound in replacement.params.items():
                    if attr not in kept:
                        name = f"{replacement.name}_{attr}_{len(parameters)}"
                        parameters[name] = _draw(bound, gen)
                        kept[attr] = name
                target["params"] = kept
        builder = _GraphBuilder()
        rebuilt = builder.copy(graph, parameters)
        return {"parameters": builder.parameters, "graph": rebuilt}

    def _combine(self, first: Dict[str, Any], second: Dict[str, Any], domain: Domain, gen) -> Dict[str, Any]:
        builder = _GraphBuilder()
        children = [builder.copy(_selection_of(first["graph"]), first["parameters"])]
        donor = second if len(_variation_leaves(second["graph"])) else first
        for node in _variation_leaves(donor["graph"]):
            if domain in get_primitive(node["op"]).domains:
                children.append(builder.leaf(node["op"], _leaf_values(node, donor["parameters"])))
        local = [n for n in _leaves(first["graph"]) if get_primitive(n["op"]).kind == NodeKind.LOCAL_SEARCH]
        has_local = any(get_primitive(c["op"]).kind == NodeKind.LOCAL_SEARCH for c in children)
        if local and not has_local and gen.random() < 0.5:
            children.append(builder.leaf(local[0]["op"], _leaf_values(local[0], first["parameters"])))
        return {"parameters": builder.parameters, "graph": {"op": "sequence", "children": children}}

    def _explore(self, domain: Domain, gen) -> Dict[str, Any]:
        primitives = catalog_primitives(domain)
        by_kind = {kind: [p for p in primitives if p.kind == kind] for kind in NodeKind}
        builder = _GraphBuilder()

        def pick(kind: NodeKind):
            options = by_kind[kind]
            return options[int(gen.integers(0, len(options)))]

        def leaf(kind: NodeKind) -> Dict[str, Any]:
            primitive = pick(kind)
            return builder.leaf(primitive.name, {a: _draw(b, gen) for a, b in primitive.params.items()})

        children = [leaf(NodeKind.SELECTION)]
        shape = int(gen.integers(0, 3))
        if shape == 0:
            children.append(leaf(NodeKind.CROSSOVER))
        elif shape == 1:
            first, second = leaf(NodeKind.CROSSOVER), leaf(NodeKind.CROSSOVER)
            weights = [builder.bind(round(float(gen.uniform(0.1, 1.0)), 4)) for _ in range(2)]
            children.append({"op": "probabilistic_choice", "params": {"weights": weights}, "children": [first, second]})
        else:
            gate = get_primitive("diversity_gate")
            params = {a: builder.bind(_draw(b, gen)) for a, b in gate.params.items()}
            children.append({"op": "diversity_gate", "params": params, "children": [leaf(NodeKind.MUTATION), leaf(NodeKind.CROSSOVER)]})
        children.append(leaf(NodeKind.MUTATION))
        if by_kind[NodeKind.LOCAL_SEARCH] and gen.random() < 0.5:
            children.append(leaf(NodeKind.LOCAL_SEARCH))
        return {"parameters": builder.parameters, "graph": {"op": "sequence", "children": children}}


def _walk(node: Dict[str, Any]):
    yield node
    for child in node.get("children", []):
        yield from _walk(child)


def _variation_leaves(graph: Dict[str, Any]) -> List[Dict[str, Any]]:
    return [n for n in _leaves(graph) if get_primitive(n["op"]).kind != NodeKind.SELECTION]


def _selection_of(graph: Dict[str, Any]) -> Dict[str, Any]:
    for node in _walk(graph):
        if get_primitive(node["op"]).kind == NodeKind.SELECTION:
            return node
    raise BackendError("parent graph has no selection node")


# replay ----------------------------------------------------------------------

Recorded = Union[str, BackendReply, BackendError]


class ReplayBackend(ControllerBackend):
    """Answers requests in order from canned texts or from a recorded trace.

    Recorded replies come back unchanged (text, usage and model) and recorded
    failures are raised again, so a replayed run re-emits the same calls.
    """

    name = "replay"

    def __init__(self, replies: Sequence[Recorded], stages: Optional[Sequence[str]] = None):
        self.replies = list(replies)
        self.stages = list(stages) if stages is not None else None
        self.position = 0
        self.requests: List[BackendRequest] = []

    @classmethod
    def from_trace(cls, path: Path) -> "ReplayBackend":
        # late import: trace reading lives next to the control loop
        from .trace import read_trace

        replies: List[Recorded] = []
        stages: List[str] = []
        for call in read_trace(path):
            if call["event"] != "backend_call":
                continue
            if call.get("reply") is not None:
                replies.append(BackendReply(**call["reply"]))
            else:
                replies.append(BackendError(call.get("error") or "recorded call failed"))
            stages.append(call["request"]["stage"])
        return cls(replies, stages)

    async def complete(self, request: BackendRequest) -> BackendReply:
        self.requests.append(request)
        if self.position >= len(self.replies):
            raise BackendError(f"replay exhausted after {len(self.replies)} replies")
        if self.stages is not None and self.stages[self.position] != request.stage:
            logger.warning(
                "replay reply %d was recorded for stage %s, requested %s",
                self.position, self.stages[self.position], request.stage,
            )
        recorded = self.replies[self.position]
        self.position += 1
        if isinstance(recorded, BackendError):
            raise recorded
        if isinstance(recorded, BackendReply):
            return BackendReply(recorded.text, dict(recorded.usage), recorded.model)
        return BackendReply(recorded, model=self.name)


def create_backend(config: RunConfig) -> ControllerBackend:
    controller = config.controller
    if controller.backend == "openai":
        return OpenAIBackend(timeout=controller.request_timeout)
    if controller.backend == "replay":
        return ReplayBackend.from_trace(controller.replay_trace)
    return ScriptedBackend(seed=config.run.seed)
