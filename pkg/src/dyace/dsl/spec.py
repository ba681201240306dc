import hashlib
import json
import math
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import SpecValidationError
from ..problems.instances import Domain
from .catalog import NodeKind, ParamBound, get_primitive

SCHEMA_VERSION = 1
MAX_DEPTH = 8
MAX_NODES = 64

Binding = Union[str, List[str]]


class Node(BaseModel):
    """One operator-graph node; ``params`` maps primitive attributes to spec parameter names"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    op: str
    params: Dict[str, Binding] = Field(default_factory=dict)
    children: Tuple["Node", ...] = ()

    @property
    def kind(self) -> Optional[NodeKind]:
        primitive = get_primitive(self.op)
        return primitive.kind if primitive else None

    @property
    def label(self) -> Tuple[str, str]:
        kind = self.kind
        return (kind.value if kind else "unknown", self.op)

    def iter_nodes(self) -> Iterator["Node"]:
        """Pre-order traversal"""
        yield self
        for child in self.children:
            yield from child.iter_nodes()

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def size(self) -> int:
        return sum(1 for _ in self.iter_nodes())


Node.model_rebuild()

OperatorGraph = Node


class Lineage(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    parents: Tuple[str, ...] = ()
    mode: Optional[str] = None


class OperatorSpec(BaseModel):
    """Algorithm triple: description D, operator graph C, parameters Theta"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    version: int = SCHEMA_VERSION
    id: str
    domain: Domain
    description: str
    parameters: Dict[str, float]
    graph: Node
    lineage: Lineage = Lineage()

    @property
    def title(self) -> str:
        return self.description.strip().splitlines()[0] if self.description.strip() else self.id

    def value(self, node: Node, attr: str) -> Any:
        """Bound parameter value(s) for a node attribute, falling back to the primitive default"""
        binding = node.params.get(attr)
        if binding is None:
            return get_primitive(node.op).params[attr].default
        if isinstance(binding, list):
            return [self.parameters[name] for name in binding]
        return self.parameters[binding]

    def to_document(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def serialize(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, indent=2)

    def with_identity(self, spec_id: str, lineage: Lineage) -> "OperatorSpec":
        return self.model_copy(update={"id": spec_id, "lineage": lineage})


class SpecDocument(BaseModel):
    """Wire shape of a DSL document before semantic checks"""

    model_config = ConfigDict(extra="forbid")

    version: int = SCHEMA_VERSION
    id: Optional[str] = None
    domain: Optional[Domain] = None
    description: str = ""
    parameters: Dict[str, float] = Field(default_factory=dict)
    graph: Node
    lineage: Lineage = Lineage()


def serialize(spec: OperatorSpec) -> str:
    return spec.serialize()


def _content_id(document: SpecDocument) -> str:
    payload = json.dumps(
        {"graph": document.graph.model_dump(mode="json"), "parameters": document.parameters},
        sort_keys=True,
    )
    return "spec-" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:10]


class _Checker:
    """Collects every violation in one pass over the graph"""

    def __init__(self, document: SpecDocument, domain: Domain):
        self.document = document
        self.domain = domain
        self.errors: List[str] = []
        self.parameters: Dict[str, float] = dict(document.parameters)
        self.selection_nodes: List[Node] = []

    def run(self) -> Dict[str, float]:
        graph = self.document.graph
        size, depth = graph.size(), graph.depth()
        if depth > MAX_DEPTH:
            self.errors.append(f"graph depth {depth} exceeds the cap of {MAX_DEPTH}")
        if size > MAX_NODES:
            self.errors.append(f"graph has {size} nodes, cap is {MAX_NODES}")
        for node in graph.iter_nodes():
            self._check_node(node)
        self._check_selection(graph)
        return self.parameters

    def _check_node(self, node: Node) -> None:
        primitive = get_primitive(node.op)
        if primitive is None:
            self.errors.append(f"unknown primitive '{node.op}'")
            return
        if self.domain not in primitive.domains:
            what = "local search primitive" if primitive.kind == NodeKind.LOCAL_SEARCH else "primitive"
            self.errors.append(
                f"domain-schema violation: {what} '{node.op}' is not allowed for {self.domain.value}"
            )
        if primitive.kind == NodeKind.SELECTION:
            self.selection_nodes.append(node)

        low, high = primitive.arity
        count = len(node.children)
        if count < low or (high is not None and count > high):
            expected = f"{low}" if low == high else f"{low}..{high if high is not None else 'n'}"
            self.errors.append(f"'{node.op}' takes {expected} children, got {count}")

        for attr, binding in node.params.items():
            bound = primitive.params.get(attr)
            if bound is None:
                self.errors.append(f"unknown attribute '{attr}' for primitive '{node.op}'")
                continue
            if attr in primitive.list_params:
                self._check_list(node, attr, binding, bound)
            elif isinstance(binding, list):
                self.errors.append(f"attribute '{attr}' of '{node.op}' takes a single parameter name")
            else:
                self._check_value(binding, bound)
        for attr in primitive.list_params:
            if attr not in node.params:
                self.errors.append(f"'{node.op}' needs '{attr}' bound to one parameter per child")

    def _check_value(self, name: str, bound: ParamBound) -> None:
        if name not in self.parameters:
            self.errors.append(f"missing parameter {name}")
            return
        value = self.parameters[name]
        if not math.isfinite(value):
            self.errors.append(f"parameter {name} is not finite")
            return
        if not bound.contains(value):
            if bound.within_tolerance(value):
                value = bound.clamp(value)
            else:
                self.errors.append(
                    f"parameter {name} out of bounds: {value:g} not in [{bound.low:g}, {bound.high:g}]"
                )
                return
        if bound.integer:
            if abs(value - round(value)) > 1e-9:
                self.errors.append(f"parameter {name} must be an integer, got {value:g}")
                return
            value = float(round(value))
        self.parameters[name] = value

    def _check_list(self, node: Node, attr: str, binding: Binding, bound: ParamBound) -> None:
        names = binding if isinstance(binding, list) else [binding]
        if len(names) != len(node.children):
            self.errors.append(
                f"'{node.op}' has {len(node.children)} children but {len(names)} {attr}"
            )
        before = len(self.errors)
        for name in names:
            self._check_value(name, bound)
        if len(self.errors) > before:
            return
        total = sum(self.parameters[n] for n in names)
        if total <= 0:
            self.errors.append(f"'{node.op}' {attr} sum to zero")
        elif abs(total - 1.0) > 1e-9:
            for n in dict.fromkeys(names):
                self.parameters[n] = self.parameters[n] / total

    def _check_selection(self, graph: Node) -> None:
        count = len(self.selection_nodes)
        if count != 1:
            self.errors.append(f"graph must contain exactly one selection node, found {count}")
            return
        selection = self.selection_nodes[0]
        leads = selection is graph or (
            graph.op == "sequence" and graph.children and graph.children[0] is selection
        )
        if not leads:
            self.errors.append("the selection node must be the root or the first child of a root sequence")


def validate_spec(
    document: Union[str, Dict[str, Any]],
    domain: Optional[Union[Domain, str]] = None,
    spec_id: Optional[str] = None,
    lineage: Optional[Lineage] = None,
) -> OperatorSpec:
    """Schema-, bounds- and domain-check a DSL document; raises with every violation found"""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SpecValidationError([f"document is not valid JSON: {e}"])
    if not isinstance(document, dict):
        raise SpecValidationError(["document must be a JSON object"])
    try:
        doc = SpecDocument.model_validate(document)
    except ValidationError as e:
        raise SpecValidationError(
            [f"{'.'.join(str(p) for p in err['loc']) or 'document'}: {err['msg']}" for err in e.errors()]
        )

    errors: List[str] = []
    if doc.version > SCHEMA_VERSION:
        errors.append(f"unsupported document version {doc.version}, expected <= {SCHEMA_VERSION}")
    expected = Domain(domain) if domain is not None else None
    if doc.domain is None and expected is None:
        raise SpecValidationError(errors + ["document has no domain"])
    if doc.domain is not None and expected is not None and doc.domain != expected:
        errors.append(f"domain mismatch: document is {doc.domain.value}, expected {expected.value}")
    resolved = expected or doc.domain

    checker = _Checker(doc, resolved)
    parameters = checker.run()
    errors.extend(checker.errors)
    if errors:
        raise SpecValidationError(errors)

    return OperatorSpec(
        id=spec_id or doc.id or _content_id(doc),
        domain=resolved,
        description=doc.description,
        parameters=parameters,
        graph=doc.graph,
        lineage=lineage or doc.lineage,
    )
