from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple

from ..errors import DyaceError
from ..problems.instances import Domain


class NodeKind(str, Enum):
    SELECTION = "selection"
    CROSSOVER = "crossover"
    MUTATION = "mutation"
    LOCAL_SEARCH = "local_search"
    COMBINATOR = "combinator"


@dataclass(frozen=True)
class ParamBound:
    low: float
    high: float
    default: float
    integer: bool = False
    description: str = ""

    # values this far outside a bound (as a fraction of the range) are clamped, not rejected
    CLAMP_TOLERANCE = 0.05

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high

    def within_tolerance(self, value: float) -> bool:
        slack = self.CLAMP_TOLERANCE * (self.high - self.low)
        return self.low - slack <= value <= self.high + slack

    def clamp(self, value: float) -> float:
        return min(max(value, self.low), self.high)

    def render(self) -> str:
        kind = "int" if self.integer else "real"
        return f"{kind} in [{self.low:g}, {self.high:g}], default {self.default:g}"


ALL_DOMAINS: FrozenSet[Domain] = frozenset(Domain)


@dataclass(frozen=True)
class PrimitiveDescriptor:
    name: str
    kind: NodeKind
    summary: str
    params: Dict[str, ParamBound] = field(default_factory=dict)
    domains: FrozenSet[Domain] = ALL_DOMAINS
    # (min, max) child count; max None means unbounded
    arity: Tuple[int, Optional[int]] = (0, 0)
    list_params: Tuple[str, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.arity == (0, 0)


_RATE = ParamBound(0.0, 1.0, 0.9, description="probability of applying the operator to an offspring")
_MUTATION_RATE = ParamBound(0.0, 1.0, 0.2, description="probability of mutating an offspring")
_WEIGHT = ParamBound(0.0, 100.0, 1.0, description="branch weight, normalized at validation")

_PRIMITIVES: List[PrimitiveDescriptor] = [
    PrimitiveDescriptor(
        "tournament", NodeKind.SELECTION,
        "k-way tournament on cost, run once per parent",
        {"size": ParamBound(2, 10, 3, integer=True, description="tournament size")},
    ),
    PrimitiveDescriptor(
        "rank", NodeKind.SELECTION,
        "linear ranked selection",
        {"pressure": ParamBound(1.0, 2.0, 1.5, description="selective pressure of the linear ranking")},
    ),
    PrimitiveDescriptor(
        "diversity_fitness", NodeKind.SELECTION,
        "first parent by tournament, second trading cost against distance to the first",
        {
            "size": ParamBound(2, 10, 3, integer=True, description="candidates per parent"),
            "diversity_weight": ParamBound(0.0, 1.0, 0.5, description="weight of distance against normalized cost"),
        },
    ),
    PrimitiveDescriptor("order", NodeKind.CROSSOVER, "order crossover (OX)", {"rate": _RATE}),
    PrimitiveDescriptor("one_point", NodeKind.CROSSOVER, "one-point order-preserving crossover", {"rate": _RATE}),
    PrimitiveDescriptor("two_point", NodeKind.CROSSOVER, "two-point order-preserving crossover", {"rate": _RATE}),
    PrimitiveDescriptor(
        "uniform_precedence", NodeKind.CROSSOVER,
        "precedence-preserving uniform crossover on operation sequences",
        {"rate": _RATE},
        domains=frozenset({Domain.JSSP}),
    ),
    PrimitiveDescriptor("swap", NodeKind.MUTATION, "swap two positions", {"rate": _MUTATION_RATE}),
    PrimitiveDescriptor(
        "multi_swap", NodeKind.MUTATION, "k independent swaps",
        {"rate": _MUTATION_RATE, "k": ParamBound(2, 8, 3, integer=True, description="number of swaps")},
    ),
    PrimitiveDescriptor("inversion", NodeKind.MUTATION, "reverse a random segment", {"rate": _MUTATION_RATE}),
    PrimitiveDescriptor("insertion", NodeKind.MUTATION, "move one element to another position", {"rate": _MUTATION_RATE}),
    PrimitiveDescriptor(
        "swap_hill_climb", NodeKind.LOCAL_SEARCH,
        "swap-neighborhood hill climb; a positive tabu tenure allows sideways moves without cycling",
        {
            "rate": ParamBound(0.0, 1.0, 1.0, description="probability an offspring is improved"),
            "iterations": ParamBound(1, 200, 20, integer=True, description="move attempts per offspring"),
            "tabu_tenure": ParamBound(0, 50, 0, integer=True, description="iterations a move stays tabu, 0 disables"),
        },
        domains=frozenset({Domain.JSSP}),
    ),
    PrimitiveDescriptor("sequence", NodeKind.COMBINATOR, "run children in order", arity=(1, None)),
    PrimitiveDescriptor(
        "probabilistic_choice", NodeKind.COMBINATOR,
        "run exactly one child, drawn by normalized weights",
        {"weights": _WEIGHT},
        arity=(2, None),
        list_params=("weights",),
    ),
    PrimitiveDescriptor(
        "diversity_gate", NodeKind.COMBINATOR,
        "run the first child while diversity minus the stagnation penalty is below threshold, else the second",
        {
            "threshold": ParamBound(0.0, 1.0, 0.0917, description="diversity threshold"),
            "diversity_weight": ParamBound(
                0.0, 1.0, 0.0, description="lambda: stagnation penalty subtracted from diversity"
            ),
        },
        arity=(1, 2),
    ),
]

PRIMITIVES: Dict[str, PrimitiveDescriptor] = {p.name: p for p in _PRIMITIVES}


def get_primitive(name: str) -> Optional[PrimitiveDescriptor]:
    return PRIMITIVES.get(name)


def catalog_primitives(domain) -> List[PrimitiveDescriptor]:
    """Closed primitive set available to one problem domain"""
    try:
        domain = Domain(domain)
    except ValueError:
        raise DyaceError(f"unknown domain '{domain}'")
    return [p for p in _PRIMITIVES if domain in p.domains]


def render_catalog(domain) -> str:
    """Plain-text catalog listing used by prompts and the CLI"""
    lines = []
    for p in catalog_primitives(domain):
        lines.append(f"- {p.name} ({p.kind.value}): {p.summary}")
        for attr, bound in p.params.items():
            suffix = " (list, one per child)" if attr in p.list_params else ""
            lines.append(f"    {attr}: {bound.render()}{suffix}")
    return "\n".join(lines)
