import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Tuple

import numpy as np

from ..errors import DomainMismatchError, InterpreterBudgetExceeded
from ..problems.evaluation import encoding_cost
from ..utils.rng import RandomStream
from . import operators as ops
from .spec import Node, OperatorSpec

if TYPE_CHECKING:
    from ..engine.population import Population

logger = logging.getLogger(__name__)

# node visits plus local-search evaluations allowed per offspring before a graph counts as pathological
NODE_EVALS_PER_OFFSPRING = 2_500

# stagnation generations that saturate the diversity gate's lambda penalty
STAGNATION_SCALE = 10.0

_CROSSOVERS = {
    "order": ops.order_crossover,
    "one_point": ops.one_point_crossover,
    "two_point": ops.two_point_crossover,
    "uniform_precedence": ops.uniform_precedence_crossover,
}


@dataclass
class VariationResult:
    """Offspring of one operator application with their parentage"""

    encodings: np.ndarray
    costs: np.ndarray
    parents: List[Tuple[int, ...]]
    node_evaluations: int = 0


@dataclass
class _Context:
    parents: Tuple[int, ...] = ()
    child: Optional[List[int]] = None
    child_cost: Optional[float] = None
    crossed: bool = False


class Interpreter:
    """Deterministic evaluator of one validated operator graph over one population"""

    def __init__(self, spec: OperatorSpec, population: "Population", rng: RandomStream,
                 node_eval_cap: Optional[int] = None):
        if spec.domain != population.domain:
            raise DomainMismatchError(
                f"spec {spec.id} targets {spec.domain.value}, population is {population.domain.value}"
            )
        self.spec = spec
        self.population = population
        self.instance = population.instance
        self.gen = rng.generator
        self.tokens = [self.instance.to_tokens(e).tolist() for e in population.encodings]
        self.cap = node_eval_cap if node_eval_cap is not None else NODE_EVALS_PER_OFFSPRING * population.size
        self.evaluations = 0

    def _tick(self, amount: int = 1) -> None:
        self.evaluations += amount
        if self.evaluations > self.cap:
            raise InterpreterBudgetExceeded(
                f"spec {self.spec.id} exceeded {self.cap} node evaluations"
            )

    def _cost(self, tokens: List[int]) -> float:
        return encoding_cost(self.instance, self.instance.from_tokens(np.asarray(tokens)))

    def run(self) -> VariationResult:
        n = self.population.size
        encodings = np.empty_like(self.population.encodings)
        costs = np.empty(n)
        parents: List[Tuple[int, ...]] = []
        for slot in range(n):
            ctx = _Context()
            self._visit(self.spec.graph, ctx)
            if ctx.child is None:
                # selection always leads the graph, so this only happens for graphs built by hand
                raise InterpreterBudgetExceeded(f"spec {self.spec.id} produced no offspring")
            encodings[slot] = self.instance.from_tokens(np.asarray(ctx.child))
            costs[slot] = ctx.child_cost if ctx.child_cost is not None else self._cost(ctx.child)
            parents.append(ctx.parents if ctx.crossed else ctx.parents[:1])
        return VariationResult(encodings, costs, parents, self.evaluations)

    def _visit(self, node: Node, ctx: _Context) -> None:
        self._tick()
        handler = getattr(self, f"_op_{node.op}", None)
        if handler is not None:
            handler(node, ctx)
        elif node.op in _CROSSOVERS:
            self._crossover(node, ctx)
        else:
            self._mutation(node, ctx)

    # combinators

    def _op_sequence(self, node: Node, ctx: _Context) -> None:
        for child in node.children:
            self._visit(child, ctx)

    def _op_probabilistic_choice(self, node: Node, ctx: _Context) -> None:
        weights = np.asarray(self.spec.value(node, "weights"), dtype=float)
        # validation normalizes weights; renormalize against float drift
        branch = int(self.gen.choice(len(node.children), p=weights / weights.sum()))
        self._visit(node.children[branch], ctx)

    def _op_diversity_gate(self, node: Node, ctx: _Context) -> None:
        threshold = self.spec.value(node, "threshold")
        weight = self.spec.value(node, "diversity_weight")
        stagnation = min(1.0, self.population.stagnation_len / STAGNATION_SCALE)
        signal = self.population.diversity - weight * stagnation
        if signal < threshold:
            self._visit(node.children[0], ctx)
        elif len(node.children) > 1:
            self._visit(node.children[1], ctx)

    # selection

    def _select(self, pair: Tuple[int, int], ctx: _Context) -> None:
        ctx.parents = (int(pair[0]), int(pair[1]))
        ctx.child = list(self.tokens[ctx.parents[0]])
        ctx.child_cost = float(self.population.costs[ctx.parents[0]])
        ctx.crossed = False

    def _op_tournament(self, node: Node, ctx: _Context) -> None:
        size = int(self.spec.value(node, "size"))
        self._select(ops.tournament(self.population.costs, self.gen, size), ctx)

    def _op_rank(self, node: Node, ctx: _Context) -> None:
        pressure = float(self.spec.value(node, "pressure"))
        self._select(ops.rank(self.population.costs, self.gen, pressure), ctx)

    def _op_diversity_fitness(self, node: Node, ctx: _Context) -> None:
        size = int(self.spec.value(node, "size"))
        weight = float(self.spec.value(node, "diversity_weight"))
        pair = ops.diversity_fitness(self.population.costs, self.population.encodings, self.gen, size, weight)
        self._select(pair, ctx)

    # variation

    def _crossover(self, node: Node, ctx: _Context) -> None:
        rate = self.spec.value(node, "rate")
        if self.gen.random() >= rate:
            return
        a = ctx.child
        b = self.tokens[ctx.parents[1]]
        ctx.child = _CROSSOVERS[node.op](a, b, self.gen)
        ctx.child_cost = None
        ctx.crossed = True

    def _mutation(self, node: Node, ctx: _Context) -> None:
        rate = self.spec.value(node, "rate")
        if self.gen.random() >= rate:
            return
        if node.op == "swap":
            ctx.child = ops.swap_mutation(ctx.child, self.gen)
        elif node.op == "multi_swap":
            ctx.child = ops.multi_swap_mutation(ctx.child, self.gen, int(self.spec.value(node, "k")))
        elif node.op == "inversion":
            ctx.child = ops.inversion_mutation(ctx.child, self.gen)
        elif node.op == "insertion":
            ctx.child = ops.insertion_mutation(ctx.child, self.gen)
        else:
            raise InterpreterBudgetExceeded(f"no interpreter rule for primitive '{node.op}'")
        ctx.child_cost = None

    def _op_swap_hill_climb(self, node: Node, ctx: _Context) -> None:
        if self.gen.random() >= self.spec.value(node, "rate"):
            return
        iterations = int(self.spec.value(node, "iterations"))
        tenure = int(self.spec.value(node, "tabu_tenure"))
        self._tick(iterations)
        cost = ctx.child_cost if ctx.child_cost is not None else self._cost(ctx.child)
        ctx.child, ctx.child_cost, _ = ops.swap_hill_climb(
            ctx.child, cost, self._cost, self.gen, iterations, tenure
        )


def apply_operator(
    spec: OperatorSpec,
    pop: "Population",
    rng: RandomStream,
    node_eval_cap: Optional[int] = None,
) -> VariationResult:
    """Interpret ``spec`` once per offspring slot, producing exactly N offspring"""
    return Interpreter(spec, pop, rng, node_eval_cap).run()
