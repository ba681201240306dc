import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DomainMismatchError
from .instances import CvrpInstance, Domain, JsspInstance, ProblemInstance, Solution, TspInstance


def jssp_makespan(instance: JsspInstance, sequence: Sequence[int]) -> float:
    """Semi-active decoding: each operation starts at max(machine free, job free)"""
    job_next = [0] * instance.num_jobs
    job_ready = [0] * instance.num_jobs
    machine_ready = [0] * instance.num_machines
    routing = instance.routing
    for job in sequence:
        job = int(job)
        machine, duration = routing[job][job_next[job]]
        start = job_ready[job] if job_ready[job] > machine_ready[machine] else machine_ready[machine]
        end = start + duration
        job_ready[job] = end
        machine_ready[machine] = end
        job_next[job] += 1
    return float(max(job_ready))


def tour_length(instance: TspInstance, tour: np.ndarray) -> float:
    tour = np.asarray(tour)
    return float(instance.distances[tour, np.roll(tour, -1)].sum())


def split_routes(instance: CvrpInstance, giant_tour: Sequence[int]) -> List[List[int]]:
    """Greedy left-to-right capacity split; a route closes when the next customer would overflow it"""
    routes: List[List[int]] = []
    current: List[int] = []
    load = 0
    demands = instance.demands
    for customer in giant_tour:
        customer = int(customer)
        demand = int(demands[customer])
        if current and load + demand > instance.capacity:
            routes.append(current)
            current, load = [], 0
        current.append(customer)
        load += demand
    if current:
        routes.append(current)
    return routes


def routes_length(instance: CvrpInstance, routes: List[List[int]]) -> float:
    dist = instance.distances
    depot = instance.depot
    total = 0.0
    for route in routes:
        prev = depot
        for node in route:
            total += float(dist[prev, node])
            prev = node
        total += float(dist[prev, depot])
    return total


def encoding_cost(instance: ProblemInstance, encoding: np.ndarray) -> float:
    """Cost of a raw encoding; callers guarantee it belongs to the instance"""
    if isinstance(instance, JsspInstance):
        return jssp_makespan(instance, encoding)
    if isinstance(instance, TspInstance):
        return tour_length(instance, encoding)
    return routes_length(instance, split_routes(instance, encoding))


def evaluate(instance: ProblemInstance, s: Solution) -> float:
    """Cost f(x) of a solution; pure in (instance, encoding)"""
    if s.domain != instance.domain:
        raise DomainMismatchError(f"{s.domain.value} solution given to a {instance.domain.value} instance")
    if not instance.is_valid(s.encoding):
        raise DomainMismatchError(f"encoding is not a valid {instance.domain.value} solution for {instance.name}")
    return encoding_cost(instance, s.encoding)


@dataclass
class RouteViolation:
    route: int
    load: int
    capacity: int


@dataclass
class FeasibilityReport:
    routes: List[List[int]]
    loads: List[int]
    violations: List[RouteViolation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations


def check_feasible(
    instance: CvrpInstance,
    s: Solution,
    routes: Optional[List[List[int]]] = None,
) -> FeasibilityReport:
    """Audit route loads against capacity; ``routes`` forces an external split"""
    if s.domain != Domain.CVRP:
        raise DomainMismatchError(f"{s.domain.value} solution given to a CVRP feasibility check")
    routes = routes if routes is not None else split_routes(instance, s.encoding)
    loads = [int(sum(int(instance.demands[c]) for c in route)) for route in routes]
    violations = [
        RouteViolation(i, load, instance.capacity) for i, load in enumerate(loads) if load > instance.capacity
    ]
    return FeasibilityReport(routes=routes, loads=loads, violations=violations)


def optimality_gap(cost: float, bks: float) -> float:
    """Percent gap to the best-known cost; negative when the BKS is beaten"""
    if bks <= 0:
        raise ValueError(f"bks must be positive, got {bks}")
    return 100.0 * (cost - bks) / bks


def _multiset_sequences(counts: List[int]) -> Iterator[Tuple[int, ...]]:
    """Distinct orderings of a multiset of job ids, in lexicographic order"""
    total = sum(counts)
    prefix: List[int] = []

    def extend() -> Iterator[Tuple[int, ...]]:
        if len(prefix) == total:
            yield tuple(prefix)
            return
        for job, left in enumerate(counts):
            if left:
                counts[job] -= 1
                prefix.append(job)
                yield from extend()
                prefix.pop()
                counts[job] += 1

    return extend()


def exhaustive_makespan(instance: JsspInstance) -> Tuple[float, Tuple[int, ...]]:
    """Optimal semi-active makespan by enumerating every distinct operation sequence (tiny instances only)"""
    best: Tuple[float, Tuple[int, ...]] = (float("inf"), ())
    for seq in _multiset_sequences([instance.num_machines] * instance.num_jobs):
        cost = jssp_makespan(instance, seq)
        if cost < best[0]:
            best = (cost, seq)
    return best


def held_karp(distances: np.ndarray) -> Tuple[float, List[int]]:
    """Exact closed-tour optimum by bitmask dynamic programming, tour starting at node 0"""
    n = len(distances)
    if n < 2:
        return 0.0, list(range(n))
    dp: Dict[Tuple[int, int], Tuple[float, int]] = {}
    for k in range(1, n):
        dp[(1 << k, k)] = (float(distances[0][k]), 0)
    for size in range(2, n):
        for subset in itertools.combinations(range(1, n), size):
            mask = 0
            for node in subset:
                mask |= 1 << node
            for last in subset:
                prev_mask = mask & ~(1 << last)
                best = (float("inf"), -1)
                for prev in subset:
                    if prev == last:
                        continue
                    cost = dp[(prev_mask, prev)][0] + float(distances[prev][last])
                    if cost < best[0]:
                        best = (cost, prev)
                dp[(mask, last)] = best
    full = (1 << n) - 2
    length, last = min((dp[(full, k)][0] + float(distances[k][0]), k) for k in range(1, n))
    tour = []
    mask = full
    while last != 0:
        tour.append(last)
        _, prev = dp[(mask, last)]
        mask &= ~(1 << last)
        last = prev
    tour.append(0)
    return length, tour[::-1]
