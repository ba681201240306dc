"""Permutation primitives.

Every function works on plain token lists in which each value occurs once, so
all of them are closed over permutations. Job-shop operation sequences are
lifted to tokens by the instance (``to_tokens``) before they reach this module.
"""
from collections import deque
from typing import Callable, List, Sequence, Tuple

import numpy as np

Tokens = List[int]


def positional_distance(a: Sequence[int], b: Sequence[int]) -> float:
    """1 - (positions holding equal entries) / length"""
    a, b = np.asarray(a), np.asarray(b)
    return 1.0 - float(np.count_nonzero(a == b)) / len(a)


# selection -------------------------------------------------------------------

def _tournament_pick(costs: np.ndarray, gen: np.random.Generator, size: int) -> int:
    entrants = gen.integers(0, len(costs), size=size)
    # lowest cost wins, ties go to the lower index
    best = min(entrants.tolist(), key=lambda i: (costs[i], i))
    return int(best)


def tournament(costs: np.ndarray, gen: np.random.Generator, size: int) -> Tuple[int, int]:
    return _tournament_pick(costs, gen, size), _tournament_pick(costs, gen, size)


def rank_probabilities(costs: np.ndarray, pressure: float) -> np.ndarray:
    n = len(costs)
    order = sorted(range(n), key=lambda i: (costs[i], i))
    probs = np.empty(n)
    for position, index in enumerate(order):
        worth = n - 1 - position  # best gets n-1
        probs[index] = (2.0 - pressure) / n + 2.0 * worth * (pressure - 1.0) / (n * (n - 1))
    return probs / probs.sum()


def rank(costs: np.ndarray, gen: np.random.Generator, pressure: float) -> Tuple[int, int]:
    probs = rank_probabilities(costs, pressure)
    first, second = gen.choice(len(costs), size=2, p=probs)
    return int(first), int(second)


def diversity_fitness(
    costs: np.ndarray,
    encodings: np.ndarray,
    gen: np.random.Generator,
    size: int,
    diversity_weight: float,
) -> Tuple[int, int]:
    first = _tournament_pick(costs, gen, size)
    low, high = float(costs.min()), float(costs.max())
    span = high - low if high > low else 1.0
    candidates = gen.integers(0, len(costs), size=size).tolist()

    def score(i: int) -> Tuple[float, int]:
        normalized = (costs[i] - low) / span
        distance = positional_distance(encodings[first], encodings[i])
        return (normalized - diversity_weight * distance, i)

    return first, int(min(candidates, key=score))


# crossover -------------------------------------------------------------------

def _two_cuts(gen: np.random.Generator, length: int) -> Tuple[int, int]:
    i, j = sorted(gen.choice(length, size=2, replace=False).tolist())
    return i, j


def order_crossover(a: Tokens, b: Tokens, gen: np.random.Generator) -> Tokens:
    """OX: keep a[i..j], fill the rest in b's order starting after j, wrapping"""
    n = len(a)
    if n < 2:
        return list(a)
    i, j = _two_cuts(gen, n)
    child = [None] * n
    child[i:j + 1] = a[i:j + 1]
    kept = set(a[i:j + 1])
    fill = [b[(j + 1 + k) % n] for k in range(n)]
    fill = [x for x in fill if x not in kept]
    for k, value in enumerate(fill):
        child[(j + 1 + k) % n] = value
    return child


def one_point_crossover(a: Tokens, b: Tokens, gen: np.random.Generator) -> Tokens:
    n = len(a)
    if n < 2:
        return list(a)
    cut = int(gen.integers(1, n))
    head = a[:cut]
    kept = set(head)
    return head + [x for x in b if x not in kept]


def two_point_crossover(a: Tokens, b: Tokens, gen: np.random.Generator) -> Tokens:
    """Keep a[i..j] in place; other positions take b's remaining values in b's order"""
    n = len(a)
    if n < 2:
        return list(a)
    i, j = _two_cuts(gen, n)
    kept = set(a[i:j + 1])
    rest = iter([x for x in b if x not in kept])
    return [a[k] if i <= k <= j else next(rest) for k in range(n)]


def uniform_precedence_crossover(a: Tokens, b: Tokens, gen: np.random.Generator) -> Tokens:
    """Precedence-preserving crossover: a coin per position picks the parent whose next unused value is taken"""
    n = len(a)
    mask = gen.random(n) < 0.5
    used = set()
    pa = pb = 0
    child = []
    for take_a in mask.tolist():
        if take_a:
            while a[pa] in used:
                pa += 1
            value = a[pa]
        else:
            while b[pb] in used:
                pb += 1
            value = b[pb]
        used.add(value)
        child.append(value)
    return child


# mutation --------------------------------------------------------------------

def swap_mutation(tokens: Tokens, gen: np.random.Generator) -> Tokens:
    out = list(tokens)
    if len(out) < 2:
        return out
    i, j = gen.choice(len(out), size=2, replace=False).tolist()
    out[i], out[j] = out[j], out[i]
    return out


def multi_swap_mutation(tokens: Tokens, gen: np.random.Generator, k: int) -> Tokens:
    out = list(tokens)
    for _ in range(int(k)):
        out = swap_mutation(out, gen)
    return out


def inversion_mutation(tokens: Tokens, gen: np.random.Generator) -> Tokens:
    out = list(tokens)
    if len(out) < 2:
        return out
    i, j = _two_cuts(gen, len(out))
    out[i:j + 1] = out[i:j + 1][::-1]
    return out


def insertion_mutation(tokens: Tokens, gen: np.random.Generator) -> Tokens:
    out = list(tokens)
    if len(out) < 2:
        return out
    i, j = gen.choice(len(out), size=2, replace=False).tolist()
    value = out.pop(i)
    out.insert(j, value)
    return out


# local search ----------------------------------------------------------------

def swap_hill_climb(
    tokens: Tokens,
    cost: float,
    evaluate: Callable[[Tokens], float],
    gen: np.random.Generator,
    iterations: int,
    tabu_tenure: int,
) -> Tuple[Tokens, float, int]:
    """Random swap moves; returns (best tokens, best cost, evaluations used).

    Without tabu only strict improvements are accepted. With a tenure, sideways
    and improving moves are accepted unless the swapped pair is tabu, and a move
    that beats the best seen so far overrides the tabu status.
    """
    current, current_cost = list(tokens), cost
    best, best_cost = list(tokens), cost
    tabu: deque = deque(maxlen=max(int(tabu_tenure), 1))
    used = 0
    n = len(current)
    if n < 2:
        return best, best_cost, used
    for _ in range(int(iterations)):
        i, j = gen.choice(n, size=2, replace=False).tolist()
        move = (min(current[i], current[j]), max(current[i], current[j]))
        candidate = list(current)
        candidate[i], candidate[j] = candidate[j], candidate[i]
        candidate_cost = evaluate(candidate)
        used += 1
        if tabu_tenure <= 0:
            accept = candidate_cost < current_cost
        else:
            accept = candidate_cost < best_cost or (move not in tabu and candidate_cost <= current_cost)
        if accept:
            current, current_cost = candidate, candidate_cost
            if tabu_tenure > 0:
                tabu.append(move)
            if current_cost < best_cost:
                best, best_cost = list(current), current_cost
    return best, best_cost, used
