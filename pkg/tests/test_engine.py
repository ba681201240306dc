import io

import numpy as np
import pytest

from conftest import random_tsp, seed_spec
from src.dyace.engine import GenerationRecord, GenerationTrace, init_population, population_diversity, run_horizon, step, trajectory_metric
from src.dyace.engine.population import Population
from src.dyace.dsl.spec import validate_spec
from src.dyace.errors import RolloutTimeout
from src.dyace.problems import exhaustive_makespan, optimality_gap
from src.dyace.utils.rng import RandomStream


def test_init_population(tiny3x3, stream):
    pop = init_population(tiny3x3, 6, stream)
    assert pop.size == 6 and pop.generation == 0
    assert all(tiny3x3.is_valid(e) for e in pop.encodings)
    assert pop.best_cost == pop.costs.min()
    assert pop.stagnation_len == 0
    with pytest.raises(ValueError):
        init_population(tiny3x3, 1, stream)


def test_population_is_read_only(tiny3x3, stream):
    pop = init_population(tiny3x3, 4, stream)
    with pytest.raises(ValueError):
        pop.encodings[0, 0] = 1


def test_diversity_enumeration():
    identical = np.tile(np.arange(5), (4, 1))
    assert population_diversity(identical) == 0.0
    shifted = np.array([[0, 1, 2, 3], [1, 2, 3, 0]])
    assert population_diversity(shifted) == 1.0
    half = np.array([[0, 1, 2, 3], [0, 1, 3, 2]])
    assert population_diversity(half) == 0.5


def test_diversity_sampling_is_seeded():
    gen = np.random.default_rng(3)
    encodings = np.array([gen.permutation(20) for _ in range(40)])
    first = population_diversity(encodings, RandomStream(5))
    assert first == population_diversity(encodings, RandomStream(5))
    assert 0.0 < first <= 1.0


def test_step_is_elitist_and_keeps_size():
    instance = random_tsp(12, 0)
    spec = seed_spec("tsp")
    stream = RandomStream(11)
    pop = init_population(instance, 10, stream)
    for t in range(200):
        following, record = step(pop, spec, stream.derive(t))
        assert following.size == pop.size
        assert following.best_cost <= pop.best_cost
        assert following.costs.min() <= pop.costs.min()
        assert np.all(np.diff(following.costs) >= 0)
        assert record.generation == pop.generation + 1
        assert record.offspring == pop.size
        assert 0 <= record.successes <= record.offspring
        pop = following


def test_randomized_steps_never_lose_the_best():
    gen = np.random.default_rng(99)
    for trial in range(40):
        instance = random_tsp(int(gen.integers(5, 12)), trial)
        spec = seed_spec("tsp", int(gen.integers(0, 5)))
        stream = RandomStream(trial)
        pop = init_population(instance, int(gen.integers(2, 8)), stream)
        best = pop.best_cost
        for t in range(25):
            pop, _ = step(pop, spec, stream.derive(t))
            assert pop.best_cost <= best
            best = pop.best_cost
            assert instance.is_valid(pop.best_encoding)


def test_horizons_compose(tiny3x3, jssp_seed, stream):
    pop = init_population(tiny3x3, 8, stream)
    whole, whole_trace = run_horizon(pop, jssp_seed, 6, stream.derive("real"))
    middle, first_trace = run_horizon(pop, jssp_seed, 2, stream.derive("real"))
    end, second_trace = run_horizon(middle, jssp_seed, 4, stream.derive("real"))
    assert end.fingerprint() == whole.fingerprint()
    assert list(first_trace) + list(second_trace) == list(whole_trace)


def test_run_horizon_is_deterministic(square8, tsp_seed):
    pop = init_population(square8, 8, RandomStream(1))
    a, trace_a = run_horizon(pop, tsp_seed, 5, RandomStream(2))
    b, trace_b = run_horizon(pop, tsp_seed, 5, RandomStream(2))
    assert a.fingerprint() == b.fingerprint()
    assert trace_a.to_csv() == trace_b.to_csv()
    c, _ = run_horizon(pop, tsp_seed, 5, RandomStream(3))
    assert a.generation == c.generation == 5


def test_run_horizon_arguments(square8, tsp_seed, stream):
    pop = init_population(square8, 4, stream)
    with pytest.raises(ValueError):
        run_horizon(pop, tsp_seed, 0, stream)
    with pytest.raises(RolloutTimeout):
        run_horizon(pop, tsp_seed, 3, stream, deadline=0.0)


def test_trace_csv_round_trip(tiny3x3, jssp_seed, stream):
    pop = init_population(tiny3x3, 8, stream)
    _, trace = run_horizon(pop, jssp_seed, 4, stream)
    text = trace.to_csv()
    assert text.splitlines()[0] == "generation,best_cost,mean_cost,diversity,successes,total_gain,offspring"
    assert "\r\n" in text
    restored = GenerationTrace.from_csv(io.StringIO(text))
    assert list(restored) == list(trace)
    assert len(trace.tail(2)) == 2 and trace.tail(2).records == trace.records[-2:]


def test_trajectory_metric(tiny3x3, jssp_seed, stream):
    pop = init_population(tiny3x3, 8, stream)
    final, trace = run_horizon(pop, jssp_seed, 3, stream)
    assert trajectory_metric(trace, tiny3x3) == optimality_gap(final.best_cost, tiny3x3.bks)
    with pytest.raises(ValueError):
        trajectory_metric(GenerationTrace(), tiny3x3)


def test_trajectory_metric_takes_the_best_cost_anywhere(tiny3x3):
    trace = GenerationTrace([
        GenerationRecord(g, cost, cost + 1.0, 0.5, 0, 0.0, 8) for g, cost in enumerate([14.0, 11.0, 12.0], start=1)
    ])
    assert trajectory_metric(trace, tiny3x3) == optimality_gap(11.0, tiny3x3.bks)


def test_job_shop_diversity_compares_raw_job_ids(tiny2x2, stream):
    # operation tokens would disagree in three positions here, job ids in two
    pop = Population.from_encodings(tiny2x2, [np.array([0, 0, 1, 1]), np.array([1, 0, 0, 1])], stream)
    assert pop.diversity == 0.5


def test_fingerprint_tracks_content(tiny3x3, stream):
    pop = init_population(tiny3x3, 4, stream)
    same = Population.from_encodings(tiny3x3, list(pop.encodings), stream)
    assert same.fingerprint() == pop.fingerprint()
    other = init_population(tiny3x3, 4, stream.derive("other"))
    assert other.fingerprint() != pop.fingerprint()


AGGRESSIVE = {
    "version": 1,
    "domain": "jssp",
    "description": "Heavy perturbation\nEvery child is recombined, swapped and inverted.",
    "parameters": {"size": 2, "cx": 1.0, "mut": 1.0},
    "graph": {
        "op": "sequence",
        "children": [
            {"op": "tournament", "params": {"size": "size"}},
            {"op": "order", "params": {"rate": "cx"}},
            {"op": "swap", "params": {"rate": "mut"}},
            {"op": "inversion", "params": {"rate": "mut"}},
        ],
    },
}


def test_tiny_job_shop_reaches_its_optimum(tiny2x2, jssp_seed):
    optimum, _ = exhaustive_makespan(tiny2x2)
    reached = 0
    for seed in range(10):
        stream = RandomStream(seed)
        pop = init_population(tiny2x2, 4, stream.derive("population"))
        final, _ = run_horizon(pop, jssp_seed, 20, stream.derive("real"))
        reached += final.best_cost == optimum
    assert reached >= 9


def test_injected_optimum_survives_aggressive_variation(tiny3x3):
    optimum, sequence = exhaustive_makespan(tiny3x3)
    spec = validate_spec(AGGRESSIVE, spec_id="S1")
    stream = RandomStream(17)
    fill = stream.derive("fill")
    others = [tiny3x3.random_encoding(fill) for _ in range(7)]
    pop = Population.from_encodings(tiny3x3, [np.array(sequence)] + others, stream)
    assert pop.best_cost == optimum
    for t in range(50):
        pop, record = step(pop, spec, stream.derive(t))
        assert pop.best_cost == optimum
        assert record.best_cost == optimum
    assert tiny3x3.is_valid(pop.best_encoding)


@pytest.mark.parametrize("length", [3, 5, 7, 9])
def test_reversed_odd_permutations_share_only_the_middle(length):
    forward = np.arange(length)
    assert population_diversity(np.array([forward, forward[::-1]])) == pytest.approx(1.0 - 1.0 / length)


def test_random_populations_are_nearly_fully_diverse():
    instance = random_tsp(51, 0, name="rand51")
    inside = 0
    for seed in range(100):
        value = init_population(instance, 100, RandomStream(seed)).diversity
        inside += 0.9 < value < 1.0
    assert inside >= 95
