import itertools
import math

import numpy as np
import pytest

from conftest import INSTANCES, random_jssp, random_tsp
from src.dyace.errors import BksMissingError, DomainMismatchError, InstanceParseError
from src.dyace.problems import (
    BksRegistry,
    CvrpInstance,
    Domain,
    Solution,
    TspInstance,
    check_feasible,
    encoding_cost,
    evaluate,
    exhaustive_makespan,
    held_karp,
    optimality_gap,
    parse_instance,
    split_routes,
)
from src.dyace.problems.evaluation import jssp_makespan


def reference_makespan(instance, sequence):
    """Independent decoder: explicit operation start times on per-machine timelines"""
    finish_job = {}
    finish_machine = {}
    step = [0] * instance.num_jobs
    for job in sequence:
        machine, duration = instance.routing[job][step[job]]
        start = max(finish_job.get(job, 0), finish_machine.get(machine, 0))
        finish_job[job] = start + duration
        finish_machine[machine] = start + duration
        step[job] += 1
    return max(finish_job.values())


def distinct_sequences(jobs, machines):
    """Every operation sequence, built by choosing each job's positions in turn"""
    sequences = [()]
    length = jobs * machines
    for job in range(jobs):
        grown = []
        for partial in sequences:
            free = [i for i in range(length) if i not in dict(partial)]
            for chosen in itertools.combinations(free, machines):
                grown.append(partial + tuple((i, job) for i in chosen))
        sequences = grown
    return sorted(tuple(job for _, job in sorted(placed)) for placed in sequences)


def test_tiny2x2_makespans(tiny2x2):
    assert tiny2x2.bks == 7
    assert evaluate(tiny2x2, Solution(Domain.JSSP, [0, 1, 0, 1])) == 7
    assert evaluate(tiny2x2, Solution(Domain.JSSP, [0, 0, 1, 1])) == 11


def test_tiny3x3_reaches_lower_bound(tiny3x3):
    assert tiny3x3.lower_bound == 9
    assert jssp_makespan(tiny3x3, [0, 1, 2] * 3) == 9
    best, sequence = exhaustive_makespan(tiny3x3)
    assert best == 9 == tiny3x3.bks
    assert jssp_makespan(tiny3x3, sequence) == 9


@pytest.mark.parametrize("jobs,machines", [(2, 2), (3, 3)])
def test_decoder_matches_reference_on_random_instances(jobs, machines):
    for seed in range(20):
        instance = random_jssp(jobs, machines, seed)
        sequences = distinct_sequences(jobs, machines)
        costs = [jssp_makespan(instance, s) for s in sequences]
        assert costs == [reference_makespan(instance, s) for s in sequences]
        assert exhaustive_makespan(instance)[0] == min(costs)


def test_token_lifting_round_trip(tiny3x3, stream):
    encoding = tiny3x3.random_encoding(stream)
    tokens = tiny3x3.to_tokens(encoding)
    assert sorted(tokens.tolist()) == list(range(9))
    assert np.array_equal(tiny3x3.from_tokens(tokens), encoding)


def test_triangle_tour():
    instance = TspInstance("triangle", [[0, 0], [3, 0], [0, 4]], bks=12.0)
    assert encoding_cost(instance, np.array([0, 1, 2])) == pytest.approx(12.0, rel=1e-12)


def test_distances_keep_full_precision():
    instance = TspInstance("diagonal", [[0, 0], [1, 1], [1, 0]], bks=3.4)
    assert instance.distances[0, 1] == pytest.approx(math.sqrt(2), rel=1e-15)
    assert encoding_cost(instance, np.array([0, 1, 2])) == pytest.approx(2 + math.sqrt(2), rel=1e-12)


def test_square_hull_order_is_optimal(square8):
    assert evaluate(square8, Solution(Domain.TSP, list(range(8)))) == pytest.approx(8.0, rel=1e-12)
    length, tour = held_karp(square8.distances)
    assert length == pytest.approx(8.0, rel=1e-12)
    assert sorted(tour) == list(range(8))


def test_held_karp_matches_enumeration():
    for seed in range(5):
        instance = random_tsp(7, seed)
        length, tour = held_karp(instance.distances)
        brute = min(
            encoding_cost(instance, np.array((0,) + p)) for p in itertools.permutations(range(1, 7))
        )
        assert math.isclose(length, brute, rel_tol=1e-9)
        assert math.isclose(encoding_cost(instance, np.array(tour)), length, rel_tol=1e-9)


def test_unit_capacity_vrp(tinyvrp, stream):
    for _ in range(5):
        encoding = tinyvrp.random_encoding(stream)
        assert len(split_routes(tinyvrp, encoding)) == 4
        assert encoding_cost(tinyvrp, encoding) == pytest.approx(24.0, rel=1e-12)
    report = check_feasible(tinyvrp, Solution(Domain.CVRP, [1, 2, 3, 4]))
    assert report.feasible and report.loads == [1, 1, 1, 1]


def test_external_routes_overflow_capacity(tinyvrp):
    report = check_feasible(tinyvrp, Solution(Domain.CVRP, [1, 2, 3, 4]), routes=[[1, 2], [3, 4]])
    assert not report.feasible
    assert [v.route for v in report.violations] == [0, 1]


def test_split_closes_route_on_overflow():
    instance = CvrpInstance("split", [[0, 0], [1, 0], [2, 0], [3, 0]], [0, 2, 2, 1], capacity=3, bks=1.0)
    assert split_routes(instance, [1, 2, 3]) == [[1], [2, 3]]


def test_domain_mismatch(tiny2x2, square8):
    with pytest.raises(DomainMismatchError):
        evaluate(tiny2x2, Solution(Domain.TSP, [0, 1, 2, 3]))
    with pytest.raises(DomainMismatchError):
        evaluate(square8, Solution(Domain.TSP, [0, 0, 1, 2, 3, 4, 5, 6]))


def test_optimality_gap():
    assert optimality_gap(7, 7) == 0
    assert optimality_gap(110, 100) == pytest.approx(10.0)
    assert optimality_gap(90, 100) == pytest.approx(-10.0)
    gen = np.random.default_rng(0)
    for _ in range(1000):
        bks = float(gen.uniform(1, 1000))
        a, b = gen.uniform(0, 2000, size=2)
        assert optimality_gap(bks, bks) == 0
        assert math.isclose(
            optimality_gap(a, bks) - optimality_gap(b, bks), 100.0 * (a - b) / bks, rel_tol=1e-9, abs_tol=1e-9
        )
    with pytest.raises(ValueError):
        optimality_gap(1.0, 0.0)


SQUARE = """NAME : square8
TYPE : TSP
DIMENSION : {dim}
EDGE_WEIGHT_TYPE : {ewt}
NODE_COORD_SECTION
1 0 0
2 1 0
3 2 0
4 2 1
5 2 2
6 1 2
7 0 2
8 0 1
EOF
"""


def test_parse_errors_are_distinct(registry):
    with pytest.raises(InstanceParseError, match="dimension mismatch"):
        parse_instance(SQUARE.format(dim=9, ewt="EUC_2D"), "tsplib", registry=registry)
    with pytest.raises(InstanceParseError, match="unsupported edge weight type 'ATT'"):
        parse_instance(SQUARE.format(dim=8, ewt="ATT"), "tsplib", registry=registry)
    with pytest.raises(InstanceParseError, match="malformed header"):
        parse_instance(SQUARE.format(dim="eight", ewt="EUC_2D"), "tsplib", registry=registry)
    with pytest.raises(InstanceParseError, match="malformed Taillard header"):
        parse_instance("Nb of jobs, Nb of Machines\nx y\n", "taillard", name="tiny2x2", registry=registry)
    with pytest.raises(InstanceParseError, match="unknown instance format"):
        parse_instance("", "dimacs")


def test_missing_bks(registry):
    with pytest.raises(BksMissingError):
        parse_instance(SQUARE.format(dim=8, ewt="EUC_2D").replace("square8", "nowhere"), "tsplib", registry=registry)


def test_registry_metrics():
    registry = BksRegistry.from_text("# comment\nfoo 10\nbar 20.5 rounded\n")
    assert registry.get("FOO").metric == "exact"
    assert registry.get("bar").cost == 20.5 and registry.get("bar").metric == "rounded"
    with pytest.raises(InstanceParseError):
        BksRegistry.from_text("baz 1 approx\n")


def test_single_operation_job_shop():
    registry = BksRegistry.from_text("one 7\n")
    instance = parse_instance("Nb of jobs, Nb of Machines\n1 1\nTimes\n7\nMachines\n1\n", "taillard", name="one", registry=registry)
    assert (instance.num_jobs, instance.num_machines) == (1, 1)
    assert evaluate(instance, Solution(Domain.JSSP, [0])) == 7.0
    assert exhaustive_makespan(instance)[0] == 7.0


def test_tour_length_ignores_rotation_and_direction():
    gen = np.random.default_rng(5)
    for trial in range(20):
        instance = random_tsp(int(gen.integers(3, 15)), trial)
        tour = gen.permutation(instance.num_nodes)
        length = encoding_cost(instance, tour)
        for shift in range(instance.num_nodes):
            assert encoding_cost(instance, np.roll(tour, shift)) == pytest.approx(length, rel=1e-12)
        assert encoding_cost(instance, tour[::-1]) == pytest.approx(length, rel=1e-12)


@pytest.mark.parametrize("jobs,machines", [(2, 2), (2, 3), (3, 3)])
def test_every_sequence_respects_the_lower_bound(jobs, machines):
    for seed in range(5):
        instance = random_jssp(jobs, machines, seed)
        for sequence in distinct_sequences(jobs, machines):
            assert jssp_makespan(instance, list(sequence)) >= instance.lower_bound


def vrp_text(old="", new=""):
    text = (INSTANCES / "tinyvrp.vrp").read_text(encoding="utf-8")
    assert old in text
    return text.replace(old, new)


@pytest.mark.parametrize("old,new,message", [
    ("\n1 0\n2 1\n", "\n0 0\n2 1\n", "demand node id 0 outside 1..5"),
    ("\n5 1\n", "\n-2 1\n", "demand node id -2 outside 1..5"),
    ("\n4 1\n", "\n4 one\n", "malformed demand row: '4 one'"),
    ("\n3 0 3\n", "\n3 0 north\n", "malformed coordinate row: '3 0 north'"),
    ("\n2 3 0\n", "\nB 3 0\n", "coordinate row: node id 'B' is not an integer"),
    ("DEPOT_SECTION\n1\n", "DEPOT_SECTION\n9\n", "depot node id 9 outside 1..5"),
])
def test_vrp_sections_reject_bad_rows(registry, old, new, message):
    with pytest.raises(InstanceParseError, match=message):
        parse_instance(vrp_text(old, new), "cvrplib", registry=registry)


def test_vrp_sample_parses(registry):
    instance = parse_instance(vrp_text(), "cvrplib", registry=registry)
    assert instance.depot == 0
    assert instance.demands.tolist() == [0, 1, 1, 1, 1]
