import io
import logging
import math

import pandas as pd
import pytest

from conftest import random_tsp, seed_spec
from src.dyace.dsl import validate_spec
from src.dyace.engine import GenerationRecord, GenerationTrace, init_population, run_horizon
from src.dyace.problems import optimality_gap
from src.dyace.services.probe import (
    TrajectoryFeatures,
    extract_features,
    probe,
    render_features,
    rollout_stream,
    score,
)
from src.dyace.utils.rng import RandomStream


def no_op_spec(domain="jssp", spec_id="NOOP"):
    return validate_spec(
        {
            "domain": domain,
            "description": "Copies parents",
            "parameters": {"size": 2, "cx": 0.0, "mut": 0.0},
            "graph": {
                "op": "sequence",
                "children": [
                    {"op": "tournament", "params": {"size": "size"}},
                    {"op": "order", "params": {"rate": "cx"}},
                    {"op": "swap", "params": {"rate": "mut"}},
                ],
            },
        },
        spec_id=spec_id,
    )


def synthetic_trace(best, diversity=None, successes=None, gains=None, offspring=10):
    n = len(best)
    diversity = diversity if diversity is not None else [0.5] * n
    successes = successes if successes is not None else [0] * n
    gains = gains if gains is not None else [0.0] * n
    return GenerationTrace([
        GenerationRecord(t + 1, float(best[t]), float(best[t]), float(diversity[t]), successes[t], float(gains[t]), offspring)
        for t in range(n)
    ])


def test_score():
    assert score([10.0]) == 10.0
    assert score([8.0, 12.0]) == 10.0
    gaps = [3.5, 1.25, 9.0, 0.0]
    assert score(gaps) == score(list(reversed(gaps)))
    assert min(gaps) <= score(gaps) <= max(gaps)
    with pytest.raises(ValueError):
        score([])


def test_constant_trace_features(tiny3x3):
    features = extract_features(synthetic_trace([12, 12, 12, 12]), tiny3x3)
    assert features.velocity == 0.0
    assert features.acceleration == 0.0
    assert features.stagnation_len == 3
    assert features.operator_precision == 0.0 and features.operator_impact == 0.0


def test_linear_gap_kinematics():
    instance = random_tsp(5, 0)  # bks 100, so costs 120/118/116 are gaps 20/18/16
    features = extract_features(
        synthetic_trace([120, 118, 116], diversity=[0.9, 0.7, 0.6], successes=[2, 1, 1], gains=[4.0, 2.0, 2.0]),
        instance,
    )
    assert features.velocity == pytest.approx(2.0)
    assert features.acceleration == pytest.approx(0.0)
    assert features.diversity == 0.6
    assert features.diversity_loss_rate == pytest.approx(0.15)
    assert features.operator_precision == pytest.approx(4 / 30)
    assert features.operator_impact == pytest.approx(2.0)
    assert features.stagnation_len == 0


def test_short_trace_rejected(tiny3x3):
    with pytest.raises(ValueError):
        extract_features(synthetic_trace([12, 11]), tiny3x3)


def recompute_from_csv(text, bks):
    """Straight-line recomputation of every feature from the exported columns"""
    frame = pd.read_csv(io.StringIO(text), float_precision="round_trip")
    best = frame["best_cost"].tolist()
    gaps = [100.0 * (c - bks) / bks for c in best]
    n = len(gaps)
    velocity = sum(gaps[t - 1] - gaps[t] for t in range(1, n)) / (n - 1)
    acceleration = sum(gaps[t] - 2 * gaps[t - 1] + gaps[t - 2] for t in range(2, n)) / (n - 2)
    div = frame["diversity"].tolist()
    loss = sum(div[t - 1] - div[t] for t in range(1, n)) / (n - 1)
    succ = frame["successes"].sum()
    off = frame["offspring"].sum()
    gain = frame["total_gain"].sum()
    last = 0
    for t in range(1, n):
        if best[t] < best[t - 1]:
            last = t
    return {
        "velocity": velocity,
        "acceleration": acceleration,
        "diversity": div[-1],
        "diversity_loss_rate": loss,
        "operator_precision": succ / off,
        "operator_impact": (gain / succ) * 100.0 / bks if succ else 0.0,
        "stagnation_len": n - 1 - last,
    }


def test_features_match_csv_recomputation():
    for seed in range(25):
        instance = random_tsp(10, seed)
        spec = seed_spec("tsp", seed % 5)
        stream = RandomStream(seed)
        pop = init_population(instance, 12, stream)
        _, trace = run_horizon(pop, spec, 12, stream.derive("run"))
        features = extract_features(trace, instance).to_dict()
        expected = recompute_from_csv(trace.to_csv(), instance.bks)
        for name, value in expected.items():
            assert math.isclose(features[name], value, rel_tol=1e-12, abs_tol=1e-12), name
        assert 0.0 <= features["operator_precision"] <= 1.0
        assert (features["operator_impact"] == 0.0) == (features["operator_precision"] == 0.0)


def test_score_replays_through_run_horizon():
    instance = random_tsp(20, 3)
    spec = seed_spec("tsp", 0)
    stream = RandomStream(21).derive("probe")
    pop = init_population(instance, 16, RandomStream(21))
    report = probe(pop, [spec], t_probe=6, m=4, rng=stream)
    replayed = [
        optimality_gap(run_horizon(pop, spec, 6, rollout_stream(stream, spec.id, r))[0].best_cost, instance.bks)
        for r in range(4)
    ]
    result = report.result(spec.id)
    assert result.gaps == replayed
    assert result.score == score(replayed)
    assert report.units == 4


def test_single_rollout_score_is_its_gap(square8, tsp_seed, stream):
    pop = init_population(square8, 6, stream)
    report = probe(pop, [tsp_seed], 3, 1, stream)
    result = report.result(tsp_seed.id)
    assert result.score == result.gaps[0]


def test_probe_is_deterministic_and_prefix_stable(tiny3x3, stream):
    specs = [seed_spec("jssp", i, f"S{i + 1}") for i in range(3)]
    pop = init_population(tiny3x3, 8, stream)
    first = probe(pop, specs, 4, 4, stream.derive("p"))
    second = probe(pop, specs, 4, 4, stream.derive("p"))
    assert first.to_dict() == second.to_dict()
    half = probe(pop, specs, 4, 2, stream.derive("p"))
    for spec in specs:
        assert first.result(spec.id).gaps[:2] == half.result(spec.id).gaps


def test_parallel_rollouts_match_sequential(tiny3x3, stream):
    specs = [seed_spec("jssp", i, f"S{i + 1}") for i in range(2)]
    pop = init_population(tiny3x3, 8, stream)
    sequential = probe(pop, specs, 3, 3, stream)
    threaded = probe(pop, specs, 3, 3, stream, workers=3)
    assert sequential.to_dict() == threaded.to_dict()


def test_no_op_never_beats_the_seed(tiny3x3, jssp_seed):
    for seed in range(10):
        stream = RandomStream(seed)
        pop = init_population(tiny3x3, 8, stream)
        report = probe(pop, [no_op_spec(), jssp_seed], 5, 2, stream.derive("probe"))
        assert report.result(jssp_seed.id).score <= report.result("NOOP").score
        assert report.result("NOOP").score == optimality_gap(pop.best_cost, tiny3x3.bks)


def test_failed_candidate_has_no_score(tiny3x3, jssp_seed, stream):
    pop = init_population(tiny3x3, 8, stream)
    report = probe(pop, [jssp_seed], 3, 2, stream, time_limit=-1.0)
    result = report.result(jssp_seed.id)
    assert result.failed and result.score is None
    assert "RolloutTimeout" in result.error
    assert result.to_dict()["status"] == "failed"
    assert report.units == 2


def test_anchor_features(tiny3x3, jssp_seed, stream):
    pop = init_population(tiny3x3, 8, stream)
    recent_pop, recent = run_horizon(pop, jssp_seed, 4, stream.derive("real"))
    report = probe(recent_pop, [jssp_seed], 4, 2, stream, anchor_id=jssp_seed.id, anchor_trace=recent)
    assert report.anchor_real == extract_features(recent, tiny3x3)
    assert report.anchor_probe == report.result(jssp_seed.id).features
    anchor = report.to_dict()["anchor"]
    assert anchor["spec_id"] == jssp_seed.id and anchor["real"] is not None


def test_probe_arguments(tiny3x3, jssp_seed, stream):
    pop = init_population(tiny3x3, 4, stream)
    with pytest.raises(ValueError):
        probe(pop, [], 3, 1, stream)
    with pytest.raises(ValueError):
        probe(pop, [jssp_seed], 1, 1, stream)
    with pytest.raises(ValueError):
        probe(pop, [jssp_seed], 3, 0, stream)


def test_feature_rendering_is_fixed():
    features = TrajectoryFeatures(1.0, -0.5, 0.25, 0.125, 0.1, 2.0, 3.0)
    assert render_features(features) == (
        "velocity: 1.0000\n"
        "acceleration: -0.5000\n"
        "diversity: 0.2500\n"
        "diversity_loss_rate: 0.1250\n"
        "operator_precision: 0.1000\n"
        "operator_impact: 2.0000\n"
        "stagnation_len: 3.0000"
    )
    assert TrajectoryFeatures.mean([features, features]) == features


def test_short_lookahead_warns_that_features_are_missing(tiny3x3, jssp_seed, stream, caplog):
    pop = init_population(tiny3x3, 4, stream)
    with caplog.at_level(logging.WARNING, logger="src.dyace.services.probe"):
        report = probe(pop, [jssp_seed], 2, 1, stream)
    assert report.candidates[0].features is None
    assert "carry no features" in caplog.text
