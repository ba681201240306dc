import json
from typing import Any, Dict

import numpy as np
import pytest

from src.dyace.assets import asset_path
from src.dyace.config import build_run_config
from src.dyace.dsl.spec import Lineage, validate_spec
from src.dyace.problems import BksRegistry, JsspInstance, TspInstance, load_instance
from src.dyace.utils.rng import RandomStream

INSTANCES = asset_path("instances")


@pytest.fixture
def registry() -> BksRegistry:
    return BksRegistry.default()


@pytest.fixture
def tiny2x2():
    return load_instance(INSTANCES / "tiny2x2.txt", "taillard")


@pytest.fixture
def tiny3x3():
    return load_instance(INSTANCES / "tiny3x3.txt", "taillard")


@pytest.fixture
def square8():
    return load_instance(INSTANCES / "square8.tsp", "tsplib")


@pytest.fixture
def tinyvrp():
    return load_instance(INSTANCES / "tinyvrp.vrp", "cvrplib")


@pytest.fixture
def stream() -> RandomStream:
    return RandomStream(1234)


def seed_documents(domain: str):
    return json.loads(asset_path("seeds", f"{domain}.json").read_text(encoding="utf-8"))


def seed_spec(domain: str, index: int = 0, spec_id: str = "S1"):
    return validate_spec(seed_documents(domain)[index], domain=domain, spec_id=spec_id, lineage=Lineage(mode="seed"))


def random_tsp(n: int, seed: int, name: str = "rand") -> TspInstance:
    coords = np.random.default_rng(seed).uniform(0, 100, size=(n, 2))
    return TspInstance(name, coords, bks=100.0)


def random_jssp(jobs: int, machines: int, seed: int) -> JsspInstance:
    gen = np.random.default_rng(seed)
    routing = tuple(
        tuple((int(m), int(p)) for m, p in zip(gen.permutation(machines), gen.integers(1, 10, size=machines)))
        for _ in range(jobs)
    )
    return JsspInstance(f"rand{jobs}x{machines}_{seed}", jobs, machines, routing, bks=1.0)


@pytest.fixture
def jssp_seed():
    return seed_spec("jssp")


@pytest.fixture
def tsp_seed():
    return seed_spec("tsp")


def tiny_config_data(**run: Any) -> Dict[str, Any]:
    """Raw run config for the 3x3 job shop, small enough for a full loop in a test"""
    data = {
        "instance": {"path": str(INSTANCES / "tiny3x3.txt"), "format": "taillard"},
        "run": {
            "variant": "dyace",
            "seed": 7,
            "population_size": 10,
            "algorithm_population_size": 3,
            "horizon": 2,
            "meta_generations": 4,
            "probe_generations": 3,
            "rollouts": 2,
            "budget": 40,
        },
        "controller": {"backend": "scripted", "retries": 2},
    }
    data["run"].update(run)
    return data


@pytest.fixture
def tiny_config():
    def make(**run: Any):
        return build_run_config(tiny_config_data(**run))

    return make
