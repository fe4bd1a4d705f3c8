import copy
import json
from pathlib import Path
from typing import Any, Callable, Dict

import pytest

from src.worldmodel import ScenarioConfig, scenario_from_dict

# 200 m x 200 m world, 5 m cells, one 60 m tower in the middle, two agents, two sites.
SMALL_SCENARIO: Dict[str, Any] = {
    "schema_version": 1,
    "profile": "delivery",
    "seed": 11,
    "world": {
        "grid": {"nx": 40, "ny": 40, "cell_size": 5.0, "origin": [0.0, 0.0]},
        "buildings": [{"x_min": 90.0, "y_min": 90.0, "x_max": 110.0, "y_max": 110.0, "height": 60.0}],
    },
    "mission": {
        "start_zone": {"x_min": 10.0, "y_min": 10.0, "x_max": 40.0, "y_max": 40.0, "z_min": 50.0, "z_max": 50.0},
        "targets": [[160.0, 160.0, 50.0], [160.0, 40.0, 50.0]],
        "mission_area": {"x_min": 0.0, "y_min": 0.0, "x_max": 200.0, "y_max": 200.0},
        "z_min": 20.0,
        "z_max": 100.0,
        "reach_tolerance": 5.0,
        "max_steps": 30,
        "d_safe": 10.0,
    },
    "radio": {
        "params": {"fading_seed": 3},
        "sites": [
            {"id": 0, "position": [20.0, 180.0, 25.0], "tx_power": 30.0},
            {"id": 1, "position": [180.0, 20.0, 25.0], "tx_power": 30.0},
        ],
    },
    "semantics": {"k": 4},
    "rl": {
        "batch": 8,
        "buffer_capacity": 256,
        "warmup": 16,
        "episodes": 2,
        "eval_episodes": 1,
        "seed": 5,
        "actor_hidden": [16, 16],
        "critic_hidden": [16, 16],
    },
}


@pytest.fixture
def small_payload() -> Dict[str, Any]:
    return copy.deepcopy(SMALL_SCENARIO)


@pytest.fixture
def make_scenario(small_payload: Dict[str, Any]) -> Callable[..., ScenarioConfig]:
    """Builds a scenario from the small payload after applying a mutation callback."""

    def build(mutate: Callable[[Dict[str, Any]], None] = lambda p: None) -> ScenarioConfig:
        payload = copy.deepcopy(small_payload)
        mutate(payload)
        return scenario_from_dict(payload)

    return build


@pytest.fixture
def small_scenario(make_scenario: Callable[..., ScenarioConfig]) -> ScenarioConfig:
    return make_scenario()


@pytest.fixture
def empty_scenario(make_scenario: Callable[..., ScenarioConfig]) -> ScenarioConfig:
    def clear(payload: Dict[str, Any]) -> None:
        payload["world"]["buildings"] = []

    return make_scenario(clear)


@pytest.fixture
def write_json(tmp_path: Path) -> Callable[[str, Any], Path]:
    def write(name: str, payload: Any) -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return write
