import json
import os

import pytest

from automaton import load_nba, parse_nba
from constants import get_config_path
from workspace import load_workspace, parse_workspace

# Two targets on a line, visited alternately; same automaton shape as the manipulator case.
ALTERNATING_NBA = {
    "states": ["q0", "q1"],
    "initial": ["q0"],
    "accepting": ["q0"],
    "propositions": ["a", "b", "free", "wall"],
    "transitions": [
        {"from": "q0", "label": "free", "to": "q0"},
        {"from": "q0", "label": "a", "to": "q1"},
        {"from": "q1", "label": "free", "to": "q1"},
        {"from": "q1", "label": "b", "to": "q0"},
    ],
}

PLANE_WORKSPACE = {
    "dimension": 2,
    "bounds": {"lower": [0.0, 0.0], "upper": [10.0, 10.0]},
    "default_proposition": "free",
    "regions": [
        {"proposition": "a", "lower": [1.0, 1.0], "upper": [2.0, 2.0]},
        {"proposition": "b", "lower": [7.0, 1.0], "upper": [8.0, 2.0]},
        {"proposition": "wall", "lower": [4.0, 6.0], "upper": [6.0, 8.0]},
    ],
}

INTEGRATOR_EXPERIMENT = {
    "name": "integrator",
    "automaton": "automaton.json",
    "workspace": "workspace.json",
    "initial_proposition": "a",
    "plant": {
        "type": "generic",
        "params": {"stages": 1, "dimension": 2, "f": [["0", "0"]], "g": ["identity"]},
        "disturbance": {"kind": "zero"},
    },
    "controller": {"kappa": [1.0]},
    "tube": {"t_c": 4.0, "width_policy": 0.9, "switch_core": 0.5},
    "initial_state": [1.5, 1.5],
    "horizon": 20.0,
    "dt": 0.01,
    "seed": 3,
    "required_visits": 2,
}


def write_experiment(directory, automaton=None, workspace=None, **overrides):
    """Write an integrator experiment (automaton, workspace, config) and return the config path."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "automaton.json"), "w", encoding="utf-8") as f:
        json.dump(automaton or ALTERNATING_NBA, f)
    with open(os.path.join(directory, "workspace.json"), "w", encoding="utf-8") as f:
        json.dump(workspace or PLANE_WORKSPACE, f)
    config = {**INTEGRATOR_EXPERIMENT, **overrides}
    path = os.path.join(directory, "experiment.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config, f)
    return path


@pytest.fixture
def alternating_nba():
    return parse_nba(json.dumps(ALTERNATING_NBA))


@pytest.fixture
def plane_workspace():
    return parse_workspace(json.dumps(PLANE_WORKSPACE))


@pytest.fixture
def manipulator_nba():
    return load_nba(get_config_path("2r_automaton.json"))


@pytest.fixture
def manipulator_workspace():
    return load_workspace(get_config_path("2r_workspace.json"))


@pytest.fixture
def omni_nba():
    return load_nba(get_config_path("omni_automaton.json"))


@pytest.fixture
def omni_workspace():
    return load_workspace(get_config_path("omni_workspace.json"))


@pytest.fixture
def integrator_config(tmp_path):
    return write_experiment(str(tmp_path / "experiment"))
