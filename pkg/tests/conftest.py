"""Shared fixtures: robot model files and small grids."""

import json

import numpy as np
import pytest

# Compact 3-link arm with primitive collision geometry and a validated
# covering-sphere model. Link origins stay within ~0.2 m of the base so the
# whole reachable surface is small relative to typical link extents.
ARM3_DOC = {
    "name": "arm3",
    "link_reach": 0.3,
    "links": [
        {"name": "base", "origin": {"xyz": [0, 0, 0]}},
        {
            "name": "l1",
            "parent_joint": "j1",
            "origin": {"xyz": [0.05, 0, 0]},
            "geometry": {"type": "sphere", "radius": 0.06},
        },
        {
            "name": "l2",
            "parent_joint": "j2",
            "origin": {"xyz": [0, 0, 0.02]},
            "geometry": {"type": "capsule", "radius": 0.035, "half_length": 0.03},
        },
        {
            "name": "l3",
            "parent_joint": "j3",
            "origin": {"xyz": [0, 0.01, 0]},
            "geometry": {"type": "box", "half_extents": [0.04, 0.04, 0.04]},
        },
    ],
    "joints": [
        {
            "name": "j1",
            "type": "revolute",
            "parent_link": "base",
            "origin": {"xyz": [0, 0, 0.05]},
            "axis": [0, 0, 1],
            "limits": {"position": [-3.14, 3.14], "velocity": 2.0, "acceleration": 10.0},
        },
        {
            "name": "j2",
            "type": "revolute",
            "parent_link": "l1",
            "origin": {"xyz": [0.04, 0, 0.03], "rpy": [0, 0.3, 0]},
            "axis": [0, 1, 0],
            "limits": {"position": [-3.14, 3.14], "velocity": 2.0, "acceleration": 16.0},
        },
        {
            "name": "j3",
            "type": "revolute",
            "parent_link": "l2",
            "origin": {"xyz": [0, 0.03, 0.04]},
            "axis": [1, 0, 0],
            "limits": {"position": [-3.14, 3.14], "velocity": 3.0, "acceleration": 15.0},
        },
    ],
    "spheres": {
        "l1": [{"center": [0, 0, 0], "radius": 0.0601}],
        "l2": [
            {"center": [0, 0, -0.015], "radius": 0.0506},
            {"center": [0, 0, 0.015], "radius": 0.0506},
        ],
        "l3": [{"center": [0, 0, 0], "radius": 0.0694}],
    },
}

# 6-DoF chain used for the FK batch/serial equivalence checks. Limits follow
# a user-supplied industrial 6-axis table whose worst stop time is 0.2 s.
ARM6_DOC = {
    "name": "arm6",
    "link_reach": 0.6,
    "links": [
        {"name": "base"},
        {"name": "l1", "parent_joint": "j1"},
        {"name": "l2", "parent_joint": "j2", "origin": {"xyz": [0, 0, 0.125]}},
        {"name": "l3", "parent_joint": "j3", "origin": {"xyz": [0.01, 0, 0.21]}},
        {"name": "l4", "parent_joint": "j4", "origin": {"xyz": [-0.01, 0, 0.0]}},
        {"name": "l5", "parent_joint": "j5", "origin": {"xyz": [0, 0, 0.07]}},
        {"name": "l6", "parent_joint": "j6", "origin": {"xyz": [0, 0, 0.04]}},
    ],
    "joints": [
        {
            "name": "j1", "type": "revolute", "parent_link": "base",
            "origin": {"xyz": [0, 0, 0.148]}, "axis": [0, 0, 1],
            "limits": {"position": [-2.967, 2.967], "velocity": 3.92, "acceleration": 19.6},
        },
        {
            "name": "j2", "type": "revolute", "parent_link": "l1",
            "origin": {"xyz": [0.03, 0, 0.047], "rpy": [0, 0, 0.1]}, "axis": [0, 1, 0],
            "limits": {"position": [-2.094, 2.094], "velocity": 2.62, "acceleration": 13.1},
        },
        {
            "name": "j3", "type": "revolute", "parent_link": "l2",
            "origin": {"xyz": [0, 0, 0.085], "rpy": [0.05, 0, 0]}, "axis": [0, 1, 0],
            "limits": {"position": [-2.181, 2.792], "velocity": 2.79, "acceleration": 13.95},
        },
        {
            "name": "j4", "type": "revolute", "parent_link": "l3",
            "origin": {"xyz": [0, 0.02, 0.1]}, "axis": [0, 0, 1],
            "limits": {"position": [-3.316, 3.316], "velocity": 3.92, "acceleration": 19.6},
        },
        {
            "name": "j5", "type": "revolute", "parent_link": "l4",
            "origin": {"xyz": [0, 0, 0.08], "rpy": [0, -0.2, 0]}, "axis": [0, 1, 0],
            "limits": {"position": [-2.094, 2.094], "velocity": 3.02, "acceleration": 15.1},
        },
        {
            "name": "j6", "type": "revolute", "parent_link": "l5",
            "origin": {"xyz": [0, 0, 0.044]}, "axis": [0, 0, 1],
            "limits": {"position": [-6.283, 6.283], "velocity": 4.71, "acceleration": 23.55},
        },
    ],
}


def _write_robot(tmp_path_factory, doc, name):
    path = tmp_path_factory.mktemp("robots") / f"{name}.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="session")
def arm3_path(tmp_path_factory):
    return _write_robot(tmp_path_factory, ARM3_DOC, "arm3")


@pytest.fixture(scope="session")
def arm6_path(tmp_path_factory):
    return _write_robot(tmp_path_factory, ARM6_DOC, "arm6")


@pytest.fixture(scope="session")
def arm3(arm3_path):
    from linksdf import RobotModel

    return RobotModel.from_json(arm3_path)


@pytest.fixture(scope="session")
def arm6(arm6_path):
    from linksdf import RobotModel

    return RobotModel.from_json(arm6_path)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
