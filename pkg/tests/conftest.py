"""Shared model fixtures.

Three frozen-seed local models cover the test matrix: a tiny linear
3-class net for fast full-information runs, a pooled-first-layer MLP
whose features repeat every 4 pixels (so small tiled regions have real
signal), and a 6-class linear net with a boosted background class for
the two-stage top-k attack.
"""

import pytest

from regionattack import ModelSpec, generate_local_model

LINEAR3_SPEC = ModelSpec(kind="linear", height=8, width=8, channels=1, classes=3)
MLP10_SPEC = ModelSpec(
    kind="mlp", height=16, width=16, channels=1, classes=10, hidden=(32,), pool_period=4
)
LINEAR6_SPEC = ModelSpec(
    kind="linear", height=8, width=8, channels=1, classes=6,
    non_object=5, non_object_bias=2.0,
)


@pytest.fixture(scope="session")
def linear3():
    return generate_local_model(LINEAR3_SPEC, seed=1)


@pytest.fixture(scope="session")
def mlp10():
    return generate_local_model(MLP10_SPEC, seed=123)


@pytest.fixture(scope="session")
def linear6():
    return generate_local_model(LINEAR6_SPEC, seed=77)


@pytest.fixture()
def linear3_file(tmp_path):
    path = str(tmp_path / "linear3.rnam")
    generate_local_model(LINEAR3_SPEC, seed=1, path=path)
    return path


@pytest.fixture()
def linear6_file(tmp_path):
    path = str(tmp_path / "linear6.rnam")
    generate_local_model(LINEAR6_SPEC, seed=77, path=path)
    return path
