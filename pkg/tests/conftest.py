import textwrap

import numpy as np
import pytest

from densafe.config import parse_problem_config
from densafe.services.consistency import Dataset, assemble_P1
from densafe.services.model import (
    DisturbanceSet,
    SemialgebraicSet,
    SetMode,
    default_dictionary,
    flow_system,
)
from densafe.services.pipeline import build_problem, generate, synthesis_spec
from densafe.services.sim import generate_dataset

FLOW_VARS = ["x1", "x2"]


@pytest.fixture
def flow_dictionary():
    return default_dictionary(2, 3, zero_at_origin=True, g_constant=True)


@pytest.fixture
def flow(flow_dictionary):
    return flow_system(flow_dictionary)


@pytest.fixture
def flow_X0():
    return SemialgebraicSet.from_strings(["0.25 - x1^2 - (x2 + 3)^2"], FLOW_VARS,
                                         box=[[-0.5, 0.5], [-3.5, -2.5]])


@pytest.fixture
def flow_Xu():
    return SemialgebraicSet.from_strings(
        ["0.16 - (x1 + 1)^2 - (x2 + 1)^2", "0.16 - (x1 + 1)^2 - (x2 - 1)^2"],
        FLOW_VARS,
        SetMode.UNION_PRODUCT,
        box=[[-1.5, -0.5], [-1.5, 1.5]],
    )


@pytest.fixture
def flow_data(flow):
    return generate_dataset(flow, 80, 2.0, [[-2.0, 2.0], [-4.0, 2.0]], seed=7, input_bound=2.0)


@pytest.fixture
def flow_W():
    return DisturbanceSet.linf_box(2, 2.0)


@pytest.fixture
def scalar_data():
    """x' = -x + u sampled exactly at three points; epsilon 0.1."""
    states = np.array([[-1.0], [0.5], [2.0]])
    inputs = np.array([0.0, 1.0, -1.0])
    outputs = -1.0 * states + inputs[:, None]
    return Dataset(states, inputs, outputs, 0.1)


# x' = 0.5 x + u drives trajectories away from the unsafe interval around the origin
TOY_CONFIG = """
schema = 1
name = "toy"
state_dim = 1
variables = ["x"]
epsilon = 0.1
epsilon_w = 0.1
samples = 12
seed = 3
sampling_box = [[-2.0, 2.0]]
bounding_box = [[-8.0, 8.0]]

[f_prior]
degree = 1
zero_at_origin = true

[g_prior]
constant = true

[X0]
polys = ["0.25 - (x + 2.5)^2"]

[Xu]
polys = ["1 - x^2"]

[degrees]
d_rho = 2
d_psi = 2
d1 = 2
d2 = 1

[system]
f = ["0.5*x"]
g = ["1"]

[synthesis]
unsafe_inflation = 0.1
localize_psi_bound = true

[simulation]
horizon = 1.0
dt = 0.01
noise_hold = 0.05
trajectories = 4

[audit]
grid = 41
oracle_points = 20
set_samples = 20
"""


@pytest.fixture
def toy_config_text():
    return textwrap.dedent(TOY_CONFIG)


@pytest.fixture
def toy_config(tmp_path, toy_config_text):
    path = tmp_path / "toy.toml"
    path.write_text(toy_config_text, encoding="utf-8")
    return path


@pytest.fixture
def toy_problem(toy_config_text):
    return build_problem(parse_problem_config(toy_config_text))


@pytest.fixture
def toy_spec(toy_problem):
    data = generate(toy_problem)
    P1 = assemble_P1(data, toy_problem.dictionary, toy_problem.W)
    return synthesis_spec(toy_problem, P1)
