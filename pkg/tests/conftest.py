import numpy as np
import pytest

from feri.data import Dataset, SynthSpec, synth_generate
from feri.model import FeatureSchema, ModelConfig, init_params

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])


@pytest.fixture
def tiny_schema():
    return FeatureSchema((("a", 3), ("b", 4)), ("x", "y"))


@pytest.fixture
def tiny_config():
    return ModelConfig(embed_dim=3, hidden=(5, 4), head=(3, 1))


@pytest.fixture
def tiny_data(tiny_schema):
    rng = np.random.default_rng(0)
    n = 24
    cat = np.stack([rng.integers(0, 3, n), rng.integers(0, 4, n)], axis=1)
    cont = rng.standard_normal((n, 2))
    label = rng.integers(0, 2, n)
    group = np.repeat([0, 1], [16, 8])
    return Dataset(tiny_schema, cat, cont, label, group, "g", ("maj", "min"))


@pytest.fixture
def tiny_params(tiny_schema, tiny_config):
    return init_params(tiny_schema, tiny_config, 2, seed=3)


@pytest.fixture(scope="session")
def small_synth():
    return synth_generate(SynthSpec(counts=(160, 40), seed=5))
