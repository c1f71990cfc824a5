import numpy as np
import pytest

from aqcomplete import graph, ingest, synth


@pytest.fixture(scope="session")
def desk_dataset():
    return synth.generate(synth.preset("desk-scale", seed=0))


@pytest.fixture(scope="session")
def desk_obs(desk_dataset):
    cfg = ingest.AggregationConfig.covering(desk_dataset.records)
    return ingest.build_observations(desk_dataset.records, cfg)


@pytest.fixture(scope="session")
def desk_operator(desk_obs, desk_dataset):
    return graph.normalize(graph.build_graph(desk_obs.locations, desk_dataset.network, 200.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from _helpers import ACCEPTANCE_RESULTS
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
