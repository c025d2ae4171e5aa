import numpy as np
import pytest

from measurefw.client import Planner
from measurefw.measure import DiscreteMeasure, uniform_on
from measurefw.scenario import DeathCurve, Problem, builtin_scenario, discrete
from measurefw.solver import SolverConfig


@pytest.fixture(scope="session")
def curve() -> DeathCurve:
    """Fixture to provide the default death curve."""
    return DeathCurve()


@pytest.fixture(scope="function")
def rng() -> np.random.Generator:
    """Fixture to provide a freshly seeded generator for each test."""
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def fast_config() -> SolverConfig:
    """Fixture to provide a configuration small enough for unit tests."""
    return SolverConfig(max_outer_iters=40, inner_restarts=6, adam_steps=120, mc_batch_size=200)


@pytest.fixture(scope="function")
def two_point() -> Problem:
    """Fixture to create the two-point scenario."""
    return builtin_scenario("two-point")


@pytest.fixture(scope="function")
def three_point() -> Problem:
    """Fixture to create the equilateral three-point scenario."""
    return builtin_scenario("three-point")


@pytest.fixture(scope="function")
def single_point() -> Problem:
    """Fixture to create a scenario with one demand point at the origin."""
    return Problem(discrete([[0.0, 0.0]]), 1.0)


@pytest.fixture(scope="function")
def triangle_uniform(three_point: Problem) -> DiscreteMeasure:
    """Fixture to create the uniform measure on the three triangle vertices."""
    return uniform_on(three_point.eta.corner_points(), three_point.budget)


@pytest.fixture(scope="function")
def planner(fast_config: SolverConfig) -> Planner:
    """Fixture to create a single-threaded Planner."""
    with Planner(config=fast_config, threads=1) as p:
        yield p
