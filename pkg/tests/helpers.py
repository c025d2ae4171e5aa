"""Random instances and closed-form values shared by the test modules."""

import math

import numpy as np

from measurefw.measure import DiscreteMeasure
from measurefw.scenario import Problem, discrete

# J(delta_0) for eta = delta_0 and b = 1: exp(-1) * (1 - beta(0)).
SINGLE_POINT_J = math.exp(-1.0) * (1.0 - 1.0 / (1.0 + math.exp(-0.679)))


def random_measure(rng: np.random.Generator, budget: float, atoms: int = 4, box: float = 1.0) -> DiscreteMeasure:
    """Random measure with ``atoms`` atoms in ``[0, box]^2``."""
    w = rng.random(atoms) + 0.05
    return DiscreteMeasure(rng.random((atoms, 2)) * box, budget * w / w.sum(), budget)


def random_discrete_problem(rng: np.random.Generator, n: int = 4, budget: float = 1.0, norm: str = "l2") -> Problem:
    """Random discrete scenario with ``n`` demand points in the unit square."""
    p = rng.random(n) + 0.1
    return Problem(discrete(rng.random((n, 2)), p / p.sum()), budget, norm)  # type: ignore[arg-type]
