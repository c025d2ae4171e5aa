"""Frank-Wolfe optimisation of volunteer responder placement over discrete measures."""

from .__vers import __version__
from .client import Planner
from .exceptions import PreconditionError, ScenarioError
from .geometry import ConvexPolygon, Point2, Rect, convex_hull
from .measure import DiscreteMeasure, merge_and_prune, point_mass, uniform_on
from .response import influence, objective_exact, objective_mc, simulate_objective
from .scenario import DeathCurve, Problem, builtin_scenario, load_scenario, make_city
from .solver import SolverConfig, certify, dfw_solve, fcfw_solve, two_point_optimum

__all__ = [
    "ConvexPolygon",
    "DeathCurve",
    "DiscreteMeasure",
    "Planner",
    "Point2",
    "PreconditionError",
    "Problem",
    "Rect",
    "ScenarioError",
    "SolverConfig",
    "__version__",
    "builtin_scenario",
    "certify",
    "convex_hull",
    "dfw_solve",
    "fcfw_solve",
    "influence",
    "load_scenario",
    "make_city",
    "merge_and_prune",
    "objective_exact",
    "objective_mc",
    "point_mass",
    "simulate_objective",
    "two_point_optimum",
    "uniform_on",
]
