"""Finite discrete volunteer measures with a fixed total mass."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from measurefw.exceptions import ScenarioError
from measurefw.geometry import ConvexPolygon, PointLike, as_points, pairwise_distances
from measurefw.types import MeasureSchema, Norm

logger = logging.getLogger(__name__)

BUDGET_RTOL = 1e-9
DEFAULT_MERGE_EPS = 1e-9
DEFAULT_WEIGHT_RTOL = 1e-12


def budget_tolerance(budget: float) -> float:
    """Absolute tolerance for comparing a total mass against ``budget``."""
    return BUDGET_RTOL * max(budget, 1.0)


class DiscreteMeasure:
    """A finite atomic measure ``sum_i w_i delta_{x_i}`` with total mass ``budget``.

    Instances are immutable: the location and weight arrays are read-only.
    Atoms may coincide on construction; :func:`merge_and_prune` restores the
    canonical form used by the solvers.
    """

    __slots__ = ("_budget", "_locations", "_weights")

    def __init__(self, locations: ArrayLike, weights: ArrayLike, budget: Optional[float] = None):
        """Initialize the measure.

        Args:
            locations (ArrayLike): Atom locations, shape (m, 2).
            weights (ArrayLike): Nonnegative atom weights, shape (m,).
            budget (Optional[float]): Total mass. Defaults to the sum of the weights.

        Raises:
            ValueError: If the weights are negative, not finite, do not match the
                locations, or do not sum to the budget.
        """
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        locs = as_points(locations) if w.size else np.empty((0, 2))
        if len(locs) != len(w):
            raise ValueError("locations and weights must have the same length")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and nonnegative")
        total = float(w.sum())
        budget = total if budget is None else float(budget)
        if not math.isfinite(budget) or budget < 0.0:
            raise ValueError("budget must be finite and nonnegative")
        if abs(total - budget) > budget_tolerance(budget):
            raise ValueError(f"weights sum to {total!r}, expected budget {budget!r}")
        locs = locs.copy()
        locs.setflags(write=False)
        w = w.copy()
        w.setflags(write=False)
        self._locations = locs
        self._weights = w
        self._budget = budget

    @property
    def locations(self) -> NDArray[np.float64]:
        """Atom locations, shape (m, 2)."""
        return self._locations

    @property
    def weights(self) -> NDArray[np.float64]:
        """Atom weights, shape (m,)."""
        return self._weights

    @property
    def budget(self) -> float:
        """Total mass b."""
        return self._budget

    @property
    def probabilities(self) -> NDArray[np.float64]:
        """Weights divided by the budget, a point of the unit simplex."""
        if self._budget == 0.0:
            return np.full(len(self), 1.0 / max(len(self), 1))
        return self._weights / self._budget

    def __len__(self) -> int:
        """Number of atoms."""
        return len(self._weights)

    def __repr__(self) -> str:
        """Return a short string representation."""
        return f"DiscreteMeasure(atoms={len(self)}, budget={self._budget:g})"

    def scaled(self, p: ArrayLike) -> DiscreteMeasure:
        """The measure with the same support and weights ``budget * p``."""
        return DiscreteMeasure(self._locations, self._budget * np.asarray(p, dtype=np.float64), self._budget)

    def mix(self, other: DiscreteMeasure, alpha: float) -> DiscreteMeasure:
        """The convex combination ``(1 - alpha) * self + alpha * other``."""
        if abs(self._budget - other.budget) > budget_tolerance(self._budget):
            raise ValueError("budget mismatch")
        return DiscreteMeasure(
            np.vstack([self._locations, other.locations]),
            np.concatenate([(1.0 - alpha) * self._weights, alpha * other.weights]),
            self._budget,
        )

    def to_json(self) -> MeasureSchema:
        """Serialize to the measure.json document."""
        return {
            "budget": self._budget,
            "atoms": [
                {"x": float(x), "y": float(y), "w": float(w)}
                for (x, y), w in zip(self._locations, self._weights)
            ],
        }

    @classmethod
    def from_json(cls, document: Mapping[str, Any]) -> DiscreteMeasure:
        """Parse a measure.json document.

        Raises:
            ScenarioError: If the document does not follow the measure schema.
        """
        try:
            budget = float(document["budget"])
            atoms = document["atoms"]
            locations = [[float(a["x"]), float(a["y"])] for a in atoms]
            weights = [float(a["w"]) for a in atoms]
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"invalid measure document: {e}") from e
        if not weights:
            raise ScenarioError("invalid measure document: no atoms")
        try:
            return cls(locations, weights, budget)
        except ValueError as e:
            raise ScenarioError(f"invalid measure document: {e}") from e


def point_mass(x: PointLike, budget: float) -> DiscreteMeasure:
    """The measure ``budget * delta_x``."""
    return DiscreteMeasure(as_points(x), [budget], budget)


def uniform_on(points: ArrayLike, budget: float) -> DiscreteMeasure:
    """Equal weights ``budget / n`` on each of the n points."""
    pts = as_points(points)
    return DiscreteMeasure(pts, np.full(len(pts), budget / len(pts)), budget)


def ball_mass(mu: DiscreteMeasure, center: PointLike, radius: float, norm: Norm = "l2") -> float:
    """Mass of the closed ball of the given radius around ``center``.

    Raises:
        ValueError: If the radius is negative.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if len(mu) == 0:
        return 0.0
    d = pairwise_distances(center, mu.locations, norm)[0]
    return float(mu.weights[d <= radius].sum())


def tv_distance(mu1: DiscreteMeasure, mu2: DiscreteMeasure) -> float:
    """Total variation distance between two measures with the same budget.

    For discrete measures this is half the l1 distance between the weight
    vectors over the union of the two supports.

    Raises:
        ValueError: If the budgets differ.
    """
    if abs(mu1.budget - mu2.budget) > budget_tolerance(mu1.budget):
        raise ValueError("budget mismatch")
    locations = np.vstack([mu1.locations, mu2.locations])
    signed = np.concatenate([mu1.weights, -mu2.weights])
    if len(locations) == 0:
        return 0.0
    _, inverse = np.unique(locations, axis=0, return_inverse=True)
    diff = np.bincount(inverse.reshape(-1), weights=signed)
    return 0.5 * float(np.abs(diff).sum())


def restrict_to_domain(mu: DiscreteMeasure, domain: ConvexPolygon) -> DiscreteMeasure:
    """Move every atom outside ``domain`` to its projection onto the domain.

    Weights and budget are preserved; atoms already inside are untouched.
    """
    if len(mu) == 0:
        return mu
    return DiscreteMeasure(domain.project(mu.locations), mu.weights, mu.budget)


def merge_and_prune(
    mu: DiscreteMeasure,
    merge_eps: float = DEFAULT_MERGE_EPS,
    weight_tol: Optional[float] = None,
) -> DiscreteMeasure:
    """Merge atoms closer than ``merge_eps`` and drop atoms lighter than ``weight_tol``.

    Merged atoms sit at the weight-weighted centroid of their group. Removed
    weight is handed back to the surviving atoms in proportion to their weight,
    so the budget is preserved.

    Args:
        mu (DiscreteMeasure): The measure to clean up.
        merge_eps (float): Euclidean merge radius. Defaults to 1e-9.
        weight_tol (Optional[float]): Absolute weight threshold. Defaults to
            ``1e-12 * budget``.

    Raises:
        ValueError: If a tolerance is negative or every atom is pruned.
    """
    if weight_tol is None:
        weight_tol = DEFAULT_WEIGHT_RTOL * mu.budget
    if merge_eps < 0 or weight_tol < 0:
        raise ValueError("tolerances must be nonnegative")
    if len(mu) == 0:
        raise ValueError("empty measure")

    order = np.argsort(-mu.weights, kind="stable")
    centers: list[NDArray[np.float64]] = []
    masses: list[float] = []
    for i in order:
        loc, w = mu.locations[i], float(mu.weights[i])
        for j, c in enumerate(centers):
            if np.hypot(*(c - loc)) <= merge_eps:
                total = masses[j] + w
                if total > 0.0:
                    centers[j] = (masses[j] * c + w * loc) / total
                masses[j] = total
                break
        else:
            centers.append(loc.copy())
            masses.append(w)

    weights = np.asarray(masses)
    keep = weights >= weight_tol
    if mu.budget > 0.0:
        keep &= weights > 0.0
    if not np.any(keep):
        raise ValueError("empty measure")
    kept = weights[keep]
    if kept.sum() > 0.0:
        kept = kept * (mu.budget / kept.sum())
    dropped = len(mu) - int(keep.sum())
    if dropped:
        logger.debug("merge_and_prune: %d atoms -> %d atoms", len(mu), int(keep.sum()))
    return DiscreteMeasure(np.asarray(centers)[keep], kept, mu.budget)
