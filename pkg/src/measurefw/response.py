"""Closed-form response kernels: objective, influence function, gradients and the simulation oracle.

Every integral over response times is a Stieltjes integral against the death
curve on (0, inf), whose total mass is ``1 - beta(0)``. Sorting the atom
distances from a demand point splits that range into segments on which the
covered mass is constant, so all quantities below are finite sums.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from measurefw.exceptions import PreconditionError
from measurefw.geometry import Point2, PointLike, as_points, axis_ticks, pairwise_distances
from measurefw.measure import DiscreteMeasure, budget_tolerance
from measurefw.scenario import DeathCurve, Discrete, IncidentDistribution, Problem
from measurefw.types import Norm

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-9
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Frozen incident draws backing the sample-average objective J_n."""

    points: np.ndarray
    seed: int

    def __post_init__(self):
        """Validate and freeze the draws."""
        pts = as_points(self.points).copy()
        if len(pts) == 0:
            raise ValueError("sample batch must not be empty")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        """Number of draws."""
        return len(self.points)


def draw_batch(eta: IncidentDistribution, n: int, seed: int) -> SampleBatch:
    """Draw ``n`` incidents from ``eta`` with a generator seeded by ``seed``."""
    if n < 1:
        raise ValueError("batch size must be at least 1")
    return SampleBatch(eta.sample(np.random.default_rng(seed), n), seed)


Demand = tuple[NDArray[np.float64], NDArray[np.float64]]
EtaOrBatch = Union[IncidentDistribution, SampleBatch, Demand]


def as_demand(eta_or_batch: EtaOrBatch) -> Demand:
    """Weighted demand points of a discrete law or a frozen batch.

    Raises:
        PreconditionError: If given a continuous law without a batch.
    """
    if isinstance(eta_or_batch, SampleBatch):
        n = len(eta_or_batch)
        return eta_or_batch.points, np.full(n, 1.0 / n)
    if isinstance(eta_or_batch, Discrete):
        return eta_or_batch.points, eta_or_batch.probs
    if isinstance(eta_or_batch, IncidentDistribution):
        raise PreconditionError("continuous incident distribution requires a SampleBatch")
    points, weights = eta_or_batch
    return as_points(points), np.asarray(weights, dtype=np.float64)


def _weighted_sum(weights: NDArray[np.float64], values: NDArray[np.float64]) -> NDArray[np.float64]:
    # Sum over demand rows per query column.
    return (weights[:, None] * values).sum(axis=0)


class ResponseProfile:
    """Sorted-distance segmentation of one measure against weighted demand points.

    For demand point ``y_i`` let ``d_(1) <= ... <= d_(m)`` be the sorted atom
    distances and ``C_j`` the mass of the closed ball of radius ``d_(j)``
    (``C_0 = 0``). Segment ``j`` covers ``[d_(j), d_(j+1))`` with ``d_(0) = 0``
    and ``d_(m+1) = inf``; tied distances give empty segments.
    """

    def __init__(
        self,
        mu: DiscreteMeasure,
        demand: EtaOrBatch,
        curve: DeathCurve,
        norm: Norm = "l2",
    ):
        """Precompute the segmentation.

        Args:
            mu (DiscreteMeasure): The volunteer measure.
            demand (EtaOrBatch): Discrete law, frozen batch, or (points, weights).
            curve (DeathCurve): The death curve.
            norm (Norm): Travel norm.
        """
        self.mu = mu
        self.points, self.weights = as_demand(demand)
        self.curve = curve
        self.norm: Norm = norm
        n, m = len(self.points), len(mu)

        if m:
            dist = pairwise_distances(self.points, mu.locations, norm)
        else:
            dist = np.empty((n, 0))
        self.order = np.argsort(dist, axis=1, kind="stable")
        self.sorted_dist = np.take_along_axis(dist, self.order, axis=1)
        cum = np.cumsum(mu.weights[self.order], axis=1)
        self.mass = np.hstack([np.zeros((n, 1)), cum])
        bounds = np.hstack([np.zeros((n, 1)), self.sorted_dist, np.full((n, 1), np.inf)])
        self.beta_at = curve(bounds)
        self.void = np.exp(-self.mass)
        seg = self.void * np.diff(self.beta_at, axis=1)
        # tail[:, l] = sum of segments l, l+1, ..., m; tail[:, m + 1] = 0.
        self.tail = np.hstack([np.cumsum(seg[:, ::-1], axis=1)[:, ::-1], np.zeros((n, 1))])
        self.covered = (self.mass * seg).sum(axis=1)
        self._span = float(self.sorted_dist.max()) if m else 0.0

    @property
    def survival(self) -> NDArray[np.float64]:
        """Per demand point survival integral, shape (n,)."""
        return self.tail[:, 0]

    @property
    def objective(self) -> float:
        """Demand-weighted survival integral J."""
        return float(np.dot(self.weights, self.survival))

    def _locate(self, radii: NDArray[np.float64]) -> NDArray[np.intp]:
        """Number of atoms within each radius, per demand row: shape (n, q)."""
        n, m = self.sorted_dist.shape
        if m == 0:
            return np.zeros(radii.shape, dtype=np.intp)
        # Radii beyond the farthest atom count every atom; clamping keeps each
        # row inside its own block of width stride.
        stride = 2.0 * (self._span + 1.0)
        offsets = stride * np.arange(n)[:, None]
        flat = (self.sorted_dist + offsets).ravel()
        clamped = np.minimum(radii, self._span + 0.5)
        found = np.searchsorted(flat, (clamped + offsets).ravel(), side="right").reshape(radii.shape)
        return found - m * np.arange(n)[:, None]

    def _tail_at(self, radii: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Survival tail from each radius on and the ball mass at that radius."""
        pos = self._locate(radii)
        void = np.take_along_axis(self.void, pos, axis=1)
        upper = np.take_along_axis(self.beta_at, pos + 1, axis=1)
        rest = np.take_along_axis(self.tail, pos + 1, axis=1)
        mass = np.take_along_axis(self.mass, pos, axis=1)
        return void * (upper - self.curve(radii)) + rest, mass

    def influence(self, x: ArrayLike) -> NDArray[np.float64]:
        """Influence function at one or more points, shape (q,)."""
        q = as_points(x)
        radii = pairwise_distances(self.points, q, self.norm)
        tail, _ = self._tail_at(radii)
        return _weighted_sum(self.weights, self.covered[:, None] - self.mu.budget * tail)

    def influence_and_gradient(
        self, x: ArrayLike, strict: bool = True
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Influence values (q,) and Euclidean gradients (q, 2).

        Args:
            x (ArrayLike): Evaluation points.
            strict (bool): Raise at demand points when true; otherwise their
                radial term is dropped.

        Raises:
            ValueError: Under the l1 norm, or when ``strict`` and a point lies
                within 1e-9 of a demand point.
        """
        if self.norm != "l2":
            raise ValueError("influence gradient is only available under the l2 norm")
        q = as_points(x)
        diff = q[None, :, :] - self.points[:, None, :]
        radii = np.hypot(diff[..., 0], diff[..., 1])
        singular = radii < SINGULAR_TOL
        if strict and np.any(singular):
            raise ValueError("gradient singular at demand point")
        tail, mass = self._tail_at(radii)
        values = _weighted_sum(self.weights, self.covered[:, None] - self.mu.budget * tail)
        scale = np.exp(-mass) * self.curve.derivative(radii) / np.where(singular, 1.0, radii)
        scale = np.where(singular, 0.0, scale) * self.weights[:, None]
        grad = self.mu.budget * (scale[..., None] * diff).sum(axis=0)
        return values, grad

    def correction_gradient(self) -> NDArray[np.float64]:
        """Partial derivatives of J in the simplex weights of the atoms, shape (m,).

        Component k is ``-b * sum_i lambda_i * tail_i(d_ik)``.
        """
        n, m = self.sorted_dist.shape
        tails_sorted = self.tail[:, 1 : m + 1]
        tails = np.empty_like(tails_sorted)
        np.put_along_axis(tails, self.order, tails_sorted, axis=1)
        return -self.mu.budget * _weighted_sum(self.weights, tails)


def survival_integral(mu: DiscreteMeasure, y: PointLike, curve: DeathCurve, norm: Norm = "l2") -> float:
    """Integral over response times of the void probability of the ball around ``y``.

    Equals ``sum_j exp(-W_j) (beta(d_(j+1)) - beta(d_(j)))`` over the sorted
    atom distances from ``y``; lies in ``(0, 1 - beta(0)]``.
    """
    return float(ResponseProfile(mu, (as_points(y), np.ones(1)), curve, norm).survival[0])


def objective_exact(mu: DiscreteMeasure, eta: IncidentDistribution, curve: DeathCurve, norm: Norm = "l2") -> float:
    """Objective J for a discrete incident law, exact up to rounding.

    Raises:
        PreconditionError: If ``eta`` is not discrete.
    """
    if not isinstance(eta, Discrete):
        raise PreconditionError("objective_exact requires a discrete incident distribution, use objective_mc")
    return ResponseProfile(mu, eta, curve, norm).objective


def objective_mc(mu: DiscreteMeasure, batch: SampleBatch, curve: DeathCurve, norm: Norm = "l2") -> float:
    """Sample-average objective J_n over a frozen batch."""
    return ResponseProfile(mu, batch, curve, norm).objective


def evaluate(mu: DiscreteMeasure, problem: Problem, demand: EtaOrBatch) -> float:
    """Objective of ``mu`` for ``problem`` against the given demand."""
    return ResponseProfile(mu, demand, problem.curve, problem.norm).objective


def influence(
    mu: DiscreteMeasure,
    x: PointLike,
    eta_or_batch: EtaOrBatch,
    curve: DeathCurve,
    norm: Norm = "l2",
) -> float:
    """Influence function h_mu at ``x``: the derivative of J towards ``b * delta_x``."""
    return float(ResponseProfile(mu, eta_or_batch, curve, norm).influence(x)[0])


def influence_gradient(
    mu: DiscreteMeasure,
    x: PointLike,
    eta_or_batch: EtaOrBatch,
    curve: DeathCurve,
) -> NDArray[np.float64]:
    """Euclidean gradient of h_mu at ``x`` (l2 norm only).

    Raises:
        ValueError: If ``x`` is within 1e-9 of a demand point.
    """
    _, grad = ResponseProfile(mu, eta_or_batch, curve, "l2").influence_and_gradient(x)
    return grad[0]


def directional_derivative(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    eta_or_batch: EtaOrBatch,
    curve: DeathCurve,
    norm: Norm = "l2",
) -> float:
    """Von Mises derivative of J at ``mu`` in the direction ``nu - mu``.

    Raises:
        ValueError: If the budgets differ.
    """
    if abs(mu.budget - nu.budget) > budget_tolerance(mu.budget):
        raise ValueError("budget mismatch")
    if mu.budget == 0.0:
        return 0.0
    h = ResponseProfile(mu, eta_or_batch, curve, norm).influence(nu.locations)
    return float(np.dot(nu.weights, h)) / mu.budget


def correction_gradient(
    support: ArrayLike,
    p: ArrayLike,
    problem: Problem,
    eta_or_batch: EtaOrBatch,
) -> NDArray[np.float64]:
    """Gradient of ``p -> J(sum_i p_i b delta_{x_i})`` on the unit simplex.

    Raises:
        ValueError: If ``p`` is off the simplex by more than 1e-9.
    """
    weights = np.asarray(p, dtype=np.float64)
    check_simplex(weights)
    mu = DiscreteMeasure(as_points(support), problem.budget * np.clip(weights, 0.0, None) / max(weights.sum(), 1e-300), problem.budget)
    return ResponseProfile(mu, eta_or_batch, problem.curve, problem.norm).correction_gradient()


def check_simplex(p: NDArray[np.float64]) -> None:
    """Raise ``ValueError`` unless ``p`` lies on the unit simplex within 1e-9."""
    if p.size == 0:
        raise ValueError("weight vector must not be empty")
    if np.any(p < -SIMPLEX_TOL) or abs(float(p.sum()) - 1.0) > SIMPLEX_TOL:
        raise ValueError("weights must lie on the unit simplex")


def simulate_objective(
    mu: DiscreteMeasure,
    eta: IncidentDistribution,
    reps: int,
    rng: np.random.Generator,
    curve: Optional[DeathCurve] = None,
    norm: Norm = "l2",
    chunk: int = 100_000,
) -> tuple[float, float]:
    """Monte-Carlo estimate of J from the Poisson volunteer model.

    Each replication draws an incident, a Poisson(b) number of volunteers placed
    i.i.d. from ``mu / b``, and records ``beta(R) - beta(0)`` for the nearest
    volunteer distance R (infinite without volunteers). Subtracting ``beta(0)``
    matches the Stieltjes convention of the closed-form objective.

    Returns:
        tuple[float, float]: The estimate and its standard error.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    curve = curve or DeathCurve()
    b = mu.budget
    probs = mu.probabilities
    base = float(curve(0.0))
    values = np.empty(reps)
    per_chunk = max(1, min(chunk, int(2_000_000 / (b + 1.0))))
    for start in range(0, reps, per_chunk):
        size = min(per_chunk, reps - start)
        incidents = eta.sample(rng, size)
        counts = rng.poisson(b, size=size)
        total = int(counts.sum())
        nearest = np.full(size, np.inf)
        if total:
            owner = np.repeat(np.arange(size), counts)
            atoms = mu.locations[rng.choice(len(mu), size=total, p=probs)]
            delta = atoms - incidents[owner]
            if norm == "l1":
                d = np.abs(delta).sum(axis=1)
            else:
                d = np.hypot(delta[:, 0], delta[:, 1])
            np.minimum.at(nearest, owner, d)
        values[start : start + size] = curve(nearest) - base
    estimate = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.inf
    return estimate, se


def smoothness_constant(b: float) -> float:
    """Smoothness constant ``2b + 1`` of J over measures of mass ``b``."""
    if b <= 0:
        raise ValueError("budget must be positive")
    return 2.0 * b + 1.0


class InfluenceGrid(NamedTuple):
    """Influence values on a lattice over the domain's bounding box.

    ``values[j, i]`` belongs to ``(xs[i], ys[j])`` and is NaN outside the domain.
    """

    xs: NDArray[np.float64]
    ys: NDArray[np.float64]
    values: NDArray[np.float64]

    def argmin(self) -> tuple[float, Point2]:
        """Smallest in-domain value and its lattice point."""
        if np.all(np.isnan(self.values)):
            raise ValueError("influence grid has no cell inside the domain")
        j, i = np.unravel_index(int(np.nanargmin(self.values)), self.values.shape)
        return float(self.values[j, i]), Point2(float(self.xs[i]), float(self.ys[j]))


def influence_grid(
    mu: DiscreteMeasure,
    problem: Problem,
    resolution: int,
    demand: EtaOrBatch,
    chunk: int = 4096,
) -> InfluenceGrid:
    """Evaluate h_mu on a ``resolution`` square lattice over the bounding box of the domain."""
    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    domain = problem.region
    xs, ys = axis_ticks(domain.bounds, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    inside = domain.contains(points, tol=1e-9)
    values = np.full(len(points), np.nan)
    profile = ResponseProfile(mu, demand, problem.curve, problem.norm)
    idx = np.flatnonzero(inside)
    for start in range(0, len(idx), chunk):
        block = idx[start : start + chunk]
        values[block] = profile.influence(points[block])
    return InfluenceGrid(xs, ys, values.reshape(len(ys), len(xs)))
