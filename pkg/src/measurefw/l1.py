"""Manhattan-norm specialisation: the demand grid and the finite-support solver on it.

Under the l1 norm the distance to every demand point is affine on each cell
of the grid spanned by the demand coordinates, so the influence function is
concave on every cell and attains its minimum at grid vertices. An optimal
measure is therefore supported on the grid vertices.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from measurefw.exceptions import PreconditionError
from measurefw.geometry import ConvexPolygon, Point2, Rect, as_points
from measurefw.measure import DiscreteMeasure, merge_and_prune
from measurefw.response import ResponseProfile
from measurefw.scenario import Problem, demand_points
from measurefw.solver import SolverConfig, SolveTrace, TraceRecord, certificate, finite_objective, fully_corrective

logger = logging.getLogger(__name__)

CHECK_TOL = 1e-10
CERTIFY_RESOLUTION = 50
CERTIFY_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class DemandGrid:
    """Cartesian grid of the distinct demand coordinates."""

    xs: NDArray[np.float64]
    ys: NDArray[np.float64]

    @cached_property
    def vertices(self) -> NDArray[np.float64]:
        """All ``(xs[j], ys[k])`` pairs, x-major, shape (|xs| * |ys|, 2)."""
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    @cached_property
    def rectangles(self) -> list[Rect]:
        """Cells between consecutive coordinates; empty when the grid is one-dimensional."""
        return [
            Rect(float(x0), float(y0), float(x1), float(y1))
            for x0, x1 in zip(self.xs[:-1], self.xs[1:])
            for y0, y1 in zip(self.ys[:-1], self.ys[1:])
        ]

    @property
    def bounds(self) -> Rect:
        """Bounding box of the demand points."""
        return Rect(float(self.xs[0]), float(self.ys[0]), float(self.xs[-1]), float(self.ys[-1]))

    def __len__(self) -> int:
        """Number of vertices."""
        return len(self.xs) * len(self.ys)

    def __repr__(self) -> str:
        """Return a short string representation."""
        return f"DemandGrid(xs={len(self.xs)}, ys={len(self.ys)})"

    def is_vertex(self, points: ArrayLike, tol: float = 1e-12) -> NDArray[np.bool_]:
        """Whether each point coincides with a grid vertex."""
        pts = as_points(points)

        def on_axis(values: NDArray[np.float64], ticks: NDArray[np.float64]) -> NDArray[np.bool_]:
            return np.min(np.abs(values[:, None] - ticks[None, :]), axis=1) <= tol

        return on_axis(pts[:, 0], self.xs) & on_axis(pts[:, 1], self.ys)


def build_grid(points: ArrayLike) -> DemandGrid:
    """Grid from the order statistics of the demand coordinates, duplicates removed.

    Raises:
        ValueError: If ``points`` is empty.
    """
    if np.asarray(points).size == 0:
        raise ValueError("empty point set")
    pts = as_points(points)
    xs, ys = np.unique(pts[:, 0]), np.unique(pts[:, 1])
    xs.setflags(write=False)
    ys.setflags(write=False)
    return DemandGrid(xs, ys)


def grid_candidates(
    points: ArrayLike,
    domain: ConvexPolygon,
    limit: Optional[int],
    rng: np.random.Generator,
) -> NDArray[np.float64]:
    """Grid vertices of the points, or of ``limit`` of them drawn at random, projected into ``domain``.

    With a frozen batch standing in for a continuous law this is a heuristic
    candidate set with no guarantee attached.
    """
    pts = as_points(points)
    if limit is not None and len(pts) > limit:
        pts = pts[np.sort(rng.choice(len(pts), size=limit, replace=False))]
    return np.unique(domain.project(build_grid(pts).vertices), axis=0)


def l1_solve_on_grid(
    problem: Problem,
    config: Optional[SolverConfig] = None,
) -> tuple[DiscreteMeasure, SolveTrace]:
    """Optimal measure under the l1 norm for a discrete law, supported on the demand grid.

    The weights of all grid vertices, started uniform, are reoptimised by
    :func:`~measurefw.solver.fully_corrective` in rounds of at most
    ``correction_steps`` steps. After every round the minimum of the influence
    function over the vertices is recorded as ``h_star``; by cell-wise
    concavity it is the minimum over the whole demand bounding box. Rounds stop at ``max_outer_iters``, once
    ``|h_star|`` is below ``fw_tolerance`` or when a round no longer lowers J.
    The returned trace carries the certificate of the final measure.

    Raises:
        PreconditionError: If the norm is not l1 or the law is not discrete.
    """
    config = config or SolverConfig()
    if problem.norm != "l1":
        raise PreconditionError("grid solver requires the l1 norm")
    if not problem.eta.is_discrete:
        raise PreconditionError("grid solver requires a discrete incident distribution")

    points, probs = demand_points(problem.eta)
    grid = build_grid(points)
    boxed = problem.with_domain(grid.bounds.to_polygon())
    support = grid.vertices
    b = problem.budget
    base = DiscreteMeasure(support, np.full(len(support), b / len(support)), b)
    p = base.probabilities
    residual = 0.0
    logger.debug("grid solver: %r, %d demand points", grid, len(points))

    trace = SolveTrace(stop_reason="max_outer_iters")
    started = time.perf_counter()
    previous = np.inf
    for k in range(config.max_outer_iters):
        mu = base.scaled(p)
        profile = ResponseProfile(mu, (points, probs), problem.curve, "l1")
        value = finite_objective(profile, k)
        values = profile.influence(support)
        best = int(np.argmin(values))
        h_star = float(values[best])
        atoms = int((p > 0).sum())
        x_star = Point2(*map(float, support[best]))
        trace.append(TraceRecord(k, value, h_star, x_star, atoms, time.perf_counter() - started, residual))
        logger.debug("l1grid k=%d J=%.12g h*=%.3g atoms=%d kkt=%.3g", k, value, h_star, atoms, residual)
        if abs(h_star) < config.fw_tolerance:
            trace.stop_reason = "fw_tolerance"
            break
        if value >= previous:
            trace.stop_reason = "stalled"
            break
        previous = value
        p, residual = fully_corrective(support, p, boxed, (points, probs), config)

    mu = merge_and_prune(base.scaled(p), merge_eps=0.0, weight_tol=config.weight_tol * b)
    trace.final_objective = ResponseProfile(mu, (points, probs), problem.curve, "l1").objective
    trace.certificate = certificate(mu, boxed, CERTIFY_RESOLUTION, CERTIFY_TOLERANCE, config)
    logger.info(
        "l1grid stopped (%s) after %d rounds: J=%.12g atoms=%d %s",
        trace.stop_reason,
        len(trace),
        trace.final_objective,
        len(mu),
        trace.certificate.verdict,
    )
    return mu, trace


def _resolve_rect(grid: DemandGrid, rect: Union[int, Rect]) -> Rect:
    return grid.rectangles[rect] if isinstance(rect, (int, np.integer)) else rect


def _interior(rect: Rect, rng: np.random.Generator, size: int) -> NDArray[np.float64]:
    low = np.array([rect.xmin, rect.ymin])
    high = np.array([rect.xmax, rect.ymax])
    u = rng.uniform(1e-9, 1.0 - 1e-9, size=(size, 2))
    return low + u * (high - low)


def _l1_profile(mu: DiscreteMeasure, problem: Problem) -> ResponseProfile:
    return ResponseProfile(mu, demand_points(problem.eta), problem.curve, "l1")


def concavity_check(
    mu: DiscreteMeasure,
    grid: DemandGrid,
    rect: Union[int, Rect],
    trials: int,
    rng: np.random.Generator,
    problem: Problem,
) -> bool:
    """Test midpoint concavity of the l1 influence function on random chords of one cell.

    Zero-area cells pass trivially.
    """
    cell = _resolve_rect(grid, rect)
    if cell.area <= 0.0:
        return True
    x1 = _interior(cell, rng, trials)
    x2 = _interior(cell, rng, trials)
    t = rng.random((trials, 1))
    profile = _l1_profile(mu, problem)
    h = profile.influence(np.vstack([x1, x2, t * x1 + (1.0 - t) * x2]))
    h1, h2, hm = h[:trials], h[trials : 2 * trials], h[2 * trials :]
    t = t[:, 0]
    violations = hm < t * h1 + (1.0 - t) * h2 - CHECK_TOL
    if np.any(violations):
        logger.debug("concavity violated on %d of %d chords in %s", int(violations.sum()), trials, cell)
    return not bool(np.any(violations))


def vertex_argmin_check(
    mu: DiscreteMeasure,
    grid: DemandGrid,
    rect: Union[int, Rect],
    sample_count: int,
    rng: np.random.Generator,
    problem: Problem,
) -> bool:
    """Test that no interior sample of a cell beats the best of its four corners."""
    cell = _resolve_rect(grid, rect)
    if cell.area <= 0.0:
        return True
    profile = _l1_profile(mu, problem)
    corner = float(profile.influence(cell.corners).min())
    interior = float(profile.influence(_interior(cell, rng, sample_count)).min())
    return interior >= corner - CHECK_TOL
