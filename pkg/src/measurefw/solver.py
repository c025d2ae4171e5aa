"""Frank-Wolfe solvers over discrete measures and their optimality certificate."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize_scalar

from measurefw.geometry import ConvexPolygon, Point2, PointLike, as_points
from measurefw.measure import DiscreteMeasure, merge_and_prune, point_mass
from measurefw.response import (
    EtaOrBatch,
    ResponseProfile,
    as_demand,
    check_simplex,
    draw_batch,
    evaluate,
)
from measurefw.scenario import DeathCurve, Problem
from measurefw.types import CertificateSchema, TraceRowSchema

if TYPE_CHECKING:
    from measurefw.client import WorkerPool

logger = logging.getLogger(__name__)

ACTIVE_WEIGHT = 1e-8
MAX_HALVINGS = 40
EVAL_CHUNK = 4096


@dataclass(frozen=True)
class SolverConfig:
    """Tunables shared by every solver.

    ``adam_lr`` is in units of the domain diameter. ``weight_tol`` is relative
    to the budget.
    """

    max_outer_iters: int = 500
    inner_restarts: int = 16
    adam_steps: int = 300
    adam_lr: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    fw_tolerance: float = 1e-10
    correction_steps: int = 1000
    correction_lr: float = 1.0
    mc_batch_size: int = 1000
    seed: int = 0
    merge_eps: float = 1e-9
    weight_tol: float = 1e-12
    l1_grid_points: int = 48
    certify_refine: int = 8
    kkt_tolerance: float = 1e-6

    def __post_init__(self):
        """Validate on construction."""
        self.validate()

    def validate(self) -> None:
        """Check counts, rates and tolerances.

        Raises:
            ValueError: Naming the first invalid field.
        """
        for name in (
            "max_outer_iters",
            "inner_restarts",
            "adam_steps",
            "correction_steps",
            "mc_batch_size",
            "l1_grid_points",
            "certify_refine",
        ):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("adam_lr", "correction_lr", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        for name in ("fw_tolerance", "merge_eps", "weight_tol", "kkt_tolerance"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")

    def replace(self, **changes) -> SolverConfig:
        """Copy with some fields changed."""
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict[str, float]:
        """Plain dict of every field."""
        return dataclasses.asdict(self)


class TraceRecord(NamedTuple):
    """One outer iteration: the iterate's objective and its subproblem result.

    ``kkt`` is the residual left by the weight correction that produced the
    iterate, 0 when no correction ran.
    """

    k: int
    objective: float
    h_star: float
    x_star: Point2
    atoms: int
    seconds: float
    kkt: float = 0.0


@dataclass
class SolveTrace:
    """Per-iteration history of a solver run."""

    records: list[TraceRecord] = field(default_factory=list)
    final_objective: float = math.nan
    stop_reason: str = ""
    certificate: Optional[Certificate] = None

    def __len__(self) -> int:
        """Number of recorded iterations."""
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        """Iterate over records in order."""
        return iter(self.records)

    def append(self, record: TraceRecord) -> None:
        """Add the next record; iteration numbers must increase."""
        if self.records and record.k <= self.records[-1].k:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(record)

    @property
    def objectives(self) -> NDArray[np.float64]:
        """J per iteration."""
        return np.array([r.objective for r in self.records])

    @property
    def h_stars(self) -> NDArray[np.float64]:
        """Subproblem minimum per iteration."""
        return np.array([r.h_star for r in self.records])

    @property
    def kkt_residuals(self) -> NDArray[np.float64]:
        """Weight-correction residual per iteration."""
        return np.array([r.kkt for r in self.records])

    def to_rows(self) -> list[TraceRowSchema]:
        """Rows of trace.csv."""
        return [
            {
                "k": r.k,
                "J": r.objective,
                "h_star": r.h_star,
                "x_star_x": r.x_star.x,
                "x_star_y": r.x_star.y,
                "atoms": r.atoms,
                "seconds": r.seconds,
            }
            for r in self.records
        ]


class Certificate(NamedTuple):
    """Result of checking the first-order optimality condition."""

    min_h: float
    argmin: Point2
    support_residual: float
    tolerance: float

    @property
    def optimal(self) -> bool:
        """Whether the influence function stays above ``-tolerance``."""
        return self.min_h >= -self.tolerance

    @property
    def verdict(self) -> str:
        """``OPTIMAL(tau)`` or ``NOT-OPTIMAL``."""
        return f"OPTIMAL({self.tolerance:g})" if self.optimal else "NOT-OPTIMAL"

    def to_json(self) -> CertificateSchema:
        """Serialize for the certify command."""
        return {
            "min_h": self.min_h,
            "argmin": [self.argmin.x, self.argmin.y],
            "support_residual": self.support_residual,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }


def demand_for(problem: Problem, config: SolverConfig) -> EtaOrBatch:
    """The exact law when discrete, otherwise a batch frozen by ``config.seed``."""
    if problem.eta.is_discrete:
        return problem.eta
    return draw_batch(problem.eta, config.mc_batch_size, config.seed)


def _serial_map(fn, items):
    return map(fn, items)


def _pool_map(pool: Optional[WorkerPool]):
    return (pool.map, pool.workers) if pool is not None else (_serial_map, 1)


def _adam(
    profile: ResponseProfile,
    starts: NDArray[np.float64],
    domain: ConvexPolygon,
    config: SolverConfig,
    lr: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Projected Adam on the influence function from each start; best point seen per start."""
    x = domain.project(starts)
    first = np.zeros_like(x)
    second = np.zeros_like(x)
    best_x = x.copy()
    best_h = np.full(len(x), np.inf)
    b1, b2 = config.adam_beta1, config.adam_beta2
    for t in range(1, config.adam_steps + 1):
        h, g = profile.influence_and_gradient(x, strict=False)
        better = h < best_h
        best_h[better] = h[better]
        best_x[better] = x[better]
        first = b1 * first + (1.0 - b1) * g
        second = b2 * second + (1.0 - b2) * g * g
        m_hat = first / (1.0 - b1**t)
        v_hat = second / (1.0 - b2**t)
        x = domain.project(x - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps))
    h = profile.influence(x)
    better = h < best_h
    best_h[better] = h[better]
    best_x[better] = x[better]
    return best_x, best_h


def _run_adam(
    profile: ResponseProfile,
    starts: NDArray[np.float64],
    domain: ConvexPolygon,
    config: SolverConfig,
    pool: Optional[WorkerPool],
    lr_scale: float = 1.0,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    mapper, workers = _pool_map(pool)
    lr = config.adam_lr * lr_scale * domain.diameter
    chunks = [c for c in np.array_split(np.arange(len(starts)), workers) if len(c)]
    results = list(mapper(lambda idx: _adam(profile, starts[idx], domain, config, lr), chunks))
    return np.vstack([r[0] for r in results]), np.concatenate([r[1] for r in results])


def _influence_chunked(profile: ResponseProfile, points: NDArray[np.float64], pool: Optional[WorkerPool]) -> NDArray[np.float64]:
    mapper, _ = _pool_map(pool)
    chunks = [points[i : i + EVAL_CHUNK] for i in range(0, len(points), EVAL_CHUNK)]
    return np.concatenate(list(mapper(profile.influence, chunks)))


def _l1_candidates(problem: Problem, demand: EtaOrBatch, config: SolverConfig, rng: np.random.Generator) -> NDArray[np.float64]:
    from measurefw.l1 import grid_candidates

    points, _ = as_demand(demand)
    limit = None if problem.eta.is_discrete else config.l1_grid_points
    return grid_candidates(points, problem.region, limit, rng)


def minimize_influence(
    mu: DiscreteMeasure,
    problem: Problem,
    config: Optional[SolverConfig] = None,
    rng: Optional[np.random.Generator] = None,
    demand: Optional[EtaOrBatch] = None,
    profile: Optional[ResponseProfile] = None,
    pool: Optional[WorkerPool] = None,
) -> tuple[Point2, float]:
    """Approximate minimiser of the influence function over the domain.

    Candidates are the end points of ``inner_restarts`` projected-Adam runs from
    uniform random starts (l2) or the random starts and demand-grid vertices (l1),
    every support atom of ``mu`` and, for discrete laws, every demand point.
    Because the influence has zero mean under ``mu``, some atom has a nonpositive
    value, so the returned ``h_star`` is never positive.

    Returns:
        tuple[Point2, float]: The best candidate and its influence value.
    """
    config = config or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    demand = demand if demand is not None else demand_for(problem, config)
    profile = profile or ResponseProfile(mu, demand, problem.curve, problem.norm)
    domain = problem.region

    base = int(rng.integers(2**62))
    starts = np.vstack(
        [domain.sample_any(np.random.default_rng([base, r]), 1) for r in range(config.inner_restarts)]
    )
    candidates = [mu.locations]
    if problem.eta.is_discrete:
        candidates.append(domain.project(as_demand(demand)[0]))
    if problem.norm == "l2" and domain.diameter > 0:
        candidates.append(_run_adam(profile, starts, domain, config, pool)[0])
    else:
        candidates.append(starts)
    if problem.norm == "l1":
        candidates.append(_l1_candidates(problem, demand, config, np.random.default_rng([base, config.inner_restarts])))

    points = np.vstack(candidates)
    values = _influence_chunked(profile, points, pool)
    best = int(np.argmin(values))
    return Point2(float(points[best, 0]), float(points[best, 1])), float(values[best])


def simplex_project(v: ArrayLike) -> NDArray[np.float64]:
    """Euclidean projection onto the unit simplex by sorting and thresholding.

    Raises:
        ValueError: If ``v`` is empty or not finite.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    rho = int(np.nonzero(u - (css - 1.0) / ranks > 0)[0][-1])
    theta = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(v - theta, 0.0)


def kkt_residual(grad: NDArray[np.float64], p: NDArray[np.float64]) -> float:
    """Spread of the partial derivatives over the active simplex coordinates."""
    active = p > ACTIVE_WEIGHT
    if not np.any(active):
        return 0.0
    g = grad[active]
    return float(np.max(np.abs(g - g.mean())))


def _stationary(grad: NDArray[np.float64], p: NDArray[np.float64], tol: float) -> bool:
    """Active derivatives agree within ``tol`` and no inactive one lies below them."""
    active = p > ACTIVE_WEIGHT
    if not np.any(active):
        return False
    return kkt_residual(grad, p) < tol and float(grad[active].mean() - grad.min()) < tol


def _weights_profile(support: NDArray[np.float64], p: NDArray[np.float64], problem: Problem, demand: EtaOrBatch) -> ResponseProfile:
    b = problem.budget
    return ResponseProfile(DiscreteMeasure(support, b * p, b), demand, problem.curve, problem.norm)


def finite_objective(profile: ResponseProfile, k: int) -> float:
    """The profile's J, which must be finite.

    Raises:
        RuntimeError: If J is NaN or infinite.
    """
    value = profile.objective
    if not math.isfinite(value):
        raise RuntimeError(f"non-finite objective at iteration {k}")
    return value


def fully_corrective(
    support: ArrayLike,
    p_init: ArrayLike,
    problem: Problem,
    batch_or_exact: EtaOrBatch,
    config: Optional[SolverConfig] = None,
) -> tuple[NDArray[np.float64], float]:
    """Reoptimise the weights of a fixed support by projected gradient descent.

    Steps that do not decrease J are halved; accepted steps double the step
    size. Stops once :func:`kkt_residual` drops below ``kkt_tolerance`` with no
    inactive coordinate offering descent, after ``correction_steps`` steps, or
    when no step decreases J. The result never has a larger objective than
    ``p_init``.

    Returns:
        tuple[NDArray[np.float64], float]: Weights on the unit simplex and the
        KKT residual they leave.
    """
    config = config or SolverConfig()
    support = as_points(support)
    p = np.asarray(p_init, dtype=np.float64).reshape(-1)
    check_simplex(p)
    p = simplex_project(p)
    if len(p) == 1:
        return p, 0.0
    profile = _weights_profile(support, p, problem, batch_or_exact)
    value, grad = profile.objective, profile.correction_gradient()
    residual = kkt_residual(grad, p)
    step = config.correction_lr / max(problem.budget**2, 1e-12)
    for _ in range(config.correction_steps):
        if _stationary(grad, p, config.kkt_tolerance):
            break
        moved = False
        for _ in range(MAX_HALVINGS):
            q = simplex_project(p - step * grad)
            if np.max(np.abs(q - p)) <= 1e-15:
                break
            trial = _weights_profile(support, q, problem, batch_or_exact)
            if trial.objective < value:
                p, value, grad = q, trial.objective, trial.correction_gradient()
                residual = kkt_residual(grad, p)
                step *= 2.0
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    logger.debug("fully_corrective: J=%.12g kkt=%.3g atoms=%d", value, residual, int((p > 0).sum()))
    return p, residual


def _line_search(
    support: NDArray[np.float64],
    p: NDArray[np.float64],
    index: int,
    problem: Problem,
    demand: EtaOrBatch,
) -> NDArray[np.float64]:
    """Best point on the segment from ``p`` to the vertex ``e_index`` of the simplex."""
    vertex = np.zeros_like(p)
    vertex[index] = 1.0

    def along(t: float) -> float:
        return _weights_profile(support, (1.0 - t) * p + t * vertex, problem, demand).objective

    result = minimize_scalar(along, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10})
    trials = [(along(0.0), 0.0), (along(1.0), 1.0), (float(result.fun), float(result.x))]
    _, t = min(trials)
    return simplex_project((1.0 - t) * p + t * vertex)


def _atom_index(mu: DiscreteMeasure, x: PointLike, eps: float) -> Optional[int]:
    if len(mu) == 0:
        return None
    d = np.hypot(*(mu.locations - as_points(x)[0]).T)
    i = int(np.argmin(d))
    return i if d[i] <= eps else None


def _initial_measure(problem: Problem, rng: np.random.Generator) -> DiscreteMeasure:
    return point_mass(problem.region.sample_any(rng, 1)[0], problem.budget)


def fcfw_solve(
    problem: Problem,
    config: Optional[SolverConfig] = None,
    rng: Optional[np.random.Generator] = None,
    pool: Optional[WorkerPool] = None,
) -> tuple[DiscreteMeasure, SolveTrace]:
    """Fully-corrective Frank-Wolfe over measures of mass b on the domain.

    Starts from ``b * delta_{x0}`` with ``x0`` uniform in the domain. Each
    iteration finds ``x_star`` with :func:`minimize_influence`, adds it to the
    support, reoptimises all weights and drops atoms whose weight vanished.
    Stops after ``max_outer_iters`` iterations or once ``|h_star|`` falls below
    ``fw_tolerance``.
    """
    config = config or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    b = problem.budget
    demand = demand_for(problem, config)
    mu = _initial_measure(problem, rng)
    trace = SolveTrace(stop_reason="max_outer_iters")
    started = time.perf_counter()
    residual = 0.0

    for k in range(config.max_outer_iters):
        profile = ResponseProfile(mu, demand, problem.curve, problem.norm)
        value = finite_objective(profile, k)
        x_star, h_star = minimize_influence(mu, problem, config, rng, demand, profile, pool)
        trace.append(TraceRecord(k, value, h_star, x_star, len(mu), time.perf_counter() - started, residual))
        logger.debug("fcfw k=%d J=%.12g h*=%.3g atoms=%d kkt=%.3g", k, value, h_star, len(mu), residual)
        if abs(h_star) < config.fw_tolerance:
            trace.stop_reason = "fw_tolerance"
            break

        index = _atom_index(mu, x_star, config.merge_eps)
        if index is None:
            support = np.vstack([mu.locations, as_points(x_star)])
            p = np.append(mu.probabilities, 0.0)
            index = len(mu)
        else:
            support, p = mu.locations, mu.probabilities
        p = _line_search(support, p, index, problem, demand)
        p, residual = fully_corrective(support, p, problem, demand, config)
        mu = merge_and_prune(DiscreteMeasure(support, b * p, b), config.merge_eps, config.weight_tol * b)

    trace.final_objective = evaluate(mu, problem, demand)
    logger.info("fcfw stopped (%s) after %d iterations: J=%.12g atoms=%d", trace.stop_reason, len(trace), trace.final_objective, len(mu))
    return mu, trace


def dfw_solve(
    problem: Problem,
    config: Optional[SolverConfig] = None,
    rng: Optional[np.random.Generator] = None,
    pool: Optional[WorkerPool] = None,
) -> tuple[DiscreteMeasure, SolveTrace]:
    """Plain Frank-Wolfe averaging ``mu <- (1 - s) mu + s b delta_{x_star}`` with ``s = 2 / (k + 2)``.

    A point within ``merge_eps`` of an atom adds to that atom. Atoms lighter
    than ``weight_tol * b`` are dropped after each step. Stopping
    and tracing follow :func:`fcfw_solve`.
    """
    config = config or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    b = problem.budget
    demand = demand_for(problem, config)
    mu = _initial_measure(problem, rng)
    trace = SolveTrace(stop_reason="max_outer_iters")
    started = time.perf_counter()

    for k in range(config.max_outer_iters):
        profile = ResponseProfile(mu, demand, problem.curve, problem.norm)
        value = finite_objective(profile, k)
        x_star, h_star = minimize_influence(mu, problem, config, rng, demand, profile, pool)
        trace.append(TraceRecord(k, value, h_star, x_star, len(mu), time.perf_counter() - started))
        logger.debug("dfw k=%d J=%.12g h*=%.3g atoms=%d", k, value, h_star, len(mu))
        if abs(h_star) < config.fw_tolerance:
            trace.stop_reason = "fw_tolerance"
            break

        step = 2.0 / (k + 2.0)
        index = _atom_index(mu, x_star, config.merge_eps)
        if index is None:
            mu = mu.mix(point_mass(x_star, b), step)
        else:
            vertex = np.zeros(len(mu))
            vertex[index] = 1.0
            mu = mu.scaled((1.0 - step) * mu.probabilities + step * vertex)
        keep = mu.weights >= config.weight_tol * b
        if not np.all(keep):
            mu = DiscreteMeasure(mu.locations[keep], mu.weights[keep] * (b / mu.weights[keep].sum()), b)

    trace.final_objective = evaluate(mu, problem, demand)
    logger.info("dfw stopped (%s) after %d iterations: J=%.12g atoms=%d", trace.stop_reason, len(trace), trace.final_objective, len(mu))
    return mu, trace


def two_point_optimum(
    y1: PointLike,
    y2: PointLike,
    lambda1: float,
    lambda2: float,
    b: float,
    curve: Optional[DeathCurve] = None,
) -> DiscreteMeasure:
    """Closed-form optimum for two demand points.

    The mass ``alpha1 = clamp(b/2 + log(lambda1/lambda2)/2, 0, b)`` goes to
    ``y1`` and the rest to ``y2``; zero-weight atoms are omitted. The weights
    are optimal for every concave death curve, so ``curve`` does not change
    the result.

    Raises:
        ValueError: If the probabilities are invalid, ``b <= 0`` or ``y1 == y2``.
    """
    if lambda1 < 0 or lambda2 < 0 or abs(lambda1 + lambda2 - 1.0) > 1e-12:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    if not b > 0:
        raise ValueError("budget must be positive")
    a, c = as_points(y1)[0], as_points(y2)[0]
    if np.array_equal(a, c):
        raise ValueError("demand points must be distinct")
    if lambda2 == 0.0:
        alpha1 = b
    elif lambda1 == 0.0:
        alpha1 = 0.0
    else:
        alpha1 = min(max(0.5 * b + 0.5 * math.log(lambda1 / lambda2), 0.0), b)
    atoms = [(loc, w) for loc, w in ((a, alpha1), (c, b - alpha1)) if w > 0.0]
    return DiscreteMeasure(np.array([loc for loc, _ in atoms]), [w for _, w in atoms], b)


def certify(
    mu: DiscreteMeasure,
    problem: Problem,
    grid_resolution: int = 100,
    config: Optional[SolverConfig] = None,
    rng: Optional[np.random.Generator] = None,
    pool: Optional[WorkerPool] = None,
) -> tuple[float, Point2]:
    """Global minimum of the influence function over the domain, by lattice search and refinement.

    The influence is evaluated on a ``grid_resolution`` square lattice clipped
    to the domain, the domain vertices, the atoms and the demand points. Under
    l2 the best ``certify_refine`` lattice points and every atom are refined
    with projected Adam; under l1 the demand-grid vertices are added instead.
    ``mu`` is approximately optimal at tolerance ``tau`` iff ``min_h >= -tau``.

    Returns:
        tuple[float, Point2]: The minimum value and where it is attained.
    """
    config = config or SolverConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    demand = demand_for(problem, config)
    profile = ResponseProfile(mu, demand, problem.curve, problem.norm)
    domain = problem.region

    parts = [domain.lattice(grid_resolution), domain.vertices, domain.project(mu.locations)]
    if problem.eta.is_discrete:
        parts.append(domain.project(as_demand(demand)[0]))
    points = np.vstack(parts)
    values = _influence_chunked(profile, points, pool)

    if problem.norm == "l2" and domain.diameter > 0:
        best = np.argsort(values, kind="stable")[: config.certify_refine]
        starts = np.vstack([points[best], domain.project(mu.locations)])
        refined, refined_values = _run_adam(profile, starts, domain, config, pool, lr_scale=0.2)
        points = np.vstack([points, refined])
        values = np.concatenate([values, refined_values])
    elif problem.norm == "l1":
        extra = _l1_candidates(problem, demand, config, rng)
        points = np.vstack([points, extra])
        values = np.concatenate([values, _influence_chunked(profile, extra, pool)])

    i = int(np.argmin(values))
    return float(values[i]), Point2(float(points[i, 0]), float(points[i, 1]))


def support_residual(
    mu: DiscreteMeasure,
    problem: Problem,
    config: Optional[SolverConfig] = None,
    min_weight: float = 1e-6,
) -> float:
    """Largest ``|h_mu|`` over atoms heavier than ``min_weight``; zero at an exact optimum."""
    config = config or SolverConfig()
    heavy = mu.locations[mu.weights > min_weight]
    if len(heavy) == 0:
        return 0.0
    profile = ResponseProfile(mu, demand_for(problem, config), problem.curve, problem.norm)
    return float(np.max(np.abs(profile.influence(heavy))))


def certificate(
    mu: DiscreteMeasure,
    problem: Problem,
    grid_resolution: int,
    tolerance: float,
    config: Optional[SolverConfig] = None,
    rng: Optional[np.random.Generator] = None,
    pool: Optional[WorkerPool] = None,
) -> Certificate:
    """:func:`certify` plus the support residual, bundled with the tolerance."""
    min_h, argmin = certify(mu, problem, grid_resolution, config, rng, pool)
    return Certificate(min_h, argmin, support_residual(mu, problem, config), tolerance)
