import logging
import os
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from typing import Callable, Optional, TypeVar

import numpy as np

from measurefw.exceptions import PreconditionError
from measurefw.geometry import PointLike
from measurefw.measure import DiscreteMeasure, budget_tolerance
from measurefw.response import InfluenceGrid, influence_grid, simulate_objective
from measurefw.scenario import DeathCurve, Problem
from measurefw.solver import (
    Certificate,
    SolverConfig,
    SolveTrace,
    certificate,
    demand_for,
    dfw_solve,
    fcfw_solve,
    two_point_optimum,
)
from measurefw.types import ALGORITHMS, Algorithm

logger = logging.getLogger(__name__)

THREADS_ENV = "MEASURE_FW_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def threads_from_env() -> int:
    """Worker count from MEASURE_FW_THREADS; 0 or unset means one per CPU.

    Raises:
        ValueError: If the variable is not a nonnegative integer.
    """
    raw = os.getenv(THREADS_ENV, "").strip()
    if not raw:
        return 0
    try:
        threads = int(raw)
    except ValueError:
        threads = -1
    if threads < 0:
        raise ValueError(
            f"Environment variable {THREADS_ENV} must be a nonnegative integer, got {raw!r}"
        )
    return threads


class WorkerPool:
    """Order-preserving map over a lazily created thread pool.

    With one worker everything runs in the calling thread.
    """

    def __init__(self, workers: int):
        """Initialize the pool.

        Args:
            workers (int): Number of threads, at least 1.
        """
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.workers = workers
        self._executor: Optional[ThreadPoolExecutor] = None

    def __repr__(self):
        """Return a string representation of the WorkerPool."""
        return f"WorkerPool(workers={self.workers})"

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` to every item; results keep the input order."""
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="measurefw")
        return list(self._executor.map(fn, items))

    def close(self) -> None:
        """Shut the threads down; the pool can still be used serially afterwards."""
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None


class Planner:
    """Planner runs the volunteer-placement solvers and their checks.

    All randomness flows from the configuration seed, and results do not
    depend on the number of threads.
    """

    def __init__(
        self,
        config: Optional[SolverConfig] = None,
        threads: Optional[int] = None,
    ):
        """Initialize the planner.

        Args:
            config (SolverConfig): Solver tunables. Defaults to ``SolverConfig()``.
            threads (int): Worker threads. If not provided, it will look for the
                environment variable MEASURE_FW_THREADS; 0 or unset means one
                thread per CPU.

        Raises:
            ValueError: If the thread count is negative or the environment
                variable is not a nonnegative integer.

        Example:
            >>> from measurefw import Planner, builtin_scenario
            >>> planner = Planner(threads=1)
            >>> mu, trace = planner.solve(builtin_scenario("two-point"))

        """
        if threads is None:
            threads = threads_from_env()
        if threads < 0:
            raise ValueError("threads must be a nonnegative integer")
        self._threads = threads or os.cpu_count() or 1
        self._config = config or SolverConfig()

    def __repr__(self):
        """Return a string representation of the Planner."""
        return f"Planner(threads={self._threads}, seed={self._config.seed})"

    def __enter__(self) -> "Planner":
        """Enter a context that closes the worker pool on exit."""
        return self

    def __exit__(self, *exc) -> None:
        """Close the worker pool."""
        self.close()

    @property
    def config(self) -> SolverConfig:
        """The default solver configuration."""
        return self._config

    @property
    def threads(self) -> int:
        """Number of worker threads."""
        return self._threads

    @cached_property
    def pool(self) -> WorkerPool:
        """Get the worker pool shared by all calls."""
        return WorkerPool(self._threads)

    def close(self) -> None:
        """Release the worker threads."""
        if "pool" in self.__dict__:
            self.pool.close()

    def _config_for(self, config: Optional[SolverConfig], seed: Optional[int]) -> SolverConfig:
        config = config or self._config
        return config if seed is None else config.replace(seed=seed)

    def solve(
        self,
        problem: Problem,
        algo: Algorithm = "fcfw",
        config: Optional[SolverConfig] = None,
        seed: Optional[int] = None,
    ) -> tuple[DiscreteMeasure, SolveTrace]:
        """Run one of the solvers.

        Args:
            problem (Problem): The scenario.
            algo (Algorithm): ``"fcfw"``, ``"dfw"`` or ``"l1grid"``.
            config (SolverConfig): Overrides the planner's configuration.
            seed (int): Overrides the configuration seed.

        Returns:
            tuple[DiscreteMeasure, SolveTrace]: The final measure and the per-iteration trace.

        Raises:
            ValueError: If ``algo`` is unknown.
            PreconditionError: If ``l1grid`` is used with the l2 norm or a continuous law.
        """
        config = self._config_for(config, seed)
        logger.info("solving with %s, seed=%d, threads=%d", algo, config.seed, self._threads)
        if algo == "fcfw":
            return fcfw_solve(problem, config, pool=self.pool)
        if algo == "dfw":
            return dfw_solve(problem, config, pool=self.pool)
        if algo == "l1grid":
            from measurefw.l1 import l1_solve_on_grid

            return l1_solve_on_grid(problem, config)
        raise ValueError(f"unknown algorithm {algo!r}, expected one of {ALGORITHMS}")

    @staticmethod
    def _check_budget(mu: DiscreteMeasure, problem: Problem) -> None:
        if abs(mu.budget - problem.budget) > budget_tolerance(problem.budget):
            raise PreconditionError(
                f"budget mismatch: measure has {mu.budget!r}, scenario has {problem.budget!r}"
            )

    def certify(
        self,
        mu: DiscreteMeasure,
        problem: Problem,
        grid_resolution: int = 100,
        tolerance: float = 1e-6,
        config: Optional[SolverConfig] = None,
    ) -> Certificate:
        """Check whether ``mu`` is optimal for ``problem`` up to ``tolerance``.

        Raises:
            PreconditionError: If the measure's budget differs from the scenario's.
        """
        self._check_budget(mu, problem)
        config = self._config_for(config, None)
        return certificate(
            mu, problem, grid_resolution, tolerance, config, np.random.default_rng(config.seed), self.pool
        )

    def influence_map(
        self,
        mu: DiscreteMeasure,
        problem: Problem,
        resolution: int,
        config: Optional[SolverConfig] = None,
    ) -> InfluenceGrid:
        """Influence function of ``mu`` on a lattice over the domain's bounding box.

        Raises:
            PreconditionError: If the measure's budget differs from the scenario's.
        """
        self._check_budget(mu, problem)
        config = self._config_for(config, None)
        return influence_grid(mu, problem, resolution, demand_for(problem, config))

    def simulate(
        self,
        mu: DiscreteMeasure,
        problem: Problem,
        reps: int,
        seed: Optional[int] = None,
    ) -> tuple[float, float]:
        """Monte-Carlo estimate of J and its standard error from the Poisson model."""
        self._check_budget(mu, problem)
        rng = np.random.default_rng(self._config.seed if seed is None else seed)
        return simulate_objective(mu, problem.eta, reps, rng, problem.curve, problem.norm)

    def two_point(
        self,
        y1: PointLike,
        y2: PointLike,
        lambda1: float,
        lambda2: float,
        budget: float,
        curve: Optional[DeathCurve] = None,
    ) -> DiscreteMeasure:
        """Closed-form optimum for two demand points."""
        return two_point_optimum(y1, y2, lambda1, lambda2, budget, curve)
