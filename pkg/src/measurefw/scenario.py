"""Problem specification: death curve, incident distribution, budget, norm and domain."""

from __future__ import annotations

import json
import logging
import math
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from measurefw.exceptions import ScenarioError
from measurefw.geometry import ConvexPolygon, Point2, Rect, as_points, convex_hull
from measurefw.types import NORMS, EtaSchema, Norm, RectSchema, ScenarioSchema

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12
DEFAULT_A = 0.679
DEFAULT_C = 0.262


@dataclass(frozen=True)
class DeathCurve:
    """Probability of death as a function of response time.

    ``beta(t) = 1 - (1 + exp(a + c t))^-1``, the logistic fit used for
    out-of-hospital cardiac arrest survival.
    """

    a: float = DEFAULT_A
    c: float = DEFAULT_C

    def __post_init__(self):
        """Validate the parameters.

        Raises:
            ValueError: If ``c <= 0`` (curve not increasing) or ``a < 0`` (curve
                not strictly concave on the whole half-line).
        """
        if not (math.isfinite(self.a) and math.isfinite(self.c)):
            raise ValueError("death curve parameters must be finite")
        if self.c <= 0:
            raise ValueError("death curve slope c must be positive")
        if self.a < 0:
            raise ValueError("death curve intercept a must be nonnegative for strict concavity")

    def __call__(self, t: ArrayLike) -> NDArray[np.float64]:
        """Vectorised beta; ``t = inf`` maps to exactly 1. No argument checks."""
        return expit(self.a + self.c * np.asarray(t, dtype=np.float64))

    def derivative(self, t: ArrayLike) -> NDArray[np.float64]:
        """Vectorised derivative of beta. No argument checks."""
        s = self(t)
        return self.c * s * (1.0 - s)

    def to_json(self) -> dict[str, float]:
        """Serialize to the scenario ``beta`` object."""
        return {"a": self.a, "c": self.c}


def _check_time(t: float) -> float:
    t = float(t)
    if math.isnan(t) or t < 0:
        raise ValueError("response time must be nonnegative")
    return t


def beta(curve: DeathCurve, t: float) -> float:
    """Death probability after a response time ``t`` (``math.inf`` allowed).

    Raises:
        ValueError: If ``t`` is negative.
    """
    t = _check_time(t)
    if math.isinf(t):
        return 1.0
    return float(curve(t))


def beta_prime(curve: DeathCurve, t: float) -> float:
    """Derivative of the death curve at ``t``.

    Raises:
        ValueError: If ``t`` is negative.
    """
    t = _check_time(t)
    if math.isinf(t):
        return 0.0
    return float(curve.derivative(t))


def _check_probabilities(probs: NDArray[np.float64]) -> NDArray[np.float64]:
    if probs.size == 0:
        raise ValueError("at least one probability is required")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(float(probs.sum()) - 1.0) > PROB_TOL:
        raise ValueError("probabilities must sum to 1")
    return probs


class IncidentDistribution:
    """Probability law of the next incident location."""

    kind: str = ""

    @property
    def is_discrete(self) -> bool:
        """Whether the law is a finite set of demand points."""
        return False

    def sample(self, rng: np.random.Generator, size: int = 1) -> NDArray[np.float64]:
        """Draw ``size`` incident locations, shape (size, 2)."""
        raise NotImplementedError

    def corner_points(self) -> NDArray[np.float64]:
        """Points whose convex hull is the closed support hull."""
        raise NotImplementedError

    def to_json(self) -> EtaSchema:
        """Serialize to the scenario ``eta`` object."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Discrete(IncidentDistribution):
    """Incidents at finitely many demand points with probabilities ``probs``."""

    points: NDArray[np.float64]
    probs: NDArray[np.float64]
    kind: str = field(default="discrete", init=False)

    def __post_init__(self):
        """Validate points and probabilities."""
        pts = as_points(self.points).copy()
        probs = _check_probabilities(np.asarray(self.probs, dtype=np.float64).reshape(-1).copy())
        if len(pts) != len(probs):
            raise ValueError("points and probabilities must have the same length")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("demand points must be distinct")
        pts.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", probs)

    @property
    def is_discrete(self) -> bool:
        """Always true."""
        return True

    def sample(self, rng: np.random.Generator, size: int = 1) -> NDArray[np.float64]:
        """Categorical draw over the demand points."""
        return self.points[rng.choice(len(self.points), size=size, p=self.probs)]

    def corner_points(self) -> NDArray[np.float64]:
        """The demand points."""
        return self.points

    def to_json(self) -> EtaSchema:
        """Serialize to the scenario ``eta`` object."""
        return {
            "type": "discrete",
            "points": [{"x": float(x), "y": float(y), "p": float(p)} for (x, y), p in zip(self.points, self.probs)],
        }


def _check_rect(rect: Rect) -> Rect:
    if rect.area <= 0:
        raise ValueError("incident rectangles must have positive area")
    return rect


def _rect_json(rect: Rect) -> RectSchema:
    return {"xmin": rect.xmin, "ymin": rect.ymin, "xmax": rect.xmax, "ymax": rect.ymax}


@dataclass(frozen=True)
class UniformRect(IncidentDistribution):
    """Incidents uniform over one axis-aligned rectangle."""

    rect: Rect
    kind: str = field(default="uniform_rect", init=False)

    def __post_init__(self):
        """Validate the rectangle."""
        _check_rect(self.rect)

    def sample(self, rng: np.random.Generator, size: int = 1) -> NDArray[np.float64]:
        """Uniform draw in the rectangle."""
        r = self.rect
        return rng.uniform([r.xmin, r.ymin], [r.xmax, r.ymax], size=(size, 2))

    def corner_points(self) -> NDArray[np.float64]:
        """The rectangle corners."""
        return self.rect.corners

    def to_json(self) -> EtaSchema:
        """Serialize to the scenario ``eta`` object."""
        return {"type": "uniform_rect", "rect": _rect_json(self.rect)}


@dataclass(frozen=True, eq=False)
class Mixture(IncidentDistribution):
    """Weighted mixture of uniform laws on axis-aligned rectangles."""

    rects: tuple[Rect, ...]
    probs: NDArray[np.float64]
    kind: str = field(default="mixture", init=False)

    def __post_init__(self):
        """Validate components and weights."""
        rects = tuple(_check_rect(r) for r in self.rects)
        probs = _check_probabilities(np.asarray(self.probs, dtype=np.float64).reshape(-1).copy())
        if len(rects) != len(probs):
            raise ValueError("components and probabilities must have the same length")
        probs.setflags(write=False)
        object.__setattr__(self, "rects", rects)
        object.__setattr__(self, "probs", probs)

    def sample(self, rng: np.random.Generator, size: int = 1) -> NDArray[np.float64]:
        """Two-stage draw: a component by weight, then uniform in its rectangle."""
        which = rng.choice(len(self.rects), size=size, p=self.probs)
        lo = np.array([[r.xmin, r.ymin] for r in self.rects])[which]
        hi = np.array([[r.xmax, r.ymax] for r in self.rects])[which]
        return lo + rng.random((size, 2)) * (hi - lo)

    def corner_points(self) -> NDArray[np.float64]:
        """Corners of every component."""
        return np.vstack([r.corners for r in self.rects])

    def to_json(self) -> EtaSchema:
        """Serialize to the scenario ``eta`` object."""
        return {
            "type": "mixture",
            "components": [{"rect": _rect_json(r), "p": float(p)} for r, p in zip(self.rects, self.probs)],
        }


def sample_incident(eta: IncidentDistribution, rng: np.random.Generator) -> Point2:
    """Draw one incident location from ``eta``."""
    x, y = eta.sample(rng, 1)[0]
    return Point2(float(x), float(y))


def support_hull(eta: IncidentDistribution) -> ConvexPolygon:
    """Convex hull of the support of ``eta``: the default domain cvx(S)."""
    return convex_hull(eta.corner_points())


@dataclass(frozen=True, eq=False)
class Problem:
    """A complete scenario: incident law, budget, norm, death curve and domain."""

    eta: IncidentDistribution
    budget: float
    norm: Norm = "l2"
    curve: DeathCurve = field(default_factory=DeathCurve)
    domain: Optional[ConvexPolygon] = None

    def __post_init__(self):
        """Validate the scenario and fill in the default domain.

        Raises:
            ValueError: If the budget is not positive, the norm is unknown, or the
                domain does not contain the support hull of the incident law.
        """
        if not (math.isfinite(self.budget) and self.budget > 0):
            raise ValueError("budget must be positive")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        hull = support_hull(self.eta)
        if self.domain is None:
            logger.debug("no domain given, using the support hull of eta")
            object.__setattr__(self, "domain", hull)
        elif not np.all(self.domain.contains(hull.vertices, tol=1e-9)):
            raise ValueError("domain must contain the support hull of eta")

    @property
    def region(self) -> ConvexPolygon:
        """The domain, never None after construction."""
        assert self.domain is not None
        return self.domain

    def with_domain(self, domain: ConvexPolygon) -> Problem:
        """Copy of the problem with another domain."""
        return Problem(self.eta, self.budget, self.norm, self.curve, domain)

    def with_norm(self, norm: Norm) -> Problem:
        """Copy of the problem under another norm."""
        return Problem(self.eta, self.budget, norm, self.curve, self.domain)

    def with_budget(self, budget: float) -> Problem:
        """Copy of the problem with another budget."""
        return Problem(self.eta, budget, self.norm, self.curve, self.domain)


def scenario_to_json(problem: Problem) -> ScenarioSchema:
    """Serialize a problem to a scenario document that :func:`load_scenario` reads back."""
    return {
        "budget": problem.budget,
        "norm": problem.norm,
        "beta": {"a": problem.curve.a, "c": problem.curve.c},
        "eta": problem.eta.to_json(),
        "domain": [[float(x), float(y)] for x, y in problem.region.vertices],
    }


def _parse_rect(obj: Any) -> Rect:
    return Rect(float(obj["xmin"]), float(obj["ymin"]), float(obj["xmax"]), float(obj["ymax"]))


def _parse_eta(obj: Mapping[str, Any]) -> IncidentDistribution:
    kind = obj.get("type")
    if kind == "discrete":
        points = obj["points"]
        if not points:
            raise ScenarioError("eta.points must not be empty")
        return Discrete(
            np.array([[float(p["x"]), float(p["y"])] for p in points]),
            np.array([float(p["p"]) for p in points]),
        )
    if kind == "uniform_rect":
        return UniformRect(_parse_rect(obj["rect"]))
    if kind == "mixture":
        components = obj["components"]
        if not components:
            raise ScenarioError("eta.components must not be empty")
        return Mixture(
            tuple(_parse_rect(c["rect"]) for c in components),
            np.array([float(c["p"]) for c in components]),
        )
    raise ScenarioError(f"unknown eta type {kind!r}")


def parse_scenario(document: Mapping[str, Any]) -> Problem:
    """Build a validated :class:`Problem` from a parsed scenario document.

    Raises:
        ScenarioError: With a message specific to the violated rule.
    """
    if not isinstance(document, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    for key in ("budget", "eta"):
        if key not in document:
            raise ScenarioError(f"scenario is missing required field {key!r}")
    try:
        budget = float(document["budget"])
    except (TypeError, ValueError) as e:
        raise ScenarioError("budget must be a number") from e
    if not (math.isfinite(budget) and budget > 0):
        raise ScenarioError("budget must be positive")
    norm = document.get("norm", "l2")
    if norm not in NORMS:
        raise ScenarioError(f"norm must be one of {list(NORMS)}, got {norm!r}")
    try:
        beta_doc = document.get("beta") or {}
        curve = DeathCurve(float(beta_doc.get("a", DEFAULT_A)), float(beta_doc.get("c", DEFAULT_C)))
        eta = _parse_eta(document["eta"])
        domain_doc = document.get("domain")
        domain = convex_hull(np.asarray(domain_doc, dtype=np.float64)) if domain_doc else None
        return Problem(eta, budget, norm, curve, domain)
    except ScenarioError:
        raise
    except (KeyError, TypeError, AttributeError) as e:
        raise ScenarioError(f"scenario schema violation: {e}") from e
    except ValueError as e:
        raise ScenarioError(str(e)) from e


def load_scenario(source: Union[str, os.PathLike]) -> Problem:
    """Load a scenario from a file path or from JSON text.

    A string whose first non-blank character is ``{`` is parsed as JSON text;
    anything else is treated as a path.

    Raises:
        ScenarioError: If the file is missing, the JSON is invalid, or the
            document violates the scenario schema.
    """
    if isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ScenarioError(f"cannot read scenario file {str(path)!r}: {e.strerror}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"scenario is not valid JSON: {e}") from e
    return parse_scenario(document)


SQRT3_2 = math.sqrt(3.0) / 2.0
BUILTIN_SCENARIOS = ("two-point", "three-point", "four-point", "uniform", "mixture")


def builtin_scenario(name: str, budget: float = 1.0, norm: Norm = "l2") -> Problem:
    """The experiment set-ups used throughout the documentation and tests.

    Args:
        name (str): One of ``two-point`` (unit segment, equal weights),
            ``three-point`` (equilateral triangle), ``four-point`` (unit-square
            corners), ``uniform`` (unit square) and ``mixture`` (unit square split
            into four subsquares weighted 0.1, 0.2, 0.3, 0.4).
        budget (float): Total volunteer mass. Defaults to 1.
        norm (Norm): Travel norm. Defaults to "l2".
    """
    if name == "two-point":
        eta: IncidentDistribution = Discrete(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0.5, 0.5]))
    elif name == "three-point":
        eta = Discrete(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, SQRT3_2]]), np.full(3, 1.0 / 3.0))
    elif name == "four-point":
        eta = Discrete(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.full(4, 0.25))
    elif name == "uniform":
        eta = UniformRect(Rect(0.0, 0.0, 1.0, 1.0))
    elif name == "mixture":
        eta = Mixture(
            (
                Rect(0.0, 0.0, 0.5, 0.5),
                Rect(0.5, 0.0, 1.0, 0.5),
                Rect(0.0, 0.5, 0.5, 1.0),
                Rect(0.5, 0.5, 1.0, 1.0),
            ),
            np.array([0.1, 0.2, 0.3, 0.4]),
        )
    else:
        raise ValueError(f"unknown builtin scenario {name!r}, expected one of {BUILTIN_SCENARIOS}")
    return Problem(eta, budget, norm)


def make_city(units: int, seed: int, budget: float = 50.0, pareto_shape: float = 1.5) -> Problem:
    """Synthetic city: ``units`` area units on a near-square grid of 1 km cells.

    Each unit is its grid cell shrunk by a random margin of up to 10% on every
    side; unit weights are normalised heavy-tailed (Pareto) draws. One unit gives
    a single uniform rectangle. The result depends only on the arguments.

    Raises:
        ValueError: If ``units < 1``.
    """
    if units < 1:
        raise ValueError("a city needs at least one area unit")
    rng = np.random.default_rng(seed)
    cols = math.ceil(math.sqrt(units))
    margins = rng.uniform(0.0, 0.1, size=(units, 4))
    rects = []
    for idx in range(units):
        row, col = divmod(idx, cols)
        m = margins[idx]
        rects.append(Rect(col + m[0], row + m[1], col + 1.0 - m[2], row + 1.0 - m[3]))
    if units == 1:
        return Problem(UniformRect(rects[0]), budget)
    raw = rng.pareto(pareto_shape, size=units) + 1.0
    probs = raw / raw.sum()
    probs[-1] = 1.0 - probs[:-1].sum()
    return Problem(Mixture(tuple(rects), probs), budget)


def demand_points(eta: IncidentDistribution) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Points and probabilities of a discrete law.

    Raises:
        ValueError: If ``eta`` is not discrete.
    """
    if not isinstance(eta, Discrete):
        raise ValueError("incident distribution is not discrete")
    return eta.points, eta.probs


def discrete(points: Sequence[Sequence[float]], probs: Optional[Sequence[float]] = None) -> Discrete:
    """Convenience constructor; equal probabilities when ``probs`` is omitted."""
    pts = as_points(points)
    p = np.full(len(pts), 1.0 / len(pts)) if probs is None else np.asarray(probs, dtype=np.float64)
    return Discrete(pts, p)
