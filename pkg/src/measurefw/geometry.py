"""Planar primitives: convex domains, projection, sampling and distances."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from measurefw.types import Norm

logger = logging.getLogger(__name__)

# Relative tolerance for orientation tests, scaled by the squared extent of the input.
_ORIENT_EPS = 1e-12


class Point2(NamedTuple):
    """A point in the plane."""

    x: float
    y: float


PointLike = Union[Point2, tuple[float, float], NDArray[np.float64]]


def as_points(points: ArrayLike) -> NDArray[np.float64]:
    """Coerce a point or a collection of points into a float array of shape (n, 2).

    Raises:
        ValueError: If the coordinates are not finite or the shape is not (n, 2).
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected points of shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


def _cross(o: NDArray[np.float64], a: NDArray[np.float64], b: NDArray[np.float64]) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def distance(p: PointLike, q: PointLike, norm: Norm = "l2") -> float:
    """Distance between two points under the Euclidean ("l2") or Manhattan ("l1") norm."""
    diff = as_points(p)[0] - as_points(q)[0]
    if norm == "l1":
        return float(np.abs(diff).sum())
    if norm == "l2":
        return float(np.hypot(diff[0], diff[1]))
    raise ValueError(f"unknown norm {norm!r}")


def pairwise_distances(a: ArrayLike, b: ArrayLike, norm: Norm = "l2") -> NDArray[np.float64]:
    """Distance matrix between two point sets, shape (len(a), len(b))."""
    metric = {"l2": "euclidean", "l1": "cityblock"}.get(norm)
    if metric is None:
        raise ValueError(f"unknown norm {norm!r}")
    return cdist(as_points(a), as_points(b), metric=metric)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by its lower-left and upper-right corners."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        """Validate the corner ordering."""
        if not all(np.isfinite([self.xmin, self.ymin, self.xmax, self.ymax])):
            raise ValueError("rectangle corners must be finite")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError("rectangle min corner must not exceed max corner")

    @property
    def area(self) -> float:
        """Area of the rectangle."""
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def corners(self) -> NDArray[np.float64]:
        """Corners in counter-clockwise order starting at the min corner."""
        return np.array(
            [
                [self.xmin, self.ymin],
                [self.xmax, self.ymin],
                [self.xmax, self.ymax],
                [self.xmin, self.ymax],
            ]
        )

    def to_polygon(self) -> ConvexPolygon:
        """The rectangle as a canonical convex polygon."""
        return convex_hull(self.corners)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """A closed convex polygon stored counter-clockwise without collinear vertices.

    One vertex is a point domain and two vertices are a segment; both occur as
    hulls of one or two demand points. Build instances with :func:`convex_hull`,
    which produces the canonical form.
    """

    vertices: NDArray[np.float64]

    def __post_init__(self):
        """Validate the vertex array."""
        if np.asarray(self.vertices).size == 0:
            raise ValueError("empty point set")
        verts = as_points(self.vertices).copy()
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)

    def __len__(self) -> int:
        """Number of vertices."""
        return len(self.vertices)

    def __repr__(self) -> str:
        """Return a string representation listing the vertices."""
        pts = ", ".join(f"({x:g}, {y:g})" for x, y in self.vertices)
        return f"ConvexPolygon([{pts}])"

    @cached_property
    def area(self) -> float:
        """Shoelace area; zero for point and segment domains."""
        if len(self) < 3:
            return 0.0
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def bounds(self) -> Rect:
        """Axis-aligned bounding box."""
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return Rect(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    @cached_property
    def diameter(self) -> float:
        """Largest Euclidean distance between two vertices."""
        if len(self) == 1:
            return 0.0
        return float(pairwise_distances(self.vertices, self.vertices).max())

    def _edges(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        starts = self.vertices
        ends = np.roll(self.vertices, -1, axis=0)
        return starts, ends

    def contains(self, p: ArrayLike, tol: float = 1e-12) -> NDArray[np.bool_]:
        """Membership of one or more points in the closed polygon.

        Returns a boolean array with one entry per input point.
        """
        pts = as_points(p)
        scale = max(self.diameter, 1.0)
        if len(self) == 1:
            return np.all(np.abs(pts - self.vertices[0]) <= tol * scale, axis=1)
        if len(self) == 2:
            return np.linalg.norm(self.project(pts) - pts, axis=1) <= tol * scale
        starts, ends = self._edges()
        edge = ends - starts
        rel = pts[:, None, :] - starts[None, :, :]
        cross = edge[None, :, 0] * rel[:, :, 1] - edge[None, :, 1] * rel[:, :, 0]
        return np.all(cross >= -tol * scale * scale, axis=1)

    def project(self, p: ArrayLike) -> NDArray[np.float64]:
        """Euclidean projection of points onto the polygon, shape (n, 2).

        Points already in the polygon are returned unchanged. Otherwise the
        closest point over all edges is taken; ties go to the first edge in
        vertex order.
        """
        pts = as_points(p)
        if len(self) == 1:
            return np.repeat(self.vertices, len(pts), axis=0)
        starts, ends = self._edges()
        if len(self) == 2:
            starts, ends = starts[:1], ends[:1]
        edge = ends - starts
        length2 = np.einsum("ij,ij->i", edge, edge)
        rel = pts[:, None, :] - starts[None, :, :]
        t = np.clip(np.einsum("nij,ij->ni", rel, edge) / length2[None, :], 0.0, 1.0)
        feet = starts[None, :, :] + t[:, :, None] * edge[None, :, :]
        d2 = np.sum((pts[:, None, :] - feet) ** 2, axis=2)
        best = np.argmin(d2, axis=1)
        projected = feet[np.arange(len(pts)), best]
        if len(self) >= 3:
            inside = self.contains(pts)
            projected[inside] = pts[inside]
        return projected

    def lattice(self, resolution: int) -> NDArray[np.float64]:
        """Points of a resolution x resolution lattice over the bounding box that lie in the polygon.

        Zero-area domains fall back to ``resolution`` evenly spaced points along
        each edge.
        """
        if resolution < 1:
            raise ValueError("resolution must be at least 1")
        if self.area <= 0.0:
            if len(self) == 1:
                return self.vertices.copy()
            t = np.linspace(0.0, 1.0, resolution)[:, None]
            a, b = self.vertices[0], self.vertices[1]
            return a + t * (b - a)
        xs, ys = axis_ticks(self.bounds, resolution)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        return pts[self.contains(pts, tol=1e-9)]

    def sample_uniform(self, rng: np.random.Generator, size: int = 1) -> NDArray[np.float64]:
        """Draw points uniformly from the polygon by fan triangulation.

        Raises:
            ValueError: If the polygon has zero area.
        """
        area = self.area
        if area <= 0.0:
            raise ValueError("degenerate domain")
        apex = self.vertices[0]
        b = self.vertices[1:-1]
        c = self.vertices[2:]
        tri_areas = 0.5 * np.abs((b[:, 0] - apex[0]) * (c[:, 1] - apex[1]) - (b[:, 1] - apex[1]) * (c[:, 0] - apex[0]))
        which = rng.choice(len(tri_areas), size=size, p=tri_areas / tri_areas.sum())
        u = rng.random((size, 2))
        flip = u.sum(axis=1) > 1.0
        u[flip] = 1.0 - u[flip]
        return apex + u[:, :1] * (b[which] - apex) + u[:, 1:] * (c[which] - apex)

    def sample_any(self, rng: np.random.Generator, size: int = 1) -> NDArray[np.float64]:
        """Uniform sample for positive-area domains, random convex combinations otherwise."""
        if self.area > 0.0:
            return self.sample_uniform(rng, size)
        weights = rng.dirichlet(np.ones(len(self)), size=size)
        return weights @ self.vertices


def axis_ticks(box: Rect, resolution: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Evenly spaced x and y ticks over ``box``; resolution 1 gives the centre."""
    if resolution == 1:
        return (
            np.array([0.5 * (box.xmin + box.xmax)]),
            np.array([0.5 * (box.ymin + box.ymax)]),
        )
    return (
        np.linspace(box.xmin, box.xmax, resolution),
        np.linspace(box.ymin, box.ymax, resolution),
    )


def convex_hull(points: ArrayLike) -> ConvexPolygon:
    """Minimal convex polygon containing all points (Andrew's monotone chain).

    Collinear and repeated points are dropped, so the result is strictly convex.
    A single distinct point gives a point domain and collinear input gives a segment.

    Raises:
        ValueError: If ``points`` is empty.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty point set")
    pts = np.unique(as_points(arr), axis=0)
    if len(pts) == 1:
        return ConvexPolygon(pts)
    extent = float(np.ptp(pts, axis=0).max())
    eps = _ORIENT_EPS * extent * extent

    def half(seq: NDArray[np.float64]) -> list[NDArray[np.float64]]:
        chain: list[NDArray[np.float64]] = []
        for p in seq:
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= eps:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and np.allclose(hull[0], hull[1]):
        hull = hull[:1]
    return ConvexPolygon(np.array(hull))
