# ruff: noqa: UP045
"""Types used throughout this library, including the JSON document schemas."""

from __future__ import annotations

from typing import Literal, Optional, Union

from typing_extensions import NotRequired, TypedDict

JSON_TYPE = Union[
    dict[str, "JSON_TYPE"],
    list["JSON_TYPE"],
    str,
    int,
    float,
    bool,
    None,
]

Norm = Literal["l2", "l1"]
Algorithm = Literal["fcfw", "dfw", "l1grid"]
NORMS: tuple[Norm, ...] = ("l2", "l1")
ALGORITHMS: tuple[Algorithm, ...] = ("fcfw", "dfw", "l1grid")


class AtomSchema(TypedDict):
    """Schema for one atom of a discrete measure."""

    x: float
    y: float
    w: float


class MeasureSchema(TypedDict):
    """Schema for a discrete volunteer measure (measure.json)."""

    budget: float
    atoms: list[AtomSchema]


class BetaSchema(TypedDict):
    """Schema for the death-curve parameters."""

    a: float
    c: float


class RectSchema(TypedDict):
    """Schema for an axis-aligned rectangle given by its corners."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float


class DiscretePointSchema(TypedDict):
    """Schema for one demand point of a discrete incident distribution."""

    x: float
    y: float
    p: float


class MixtureComponentSchema(TypedDict):
    """Schema for one weighted rectangle of a mixture incident distribution."""

    rect: RectSchema
    p: float


class EtaSchema(TypedDict):
    """Schema for an incident distribution.

    ``points`` is used by ``"discrete"``, ``rect`` by ``"uniform_rect"`` and
    ``components`` by ``"mixture"``.
    """

    type: Literal["discrete", "uniform_rect", "mixture"]
    points: NotRequired[list[DiscretePointSchema]]
    rect: NotRequired[RectSchema]
    components: NotRequired[list[MixtureComponentSchema]]


class ScenarioSchema(TypedDict):
    """Schema for a scenario document."""

    budget: float
    norm: NotRequired[Norm]
    beta: NotRequired[BetaSchema]
    eta: EtaSchema
    domain: NotRequired[Optional[list[list[float]]]]


class TraceRowSchema(TypedDict):
    """Schema for one row of trace.csv."""

    k: int
    J: float
    h_star: float
    x_star_x: float
    x_star_y: float
    atoms: int
    seconds: float


class CertificateSchema(TypedDict):
    """Schema for the optimality certificate printed by ``measure-fw certify``."""

    min_h: float
    argmin: list[float]
    support_residual: float
    tolerance: float
    verdict: str


class EstimateSchema(TypedDict):
    """Schema for a Monte-Carlo estimate with its standard error."""

    estimate: float
    standard_error: float
    reps: int


class RunManifestSchema(TypedDict):
    """Schema for manifest.json, enough to reproduce a run."""

    scenario: Optional[str]
    command: str
    config: dict[str, JSON_TYPE]
    seed: int
    output_dir: str
    input_hash: str
    version: str
