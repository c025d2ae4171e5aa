"""Run outputs on disk: measure.json, trace.csv, influence grids and manifest.json.

Every writer goes through a temporary file in the target directory followed by
``os.replace``, so readers never see a half-written file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from measurefw.__vers import __version__
from measurefw.exceptions import ScenarioError
from measurefw.measure import DiscreteMeasure
from measurefw.response import InfluenceGrid
from measurefw.solver import SolveTrace
from measurefw.types import JSON_TYPE, RunManifestSchema, TraceRowSchema

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

MEASURE_FILE = "measure.json"
CERTIFICATE_FILE = "certificate.json"
TRACE_FILE = "trace.csv"
MANIFEST_FILE = "manifest.json"
TRACE_COLUMNS = ("k", "J", "h_star", "x_star_x", "x_star_y", "atoms", "seconds")
GRID_COLUMNS = ("x", "y", "h")


def write_text_atomic(path: PathLike, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary sibling and a rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("wrote %s", target)
    return target


def write_json(path: PathLike, document: Any) -> Path:
    """Atomically write a JSON document."""
    return write_text_atomic(path, json.dumps(document, indent=2) + "\n")


def _csv_text(columns: tuple[str, ...], rows: list[list[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buffer.getvalue()


def _read_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioError(f"cannot read {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path} is not valid JSON: {e}") from e


def write_measure(path: PathLike, mu: DiscreteMeasure) -> Path:
    """Write measure.json."""
    return write_json(path, mu.to_json())


def read_measure(path: PathLike) -> DiscreteMeasure:
    """Read measure.json.

    Raises:
        ScenarioError: If the file is missing or malformed.
    """
    return DiscreteMeasure.from_json(_read_json(path))


def write_trace(path: PathLike, trace: SolveTrace) -> Path:
    """Write trace.csv with one row per outer iteration."""
    rows = [[row[c] for c in TRACE_COLUMNS] for row in trace.to_rows()]
    return write_text_atomic(path, _csv_text(TRACE_COLUMNS, [[repr(v) for v in r] for r in rows]))


def read_trace(path: PathLike) -> list[TraceRowSchema]:
    """Read trace.csv back into typed rows."""
    with Path(path).open(encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ScenarioError(f"{path} does not have the trace columns {TRACE_COLUMNS}")
        return [
            {
                "k": int(r["k"]),
                "J": float(r["J"]),
                "h_star": float(r["h_star"]),
                "x_star_x": float(r["x_star_x"]),
                "x_star_y": float(r["x_star_y"]),
                "atoms": int(r["atoms"]),
                "seconds": float(r["seconds"]),
            }
            for r in reader
        ]


def write_influence_grid(path: PathLike, grid: InfluenceGrid) -> Path:
    """Write an (x, y, h) CSV, rows ordered by y then x; cells outside the domain have an empty h."""
    rows = [
        [repr(float(x)), repr(float(y)), "" if math.isnan(h) else repr(float(h))]
        for j, y in enumerate(grid.ys)
        for i, x in enumerate(grid.xs)
        for h in (grid.values[j, i],)
    ]
    return write_text_atomic(path, _csv_text(GRID_COLUMNS, rows))


def read_influence_grid(path: PathLike) -> InfluenceGrid:
    """Read a CSV written by :func:`write_influence_grid`."""
    with Path(path).open(encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != GRID_COLUMNS:
            raise ScenarioError(f"{path} does not have the grid columns {GRID_COLUMNS}")
        rows = [(float(r["x"]), float(r["y"]), float(r["h"]) if r["h"] else math.nan) for r in reader]
    if not rows:
        raise ScenarioError(f"{path} has no grid cells")
    xs = np.array(sorted({x for x, _, _ in rows}))
    ys = np.array(sorted({y for _, y, _ in rows}))
    values = np.full((len(ys), len(xs)), np.nan)
    for x, y, h in rows:
        values[np.searchsorted(ys, y), np.searchsorted(xs, x)] = h
    return InfluenceGrid(xs, ys, values)


def input_hash(scenario_bytes: bytes, command: str, config: dict[str, JSON_TYPE]) -> str:
    """Content hash of a run's inputs.

    The scenario is hashed as a git blob; the digest is then chained with the
    command and the canonical JSON of the configuration.
    """
    blob = hashlib.sha256(b"blob %d\x00" % len(scenario_bytes) + scenario_bytes).hexdigest()
    digest = hashlib.sha256()
    digest.update(blob.encode())
    digest.update(command.encode())
    digest.update(json.dumps(config, sort_keys=True).encode())
    return digest.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to re-run a command and compare its outputs."""

    scenario: Optional[str]
    command: str
    config: dict[str, JSON_TYPE]
    seed: int
    output_dir: str
    input_hash: str
    version: str = __version__

    def to_json(self) -> RunManifestSchema:
        """Serialize to manifest.json."""
        return RunManifestSchema(**asdict(self))

    @classmethod
    def from_json(cls, document: dict[str, Any]) -> RunManifest:
        """Parse manifest.json.

        Raises:
            ScenarioError: If a field is missing.
        """
        try:
            return cls(
                scenario=document["scenario"],
                command=document["command"],
                config=document["config"],
                seed=int(document["seed"]),
                output_dir=document["output_dir"],
                input_hash=document["input_hash"],
                version=document.get("version", "dev"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"invalid manifest: {e}") from e

    def write(self, directory: PathLike) -> Path:
        """Write manifest.json into ``directory``."""
        return write_json(Path(directory) / MANIFEST_FILE, self.to_json())

    @classmethod
    def read(cls, directory: PathLike) -> RunManifest:
        """Read manifest.json from ``directory``."""
        return cls.from_json(_read_json(Path(directory) / MANIFEST_FILE))
