"""
File Formats
============
Readers and writers for everything the command line consumes or produces.

FORMATS:
- Events CSV:       t_sec,x_px,y_px,polarity
- Labeled events:   the events columns plus true_line (-1 for outliers), a sidecar for oracle checks
- Trajectory (TUM): t tx ty tz qx qy qz qw per line, space separated
- Model JSON:       {"vertices": [[x, y, z], ...], "lines": [[i, j], ...], "faces": [[...], ...]}
- Intrinsics JSON:  {"fx", "fy", "cx", "cy", "width", "height"}
- Run config JSON:  RunConfig sections; missing fields take their defaults

Every read failure raises ConfigError naming the file and the line or field.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, ValidationError
from scipy.spatial.transform import Rotation

from config import RunConfig
from errors import ConfigError
from event_windowing import EventStream
from geometry import CameraIntrinsics, Line2D, line_through
from matching import ObjectModel
from trajectory_metrics import Trajectory


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ModelT = TypeVar("ModelT", bound=BaseModel)

EVENT_COLUMNS = ["t_sec", "x_px", "y_px", "polarity"]
LABEL_COLUMN = "true_line"


# ============================================================================
# JSON
# ============================================================================

def _format_location(loc) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def load_json(path: PathLike) -> dict:
    """Parse a JSON file; syntax errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read file ({e.strerror})") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e


def load_validated(path: PathLike, model: Type[ModelT]) -> ModelT:
    """Parse and validate a JSON file; field errors report the field path."""
    data = load_json(path)
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"{path}: field '{_format_location(first['loc'])}': {first['msg']}") from e


def load_run_config(path: Optional[PathLike]) -> RunConfig:
    return RunConfig() if path is None else load_validated(path, RunConfig)


def load_model(path: PathLike) -> ObjectModel:
    return load_validated(path, ObjectModel)


def load_intrinsics(path: PathLike) -> CameraIntrinsics:
    return load_validated(path, CameraIntrinsics)


def write_json(path: PathLike, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def write_model(path: PathLike, model: ObjectModel) -> None:
    write_json(path, model.model_dump())


def write_intrinsics(path: PathLike, K: CameraIntrinsics) -> None:
    write_json(path, K.model_dump())


def load_lines(path: PathLike) -> List[Line2D]:
    """Detected-lines JSON: a list of {x1, y1, x2, y2, ...} objects."""
    data = load_json(path)
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a list of lines")
    lines = []
    for i, item in enumerate(data):
        try:
            lines.append(line_through((item["x1"], item["y1"]), (item["x2"], item["y2"])))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"{path}: line entry {i} needs x1, y1, x2, y2") from e
    return lines


# ============================================================================
# EVENTS CSV
# ============================================================================

def read_events(path: PathLike, image: Optional[CameraIntrinsics] = None) -> Tuple[EventStream, Optional[np.ndarray]]:
    """
    Read an events CSV.

    Polarity must be -1 or 1. When image is given, every event must also lie
    inside its bounds.

    Returns:
        (stream, labels); labels is None when the file has no true_line column
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read file ({e.strerror})") from e

    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != EVENT_COLUMNS:
            raise ConfigError(f"{path}: line 1: expected header {','.join(EVENT_COLUMNS)}")
        labeled = len(header) > 4 and header[4].strip() == LABEL_COLUMN
        width = 5 if labeled else 4

        rows, linenos = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ConfigError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as e:
                raise ConfigError(f"{path}: line {lineno}: {e}") from e
            if values[3] not in (-1.0, 1.0):
                raise ConfigError(f"{path}: line {lineno}: polarity must be -1 or 1, got {row[3].strip()}")
            rows.append(values)
            linenos.append(lineno)

    data = np.array(rows, dtype=float).reshape(-1, width)
    if image is not None and len(data):
        outside = np.flatnonzero(~image.contains(data[:, 1:3]))
        if len(outside):
            i = outside[0]
            raise ConfigError(
                f"{path}: line {linenos[i]}: event ({data[i, 1]:g}, {data[i, 2]:g}) "
                f"outside the {image.width}x{image.height} image"
            )
    stream = EventStream.from_arrays(data[:, 0], data[:, 1], data[:, 2], data[:, 3].astype(int))
    labels = data[:, 4].astype(int) if labeled else None
    logger.info("read events=%d labeled=%s from %s", len(stream), labeled, path)
    return stream, labels


def write_events(path: PathLike, stream: EventStream, labels: Optional[np.ndarray] = None) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(EVENT_COLUMNS + ([LABEL_COLUMN] if labels is not None else []))
        for i in range(len(stream)):
            row = [repr(float(stream.t[i])), repr(float(stream.x[i])), repr(float(stream.y[i])), int(stream.polarity[i])]
            if labels is not None:
                row.append(int(labels[i]))
            writer.writerow(row)


# ============================================================================
# TRAJECTORIES (TUM)
# ============================================================================

def read_tum(path: PathLike) -> Trajectory:
    """Read `t tx ty tz qx qy qz qw` lines; '#' starts a comment."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read file ({e.strerror})") from e

    rows = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            raise ConfigError(f"{path}: line {lineno}: expected 8 values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as e:
            raise ConfigError(f"{path}: line {lineno}: {e}") from e

    data = np.array(rows, dtype=float).reshape(-1, 8)
    quats = data[:, 4:8]
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms < 1e-9):
        raise ConfigError(f"{path}: zero-length quaternion")
    rotations = Rotation.from_quat(quats / norms[:, None]).as_matrix() if len(data) else np.zeros((0, 3, 3))
    return Trajectory(t=data[:, 0], rotations=rotations, translations=data[:, 1:4])


def write_tum(path: PathLike, trajectory: Trajectory) -> None:
    quats = Rotation.from_matrix(trajectory.rotations).as_quat() if len(trajectory) else np.zeros((0, 4))
    with Path(path).open("w") as handle:
        for t, T, q in zip(trajectory.t, trajectory.translations, quats):
            values = [t, *T, *q]
            handle.write(" ".join(repr(float(v)) for v in values) + "\n")


# ============================================================================
# CSV REPORTS
# ============================================================================

def write_rows(path: PathLike, rows: Iterable[dict], columns: List[str]) -> None:
    """Write dict rows as CSV with a fixed column order."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
