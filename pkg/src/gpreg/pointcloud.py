"""Point-cloud containers and plain-text ``x y z`` I/O."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, EmptyInputError, InputOutputError, ParseError

_SPLIT = re.compile(r"[\s,]+")


class Point3(NamedTuple):
    s_x: float
    s_y: float
    y: float


@dataclass(frozen=True)
class BBox:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigError(f"degenerate bounding box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)])

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return (
            (xy[:, 0] >= self.x_min)
            & (xy[:, 0] <= self.x_max)
            & (xy[:, 1] >= self.y_min)
            & (xy[:, 1] <= self.y_max)
        )

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x_min, other.x_min),
            max(self.x_max, other.x_max),
            min(self.y_min, other.y_min),
            max(self.y_max, other.y_max),
        )


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered, immutable set of 3-D observations.

    Row ``j`` of :attr:`xyz` is point ``j``; the index is a persistent
    identity used by truth records, subsampling and registration output.
    """

    xyz: np.ndarray
    role: str = "fixed"

    def __post_init__(self):
        arr = np.array(self.xyz, dtype=np.float64, copy=True)
        if arr.ndim == 1 and arr.size == 3:
            arr = arr.reshape(1, 3)
        if arr.size == 0:
            arr = arr.reshape(0, 3)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ConfigError(f"expected an (n, 3) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("point coordinates must be finite")
        if self.role not in ("fixed", "moving"):
            raise ConfigError(f"role must be 'fixed' or 'moving', not {self.role!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "xyz", arr)

    @classmethod
    def from_arrays(cls, xy, z, role="fixed") -> "PointCloud":
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        return cls(np.column_stack([xy, z]), role=role)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def __getitem__(self, j) -> Point3:
        return Point3(*map(float, self.xyz[j]))

    def __iter__(self):
        for row in self.xyz:
            yield Point3(*map(float, row))

    @property
    def xy(self) -> np.ndarray:
        return self.xyz[:, :2]

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]

    @property
    def points(self) -> list[Point3]:
        return list(self)

    def take(self, indices) -> "PointCloud":
        return PointCloud(self.xyz[np.asarray(indices, dtype=np.intp)], role=self.role)

    def with_role(self, role: str) -> "PointCloud":
        return PointCloud(self.xyz, role=role)

    def crop(self, box: BBox) -> "PointCloud":
        return self.take(np.flatnonzero(box.contains(self.xy)))


def bbox(cloud: PointCloud) -> BBox:
    """Tight planar bounding box. Raises for empty or single-extent clouds."""
    if len(cloud) == 0:
        raise EmptyInputError("bounding box of an empty cloud")
    lo = cloud.xy.min(axis=0)
    hi = cloud.xy.max(axis=0)
    return BBox(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def read_cloud(path, role: str = "fixed") -> PointCloud:
    """Read an ``x y z`` text file (whitespace or comma separated, ``#`` comments)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        parts = [p for p in _SPLIT.split(stripped) if p]
        if len(parts) != 3:
            raise ParseError(path, lineno, line)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(path, lineno, line) from None
    if not rows:
        raise EmptyInputError(f"{path} contains no points")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        raise ParseError(path, 0, "non-finite value")
    return PointCloud(arr, role=role)


def write_cloud(cloud: PointCloud, path) -> None:
    """Write a cloud as ``x y z`` lines; ``repr`` formatting makes the round trip exact."""
    path = Path(path)
    lines = [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.xyz.tolist()]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc
