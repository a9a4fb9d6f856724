"""Point cloud file formats.

CSV: one ``x,y,z`` line per point, optional header. Binary: an 8-byte
little-endian unsigned count followed by count little-endian f64 triples.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud, as_points

_COUNT = struct.Struct("<Q")


def load_cloud_csv(path, frame: str = "file") -> PointCloud:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ValueError(f"{path}:{line_no + 1}: expected 3 comma-separated values")
            try:
                rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError:
                if line_no == 0:
                    continue  # header line
                raise
    return PointCloud(np.asarray(rows, dtype=float).reshape(-1, 3), frame)


def save_cloud_csv(cloud: PointCloud | np.ndarray, path, header: bool = True) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write("x,y,z\n")
        for x, y, z in pts:
            fh.write(f"{x:.17g},{y:.17g},{z:.17g}\n")


def load_cloud_bin(path, frame: str = "file") -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < _COUNT.size:
        raise ValueError(f"{path}: truncated count prefix")
    (n,) = _COUNT.unpack_from(data, 0)
    expected = _COUNT.size + n * 24
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {n} points, got {len(data)}")
    pts = np.frombuffer(data, dtype="<f8", count=n * 3, offset=_COUNT.size).reshape(-1, 3)
    return PointCloud(pts.astype(float), frame)


def save_cloud_bin(cloud: PointCloud | np.ndarray, path) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    with open(path, "wb") as fh:
        fh.write(_COUNT.pack(pts.shape[0]))
        fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
