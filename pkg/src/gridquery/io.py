"""Point cloud file ingestion and emission.

Two formats:

* ASCII: one point per line, whitespace-separated ``x y z`` optionally
  followed by feature values; lines starting with ``#`` are ignored.
* Binary ("PCF1"): magic bytes ``PCF1``, then little-endian u32 point
  count, u32 feature dimension, then N x (3 + feature_dim) float32.

Raw points always load with coverage weight 1.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, TextIO

import numpy as np

from .cloud import PointCloud

__all__ = [
    "PointFileError",
    "load_cloud",
    "load_cloud_ascii",
    "load_cloud_binary",
    "save_cloud_ascii",
    "save_cloud_binary",
]

PCF_MAGIC = b"PCF1"


class PointFileError(ValueError):
    """Malformed point file; carries the offending 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def load_cloud_ascii(source: str | Path | TextIO) -> PointCloud:
    """Parse the ASCII point format; reports the first bad line by number."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_cloud_ascii(fh)

    positions: list[tuple[float, float, float]] = []
    feature_rows: list[list[float]] = []
    feature_dim: int | None = None
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) < 3:
            raise PointFileError(f"expected at least 3 coordinates, got {len(tokens)}", lineno)
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            bad = next(t for t in tokens if not _is_float(t))
            raise PointFileError(f"non-numeric token {bad!r}", lineno) from None
        positions.append((values[0], values[1], values[2]))
        feats = values[3:]
        if feature_dim is None:
            feature_dim = len(feats)
        elif len(feats) != feature_dim:
            raise PointFileError(
                f"inconsistent feature dims: expected {feature_dim}, got {len(feats)}", lineno
            )
        feature_rows.append(feats)

    if not positions:
        raise PointFileError("file contains no points")
    pos = np.asarray(positions, dtype=np.float64)
    feats = None
    if feature_dim:
        feats = np.asarray(feature_rows, dtype=np.float64)
    return PointCloud(pos, features=feats)


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def save_cloud_ascii(cloud: PointCloud, sink: str | Path | TextIO) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            save_cloud_ascii(cloud, fh)
        return
    for i in range(len(cloud)):
        row = [repr(float(v)) for v in cloud.positions[i]]
        if cloud.features is not None:
            row.extend(repr(float(v)) for v in cloud.features[i])
        sink.write(" ".join(row) + "\n")


def load_cloud_binary(source: str | Path | BinaryIO) -> PointCloud:
    """Parse the PCF1 binary format."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return load_cloud_binary(fh)

    magic = source.read(4)
    if magic != PCF_MAGIC:
        raise PointFileError(f"bad magic {magic!r}, expected {PCF_MAGIC!r}")
    header = source.read(8)
    if len(header) != 8:
        raise PointFileError("truncated header")
    n, feature_dim = struct.unpack("<II", header)
    if n == 0:
        raise PointFileError("file contains no points")
    width = 3 + feature_dim
    payload = source.read(4 * n * width)
    if len(payload) != 4 * n * width:
        raise PointFileError(f"truncated payload: expected {n} points of width {width}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n, width).astype(np.float64)
    feats = data[:, 3:] if feature_dim else None
    return PointCloud(data[:, :3], features=feats)


def save_cloud_binary(cloud: PointCloud, sink: str | Path | BinaryIO) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as fh:
            save_cloud_binary(cloud, fh)
        return
    feature_dim = 0 if cloud.features is None else cloud.features.shape[1]
    sink.write(PCF_MAGIC)
    sink.write(struct.pack("<II", len(cloud), feature_dim))
    if cloud.features is None:
        data = cloud.positions
    else:
        data = np.hstack([cloud.positions, cloud.features])
    sink.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_cloud(path: str | Path) -> PointCloud:
    """Load a cloud, sniffing the binary magic and falling back to ASCII."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == PCF_MAGIC:
        return load_cloud_binary(path)
    return load_cloud_ascii(path)
