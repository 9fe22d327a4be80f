"""Snapshot pair containers and their CSV/JSON serialisation.

A snapshot dataset is a pair of equal-length vectors (x_j, y_j) where y_j is
the time-t image of x_j, possibly concatenated over several independent
paths. The on-disk format is a CSV with header ``path_id,index,x,y`` plus a
JSON metadata sidecar.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["SnapshotData", "SnapshotCsvError", "write_snapshot_csv", "read_snapshot_csv"]


class SnapshotCsvError(ValueError):
    """Malformed snapshot CSV; message carries the offending line number."""


@dataclass
class SnapshotData:
    """Paired input/output samples with the snapshot spacing.

    ``path_boundaries`` holds the start index of each path inside the
    concatenated arrays; a single path is ``[0]``.
    """

    x: np.ndarray
    y: np.ndarray
    t_step: float
    path_boundaries: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have equal length")
        if self.x.size < 1:
            raise ValueError("need at least one snapshot pair")
        if self.t_step <= 0:
            raise ValueError("t_step must be positive")
        if self.path_boundaries is None:
            self.path_boundaries = np.array([0], dtype=int)
        else:
            self.path_boundaries = np.asarray(self.path_boundaries, dtype=int)

    @property
    def n_pairs(self) -> int:
        return self.x.size

    @property
    def n_paths(self) -> int:
        return len(self.path_boundaries)

    def path_slice(self, k: int) -> slice:
        starts = self.path_boundaries
        lo = starts[k]
        hi = starts[k + 1] if k + 1 < len(starts) else self.x.size
        return slice(lo, hi)

    def path(self, k: int) -> "SnapshotData":
        """Single-path view (copy) of path k."""
        sl = self.path_slice(k)
        return SnapshotData(
            x=self.x[sl].copy(),
            y=self.y[sl].copy(),
            t_step=self.t_step,
            metadata=dict(self.metadata, path_id=int(k)),
        )

    def per_path(self):
        for k in range(self.n_paths):
            yield self.path(k)

    def prefix(self, n: int) -> "SnapshotData":
        """First n pairs of a single-path dataset."""
        if self.n_paths != 1:
            raise ValueError("prefix() is defined for single-path data only")
        if not 1 <= n <= self.n_pairs:
            raise ValueError(f"prefix length {n} outside [1, {self.n_pairs}]")
        return SnapshotData(
            x=self.x[:n].copy(), y=self.y[:n].copy(), t_step=self.t_step,
            metadata=dict(self.metadata),
        )


def _sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".meta.json")


def write_snapshot_csv(data: SnapshotData, csv_path) -> None:
    """Write ``path_id,index,x,y`` rows plus the JSON metadata sidecar.

    Floats are written with repr so that reading the file back is bit-exact.
    """
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "index", "x", "y"])
        for k in range(data.n_paths):
            sl = data.path_slice(k)
            for i, (xv, yv) in enumerate(zip(data.x[sl], data.y[sl])):
                writer.writerow([k, i, repr(float(xv)), repr(float(yv))])
    meta = {"t_step": data.t_step, "n_paths": data.n_paths}
    meta.update(data.metadata)
    with open(_sidecar_path(csv_path), "w") as fh:
        json.dump(meta, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)!r}")


def read_snapshot_csv(csv_path, t_step: float | None = None) -> SnapshotData:
    """Read a snapshot CSV (and its sidecar, when present).

    ``t_step`` overrides the sidecar value; one of the two must be available.
    Raises :class:`SnapshotCsvError` with a line number on malformed input.
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileNotFoundError(f"snapshot CSV not found: {csv_path}")
    meta = {}
    sidecar = _sidecar_path(csv_path)
    if sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
    if t_step is None:
        t_step = meta.get("t_step")
    if t_step is None:
        raise ValueError(f"t_step not given and no sidecar found at {sidecar}")

    xs, ys, pids = [], [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path_id", "index", "x", "y"]:
            raise SnapshotCsvError(f"{csv_path}:1: expected header 'path_id,index,x,y'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SnapshotCsvError(f"{csv_path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                pids.append(int(row[0]))
                xs.append(float(row[2]))
                ys.append(float(row[3]))
            except ValueError as exc:
                raise SnapshotCsvError(f"{csv_path}:{lineno}: {exc}") from None
    if not xs:
        raise SnapshotCsvError(f"{csv_path}: no data rows")

    pids = np.asarray(pids)
    # paths must be stored as contiguous blocks
    change = np.flatnonzero(np.diff(pids) != 0) + 1
    boundaries = np.concatenate([[0], change])
    meta.pop("t_step", None)
    meta.pop("n_paths", None)
    return SnapshotData(
        x=np.asarray(xs), y=np.asarray(ys), t_step=float(t_step),
        path_boundaries=boundaries, metadata=meta,
    )
