"""Domain value types and the dataset file format.

Units are fixed throughout the package: millimetres, milliseconds,
kilohertz and newtons.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# TDOA entries below this are treated as exact zeros.
TDOA_ZERO_TOL = 1e-9


class DatasetError(ValueError):
    """Raised when a dataset file or container violates its schema."""


@dataclass(frozen=True)
class PlateGeometry:
    length_x: float
    length_y: float
    thickness: float

    def __post_init__(self):
        if min(self.length_x, self.length_y, self.thickness) <= 0:
            raise ValueError("plate dimensions must be strictly positive")

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.length_x and 0.0 <= y <= self.length_y


@dataclass(frozen=True)
class SensorArray:
    sensors: tuple
    ids: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.sensors, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("sensors must be a list of (x, y) pairs")
        if len(pts) < 3:
            raise ValueError("a sensor array needs at least 3 sensors")
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        d[np.diag_indices(len(pts))] = np.inf
        if d.min() <= 0:
            raise ValueError("two sensors are coincident")
        object.__setattr__(self, "sensors", tuple(tuple(map(float, p)) for p in pts))
        ids = tuple(self.ids) if self.ids else tuple(f"S{i + 1}" for i in range(len(pts)))
        if len(ids) != len(pts):
            raise ValueError("ids and sensors differ in length")
        object.__setattr__(self, "ids", tuple(str(i) for i in ids))

    def __len__(self):
        return len(self.sensors)

    @property
    def coordinates(self) -> np.ndarray:
        return np.asarray(self.sensors, dtype=float)

    def subset(self, indices: Sequence[int]) -> "SensorArray":
        """Return the array restricted to ``indices`` (0-based, order kept)."""
        return SensorArray(
            tuple(self.sensors[i] for i in indices), tuple(self.ids[i] for i in indices)
        )

    def check_inside(self, plate: PlateGeometry):
        for sid, (x, y) in zip(self.ids, self.sensors):
            if not plate.contains(x, y):
                raise ValueError(f"sensor {sid} at ({x}, {y}) lies outside the plate")


@dataclass(frozen=True)
class ImpactLocation:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class TdoaVector:
    """Arrival-time differences relative to the first-hit (anchor) sensor.

    Build instances from raw arrival times with :meth:`from_arrivals`; the
    constructor validates an already anchored vector.
    """

    values: tuple
    anchor_index: int
    frequency: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("TDOA values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(v)):
            raise ValueError("TDOA values must be finite")
        # only round-off is snapped; small positive values survive so scaling keeps order
        v = np.where((v < 0) & (v > -TDOA_ZERO_TOL), 0.0, v)
        if np.any(v < 0):
            raise ValueError("TDOA values must be non-negative")
        if not 0 <= self.anchor_index < v.size:
            raise ValueError("anchor_index out of range")
        if v[self.anchor_index] < TDOA_ZERO_TOL:
            v[self.anchor_index] = 0.0
        if v[self.anchor_index] != 0.0:
            raise ValueError("TDOA value at the anchor sensor must be zero")
        object.__setattr__(self, "values", tuple(float(a) for a in v))
        object.__setattr__(self, "anchor_index", int(self.anchor_index))
        object.__setattr__(self, "frequency", float(self.frequency))

    @classmethod
    def from_arrivals(cls, arrivals, frequency: float) -> "TdoaVector":
        """Anchor raw arrival times; ties resolve to the lowest sensor index."""
        t = np.asarray(arrivals, dtype=float)
        anchor = int(np.argmin(t))
        dt = t - t[anchor]
        dt[dt < TDOA_ZERO_TOL] = 0.0
        return cls(tuple(dt), anchor, frequency)

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def subset(self, indices: Sequence[int]) -> "TdoaVector":
        """Restrict to a sensor subset and re-anchor on the remaining sensors."""
        return TdoaVector.from_arrivals(self.as_array()[list(indices)], self.frequency)


@dataclass(frozen=True)
class ImpactRecord:
    location: ImpactLocation
    tdoa: TdoaVector
    condition_tag: str = "REF"
    repetition: int = 1
    impact_id: str = ""


@dataclass(frozen=True)
class Dataset:
    geometry: PlateGeometry
    array: SensorArray
    records: tuple
    provenance: str = ""

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise DatasetError("empty dataset")
        n = len(self.array)
        for i, r in enumerate(records):
            if len(r.tdoa) != n:
                raise DatasetError(
                    f"record {i} ({r.impact_id}) has {len(r.tdoa)} TDOA values, expected {n}"
                )
        object.__setattr__(self, "records", records)

    def __len__(self):
        return len(self.records)

    @property
    def X(self) -> np.ndarray:
        """TDOA matrix, one row per record (ms)."""
        return np.array([r.tdoa.values for r in self.records], dtype=float)

    @property
    def Y(self) -> np.ndarray:
        """Impact coordinates, one row per record (mm)."""
        return np.array([(r.location.x, r.location.y) for r in self.records], dtype=float)

    @property
    def impact_ids(self) -> list:
        return [r.impact_id for r in self.records]

    def select(self, indices: Sequence[int], provenance: str | None = None) -> "Dataset":
        return Dataset(
            self.geometry,
            self.array,
            tuple(self.records[i] for i in indices),
            self.provenance if provenance is None else provenance,
        )

    def with_sensors(self, indices: Sequence[int]) -> "Dataset":
        """Keep only the listed sensors (0-based); TDOAs are re-anchored."""
        indices = list(indices)
        recs = tuple(
            ImpactRecord(r.location, r.tdoa.subset(indices), r.condition_tag, r.repetition, r.impact_id)
            for r in self.records
        )
        return Dataset(self.geometry, self.array.subset(indices), recs, self.provenance)

    def average_repetitions(self) -> "Dataset":
        """Collapse repeated impacts at one location into their mean TDOA."""
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r.condition_tag, r.location), []).append(r)
        recs = []
        for (tag, loc), rs in groups.items():
            mean = np.mean([r.tdoa.as_array() for r in rs], axis=0)
            tdoa = TdoaVector.from_arrivals(mean, rs[0].tdoa.frequency)
            recs.append(ImpactRecord(loc, tdoa, tag, 0, rs[0].impact_id))
        return Dataset(self.geometry, self.array, tuple(recs), self.provenance)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_dataset(d: Dataset, path) -> None:
    """Write ``d`` as CSV plus a ``<name>.meta.json`` sidecar."""
    if not isinstance(d, Dataset) or len(d.records) == 0:
        raise DatasetError("refusing to write an empty dataset")
    path = Path(path)
    n = len(d.array)
    header = ["impact_id", "condition", "repetition", "x_mm", "y_mm", "frequency_khz", "anchor_index"]
    header += [f"tdoa_{j + 1}_ms" for j in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, r in enumerate(d.records):
            w.writerow(
                [r.impact_id or str(k + 1), r.condition_tag, r.repetition,
                 repr(r.location.x), repr(r.location.y), repr(r.tdoa.frequency),
                 r.tdoa.anchor_index] + [repr(v) for v in r.tdoa.values]
            )
    meta = {
        "plate": {"lx": d.geometry.length_x, "ly": d.geometry.length_y, "h": d.geometry.thickness},
        "sensors": [list(s) for s in d.array.sensors],
        "ids": list(d.array.ids),
        "provenance": d.provenance,
    }
    meta_path(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_dataset(path) -> Dataset:
    """Read a dataset CSV and its sidecar, validating every row."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    mp = meta_path(path)
    if not mp.exists():
        raise DatasetError(f"missing metadata sidecar: {mp}")
    meta = json.loads(mp.read_text(encoding="utf-8"))
    try:
        plate = meta["plate"]
        geometry = PlateGeometry(float(plate["lx"]), float(plate["ly"]), float(plate["h"]))
        array = SensorArray(tuple(map(tuple, meta["sensors"])), tuple(meta.get("ids") or ()))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"invalid metadata in {mp}: {exc}") from exc

    n = len(array)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError("empty dataset")
        n_tdoa = len(header) - 7
        if header[:7] != ["impact_id", "condition", "repetition", "x_mm", "y_mm",
                          "frequency_khz", "anchor_index"] or n_tdoa < 1:
            raise DatasetError("row 1: unexpected header")
        if n_tdoa != n:
            raise DatasetError(f"row 1: header has {n_tdoa} TDOA columns but {n} sensors in metadata")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
            try:
                loc = ImpactLocation(float(row[3]), float(row[4]))
                freq = float(row[5])
                anchor = int(row[6])
                vals = [float(v) for v in row[7:]]
            except ValueError as exc:
                raise DatasetError(f"row {rowno}: malformed value ({exc})") from exc
            if any(v < 0 for v in vals):
                raise DatasetError(f"row {rowno}: negative TDOA value")
            try:
                tdoa = TdoaVector(tuple(vals), anchor, freq)
            except ValueError as exc:
                raise DatasetError(f"row {rowno}: {exc}") from exc
            records.append(ImpactRecord(loc, tdoa, row[1], int(row[2]), row[0]))
    if not records:
        raise DatasetError("empty dataset")
    return Dataset(geometry, array, tuple(records), meta.get("provenance", ""))


# Layout used for the desk-scale experiments: a 290 x 200 x 4 mm plate,
# four corner sensors on a 200 x 120 mm rectangle plus two irregular ones,
# and a 7 x 5 impact grid at 20 mm pitch centred in the rectangle.
DEFAULT_PLATE = PlateGeometry(290.0, 200.0, 4.0)
DEFAULT_SENSORS = ((45.0, 40.0), (245.0, 40.0), (245.0, 160.0), (45.0, 160.0),
                 (115.0, 40.0), (185.0, 160.0))
DEFAULT_GRID = dict(nx=7, ny=5, spacing=20.0, origin=(85.0, 60.0))


def default_array() -> SensorArray:
    return SensorArray(DEFAULT_SENSORS, tuple(f"S{i + 1}" for i in range(len(DEFAULT_SENSORS))))


def grid_locations(nx: int = 7, ny: int = 5, spacing: float = 20.0,
                   origin=(85.0, 60.0)) -> list:
    """Row-major impact grid, numbered from the minimum-y, minimum-x corner."""
    x0, y0 = origin
    return [ImpactLocation(x0 + i * spacing, y0 + j * spacing)
            for j in range(ny) for i in range(nx)]
