"""Trip ingestion and the per-zone daily demand series.

Raw trip CSVs become TripRecords, records aggregate into a gap-free
Z x D demand matrix (first-match zone boxes, UTC pickup dates), the
series splits chronologically and slices into sliding windows for the
sequence models. Demand counts trips by default; passengers is a config
choice.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

REQUIRED_FIELDS = ("pickup_time", "pickup_lat", "pickup_lon",
                   "dropoff_lat", "dropoff_lon", "passengers")


@dataclass(frozen=True)
class TripRecord:
    pickup_time: float  # UTC epoch seconds
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float
    passengers: int

    def pickup_date(self) -> dt.date:
        return dt.datetime.fromtimestamp(self.pickup_time, tz=dt.timezone.utc).date()


@dataclass(frozen=True)
class ZoneBox:
    zone_id: str
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, lat: float, lon: float) -> bool:
        return (self.lat_min <= lat <= self.lat_max
                and self.lon_min <= lon <= self.lon_max)


@dataclass
class ZoneMap:
    zones: list[ZoneBox]

    def __post_init__(self):
        if not self.zones:
            raise ValueError("zone map needs at least one zone")
        ids = [z.zone_id for z in self.zones]
        if len(set(ids)) != len(ids):
            raise ValueError("zone ids must be unique")

    @property
    def zone_ids(self) -> list[str]:
        return [z.zone_id for z in self.zones]

    def locate(self, lat: float, lon: float) -> str | None:
        """First matching box wins; boxes may overlap or leave gaps."""
        for z in self.zones:
            if z.contains(lat, lon):
                return z.zone_id
        return None

    @classmethod
    def parse(cls, text: str) -> "ZoneMap":
        """'id:lat_min,lat_max,lon_min,lon_max;id2:...'"""
        zones = []
        for part in text.strip().split(";"):
            if not part:
                continue
            zone_id, _, nums = part.partition(":")
            vals = [float(v) for v in nums.split(",")]
            if len(vals) != 4:
                raise ValueError(f"zone {zone_id!r} needs 4 numbers, got {len(vals)}")
            zones.append(ZoneBox(zone_id.strip(), *vals))
        return cls(zones)

    def spec(self) -> str:
        return ";".join(f"{z.zone_id}:{z.lat_min},{z.lat_max},{z.lon_min},{z.lon_max}"
                        for z in self.zones)


@dataclass
class IngestReport:
    total: int = 0
    accepted: int = 0
    rejected: int = 0
    reasons: dict = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {"total": self.total, "accepted": self.accepted,
                "rejected": self.rejected, "reasons": dict(sorted(self.reasons.items()))}


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    iso = text.replace("Z", "+00:00")
    parsed = dt.datetime.fromisoformat(iso)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=dt.timezone.utc)
    return parsed.timestamp()


def ingest_trips(path, schema: dict | None = None):
    """Parse a trip CSV into records plus a per-reason rejection report.

    `schema` maps required field names to the file's column names (field
    names themselves by default). Malformed rows are skipped and counted,
    never fatal; a missing column or unreadable file is fatal.
    """
    schema = dict(schema or {})
    for name in REQUIRED_FIELDS:
        schema.setdefault(name, name)
    report = IngestReport()
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is not None:
            missing = [schema[f] for f in REQUIRED_FIELDS
                       if schema[f] not in reader.fieldnames]
            if missing:
                raise ValueError(f"input is missing required columns: {missing}")
        for row in reader:
            report.total += 1
            try:
                ts = _parse_timestamp(row[schema["pickup_time"]])
            except (ValueError, TypeError, KeyError):
                report.reject("bad_timestamp")
                continue
            try:
                plat = float(row[schema["pickup_lat"]])
                plon = float(row[schema["pickup_lon"]])
                dlat = float(row[schema["dropoff_lat"]])
                dlon = float(row[schema["dropoff_lon"]])
            except (ValueError, TypeError, KeyError):
                report.reject("bad_coordinate")
                continue
            if not (-90.0 <= plat <= 90.0 and -90.0 <= dlat <= 90.0):
                report.reject("latitude_out_of_range")
                continue
            if not (-180.0 <= plon <= 180.0 and -180.0 <= dlon <= 180.0):
                report.reject("longitude_out_of_range")
                continue
            try:
                pax = int(row[schema["passengers"]])
            except (ValueError, TypeError, KeyError):
                report.reject("bad_passengers")
                continue
            if pax < 0:
                report.reject("negative_passengers")
                continue
            records.append(TripRecord(ts, plat, plon, dlat, dlon, pax))
            report.accepted += 1
    records.sort(key=lambda r: r.pickup_time)
    return records, report


@dataclass
class DemandSeries:
    """Gap-free per-zone daily demand: values[z, d] for days[d]."""

    days: list[dt.date]
    zone_ids: list[str]
    values: np.ndarray  # Z x D

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.validate()

    def validate(self) -> None:
        z, d = len(self.zone_ids), len(self.days)
        if self.values.shape != (z, d):
            raise ValueError(f"values shape {self.values.shape} != ({z}, {d})")
        if (self.values < 0).any():
            raise ValueError("demand must be nonnegative")
        for a, b in zip(self.days, self.days[1:]):
            if (b - a).days != 1:
                raise ValueError(f"index must be consecutive days; gap at {a} -> {b}")

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def n_zones(self) -> int:
        return len(self.zone_ids)

    def day_position(self, day: dt.date) -> int:
        if not self.days or not (self.days[0] <= day <= self.days[-1]):
            raise KeyError(f"{day} outside series range")
        return (day - self.days[0]).days

    def slice_days(self, start: int, stop: int) -> "DemandSeries":
        return DemandSeries(self.days[start:stop], list(self.zone_ids),
                            self.values[:, start:stop].copy())

    def concat(self, other: "DemandSeries") -> "DemandSeries":
        if other.zone_ids != self.zone_ids:
            raise ValueError("zone ids differ")
        if self.days and other.days and (other.days[0] - self.days[-1]).days != 1:
            raise ValueError("series are not contiguous")
        return DemandSeries(self.days + other.days, list(self.zone_ids),
                            np.hstack([self.values, other.values]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date"] + self.zone_ids)
            for i, day in enumerate(self.days):
                writer.writerow([day.isoformat()]
                                + [format(v, ".10g") for v in self.values[:, i]])

    @classmethod
    def from_csv(cls, path) -> "DemandSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            zone_ids = header[1:]
            days = []
            cols = []
            for row in reader:
                days.append(dt.date.fromisoformat(row[0]))
                cols.append([float(v) for v in row[1:]])
        values = np.array(cols, dtype=float).T if cols else np.zeros((len(zone_ids), 0))
        return cls(days, zone_ids, values)


@dataclass
class AggregationReport:
    matched: int = 0
    dropped_no_zone: int = 0
    zero_filled_days: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"matched": self.matched, "dropped_no_zone": self.dropped_no_zone,
                "zero_filled_days": [d.isoformat() for d in self.zero_filled_days]}


def aggregate_demand(trips, zones: ZoneMap, count: str = "trips"):
    """Count trips (or passengers) per zone per UTC pickup date.

    Trips matching no zone are dropped and counted; calendar gaps between
    the first and last matched day are zero-filled and flagged.
    """
    if count not in ("trips", "passengers"):
        raise ValueError("count must be 'trips' or 'passengers'")
    report = AggregationReport()
    zone_pos = {zid: i for i, zid in enumerate(zones.zone_ids)}
    counts: dict[tuple[int, dt.date], float] = {}
    seen_days: set[dt.date] = set()
    for trip in trips:
        zid = zones.locate(trip.pickup_lat, trip.pickup_lon)
        if zid is None:
            report.dropped_no_zone += 1
            continue
        report.matched += 1
        day = trip.pickup_date()
        seen_days.add(day)
        key = (zone_pos[zid], day)
        counts[key] = counts.get(key, 0.0) + (1.0 if count == "trips" else trip.passengers)
    if not seen_days:
        return (DemandSeries([], zones.zone_ids, np.zeros((len(zones.zones), 0))),
                report)
    first, last = min(seen_days), max(seen_days)
    n_days = (last - first).days + 1
    days = [first + dt.timedelta(days=i) for i in range(n_days)]
    values = np.zeros((len(zones.zones), n_days))
    for (zi, day), units in counts.items():
        values[zi, (day - first).days] = units
    report.zero_filled_days = [d for d in days if d not in seen_days]
    return DemandSeries(days, zones.zone_ids, values), report


def chronological_split(series: DemandSeries, train_end: dt.date,
                        test_end: dt.date):
    """Train covers days <= train_end, test covers (train_end, test_end]."""
    if train_end >= test_end:
        raise ValueError(f"train_end {train_end} must precede test_end {test_end}")
    train_days = [d for d in series.days if d <= train_end]
    test_days = [d for d in series.days if train_end < d <= test_end]
    if not train_days:
        raise ValueError(f"empty train partition: no days on or before {train_end}")
    if not test_days:
        raise ValueError(f"empty test partition: no days after {train_end} "
                         f"up to {test_end}")
    n_train = len(train_days)
    train = series.slice_days(0, n_train)
    test = series.slice_days(n_train, n_train + len(test_days))
    return train, test


@dataclass
class WindowSet:
    """Sliding (ws consecutive days -> next day) training pairs."""

    inputs: np.ndarray   # (count, ws, Z)
    targets: np.ndarray  # (count, Z)
    target_days: list | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def window_size(self) -> int:
        return self.inputs.shape[1]


def make_windows(series: DemandSeries, ws: int) -> WindowSet:
    """Exactly max(D - ws, 0) pairs; pair i inputs days [i, i+ws), target i+ws."""
    if ws < 1:
        raise ValueError("window size must be at least 1")
    d = series.n_days
    count = max(d - ws, 0)
    table = series.values.T  # D x Z
    inputs = np.zeros((count, ws, series.n_zones))
    targets = np.zeros((count, series.n_zones))
    for i in range(count):
        inputs[i] = table[i : i + ws]
        targets[i] = table[i + ws]
    days = [series.days[i + ws] for i in range(count)]
    return WindowSet(inputs=inputs, targets=targets, target_days=days)


@dataclass
class Standardizer:
    """Per-zone mean/std fitted on the training partition only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train: DemandSeries) -> "Standardizer":
        mean = train.values.mean(axis=1)
        std = np.maximum(train.values.std(axis=1), 1e-8)
        return cls(mean, std)

    @classmethod
    def identity(cls, n_zones: int) -> "Standardizer":
        return cls(np.zeros(n_zones), np.ones(n_zones))

    def transform(self, zone_last):
        """Standardize arrays whose last axis is the zone axis."""
        return (np.asarray(zone_last, dtype=float) - self.mean) / self.std

    def inverse(self, zone_last):
        return np.asarray(zone_last, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def save_ingest_reports(path, ingest: IngestReport,
                        aggregation: AggregationReport | None = None) -> None:
    doc = {"ingest": ingest.to_dict()}
    if aggregation is not None:
        doc["aggregation"] = aggregation.to_dict()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
