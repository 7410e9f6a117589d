"""Bundled synthetic benchmark: regime-switching bimodal daily demand.

A hidden two-state Markov regime flips which zone group is hot each day,
so the one-step-ahead predictive distribution is a two-mode mixture
(stay probability on the current mode, switch probability on the
other). The generator emits either a demand series directly or a raw
trip CSV whose aggregation reproduces that series, letting the whole
pipeline run without external data.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .data import DemandSeries, ZoneBox, ZoneMap


def default_zone_map(n_zones: int = 2) -> ZoneMap:
    """Adjacent latitude bands over a shared longitude strip."""
    zones = []
    for i in range(n_zones):
        lat0 = 40.70 + 0.05 * i
        zones.append(ZoneBox(chr(ord("A") + i), lat0, lat0 + 0.05, -74.00, -73.95))
    return ZoneMap(zones)


@dataclass
class SyntheticConfig:
    n_zones: int = 2
    n_days: int = 691
    start_day: dt.date = dt.date(2017, 1, 1)
    seed: int = 7
    stay_prob: float = 0.88       # regime persistence
    mean_high: float = 80.0
    mean_low: float = 20.0
    noise_sd: float = 8.0
    max_passengers: int = 4

    def validate(self) -> None:
        if self.n_zones < 1 or self.n_days < 1:
            raise ValueError("need at least one zone and one day")
        if not 0.0 < self.stay_prob < 1.0:
            raise ValueError("stay_prob must be in (0, 1)")
        if self.mean_low < 0 or self.mean_high < self.mean_low:
            raise ValueError("need 0 <= mean_low <= mean_high")


def generate_demand(cfg: SyntheticConfig) -> tuple[DemandSeries, np.ndarray]:
    """Integer daily demand per zone plus the hidden regime path.

    In regime 0 even zones are hot (mean_high) and odd zones cold; regime
    1 mirrors it. Gaussian noise, clipped at zero, rounded to counts.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    regimes = np.zeros(cfg.n_days, dtype=int)
    state = int(rng.integers(0, 2))
    for t in range(cfg.n_days):
        regimes[t] = state
        if rng.random() > cfg.stay_prob:
            state = 1 - state
    values = np.zeros((cfg.n_zones, cfg.n_days))
    for z in range(cfg.n_zones):
        hot_in_regime0 = z % 2 == 0
        hot = (regimes == 0) if hot_in_regime0 else (regimes == 1)
        means = np.where(hot, cfg.mean_high, cfg.mean_low)
        draws = rng.normal(means, cfg.noise_sd)
        values[z] = np.round(np.maximum(draws, 0.0))
    days = [cfg.start_day + dt.timedelta(days=i) for i in range(cfg.n_days)]
    series = DemandSeries(days, default_zone_map(cfg.n_zones).zone_ids, values)
    return series, regimes


def write_trips_csv(path, series: DemandSeries, zones: ZoneMap, seed: int,
                    max_passengers: int = 4) -> int:
    """Expand a demand series into one pickup row per demand unit.

    Pickup coordinates are uniform inside the zone box and timestamps
    uniform within the UTC day, so aggregating the file reproduces the
    series exactly. Returns the row count.
    """
    rng = np.random.default_rng(seed)
    boxes = {z.zone_id: z for z in zones.zones}
    n_rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pickup_time", "pickup_lat", "pickup_lon",
                         "dropoff_lat", "dropoff_lon", "passengers"])
        for d, day in enumerate(series.days):
            day_start = dt.datetime(day.year, day.month, day.day,
                                    tzinfo=dt.timezone.utc).timestamp()
            for zi, zid in enumerate(series.zone_ids):
                box = boxes[zid]
                count = int(round(series.values[zi, d]))
                for _ in range(count):
                    ts = day_start + float(rng.uniform(0.0, 86399.0))
                    plat = float(rng.uniform(box.lat_min, box.lat_max))
                    plon = float(rng.uniform(box.lon_min, box.lon_max))
                    dlat = float(rng.uniform(40.70, 40.80))
                    dlon = float(rng.uniform(-74.00, -73.95))
                    pax = int(rng.integers(1, max_passengers + 1))
                    writer.writerow([f"{ts:.3f}", f"{plat:.6f}", f"{plon:.6f}",
                                     f"{dlat:.6f}", f"{dlon:.6f}", pax])
                    n_rows += 1
    return n_rows


def ideal_predictive_mixture(cfg: SyntheticConfig, current_regime: int, zone: int):
    """The true one-step-ahead mixture for a zone, given today's regime.

    Reference for diagnostics: weights (stay, switch) over the hot/cold
    means. The trained mixture head should approach this.
    """
    hot_now = (zone % 2 == 0) == (current_regime == 0)
    mean_now = cfg.mean_high if hot_now else cfg.mean_low
    mean_other = cfg.mean_low if hot_now else cfg.mean_high
    return ((cfg.stay_prob, mean_now, cfg.noise_sd),
            (1.0 - cfg.stay_prob, mean_other, cfg.noise_sd))
