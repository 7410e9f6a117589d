"""Rolling out-of-sample evaluation and the side-by-side comparison report.

For each test day the forecaster sees only the trailing window of
realized demand, the chosen program (scenario-based or point-based) is
solved, and the committed plan is scored against that day's realized
demand. Day plans never see the day's own demand or anything after it.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import DemandSeries
from .relocation import (
    DayOutcome,
    RelocationInstance,
    deterministic_model,
    evaluate_decision,
    extract_plan,
    sample_scenarios,
    solve_relocation,
)
from .simplex import solve_lp

METRICS = ("revenue", "cost", "moving", "profit")


@dataclass
class EvaluationReport:
    method: str
    days: list
    outcomes: list[DayOutcome]
    skipped_days: list = field(default_factory=list)

    @property
    def day_count(self) -> int:
        return len(self.outcomes)

    def average(self, metric: str) -> float:
        if not self.outcomes:
            return float("nan")
        return float(np.mean([getattr(o, metric) for o in self.outcomes]))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "day_count": self.day_count,
            "averages": {m: self.average(m) for m in METRICS},
            "days": [d.isoformat() for d in self.days],
            "skipped_days": [d.isoformat() for d in self.skipped_days],
            "per_day": [o.to_dict() for o in self.outcomes],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EvaluationReport":
        import datetime as dt

        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            method=doc["method"],
            days=[dt.date.fromisoformat(d) for d in doc["days"]],
            outcomes=[DayOutcome(**o) for o in doc["per_day"]],
            skipped_days=[dt.date.fromisoformat(d) for d in doc["skipped_days"]],
        )

    def per_day_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "revenue", "cost", "moving", "lost_sales",
                             "profit"])
            for day, o in zip(self.days, self.outcomes):
                writer.writerow([day.isoformat(), o.revenue, o.cost, o.moving,
                                 o.lost_sales, o.profit])


@dataclass
class EvalSettings:
    window_size: int
    n_scenarios: int = 200
    seed: int = 0
    replan: bool = True   # re-forecast and re-plan each day; False = one plan
    threads: int = 1


def rolling_evaluate(forecaster, mode: str, history: DemandSeries,
                     test: DemandSeries, instance: RelocationInstance,
                     settings: EvalSettings) -> EvaluationReport:
    """Walk the test partition day by day with a frozen forecaster.

    `history` must end the day before `test` starts. In "stochastic"
    mode each day samples scenarios from the predicted mixtures and
    solves the scenario program; "deterministic" solves the single
    point-forecast program. Days without a full trailing window are
    skipped and reported.
    """
    if mode not in ("stochastic", "deterministic"):
        raise ValueError("mode must be stochastic or deterministic")
    if test.n_days == 0:
        raise ValueError("empty test partition")
    full = history.concat(test)
    ws = settings.window_size
    offset = history.n_days

    def plan_for(t):
        pos = offset + t
        if pos < ws:
            return None
        window = full.values[:, pos - ws : pos].T
        day = test.days[t]
        if mode == "stochastic":
            dists = forecaster.predict_distribution(window, day)
            scen = sample_scenarios(dists, settings.n_scenarios,
                                    seed=settings.seed + t)
            plan, _ = solve_relocation(instance, scen)
        else:
            point = np.maximum(forecaster.predict_point(window, day), 0.0)
            lp, index_map = deterministic_model(instance, point)
            res = solve_lp(lp)
            if res.status != "optimal":
                raise RuntimeError(f"day program not optimal: {res.status}")
            plan = extract_plan(res, index_map, instance.n_zones)
        return plan

    indices = list(range(test.n_days))
    if settings.replan:
        if settings.threads > 1:
            with ThreadPoolExecutor(max_workers=settings.threads) as pool:
                plans = list(pool.map(plan_for, indices))
        else:
            plans = [plan_for(t) for t in indices]
    else:
        first = plan_for(0)
        plans = [first] * test.n_days

    days, outcomes, skipped = [], [], []
    for t in indices:
        if plans[t] is None:
            skipped.append(test.days[t])
            continue
        outcomes.append(evaluate_decision(instance, plans[t], test.values[:, t]))
        days.append(test.days[t])
    return EvaluationReport(method=f"{mode}", days=days, outcomes=outcomes,
                            skipped_days=skipped)


@dataclass
class ComparisonReport:
    """Two evaluation reports plus per-metric differences.

    Percent differences follow the (A - B) / B convention, so a negative
    percentage reads "A is that much lower than B".
    """

    a: EvaluationReport
    b: EvaluationReport

    def difference(self, metric: str) -> float:
        return self.a.average(metric) - self.b.average(metric)

    def percent(self, metric: str) -> float | None:
        base = self.b.average(metric)
        if base == 0:
            return None
        return self.difference(metric) / base

    def phrase(self, metric: str) -> str:
        pct = self.percent(metric)
        if pct is None:
            return f"{metric}: baseline average is zero"
        word = "lower" if pct < 0 else "higher"
        return (f"{self.a.method} average {metric} is {abs(pct) * 100:.2f}% "
                f"{word} than {self.b.method}")

    def to_dict(self) -> dict:
        return {
            "a": {"method": self.a.method,
                  "averages": {m: self.a.average(m) for m in METRICS}},
            "b": {"method": self.b.method,
                  "averages": {m: self.b.average(m) for m in METRICS}},
            "difference": {m: self.difference(m) for m in METRICS},
            "percent_of_b": {m: self.percent(m) for m in METRICS},
            "phrases": {m: self.phrase(m) for m in METRICS},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_text(self) -> str:
        headers = ["", "Average Revenue", "Average Cost", "Average Moving",
                   "Average Profit"]
        rows = []
        for rep in (self.a, self.b):
            rows.append([rep.method] + [f"{rep.average(m):.4f}"
                                        for m in METRICS])
        pct_cells = []
        for m in METRICS:
            pct = self.percent(m)
            pct_cells.append("n/a" if pct is None else f"{pct * 100:+.2f}%")
        rows.append(["A vs B"] + pct_cells)
        widths = [max(len(headers[i]), *(len(r[i]) for r in rows))
                  for i in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


def compare(a: EvaluationReport, b: EvaluationReport) -> ComparisonReport:
    return ComparisonReport(a, b)
