"""Stylized single-period fleet relocation under demand uncertainty.

First stage moves vehicles between zones at a per-vehicle cost before
demand realizes; second stage serves realized demand up to the post-move
stock, earning a rental price per served unit and paying a penalty per
unmet unit. The scenario program is the deterministic equivalent over N
equally weighted Monte Carlo demand draws; the point-forecast baseline
is the same model with a single scenario.

This model is a fully specified stand-in, not a reimplementation of any
proprietary car-sharing formulation; parameters (stock, move costs,
price, penalty) define the whole economics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mdn import GmmParams
from .simplex import LinearProgram, SolveResult, solve_lp


@dataclass
class ScenarioSet:
    """N demand vectors with uniform probability 1/N."""

    demand: np.ndarray  # N x Z, nonnegative
    seed: int | None = None

    def __post_init__(self):
        self.demand = np.atleast_2d(np.asarray(self.demand, dtype=float))
        if (self.demand < 0).any():
            raise ValueError("scenario demand must be nonnegative")

    @property
    def n_scenarios(self) -> int:
        return self.demand.shape[0]

    @property
    def n_zones(self) -> int:
        return self.demand.shape[1]

    @property
    def probability(self) -> float:
        return 1.0 / self.n_scenarios


@dataclass
class RelocationInstance:
    stock: np.ndarray      # vehicles available per zone at day start
    move_cost: np.ndarray  # Z x Z, zero diagonal
    price: float           # revenue per served demand unit
    penalty: float         # cost per unmet demand unit

    def __post_init__(self):
        self.stock = np.asarray(self.stock, dtype=float)
        self.move_cost = np.asarray(self.move_cost, dtype=float)
        z = self.stock.size
        if self.move_cost.shape != (z, z):
            raise ValueError("move_cost must be Z x Z")
        if (np.abs(np.diag(self.move_cost)) > 1e-12).any():
            raise ValueError("move_cost diagonal must be zero")
        if (self.move_cost < 0).any() or (self.stock < 0).any():
            raise ValueError("negative stock or move cost")
        if self.price < 0 or self.penalty < 0:
            raise ValueError("price and penalty must be nonnegative")

    @property
    def n_zones(self) -> int:
        return self.stock.size

    @property
    def fleet_size(self) -> float:
        return float(self.stock.sum())

    def to_dict(self) -> dict:
        return {"stock": self.stock.tolist(), "move_cost": self.move_cost.tolist(),
                "price": self.price, "penalty": self.penalty}

    @classmethod
    def from_dict(cls, d: dict) -> "RelocationInstance":
        return cls(np.array(d["stock"]), np.array(d["move_cost"]),
                   float(d["price"]), float(d["penalty"]))


@dataclass
class PlanDecision:
    """First-stage relocation flows, committed before demand realizes."""

    flows: np.ndarray  # Z x Z, flows[i, j] vehicles moved i -> j

    def __post_init__(self):
        self.flows = np.asarray(self.flows, dtype=float)

    def post_stock(self, stock) -> np.ndarray:
        out = self.flows.sum(axis=1)
        inflow = self.flows.sum(axis=0)
        return np.asarray(stock, dtype=float) - out + inflow

    @property
    def moving(self) -> float:
        off = self.flows.copy()
        np.fill_diagonal(off, 0.0)
        return float(off.sum())

    def to_dict(self) -> dict:
        return {"flows": self.flows.tolist()}


@dataclass
class DayOutcome:
    revenue: float
    cost: float
    moving: float
    lost_sales: float

    @property
    def profit(self) -> float:
        return self.revenue - self.cost

    def to_dict(self) -> dict:
        return {"revenue": self.revenue, "cost": self.cost,
                "moving": self.moving, "lost_sales": self.lost_sales}


def sample_scenarios(forecasts, n: int, seed: int | None) -> ScenarioSet:
    """Draw N demand vectors from per-zone mixtures.

    Per zone: pick a component by its weight, then draw a normal variate
    from it; negative draws clip to zero since demand is a count.
    Deterministic for a fixed (forecasts, n, seed).
    """
    if n < 1:
        raise ValueError("need at least one scenario")
    rng = np.random.default_rng(seed)
    cols = []
    for params in forecasts:
        params.validate(sigma_floor=1e-300)
        comp = rng.choice(params.n_components, size=n, p=params.weights)
        draws = rng.normal(params.means[comp], params.stds[comp])
        cols.append(np.maximum(draws, 0.0))
    return ScenarioSet(np.column_stack(cols), seed=seed)


def build_two_stage(instance: RelocationInstance, scenarios: ScenarioSet):
    """Deterministic equivalent of the two-stage relocation program.

    maximize  -sum_ij c_ij r_ij
              + (1/N) sum_w sum_z [p y_wz - penalty (d_wz - y_wz)]
    s.t.      post-move stock s'_z = s_z - sum_j r_zj + sum_i r_iz >= 0
              y_wz <= s'_z, y_wz <= d_wz, r >= 0, y >= 0

    Variables: Z^2 relocation flows then N*Z served-demand recourse
    variables. Returns (LinearProgram, index map naming every variable).
    The constant -penalty * mean total demand lives in lp.offset.
    """
    if scenarios.n_zones != instance.n_zones:
        raise ValueError("zone count mismatch between instance and scenarios")
    z = instance.n_zones
    n = scenarios.n_scenarios
    d = scenarios.demand
    nr = z * z
    nvar = nr + n * z

    obj = np.zeros(nvar)
    obj[:nr] = -instance.move_cost.ravel()
    obj[nr:] = (instance.price + instance.penalty) / n
    offset = -instance.penalty * float(d.sum()) / n

    names = [f"r[{i}->{j}]" for i in range(z) for j in range(z)]
    names += [f"y[s{w},z{zz}]" for w in range(n) for zz in range(z)]
    index_map = {"r": {(i, j): i * z + j for i in range(z) for j in range(z)},
                 "y": {(w, zz): nr + w * z + zz for w in range(n) for zz in range(z)}}

    net_out = np.zeros((z, nvar))  # sum_j r_zj - sum_i r_iz per zone
    for zz in range(z):
        for j in range(z):
            net_out[zz, zz * z + j] += 1.0
            net_out[zz, j * z + zz] -= 1.0

    n_rows = z + 2 * n * z
    rows = np.zeros((n_rows, nvar))
    rhs = np.zeros(n_rows)
    senses = ["<="] * n_rows
    rows[:z] = net_out                      # s'_z >= 0
    rhs[:z] = instance.stock
    r0 = z
    for w in range(n):                      # y_wz <= s'_z
        blk = r0 + w * z
        rows[blk : blk + z] = net_out
        for zz in range(z):
            rows[blk + zz, nr + w * z + zz] = 1.0
        rhs[blk : blk + z] = instance.stock
    r1 = z + n * z
    for w in range(n):                      # y_wz <= d_wz
        for zz in range(z):
            rows[r1 + w * z + zz, nr + w * z + zz] = 1.0
            rhs[r1 + w * z + zz] = d[w, zz]

    lp = LinearProgram(objective=obj, rows=rows, senses=senses, rhs=rhs,
                       offset=offset, names=names)
    return lp, index_map


def deterministic_model(instance: RelocationInstance, point_demand):
    """Single-scenario program for a point forecast."""
    point = np.maximum(np.asarray(point_demand, dtype=float), 0.0)
    return build_two_stage(instance, ScenarioSet(point[None, :]))


def extract_plan(lp_result: SolveResult, index_map, n_zones: int) -> PlanDecision:
    """Read first-stage flows out of a solved program; diagonal self-moves
    are no-ops and are zeroed."""
    flows = np.zeros((n_zones, n_zones))
    for (i, j), idx in index_map["r"].items():
        flows[i, j] = max(lp_result.x[idx], 0.0)
    np.fill_diagonal(flows, 0.0)
    return PlanDecision(flows)


def solve_relocation(instance: RelocationInstance, scenarios: ScenarioSet,
                     maxiter: int = 100_000):
    """Build, solve, and extract the first-stage plan."""
    lp, index_map = build_two_stage(instance, scenarios)
    res = solve_lp(lp, maxiter=maxiter)
    if res.status != "optimal":
        raise RuntimeError(f"relocation program not solved to optimality: {res.status}")
    return extract_plan(res, index_map, instance.n_zones), res


def evaluate_decision(instance: RelocationInstance, plan: PlanDecision,
                      realized) -> DayOutcome:
    """Account one day: serve realized demand up to post-move stock."""
    realized = np.asarray(realized, dtype=float)
    post = plan.post_stock(instance.stock)
    served = np.minimum(post, realized)
    lost = float(np.maximum(realized - post, 0.0).sum())
    move_cost = float((instance.move_cost * plan.flows).sum())
    return DayOutcome(
        revenue=instance.price * float(served.sum()),
        cost=move_cost + instance.penalty * lost,
        moving=plan.moving,
        lost_sales=lost,
    )


def expected_objective(instance: RelocationInstance, plan: PlanDecision,
                       scenarios: ScenarioSet) -> float:
    """In-sample expected objective of a fixed plan, matching the program
    objective exactly (optimal recourse is served = min(post stock, demand))."""
    post = plan.post_stock(instance.stock)
    served = np.minimum(post[None, :], scenarios.demand)
    lost = scenarios.demand - served
    move_cost = float((instance.move_cost * plan.flows).sum())
    per_scenario = instance.price * served.sum(axis=1) - instance.penalty * lost.sum(axis=1)
    return float(per_scenario.mean() - move_cost)


def round_plan(instance: RelocationInstance, plan: PlanDecision,
               scenarios: ScenarioSet) -> tuple[PlanDecision, dict]:
    """Optional integer rounding of fractional flows, with the gap it costs.

    Flows are floored; if flooring drove any post-move stock negative
    (possible when inflows shrink more than outflows), outflows are
    reduced one vehicle at a time. Requires integral stock.
    """
    if not np.allclose(instance.stock, np.round(instance.stock)):
        raise ValueError("integer rounding needs integral stock")
    flows = np.floor(plan.flows + 1e-9)
    rounded = PlanDecision(flows)
    post = rounded.post_stock(instance.stock)
    while (post < -1e-9).any():
        zz = int(np.argmin(post))
        j = int(np.argmax(flows[zz]))
        if flows[zz, j] < 1.0:
            raise RuntimeError("could not repair rounded plan")
        flows[zz, j] -= 1.0
        rounded = PlanDecision(flows)
        post = rounded.post_stock(instance.stock)
    frac_val = expected_objective(instance, plan, scenarios)
    int_val = expected_objective(instance, rounded, scenarios)
    gap = frac_val - int_val
    rel = gap / abs(frac_val) if abs(frac_val) > 1e-12 else 0.0
    return rounded, {"fractional_objective": frac_val, "integer_objective": int_val,
                     "gap": gap, "relative_gap": rel}


def saa_convergence_table(instance: RelocationInstance, forecasts,
                          counts=(10, 25, 50, 100, 200, 400), seed: int = 0):
    """Objective of the scenario program as the sample size grows.

    Diagnostic for choosing the scenario count: rows of
    (N, in-sample optimum, out-of-sample estimate on a common 2000-draw
    evaluation set).
    """
    eval_set = sample_scenarios(forecasts, 2000, seed + 999_983)
    table = []
    for n in counts:
        scen = sample_scenarios(forecasts, n, seed + n)
        plan, res = solve_relocation(instance, scen)
        table.append({"n_scenarios": n,
                      "in_sample_objective": res.objective,
                      "out_of_sample_objective":
                          expected_objective(instance, plan, eval_set)})
    return table


def format_saa_table(table) -> str:
    lines = [f"{'N':>6}  {'in-sample':>14}  {'out-of-sample':>14}"]
    for row in table:
        lines.append(f"{row['n_scenarios']:>6}  {row['in_sample_objective']:>14.4f}"
                     f"  {row['out_of_sample_objective']:>14.4f}")
    return "\n".join(lines) + "\n"


def save_plan(path, plan: PlanDecision, instance: RelocationInstance,
              extra: dict | None = None) -> None:
    doc = {"plan": plan.to_dict(), "instance": instance.to_dict(),
           "post_stock": plan.post_stock(instance.stock).tolist(),
           "moving": plan.moving}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
