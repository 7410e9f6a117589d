"""Command-line pipeline: synth, ingest, train, fit-gmm, forecast,
optimize, evaluate, compare.

Every command is a pure function of (inputs, config, seed); artifacts
land in the config's data_dir with a sidecar manifest recording the
config hash and seed, and contain no timestamps, so identical runs are
byte-identical. A missing upstream artifact names the command that
produces it.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import forecast as fc
from .config import PipelineConfig, apply_overrides, config_hash, load_config
from .data import (
    DemandSeries,
    Standardizer,
    WindowSet,
    ZoneMap,
    aggregate_demand,
    chronological_split,
    ingest_trips,
    make_windows,
    save_ingest_reports,
)
from .evaluate import EvalSettings, EvaluationReport, compare, rolling_evaluate
from .recurrent import HeadSpec, TrainConfig, init_model, load_model, save_model, train
from .relocation import (
    RelocationInstance,
    format_saa_table,
    saa_convergence_table,
    sample_scenarios,
    save_plan,
    solve_relocation,
)
from .simplex import export_lp_text
from .synth import SyntheticConfig, default_zone_map, generate_demand, write_trips_csv

ENV_CONFIG = "FLEETCAST_CONFIG"

PRODUCERS = {
    "trips": "synth (or provide your own trip CSV)",
    "demand": "ingest",
    "checkpoint": "train",
    "em_fit": "fit-gmm",
    "forecasts": "forecast",
    "report": "evaluate",
}


class MissingArtifactError(FileNotFoundError):
    pass


def _require(path: Path, kind: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"{kind} artifact not found at {path}; run `fleetcast {PRODUCERS[kind]}` first")
    return path


def _data_dir(cfg: PipelineConfig) -> Path:
    path = Path(cfg.data_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(path: Path, command: str, cfg: PipelineConfig,
                    inputs: list, outputs: list) -> None:
    doc = {"command": command, "config_hash": config_hash(cfg), "seed": cfg.seed,
           "inputs": [str(p) for p in inputs], "outputs": [str(p) for p in outputs]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _split_bounds(cfg: PipelineConfig, series: DemandSeries):
    if cfg.train_end is not None:
        test_end = cfg.test_end or series.days[-1]
        return cfg.train_end, test_end
    test_len = 91 if series.n_days >= 182 else max(1, series.n_days // 4)
    return series.days[-test_len - 1], series.days[-1]


def _load_demand(cfg: PipelineConfig) -> DemandSeries:
    path = _require(_data_dir(cfg) / cfg.demand_file, "demand")
    return DemandSeries.from_csv(path)


def _scaler_for(cfg: PipelineConfig, train_series: DemandSeries) -> Standardizer:
    if cfg.standardize:
        return Standardizer.fit(train_series)
    return Standardizer.identity(train_series.n_zones)


def _instance(cfg: PipelineConfig, n_zones: int) -> RelocationInstance:
    stock = np.asarray(cfg.stock, dtype=float)
    if stock.size != n_zones:
        raise ValueError(f"config.stock has {stock.size} zones, demand has {n_zones}")
    cost = np.full((n_zones, n_zones), cfg.move_cost, dtype=float)
    np.fill_diagonal(cost, 0.0)
    return RelocationInstance(stock=stock, move_cost=cost, price=cfg.price,
                              penalty=cfg.penalty)


MODEL_FILES = {"mdn": "mdn", "gru-point": "gru_point", "lstm": "lstm"}


def _load_checkpoint(cfg: PipelineConfig, tag: str):
    prefix = _data_dir(cfg) / "checkpoints" / MODEL_FILES[tag]
    _require(prefix.with_suffix(".json"), "checkpoint")
    model, extra = load_model(str(prefix))
    scaler = Standardizer.from_dict(extra["scaler"])
    return model, scaler, extra


def _forecaster(cfg: PipelineConfig, tag: str):
    if tag == "mdn":
        model, scaler, _ = _load_checkpoint(cfg, "mdn")
        return fc.MixtureForecaster(model, scaler)
    if tag in ("gru-point", "lstm"):
        model, scaler, _ = _load_checkpoint(cfg, tag)
        return fc.PointForecaster(model, scaler)
    if tag == "posthoc":
        model, scaler, _ = _load_checkpoint(cfg, "gru-point")
        base = fc.PointForecaster(model, scaler)
        em_path = _require(_data_dir(cfg) / "em_fit.json", "em_fit")
        with open(em_path) as fh:
            doc = json.load(fh)
        mixtures = [fc.GmmParams.from_dict(rec["params"]) for rec in doc["per_zone"]]
        return fc.ResidualMixtureForecaster(base, mixtures)
    raise ValueError(f"unknown forecaster {tag!r}")


def cmd_synth(cfg: PipelineConfig, args) -> int:
    out = _data_dir(cfg)
    scfg = SyntheticConfig(
        n_zones=cfg.synth_zones, n_days=cfg.synth_days, start_day=cfg.synth_start,
        seed=cfg.seed, stay_prob=cfg.synth_stay_prob, mean_high=cfg.synth_mean_high,
        mean_low=cfg.synth_mean_low, noise_sd=cfg.synth_noise_sd)
    series, _regimes = generate_demand(scfg)
    zones = default_zone_map(cfg.synth_zones)
    trips_path = out / cfg.trips_file
    n_rows = write_trips_csv(trips_path, series, zones, seed=cfg.seed + 1)
    truth_path = out / "truth_demand.csv"
    series.to_csv(truth_path)
    _write_manifest(out / "synth.manifest.json", "synth", cfg, [],
                    [trips_path, truth_path])
    print(f"wrote {n_rows} trips to {trips_path} and truth to {truth_path}")
    return 0


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    out = _data_dir(cfg)
    trips_path = _require(out / cfg.trips_file, "trips")
    records, ingest_report = ingest_trips(trips_path)
    zones = ZoneMap.parse(cfg.zones)
    series, agg_report = aggregate_demand(records, zones, count=cfg.count_field)
    demand_path = out / cfg.demand_file
    series.to_csv(demand_path)
    report_path = out / "ingest_report.json"
    save_ingest_reports(report_path, ingest_report, agg_report)
    _write_manifest(out / "ingest.manifest.json", "ingest", cfg, [trips_path],
                    [demand_path, report_path])
    print(f"accepted {ingest_report.accepted}/{ingest_report.total} rows; "
          f"{agg_report.matched} matched a zone; demand -> {demand_path}")
    return 0


def _train_one(cfg: PipelineConfig, which: str) -> Path:
    series = _load_demand(cfg)
    train_end, test_end = _split_bounds(cfg, series)
    train_series, _test_series = chronological_split(series, train_end, test_end)
    scaler = _scaler_for(cfg, train_series)
    raw_windows = make_windows(train_series, cfg.window_size)
    windows = WindowSet(inputs=scaler.transform(raw_windows.inputs),
                        targets=scaler.transform(raw_windows.targets),
                        target_days=raw_windows.target_days)
    z = series.n_zones
    if which == "mdn":
        head = HeadSpec("mdn", z, k=cfg.mixture_components,
                        aux_point=cfg.aux_point_output)
        cell = "gru"
    elif which == "gru-point":
        head = HeadSpec("point", z)
        cell = "gru"
    else:
        head = HeadSpec("point", z)
        cell = "lstm"
    model = init_model(cell, z, cfg.hidden_size,
                       dense_sizes=tuple(int(s) for s in cfg.dense_sizes),
                       head=head, seed=cfg.seed, window_size=cfg.window_size)
    tcfg = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                       epochs=cfg.epochs, clip_norm=cfg.clip_norm, seed=cfg.seed,
                       optimizer=cfg.optimizer, momentum=cfg.momentum)
    history: list[float] = []
    if cfg.epochs > 0:
        model, history = train(model, windows, tcfg)
    ckpt_dir = _data_dir(cfg) / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    prefix = ckpt_dir / MODEL_FILES[which]
    save_model(model, str(prefix), extra={
        "scaler": scaler.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "train_end": train_end.isoformat(),
        "test_end": test_end.isoformat(),
        "loss_history": history,
    })
    return prefix


def cmd_train(cfg: PipelineConfig, args) -> int:
    which = args.model
    prefix = _train_one(cfg, which)
    _write_manifest(_data_dir(cfg) / f"train_{MODEL_FILES[which]}.manifest.json",
                    "train", cfg, [_data_dir(cfg) / cfg.demand_file],
                    [prefix.with_suffix(".json"), prefix.with_suffix(".bin")])
    print(f"trained {which} -> {prefix}.json/.bin")
    return 0


def cmd_fit_gmm(cfg: PipelineConfig, args) -> int:
    series = _load_demand(cfg)
    train_end, test_end = _split_bounds(cfg, series)
    train_series, _ = chronological_split(series, train_end, test_end)
    model, scaler, _ = _load_checkpoint(cfg, "gru-point")
    windows = make_windows(train_series, cfg.window_size)
    n_val = max(1, int(len(windows) * cfg.val_fraction))
    val = type(windows)(inputs=windows.inputs[-n_val:],
                        targets=windows.targets[-n_val:],
                        target_days=None)
    base = fc.PointForecaster(model, scaler)
    mixtures, records = fc.fit_residual_mixtures(
        base, val, k=cfg.em_components, seed=cfg.seed,
        n_restarts=cfg.em_restarts, tol=cfg.em_tol, max_iter=cfg.em_max_iter,
        threads=cfg.threads)
    out_path = _data_dir(cfg) / "em_fit.json"
    with open(out_path, "w") as fh:
        json.dump({"per_zone": [
            {"zone": zid, "params": mix.to_dict(),
             "log_likelihood": rec["log_likelihood"],
             "ll_trace": rec["ll_trace"], "iterations": rec["iterations"],
             "restarts": rec["restarts"], "seed": rec["seed"]}
            for zid, mix, rec in zip(series.zone_ids, mixtures, records)]},
            fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(_data_dir(cfg) / "fit_gmm.manifest.json", "fit-gmm", cfg,
                    [], [out_path])
    print(f"fitted residual mixtures for {len(mixtures)} zones -> {out_path}")
    return 0


def cmd_forecast(cfg: PipelineConfig, args) -> int:
    tag = args.model
    series = _load_demand(cfg)
    train_end, test_end = _split_bounds(cfg, series)
    train_series, test_series = chronological_split(series, train_end, test_end)
    forecaster = _forecaster(cfg, tag)
    full = train_series.concat(test_series)
    ws = cfg.window_size
    offset = train_series.n_days
    days, dists = [], []
    for t, day in enumerate(test_series.days):
        pos = offset + t
        if pos < ws:
            continue
        window = full.values[:, pos - ws : pos].T
        days.append(day)
        dists.append(forecaster.predict_distribution(window, day))
    out_path = _data_dir(cfg) / "forecasts.json"
    fc.save_forecast_file(out_path, days, series.zone_ids, dists)
    _write_manifest(_data_dir(cfg) / "forecast.manifest.json", "forecast", cfg,
                    [], [out_path])
    print(f"forecast {len(days)} days x {series.n_zones} zones -> {out_path}")
    return 0


def cmd_optimize(cfg: PipelineConfig, args) -> int:
    out = _data_dir(cfg)
    forecasts = fc.load_forecast_file(_require(out / "forecasts.json", "forecasts"))
    series = _load_demand(cfg)
    day = args.day
    if day is None:
        day = min(key[0] for key in forecasts)
    per_zone = [forecasts[(day, zid)] for zid in series.zone_ids]
    instance = _instance(cfg, series.n_zones)
    if args.saa_table:
        table = saa_convergence_table(instance, per_zone, seed=cfg.seed)
        print(format_saa_table(table))
    scen = sample_scenarios(per_zone, cfg.n_scenarios, seed=cfg.seed)
    plan, res = solve_relocation(instance, scen)
    plan_path = out / f"plan_{day}.json"
    save_plan(plan_path, plan, instance,
              extra={"day": day, "objective": res.objective,
                     "n_scenarios": cfg.n_scenarios, "seed": cfg.seed})
    if args.export_lp:
        from .relocation import build_two_stage

        lp, _ = build_two_stage(instance, scen)
        lp_path = out / f"program_{day}.lp"
        lp_path.write_text(export_lp_text(lp))
        print(f"exported program -> {lp_path}")
    _write_manifest(out / "optimize.manifest.json", "optimize", cfg,
                    [out / "forecasts.json"], [plan_path])
    print(f"plan for {day}: moving {plan.moving:.2f} vehicles, "
          f"objective {res.objective:.2f} -> {plan_path}")
    return 0


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    mode = args.mode or cfg.optimizer_mode
    tag = args.forecaster or ("mdn" if mode == "stochastic" else "lstm")
    series = _load_demand(cfg)
    train_end, test_end = _split_bounds(cfg, series)
    train_series, test_series = chronological_split(series, train_end, test_end)
    forecaster = _forecaster(cfg, tag)
    settings = EvalSettings(window_size=cfg.window_size,
                            n_scenarios=cfg.n_scenarios, seed=cfg.seed,
                            replan=cfg.replan, threads=cfg.threads)
    instance = _instance(cfg, series.n_zones)
    report = rolling_evaluate(forecaster, mode, train_series, test_series,
                              instance, settings)
    report.method = f"{tag}-{mode}"
    out = _data_dir(cfg) / cfg.reports_dir
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"report_{tag}_{mode}.json"
    report.save(report_path)
    if args.per_day_csv:
        report.per_day_csv(out / f"report_{tag}_{mode}_days.csv")
    _write_manifest(out / f"evaluate_{tag}_{mode}.manifest.json", "evaluate",
                    cfg, [], [report_path])
    print(f"{report.method}: {report.day_count} days, "
          f"avg revenue {report.average('revenue'):.2f}, "
          f"avg cost {report.average('cost'):.2f}, "
          f"avg moving {report.average('moving'):.4f} -> {report_path}")
    return 0


def cmd_compare(cfg: PipelineConfig, args) -> int:
    path_a = Path(args.report_a)
    path_b = Path(args.report_b)
    for p in (path_a, path_b):
        if not p.exists():
            raise MissingArtifactError(
                f"report artifact not found at {p}; run `fleetcast evaluate` first")
    rep = compare(EvaluationReport.load(path_a), EvaluationReport.load(path_b))
    out = _data_dir(cfg) / "comparison.json"
    rep.save(out)
    text = rep.to_text()
    (_data_dir(cfg) / "comparison.txt").write_text(text)
    print(text, end="")
    for metric in ("revenue", "cost", "moving", "profit"):
        print(rep.phrase(metric))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetcast",
        description="Demand-distribution forecasting feeding a scenario-based "
                    "fleet relocation program, with a point-forecast baseline.")
    parser.add_argument("--config", default=None,
                        help=f"config file path (or ${ENV_CONFIG}); defaults used if absent")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(fn=fn)
        p.add_argument("--data-dir", dest="data_dir", default=None,
                       help="override config data_dir")
        p.add_argument("--seed", dest="seed", default=None, help="override seed")
        p.add_argument("--threads", dest="threads", default=None,
                       help="worker threads for parallel-safe stages")
        return p

    add("synth", cmd_synth, "generate the bundled synthetic benchmark data")
    p = add("ingest", cmd_ingest, "parse trips and build the demand series")
    p.add_argument("--count-field", dest="count_field", default=None,
                   help="trips or passengers")
    p = add("train", cmd_train, "train a forecaster")
    p.add_argument("--model", choices=list(MODEL_FILES), default="mdn")
    p.add_argument("--epochs", dest="epochs", default=None, help="override epochs")
    add("fit-gmm", cmd_fit_gmm,
        "fit residual mixtures for the extraction route (needs gru-point)")
    p = add("forecast", cmd_forecast, "write per-day per-zone mixture forecasts")
    p.add_argument("--model", choices=["mdn", "posthoc"], default="mdn")
    p = add("optimize", cmd_optimize, "solve the scenario program for one day")
    p.add_argument("--day", default=None, help="ISO date (default: first forecast day)")
    p.add_argument("--export-lp", action="store_true",
                   help="also write the program in LP text format")
    p.add_argument("--saa-table", action="store_true",
                   help="print the scenario-count convergence diagnostic")
    p.add_argument("--n-scenarios", dest="n_scenarios", default=None)
    p = add("evaluate", cmd_evaluate, "rolling out-of-sample evaluation")
    p.add_argument("--mode", choices=["stochastic", "deterministic"], default=None)
    p.add_argument("--forecaster", choices=["mdn", "posthoc", "gru-point", "lstm"],
                   default=None)
    p.add_argument("--replan", dest="replan", default=None,
                   help="true for daily replanning, false for one frozen plan")
    p.add_argument("--n-scenarios", dest="n_scenarios", default=None)
    p.add_argument("--per-day-csv", action="store_true",
                   help="also write per-day outcomes as CSV")
    p = add("compare", cmd_compare, "tabulate two evaluation reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    return parser


OVERRIDE_KEYS = ("data_dir", "seed", "threads", "count_field", "epochs",
                 "n_scenarios", "replan")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config_path = args.config or os.environ.get(ENV_CONFIG)
    try:
        cfg = load_config(config_path) if config_path else PipelineConfig()
        overrides = {k: getattr(args, k) for k in OVERRIDE_KEYS if hasattr(args, k)}
        cfg = apply_overrides(cfg, overrides)
        return args.fn(cfg, args)
    except (MissingArtifactError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
