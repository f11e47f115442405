"""Command-line pipeline: gen, train, calibrate, solve, replay, compare, report.

Every subcommand writes its artifacts into --out together with a
manifest.json recording the fully resolved configuration, the seed, and
sha256 digests of inputs and outputs. Re-running a subcommand with the same
manifest configuration reproduces its outputs byte for byte. Configuration
precedence is flags > --config file > built-in defaults; a manifest from a
previous run is accepted as a --config file.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 malformed
input (schema mismatch / invalid values), 1 anything else. Failures print a
single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__, datagen, evaluate, seeds
from .forecast import (
    ForecastModel,
    GbtParams,
    TrainingRecord,
    attach_variances,
    fit_architecture,
    grid_search,
    metrics_by_split,
    records_from_rows,
    split_by_date,
    write_metrics_csv,
)
from .model import Instance, InvalidInputError, Plan
from .risk import conformal_calibrate, estimate_variances, route_buffer
from .solver import SolverConfig, solve, write_convergence_csv

EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4

_VARIANTS = ("standard", "weighted", "dual", "dual_weighted")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    out: Path,
    subcommand: str,
    seed: int,
    threads: int,
    config: Mapping,
    inputs: Mapping[str, Path],
    outputs: Sequence[Path],
) -> None:
    manifest = {
        "tool": "routecast",
        "tool_version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "threads": threads,
        "config": dict(config),
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()
        },
        "outputs": {
            p.name: {"path": str(p), "sha256": _sha256(p)} for p in outputs
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def _load_config_file(path: str | None, subcommand: str) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidInputError("config file must hold a JSON object")
    if data.get("tool") == "routecast" and "config" in data:
        # a manifest from a previous run
        return dict(data["config"])
    if subcommand in data and isinstance(data[subcommand], dict):
        return dict(data[subcommand])
    return data


def _merge(defaults: Mapping, config: Mapping, flags: Mapping) -> dict:
    merged = dict(defaults)
    merged.update({k: v for k, v in config.items() if k in defaults})
    merged.update({k: v for k, v in flags.items() if v is not None and k in defaults})
    return merged


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------- subcommands

def _cmd_gen(args) -> int:
    out = _out_dir(args)
    defaults = {
        "days": 364,
        "per_day": 275.0,
        "per_day_spread": 25.0,
        "start_date": "2024-01-01",
        "hour_mix": "reference",
        "residual_sigma": 0.18,
    }
    cfg = _merge(defaults, _load_config_file(args.config, "gen"), vars(args))
    hour_weights = (
        datagen.OPERATIONAL_HOUR_WEIGHTS if cfg["hour_mix"] == "operational" else None
    )
    gen_config = datagen.GeneratorConfig(
        seed=args.seed,
        n_days=int(cfg["days"]),
        per_day_mean=float(cfg["per_day"]),
        per_day_spread=float(cfg["per_day_spread"]),
        start_date=str(cfg["start_date"]),
        hour_weights=hour_weights,
        residual_sigma=float(cfg["residual_sigma"]),
    )
    specs = datagen.default_class_specs(gen_config.residual_sigma)
    rows = datagen.generate_corpus(gen_config, specs)
    corpus_path = out / "corpus.csv"
    datagen.write_corpus_csv(corpus_path, rows)
    specs_path = out / "class_specs.json"
    datagen.save_class_specs(specs_path, specs)
    _write_manifest(out, "gen", args.seed, args.threads, cfg, {},
                    [corpus_path, specs_path])
    print(f"wrote {len(rows)} records to {corpus_path}")
    return 0


def _load_records(corpus: Path) -> list[TrainingRecord]:
    return records_from_rows(datagen.load_corpus_csv(corpus))


def _cmd_train(args) -> int:
    out = _out_dir(args)
    defaults = {
        "variant": "dual_weighted",
        "trees": 100,
        "depth": 4,
        "learning_rate": 0.1,
        "min_leaf_weight": 1.0,
        "leaf_penalty": 0.0,
        "l2": 1.0,
        "grid": False,
    }
    cfg = _merge(defaults, _load_config_file(args.config, "train"), vars(args))
    corpus = _require_file(args.corpus, "corpus")
    records = _load_records(corpus)
    train, validation, test = split_by_date(records, seed=args.seed)
    params = GbtParams(
        n_trees=int(cfg["trees"]),
        max_depth=int(cfg["depth"]),
        learning_rate=float(cfg["learning_rate"]),
        min_leaf_weight=float(cfg["min_leaf_weight"]),
        leaf_penalty=float(cfg["leaf_penalty"]),
        l2=float(cfg["l2"]),
    )
    variants = _VARIANTS if cfg["variant"] == "all" else (cfg["variant"],)
    metrics_rows = []
    outputs = []
    grid_results: dict[str, list[dict]] = {}
    primary_path = out / "model.json"
    for variant in variants:
        use_params = params
        if cfg["grid"]:
            use_params, table = grid_search(variant, train, validation, params)
            grid_results[variant] = table
        model = fit_architecture(variant, train, use_params)
        attach_variances(model, validation)
        split_metrics = metrics_by_split(
            model, {"train": train, "validation": validation, "test": test}
        )
        for split in ("train", "validation", "test"):
            metrics_rows.append((variant, split, split_metrics[split]))
        path = primary_path if len(variants) == 1 else out / f"model_{variant}.json"
        model.save(path)
        outputs.append(path)
    if len(variants) > 1:
        # the dual_weighted artifact doubles as the default model
        ForecastModel.load(out / "model_dual_weighted.json").save(primary_path)
        outputs.append(primary_path)
    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, metrics_rows)
    outputs.append(metrics_path)
    if grid_results:
        grid_path = out / "grid_search.json"
        grid_path.write_text(json.dumps(grid_results, sort_keys=True, indent=1))
        outputs.append(grid_path)
    cfg_echo = {**cfg, "splits": {"train": len(train), "validation": len(validation),
                                  "test": len(test)}}
    _write_manifest(out, "train", args.seed, args.threads, cfg_echo,
                    {"corpus": corpus}, outputs)
    for variant, split, m in metrics_rows:
        print(f"{variant:14s} {split:10s} mae={m.mae:.4f} rmse={m.rmse:.4f} "
              f"mape={m.mape:.2f}%")
    return 0


def _cmd_calibrate(args) -> int:
    out = _out_dir(args)
    defaults = {"alpha": 0.05}
    cfg = _merge(defaults, _load_config_file(args.config, "calibrate"), vars(args))
    corpus = _require_file(args.corpus, "corpus")
    model_path = _require_file(args.model, "model")
    model = ForecastModel.load(model_path)
    records = _load_records(corpus)
    # same named stream as training, so the held-out days match
    train, validation, _test = split_by_date(records, seed=args.seed)
    preds = model.predict_records(validation)
    triples = [(r.type_code, r.y, float(p)) for r, p in zip(validation, preds)]
    variances = estimate_variances(triples)
    conformal = conformal_calibrate(triples)
    risk_path = out / "risk.json"
    risk_path.write_text(
        json.dumps(
            {
                "variance_table": variances.to_dict(),
                "conformal_table": conformal.to_dict(),
                "alpha": cfg["alpha"],
            },
            sort_keys=True,
        )
    )
    alpha = float(cfg["alpha"])
    print("class  sigma2      U(alpha)    buffer_5stops")
    for c in sorted(variances.per_class):
        sig = variances.per_class[c]
        u = conformal.upper_width(c, alpha)
        buf = route_buffer([sig] * 5, alpha)
        print(f"{c:5s} {sig:10.4f} {u:11.4f} {buf:14.4f}")
    _write_manifest(out, "calibrate", args.seed, args.threads, cfg,
                    {"corpus": corpus, "model": model_path}, [risk_path])
    return 0


def _solver_config(cfg: Mapping, seed: int) -> SolverConfig:
    return SolverConfig(
        population=int(cfg["population"]),
        generations=int(cfg["generations"]),
        time_budget=(float(cfg["time_budget"]) if cfg["time_budget"] else None),
        alpha=(float(cfg["alpha"]) if cfg["alpha"] is not None else None),
        ls_budget=int(cfg["ls_budget"]),
        seed=seed,
    )


_SOLVER_DEFAULTS = {
    "population": 100,
    "generations": 100,
    "time_budget": 1200.0,
    "alpha": None,
    "ls_budget": 600,
}


def _cmd_solve(args) -> int:
    out = _out_dir(args)
    defaults = {**_SOLVER_DEFAULTS, "strategy": "forecast"}
    cfg = _merge(defaults, _load_config_file(args.config, "solve"), vars(args))
    instance_path = _require_file(args.instance, "instance")
    instance = Instance.load(instance_path)
    inputs = {"instance": instance_path}
    model = None
    if cfg["strategy"] == "forecast":
        if not args.model:
            raise InvalidInputError("--model is required for the forecast strategy")
        model_path = _require_file(args.model, "model")
        model = ForecastModel.load(model_path)
        inputs["model"] = model_path
    estimates = evaluate.resolve_durations(
        cfg["strategy"], instance, model=model,
        default_table=datagen.default_duration_table(),
    )
    config = _solver_config(cfg, seeds.derive_seed(args.seed, "solve"))
    result = solve(instance, estimates, config)
    outputs = []
    index = []
    for i, plan in enumerate(result.pareto):
        path = out / f"pareto_{i:03d}.json"
        plan.save(path)
        outputs.append(path)
        index.append(
            {
                "file": path.name,
                "objectives": plan.objectives.to_dict(),
                "penalty": result.penalties[i],
            }
        )
    index_path = out / "pareto_index.json"
    index_path.write_text(
        json.dumps(
            {
                "plans": index,
                "generations_run": result.generations_run,
                "hit_time_limit": result.hit_time_limit,
            },
            sort_keys=True,
            indent=1,
        )
    )
    conv_path = out / "convergence.csv"
    write_convergence_csv(conv_path, result.log)
    outputs += [index_path, conv_path]
    _write_manifest(out, "solve", args.seed, args.threads, cfg, inputs, outputs)
    print(f"pareto set: {len(result.pareto)} plans "
          f"({result.generations_run} generations)")
    return 0


def _cmd_replay(args) -> int:
    out = _out_dir(args)
    plan_path = _require_file(args.plan, "plan")
    instance_path = _require_file(args.instance, "instance")
    plan = Plan.load(plan_path)
    instance = Instance.load(instance_path)
    realized = {a.id: a.true_duration for a in instance.activities}
    executed = evaluate.replay(plan, instance, realized)
    kpis = evaluate.compute_kpis(executed, instance)
    payload = {
        "planned": executed.planned.to_dict(),
        "realized": executed.realized.to_dict(),
        "kpis": kpis.to_dict(),
    }
    replay_path = out / "replay.json"
    replay_path.write_text(json.dumps(payload, sort_keys=True, indent=1))
    _write_manifest(out, "replay", args.seed, args.threads, {},
                    {"plan": plan_path, "instance": instance_path}, [replay_path])
    print(json.dumps(payload["kpis"], sort_keys=True))
    return 0


def _cmd_compare(args) -> int:
    out = _out_dir(args)
    defaults = {
        **_SOLVER_DEFAULTS,
        "days": 21,
        "per_day": 54.0,
        "vehicles": 4,
        "shift": 480.0,
        "window_width": 480.0,
        "map_extent": 12.0,
        "strategies": "real,default,forecast",
        "start_date": "2025-05-01",
    }
    cfg = _merge(defaults, _load_config_file(args.config, "compare"), vars(args))
    strategies = [s.strip() for s in str(cfg["strategies"]).split(",") if s.strip()]
    inputs = {}
    model = None
    if "forecast" in strategies:
        if not args.model:
            raise InvalidInputError("--model is required when comparing the forecast strategy")
        model_path = _require_file(args.model, "model")
        model = ForecastModel.load(model_path)
        inputs["model"] = model_path

    gen_config = datagen.GeneratorConfig(
        seed=seeds.derive_seed(args.seed, "compare", "gen"),
        n_days=int(cfg["days"]),
        per_day_mean=float(cfg["per_day"]),
        per_day_spread=max(float(cfg["per_day"]) * 0.04, 1.5),
        start_date=str(cfg["start_date"]),
        hour_weights=datagen.OPERATIONAL_HOUR_WEIGHTS,
        window_width=float(cfg["window_width"]),
        map_extent_km=float(cfg["map_extent"]),
    )
    specs = datagen.default_class_specs(gen_config.residual_sigma)
    fleet = datagen.FleetSpec(
        n_vehicles=int(cfg["vehicles"]), shift_length=float(cfg["shift"]),
        risk_level=float(cfg["alpha"]) if cfg["alpha"] is not None else 0.05,
    )
    start = _dt.date.fromisoformat(gen_config.start_date)
    municipalities = datagen.sample_municipalities(
        gen_config.n_municipalities, seeds.rng(gen_config.seed, "gen", "geo")
    )
    instances = []
    for d in range(gen_config.n_days):
        date = start + _dt.timedelta(days=d)
        day_rng = seeds.rng(gen_config.seed, "gen", "day", d)
        day_rows = datagen.generate_day_records(
            gen_config, specs, date, day_rng, municipalities
        )
        inst_rng = seeds.rng(gen_config.seed, "gen", "instance", d)
        instances.append(
            datagen.generate_instance(day_rows, fleet, inst_rng, gen_config)
        )

    solver_config = _solver_config(cfg, 0)  # per-cell seeds come from run_comparison
    report = evaluate.run_comparison(
        instances, strategies, model, datagen.default_duration_table(specs),
        solver_config, seed=args.seed, threads=args.threads,
    )
    outputs = []
    for s in strategies:
        daily_path = out / f"kpi_daily_{s}.csv"
        evaluate.write_daily_csv(daily_path, report.daily[s])
        outputs.append(daily_path)
    monthly_path = out / "kpi_monthly.csv"
    evaluate.write_monthly_csv(monthly_path, report)
    details_path = out / "kpi_details.json"
    evaluate.write_details_json(details_path, report)
    outputs += [monthly_path, details_path]
    cfg_echo = {**cfg, "strategies": strategies}
    _write_manifest(out, "compare", args.seed, args.threads, cfg_echo, inputs, outputs)
    for s in strategies:
        m = report.monthly[s]
        print(f"{s:9s} completion={m.completion_rate:.4f} "
              f"utilization={m.utilization:.4f} overtime={m.overtime:.2f}")
    return 0


def _cmd_report(args) -> int:
    from . import report as report_mod

    out = _out_dir(args)
    run = _require_file(args.run, "run directory")
    written = report_mod.render_run(run, out)
    figures = [out / name for name in written] + [out / "report_summary.csv"]
    _write_manifest(out, "report", args.seed, args.threads, {"run": str(run)},
                    {}, figures)
    print(f"rendered {len(written)} figures into {out}")
    return 0


# ----------------------------------------------------------------------- main

def _build_parser() -> _Parser:
    parser = _Parser(prog="routecast",
                     description="Risk-aware stochastic routing pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes where a stage parallelises")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON config file or prior manifest")

    p = sub.add_parser("gen", help="generate a synthetic training corpus")
    common(p)
    p.add_argument("--days", type=int)
    p.add_argument("--per-day", dest="per_day", type=float)
    p.add_argument("--start-date", dest="start_date")
    p.add_argument("--hour-mix", dest="hour_mix",
                   choices=("reference", "operational"))

    p = sub.add_parser("train", help="train a duration forecaster")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--variant", choices=_VARIANTS + ("all",))
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--grid", action="store_const", const=True, default=None,
                   help="grid-search hyperparameters by validation MAE")

    p = sub.add_parser("calibrate", help="estimate risk tables from a model")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("solve", help="solve one routing instance")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--strategy", choices=evaluate.STRATEGIES)
    p.add_argument("--model")
    p.add_argument("--alpha", type=float)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float,
                   help="solver wall clock in seconds; 0 disables it")
    p.add_argument("--ls-budget", dest="ls_budget", type=int)

    p = sub.add_parser("replay", help="replay a plan against true durations")
    common(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--instance", required=True)

    p = sub.add_parser("compare", help="run the strategy comparison month")
    common(p)
    p.add_argument("--strategies")
    p.add_argument("--model")
    p.add_argument("--days", type=int)
    p.add_argument("--per-day", dest="per_day", type=float)
    p.add_argument("--vehicles", type=int)
    p.add_argument("--shift", type=float)
    p.add_argument("--window-width", dest="window_width", type=float)
    p.add_argument("--map-extent", dest="map_extent", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--time-budget", dest="time_budget", type=float,
                   help="solver wall clock in seconds; 0 disables it")
    p.add_argument("--ls-budget", dest="ls_budget", type=int)
    p.add_argument("--month", help="label recorded in the manifest")

    p = sub.add_parser("report", help="render figures for a run directory")
    common(p)
    p.add_argument("--run", required=True)

    return parser


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "solve": _cmd_solve,
    "replay": _cmd_replay,
    "compare": _cmd_compare,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.subcommand](args)
    except FileNotFoundError as exc:
        print(json.dumps({"error": "missing-file", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_MISSING_FILE
    except (InvalidInputError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "invalid-input", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_SCHEMA
    except Exception as exc:  # pragma: no cover - defensive
        print(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
