"""Experiment command-line interface.

Subcommands: simulate, train, evaluate, sweep, search, export-repr.  Every
output directory gets a manifest JSON (config, config hash, seed, version)
sufficient to re-run the experiment bit-identically.  Configs are JSON files;
command-line flags override file fields.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .evaluation import (MetricsReport, OracleModel, balancing_diagnostic,
                         evaluate_branch_sets, export_representations,
                         normalized_rmse, write_metrics_csv,
                         write_metrics_json)
from .features import FeatureScaler
from .models import (CrnConfig, CrnModel, LinearBaseline, MsmModel,
                     RmsnModel, RnnBaseline, RnnConfig)
from .simulator import (SimConfig, branch_sets_for_dataset, branch_sets_to_csv,
                        branch_sets_from_csv, dataset_from_csv, dataset_to_csv,
                        simulate_dataset)
from .training import (TrainConfig, random_search, train_crn,
                       train_rnn_baseline, train_rmsn, write_training_log)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

MODEL_TYPES = ("crn", "crn_lambda0", "rnn", "linear", "msm", "rmsn")


class ConfigError(ValueError):
    pass


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(out_dir: Path, command: str, config: dict,
                   seed: int) -> None:
    manifest = {"command": command, "config": config,
                "config_hash": config_hash(config), "seed": seed,
                "version": __version__}
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)


def _load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}")


def _sim_config(args, doc: dict | None = None) -> SimConfig:
    doc = dict(doc or {})
    if getattr(args, "gamma", None) is not None:
        doc["gamma_c"] = doc["gamma_r"] = args.gamma
    for flag, key in (("gamma_c", "gamma_c"), ("gamma_r", "gamma_r"),
                      ("n", "n_patients"), ("max_t", "max_timesteps"),
                      ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            doc[key] = v
    try:
        return SimConfig.from_dict(doc)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e))


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    config = _sim_config(args, doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = simulate_dataset(config)
    dataset_to_csv(dataset, out / "dataset.csv")
    for tau in args.tau:
        bss = branch_sets_for_dataset(dataset, tau, config)
        branch_sets_to_csv(bss, out / f"branches_tau{tau}.csv")
    write_manifest(out, "simulate", config.to_dict(), config.seed)
    print(f"simulated {len(dataset)} patients -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _train_config(spec: dict) -> TrainConfig:
    keys = TrainConfig().to_dict().keys()
    return TrainConfig.from_dict({k: spec[k] for k in keys if k in spec})


def _check_data_manifest(data_dir: Path) -> None:
    mpath = data_dir / "manifest.json"
    if not mpath.exists():
        return
    manifest = _load_json(mpath)
    if config_hash(manifest.get("config", {})) != manifest.get("config_hash"):
        print(f"warning: manifest hash mismatch in {data_dir}",
              file=sys.stderr)


def train_model(model_type: str, dataset, spec: dict, out: Path,
                log: list | None = None):
    """Train one model and write its checkpoint files under ``out``."""
    if model_type not in MODEL_TYPES:
        raise ConfigError(f"unknown model type '{model_type}'; "
                          f"expected one of {MODEL_TYPES}")
    tc = _train_config(spec)
    scaler = FeatureScaler.fit(dataset)
    horizons = spec.get("horizons", list(range(1, tc.tau_max + 1)))
    if model_type in ("linear", "msm"):
        cls = LinearBaseline if model_type == "linear" else MsmModel
        model = cls.fit(dataset, horizons, scaler)
        model.save(out / "model.json")
    elif model_type == "rnn":
        cfg = RnnConfig.from_dict(spec.get("model_config", {}))
        model = train_rnn_baseline(dataset, cfg, tc, scaler, log=log)
        model.save(out / "model.json")
    elif model_type == "rmsn":
        cfg = RnnConfig.from_dict(spec.get("model_config", {}))
        model = train_rmsn(dataset, cfg, tc, scaler, log=log)
        model.save(out)
    else:
        if model_type == "crn_lambda0":
            tc.lambda_max = 0.0
        cfg = CrnConfig.from_dict(spec.get("model_config", {}))
        val = None
        if spec.get("val_data"):
            val_csv = Path(spec["val_data"]) / "dataset.csv"
            if not val_csv.exists():
                raise ConfigError(f"no dataset.csv under {spec['val_data']}")
            val = dataset_from_csv(val_csv)
        model = train_crn(dataset, cfg, tc, scaler, log=log, val=val)
        model.save(out / "encoder.json", out / "decoder.json")
    return model


def load_model(model_type: str, model_dir: Path):
    if model_type in ("linear", "msm"):
        cls = LinearBaseline if model_type == "linear" else MsmModel
        return cls.load(model_dir / "model.json")
    if model_type == "rnn":
        return RnnBaseline.load(model_dir / "model.json")
    if model_type == "rmsn":
        return RmsnModel.load(model_dir)
    if model_type in ("crn", "crn_lambda0"):
        return CrnModel.load(model_dir / "encoder.json",
                             model_dir / "decoder.json")
    raise ConfigError(f"unknown model type '{model_type}'")


def cmd_train(args) -> int:
    spec = _load_json(args.spec) if args.spec else {}
    for flag in ("model", "data", "out", "epochs", "seed"):
        v = getattr(args, flag, None)
        if v is not None:
            spec[flag] = v
    for key in ("model", "data", "out"):
        if key not in spec:
            raise ConfigError(f"missing required field '{key}'")
    data_dir = Path(spec["data"])
    if not (data_dir / "dataset.csv").exists():
        raise ConfigError(f"no dataset.csv under {data_dir}")
    _check_data_manifest(data_dir)
    dataset = dataset_from_csv(data_dir / "dataset.csv")
    out = Path(spec["out"])
    out.mkdir(parents=True, exist_ok=True)
    log: list[dict] = []
    train_model(spec["model"], dataset, spec, out, log)
    write_training_log(out / "training_log.csv", log)
    with open(out / "resolved_config.json", "w") as f:
        json.dump(spec, f, indent=2)
    write_manifest(out, "train", spec, spec.get("seed", 0))
    print(f"trained {spec['model']} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _branch_files(data_dir: Path, taus: list[int]) -> dict[int, list]:
    out = {}
    for tau in taus:
        path = data_dir / f"branches_tau{tau}.csv"
        if not path.exists():
            raise ConfigError(f"horizon tau={tau} requested but {path} "
                              "does not exist")
        out[tau] = branch_sets_from_csv(path)
    return out


def evaluate_model(model, model_name: str, dataset, branches: dict[int, list],
                   gamma_c: float, gamma_r: float,
                   seed: int) -> list[MetricsReport]:
    reports = []
    for tau, bss in sorted(branches.items()):
        metrics = evaluate_branch_sets(model, dataset, bss)
        metrics["tau"] = tau
        reports.append(MetricsReport(model_name, gamma_c, gamma_r, seed,
                                     metrics))
    return reports


def cmd_evaluate(args) -> int:
    data_dir = Path(args.data)
    dataset = dataset_from_csv(data_dir / "dataset.csv")
    branches = _branch_files(data_dir, args.tau)
    manifest = {}
    mpath = data_dir / "manifest.json"
    if mpath.exists():
        manifest = _load_json(mpath).get("config", {})
    gamma_c = manifest.get("gamma_c", float("nan"))
    gamma_r = manifest.get("gamma_r", float("nan"))
    seed = manifest.get("seed", 0)
    if args.oracle:
        model, name = OracleModel(), "oracle"
    else:
        if not args.model_dir or not args.model:
            raise ConfigError("--model-dir and --model are required unless "
                              "--oracle is given")
        model, name = load_model(args.model, Path(args.model_dir)), args.model
    reports = evaluate_model(model, name, dataset, branches,
                             gamma_c, gamma_r, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", reports)
    write_metrics_json(out / "metrics.json", reports)
    write_manifest(out, "evaluate",
                   {"model": name, "data": str(data_dir), "taus": args.tau},
                   seed)
    for r in reports:
        print(f"{name} tau={r.metrics['tau']}: "
              f"rmse={r.metrics['rmse']:.3f}%")
    if any(not np.isfinite(v) for r in reports
           for v in r.metrics.values() if isinstance(v, float)):
        print("error: non-finite metric", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _run_cell(cell_args: dict) -> dict:
    """Simulate, train, and evaluate one (gamma_c, gamma_r, model, seed)."""
    gc, gr = cell_args["gamma_c"], cell_args["gamma_r"]
    model_type = cell_args["model"]
    seed = cell_args["seed"]
    spec = cell_args["spec"]
    cell_dir = Path(cell_args["cell_dir"])
    metrics_path = cell_dir / "metrics.json"
    if cell_args["resume"] and metrics_path.exists():
        return {"status": "cached", "cell": str(cell_dir)}
    cell_dir.mkdir(parents=True, exist_ok=True)
    try:
        n = spec.get("n_patients", 200)
        n_test = spec.get("n_test", max(1, n // 5))
        base = {k: spec[k] for k in ("max_timesteps", "noise_std")
                if k in spec}
        sim = SimConfig.from_dict({**base, "gamma_c": gc, "gamma_r": gr,
                                   "n_patients": n, "seed": seed})
        train_set = simulate_dataset(sim)
        # test patients come from a disjoint id range of the same stream
        test_sim = SimConfig.from_dict({**sim.to_dict(),
                                        "n_patients": n_test})
        test_set = simulate_dataset(test_sim, first_patient_id=n)
        taus = spec.get("horizons", [1])
        branches = {tau: branch_sets_for_dataset(test_set, tau, sim)
                    for tau in taus}
        log: list[dict] = []
        model = train_model(model_type, train_set,
                            {**spec, "seed": seed}, cell_dir, log)
        write_training_log(cell_dir / "training_log.csv", log)
        reports = evaluate_model(model, model_type, test_set, branches,
                                 gc, gr, seed)
        write_metrics_json(metrics_path, reports)
        write_metrics_csv(cell_dir / "metrics.csv", reports)
        write_manifest(cell_dir, "sweep-cell",
                       {**sim.to_dict(), "model": model_type,
                        "spec": {k: v for k, v in spec.items()
                                 if k != "priors"}}, seed)
        return {"status": "ok", "cell": str(cell_dir)}
    except Exception as e:  # partial-failure policy: tag and continue
        return {"status": "error", "cell": str(cell_dir),
                "error": f"{type(e).__name__}: {e}",
                "gamma_c": gc, "gamma_r": gr, "model": model_type,
                "seed": seed}


def _gamma_grid(args) -> list[tuple[float, float]]:
    grid = [(g, g) for g in (args.gammas or [])]
    for pair in (args.gamma_pairs or []):
        try:
            c, r = pair.split(":")
            grid.append((float(c), float(r)))
        except ValueError:
            raise ConfigError(f"bad gamma pair '{pair}'; expected 'c:r'")
    if not grid:
        raise ConfigError("no gamma settings given (use --gammas or "
                          "--gamma-pairs)")
    return grid


def cmd_sweep(args) -> int:
    spec = _load_json(args.spec) if args.spec else {}
    for flag, key in (("n", "n_patients"), ("max_t", "max_timesteps"),
                      ("epochs", "epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            spec[key] = v
    if args.tau:
        spec["horizons"] = args.tau
    grid = _gamma_grid(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for gc, gr in grid:
        for model in args.models:
            if model not in MODEL_TYPES:
                raise ConfigError(f"unknown model type '{model}'")
            for seed in args.seeds:
                name = f"g{gc:g}x{gr:g}_s{seed}_{model}"
                cells.append({"gamma_c": gc, "gamma_r": gr, "model": model,
                              "seed": seed, "spec": spec,
                              "cell_dir": str(out / name),
                              "resume": args.resume})
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            statuses = list(pool.map(_run_cell, cells))
    else:
        statuses = [_run_cell(c) for c in cells]
    failures = [s for s in statuses if s["status"] == "error"]
    rows = []
    for cell, status in zip(cells, statuses):
        if status["status"] == "error":
            rows.append({"gamma_c": cell["gamma_c"], "gamma_r": cell["gamma_r"],
                         "model": cell["model"], "seed": cell["seed"],
                         "tau": "", "metric": "error",
                         "value": status["error"]})
            continue
        for rec in _load_json(Path(cell["cell_dir"]) / "metrics.json"):
            for metric in ("rmse", "treatment_accuracy", "timing_accuracy"):
                if metric in rec:
                    rows.append({"gamma_c": rec["gamma_c"],
                                 "gamma_r": rec["gamma_r"],
                                 "model": rec["model"], "seed": rec["seed"],
                                 "tau": rec["tau"], "metric": metric,
                                 "value": rec[metric]})
    import csv as _csv
    with open(out / "results.csv", "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=["gamma_c", "gamma_r", "model",
                                           "seed", "tau", "metric", "value"])
        w.writeheader()
        w.writerows(rows)
    write_manifest(out, "sweep",
                   {"grid": [list(g) for g in grid], "models": args.models,
                    "seeds": args.seeds, "spec": spec}, args.seeds[0])
    for s in failures:
        print(f"cell failed: {s['cell']}: {s['error']}", file=sys.stderr)
    print(f"sweep complete: {len(cells) - len(failures)}/{len(cells)} cells "
          f"-> {out / 'results.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# search


def cmd_search(args) -> int:
    data_dir = Path(args.data)
    dataset = dataset_from_csv(data_dir / "dataset.csv")
    n_val = max(1, len(dataset) // 5)
    train_set, val_set = dataset[:-n_val], dataset[-n_val:]
    val_ids = {t.patient_id for t in val_set}
    branch_path = data_dir / "branches_tau1.csv"
    if not branch_path.exists():
        raise ConfigError(f"search needs {branch_path} (run simulate with "
                          "--tau 1)")
    val_branches = [bs for bs in branch_sets_from_csv(branch_path)
                    if bs.patient_id in val_ids]
    spec = _load_json(args.spec) if args.spec else {}
    space = spec.get("space", {
        "hidden": [12, 24, 48],
        "learning_rate": [0.001, 0.005, 0.01],
        "batch_size": [32, 64, 128],
        "lambda_max": [0.5, 1.0, 2.0],
    })

    def score(params):
        tc = _train_config({**spec, **params, "seed": args.seed})
        if args.model in ("crn", "crn_lambda0"):
            cfg = CrnConfig(hidden=params.get("hidden", 24),
                            repr_size=params.get("hidden", 24) // 2)
            if args.model == "crn_lambda0":
                tc.lambda_max = 0.0
            model = train_crn(train_set, cfg, tc)
        elif args.model == "rnn":
            model = train_rnn_baseline(
                train_set, RnnConfig(hidden=params.get("hidden", 24)), tc)
        else:
            raise ConfigError(f"search supports neural models, not "
                              f"'{args.model}'")
        preds = model.predict_branch_sets(val_set, val_branches)
        flat_p = np.concatenate(preds)
        flat_t = np.concatenate([b.true_outcomes for b in val_branches])
        return normalized_rmse(flat_p, flat_t)

    result = random_search(score, space, args.trials, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "best.json", "w") as f:
        json.dump({"params": result.params, "score": result.score}, f,
                  indent=2)
    import csv as _csv
    with open(out / "search.csv", "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=list(result.trials[0]))
        w.writeheader()
        w.writerows(result.trials)
    write_manifest(out, "search", {"model": args.model, "space": space,
                                   "trials": args.trials}, args.seed)
    print(f"best {args.model} params {result.params} "
          f"(val rmse {result.score:.3f}%)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-repr


def cmd_export_repr(args) -> int:
    model = CrnModel.load(Path(args.model_dir) / "encoder.json",
                          Path(args.model_dir) / "decoder.json")
    dataset = dataset_from_csv(args.data)
    export_representations(model.encoder, dataset, model.scaler, args.out)
    print(f"wrote representations for {len(dataset)} patients -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfseq",
                                description="counterfactual sequence "
                                "benchmark harness")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a dataset and branch files")
    s.add_argument("--config", help="SimConfig JSON file")
    s.add_argument("--out", required=True)
    s.add_argument("--gamma", type=float, help="sets both gamma_c and gamma_r")
    s.add_argument("--gamma-c", dest="gamma_c", type=float)
    s.add_argument("--gamma-r", dest="gamma_r", type=float)
    s.add_argument("--n", type=int, help="number of patients")
    s.add_argument("--max-t", dest="max_t", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--tau", type=int, nargs="*", default=[1],
                   help="horizons to build branch files for")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a model on a simulated dataset")
    t.add_argument("--spec", help="experiment spec JSON")
    t.add_argument("--model", choices=MODEL_TYPES)
    t.add_argument("--data", help="directory with dataset.csv")
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on branch files")
    e.add_argument("--model", choices=MODEL_TYPES)
    e.add_argument("--model-dir", dest="model_dir")
    e.add_argument("--data", required=True)
    e.add_argument("--tau", type=int, nargs="+", default=[1])
    e.add_argument("--out", required=True)
    e.add_argument("--oracle", action="store_true",
                   help="evaluate the ground-truth oracle (harness self-test)")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help="simulate/train/evaluate over a gamma grid")
    w.add_argument("--spec", help="shared training spec JSON")
    w.add_argument("--gammas", type=float, nargs="*",
                   help="symmetric gamma values")
    w.add_argument("--gamma-pairs", dest="gamma_pairs", nargs="*",
                   help="asymmetric settings as 'c:r', e.g. 0:5")
    w.add_argument("--models", nargs="+", required=True)
    w.add_argument("--seeds", type=int, nargs="+", default=[0])
    w.add_argument("--tau", type=int, nargs="*")
    w.add_argument("--n", type=int)
    w.add_argument("--max-t", dest="max_t", type=int)
    w.add_argument("--epochs", type=int)
    w.add_argument("--out", required=True)
    w.add_argument("--resume", action="store_true")
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    h = sub.add_parser("search", help="random hyperparameter search")
    h.add_argument("--spec")
    h.add_argument("--model", required=True)
    h.add_argument("--data", required=True)
    h.add_argument("--trials", type=int, default=10)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_search)

    x = sub.add_parser("export-repr",
                       help="export balancing representations to CSV")
    x.add_argument("--model-dir", dest="model_dir", required=True)
    x.add_argument("--data", required=True, help="dataset CSV path")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_repr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ad.GradientError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
