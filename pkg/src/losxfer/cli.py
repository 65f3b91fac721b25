"""Command-line surface.

Subcommands: synth, prep, tune, train, transfer, explain, compare. Every
command validates inputs, writes versioned outputs and exits 0 on success,
2 on validation errors, 3 on numeric failures. All randomness flows from
--seed through named derivation; XFER_THREADS caps parallel runs in compare.
"""

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from losxfer import benchmark
from losxfer.checkpoint import (load_checkpoint, predictions_hash,
                                save_checkpoint)
from losxfer.dataprep import (load_events_csv, load_prepared, load_targets_csv,
                              prepare_domain, save_events_csv, save_prepared,
                              save_targets_csv, split_and_scale)
from losxfer.errors import NonFiniteError, ValidationError
from losxfer.evaluation import compute_metrics
from losxfer.experiments import (MODES, CompareConfig, TargetExperiment,
                                 run_compare, train_source)
from losxfer.explain import (expected_gradients, global_importance,
                             importance_overlap, model_gradient_fn)
from losxfer.hpo import SearchSpace, three_step_search
from losxfer.model import Hyperparams, forward_many_to_one, init_model
from losxfer.seeds import derive_rng, derive_seed
from losxfer.synth import (config_from_record, config_to_record,
                           synth_generate)
from losxfer.training import AdamOptimizer, TrainConfig, train
from losxfer.transfer import compute_feature_alignment

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _hyper_to_record(hyper: Hyperparams) -> dict:
    return {
        "num_layers": hyper.num_layers,
        "hidden_units": hyper.hidden_units,
        "learning_rate": hyper.learning_rate,
        "dropout": hyper.dropout,
        "batch_size": hyper.batch_size,
    }


def _hyper_from_record(rec: dict) -> Hyperparams:
    try:
        return Hyperparams(
            num_layers=int(rec["num_layers"]),
            hidden_units=int(rec["hidden_units"]),
            learning_rate=float(rec["learning_rate"]),
            dropout=float(rec["dropout"]),
            batch_size=int(rec["batch_size"]),
        )
    except KeyError as exc:
        raise ValidationError(f"hyperparameter record missing {exc}") from exc


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _manifest_hash(dataset_dir) -> str:
    manifest = Path(dataset_dir) / "manifest.json"
    return hashlib.sha256(manifest.read_bytes()).hexdigest()


def cmd_synth(args) -> int:
    if args.preset:
        config = benchmark.default_synth_config(seed=args.seed if args.seed is not None else 7)
    else:
        if not args.config:
            raise ValidationError("synth needs --config or --preset benchmark")
        rec = _read_json(args.config)
        if args.seed is not None:
            rec["seed"] = args.seed
        config = config_from_record(rec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "synth_config.json", config_to_record(config))
    for name, (events, targets) in synth_generate(config).items():
        domain_dir = out / name
        domain_dir.mkdir(exist_ok=True)
        save_events_csv(events, domain_dir / "events.csv")
        save_targets_csv(targets, domain_dir / "targets.csv")
        print(f"synth: wrote {len(events)} events for domain {name}")
    return 0


def cmd_prep(args) -> int:
    events = load_events_csv(args.events, domain=args.domain)
    targets = load_targets_csv(args.targets)
    prepared = prepare_domain(events, targets)
    save_prepared(prepared, args.out)
    print(f"prep: domain {prepared.domain}: {prepared.n_stays} stays, "
          f"{len(prepared.input_names)} inputs -> width {2 * len(prepared.input_names) + 1}")
    return 0


def _tune_objective(prepared, max_epochs, patience):
    def objective(config: Hyperparams, seed: int) -> float:
        splits = split_and_scale(prepared, seed)
        model = init_model(prepared.feature_space(), config, derive_rng(seed, "init"))
        train_config = TrainConfig(learning_rate=config.learning_rate,
                                   batch_size=config.batch_size,
                                   max_epochs=max_epochs, patience=patience)
        _, report = train(model, splits.train.xy(), splits.val.xy(), train_config,
                          derive_seed(seed, "train"))
        return min(report.val_losses)

    return objective


def cmd_tune(args) -> int:
    prepared = load_prepared(args.dataset)
    objective = _tune_objective(prepared, args.max_epochs, patience=6)
    rng = derive_rng(args.seed, "tune", prepared.domain)
    result = three_step_search(objective, rng, n_trials=args.trials,
                               use_surrogate=not args.no_surrogate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "hyperparams.json", _hyper_to_record(result.best_config))
    with open(out / "trials.jsonl", "w") as fh:
        for step_idx, step in enumerate(result.steps, start=1):
            for trial in step["trials"]:
                rec = trial.to_record()
                rec["step"] = step_idx
                fh.write(json.dumps(rec) + "\n")
    print(f"tune: best {_hyper_to_record(result.best_config)}")
    return 0


def _evaluate_and_save(model, optimizer_state, splits, seed, dataset_dir, out_dir,
                       report, extra_provenance=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    val_pred, _ = forward_many_to_one(splits.val.tensor, model.layers, model.dense)
    test_pred, _ = forward_many_to_one(splits.test.tensor, model.layers, model.dense)
    metrics = compute_metrics(test_pred, splits.test.targets)
    provenance = {
        "seed": seed,
        "data_manifest_sha256": _manifest_hash(dataset_dir),
        "val_predictions_sha256": predictions_hash(val_pred),
    }
    provenance.update(extra_provenance or {})
    save_checkpoint(out / "checkpoint.json", model,
                    optimizer_state=optimizer_state, provenance=provenance)
    payload = report.to_record()
    payload["test_metrics"] = metrics.to_record()
    with open(out / "train_report.jsonl", "w") as fh:
        fh.write(json.dumps(payload) + "\n")
    print(f"train: epochs={report.epochs_to_converge} best={report.best_epoch} "
          f"test MAE={metrics.mae:.4f} MAPE={metrics.mape:.4f} MSE={metrics.mse:.4f}")


def cmd_train(args) -> int:
    prepared = load_prepared(args.dataset)
    hyper = _hyper_from_record(_read_json(args.hyperparams))
    splits = split_and_scale(prepared, args.seed)
    model = init_model(prepared.feature_space(), hyper, derive_rng(args.seed, "init"))
    optimizer = AdamOptimizer(model.param_dict(), hyper.learning_rate)
    config = TrainConfig(learning_rate=hyper.learning_rate,
                         batch_size=hyper.batch_size,
                         max_epochs=args.max_epochs, patience=6)
    model, report = train(model, splits.train.xy(), splits.val.xy(), config,
                          derive_seed(args.seed, "train"), optimizer=optimizer)
    _evaluate_and_save(model, optimizer.state, splits, args.seed, args.dataset,
                       args.out, report)
    return 0


def cmd_transfer(args) -> int:
    if args.mode not in ("weight_transfer", "full_transfer", "discriminative"):
        raise ValidationError(
            f"--mode must be weight_transfer, full_transfer or discriminative, got {args.mode}"
        )
    ckpt = load_checkpoint(args.source)
    prepared = load_prepared(args.target)
    if args.mode == "full_transfer" and ckpt.optimizer_state is None:
        raise ValidationError("full_transfer needs a checkpoint with optimizer state")
    exp = TargetExperiment(
        prepared=prepared, mode=args.mode,
        hyper=ckpt.model.hyper.replace(batch_size=args.batch_size or ckpt.model.hyper.batch_size),
        source_model=ckpt.model, source_opt_state=ckpt.optimizer_state,
        alpha=args.alpha, max_epochs=args.max_epochs,
    )
    splits = split_and_scale(prepared, args.seed)
    model, optimizer = exp.build(args.seed)
    config = TrainConfig(learning_rate=model.hyper.learning_rate,
                         batch_size=model.hyper.batch_size,
                         max_epochs=args.max_epochs, patience=6)
    model, report = train(model, splits.train.xy(), splits.val.xy(), config,
                          derive_seed(args.seed, "train"), optimizer=optimizer)
    plan = compute_feature_alignment(ckpt.model.feature_space,
                                     prepared.feature_space())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "transfer_plan.json", plan.to_record())
    state = optimizer.state if isinstance(optimizer, AdamOptimizer) else None
    _evaluate_and_save(model, state, splits, args.seed, args.target, args.out,
                       report, extra_provenance={"mode": args.mode,
                                                 "alpha": args.alpha})
    print(f"transfer: {plan.n_coinciding} coinciding, "
          f"{plan.n_non_coinciding} non-coinciding features "
          f"({plan.relation})")
    return 0


def cmd_explain(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    prepared = load_prepared(args.dataset)
    space = prepared.feature_space()
    if tuple(space.names) != tuple(ckpt.model.feature_space.names):
        raise ValidationError(
            "checkpoint feature space does not match the dataset; explain "
            "needs the model trained on this domain"
        )
    splits = split_and_scale(prepared, args.seed)
    rng = derive_rng(args.seed, "explain")
    background = splits.train.tensor
    if len(background) > args.background_size:
        pick = rng.choice(len(background), size=args.background_size, replace=False)
        background = background[pick]
    attr = expected_gradients(model_gradient_fn(ckpt.model), splits.test.tensor,
                              background, n_samples=args.samples, rng=rng)
    ranking = global_importance(attr, space.names, signed=args.signed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "importance.csv", ("rank", "feature", "score"),
               ranking.to_rows())
    if args.baseline_ranking:
        rows = list(csv.DictReader(open(args.baseline_ranking)))
        base_features = tuple(r["feature"] for r in rows)
        base_scores = np.asarray([float(r["score"]) for r in rows])
        from losxfer.explain import ImportanceRanking
        baseline = ImportanceRanking(features=base_features, scores=base_scores)
        overlap = importance_overlap(baseline, ranking, k=args.k)
        _write_json(out / "overlap.json", overlap.to_record())
        _write_csv(out / "before_after.csv",
                   ("feature", "rank_before", "rank_after"),
                   [(f, baseline.rank_of(f), ranking.rank_of(f))
                    for f in base_features])
        print(f"explain: top-{overlap.k} overlap = {overlap.overlap_fraction:.2f}")
    print(f"explain: wrote importance for {len(space)} features")
    return 0


def _compare_config_from_file(path, runs_override=None, seed_override=None):
    rec = _read_json(path)
    if "synth" in rec and rec["synth"]:
        synth_config = config_from_record(rec["synth"])
        prepared = {}
        from losxfer.synth import synth_prepared
        prepared = synth_prepared(synth_config)
    elif "datasets" in rec and rec["datasets"]:
        prepared = {name: load_prepared(path_)
                    for name, path_ in rec["datasets"].items()}
    else:
        raise ValidationError("compare config needs either 'synth' or 'datasets'")
    source_hyper = _hyper_from_record(rec["source_hyper"])
    target_hyper = {name: _hyper_from_record(h)
                    for name, h in rec.get("target_hyper", {}).items()}
    config = CompareConfig(
        source=rec["source"],
        targets=tuple(rec["targets"]),
        modes=tuple(rec.get("modes", ("scratch", "weight_transfer"))),
        n_runs=int(runs_override or rec.get("n_runs", 100)),
        seed=int(seed_override if seed_override is not None else rec.get("seed", 0)),
        source_hyper=source_hyper,
        target_hyper=target_hyper,
        alpha=float(rec.get("alpha", 0.1)),
        max_epochs=int(rec.get("max_epochs", 100)),
    )
    return config, prepared, rec


def cmd_compare(args) -> int:
    config, prepared, rec = _compare_config_from_file(
        args.config, runs_override=args.runs, seed_override=args.seed)
    if rec.get("hpo"):
        hpo_trials = int(rec.get("hpo_trials", 10))
        max_epochs = config.max_epochs
        tuned = {}
        for name in (config.source, *config.targets):
            objective = _tune_objective(prepared[name], max_epochs, patience=6)
            result = three_step_search(objective,
                                       derive_rng(config.seed, "tune", name),
                                       n_trials=hpo_trials)
            tuned[name] = result.best_config
            print(f"compare: tuned {name}: {_hyper_to_record(result.best_config)}")
        config = CompareConfig(
            source=config.source, targets=config.targets, modes=config.modes,
            n_runs=config.n_runs, seed=config.seed,
            source_hyper=tuned[config.source],
            target_hyper={t: tuned[t] for t in config.targets},
            alpha=config.alpha, max_epochs=config.max_epochs,
        )
    result = run_compare(config, prepared)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "distributions.json",
                {f"{t}/{m}": d.summary()
                 for (t, m), d in sorted(result.distributions.items())})
    _write_csv(out / "runs.csv", ("experiment", "run", "metric", "value"),
               result.long_rows())
    _write_csv(out / "welch.csv",
               ("target", "mode", "metric", "statistic", "p_value", "stars"),
               [(r["target"], r["mode"], r["metric"], r["statistic"],
                 r["p_value"], r["stars"]) for r in result.welch_rows])
    _write_csv(out / "tukey.csv",
               ("target", "metric", "group_a", "group_b", "mean_diff",
                "p_adj", "lower", "upper", "reject"),
               [(r["target"], r["metric"], r["group_a"], r["group_b"],
                 r["mean_diff"], r["p_value"], r["ci_lower"], r["ci_upper"],
                 r["reject"]) for r in result.tukey_rows])
    _write_csv(out / "timing.csv",
               ("target", "mode", "runs", "wall_hours", "cpu_hours"),
               [(r["target"], r["mode"], r["runs"], r["wall_hours"],
                 r["cpu_hours"]) for r in result.timing_rows])
    _write_json(out / "source_report.json", result.source_report)
    for (t, m), d in sorted(result.distributions.items()):
        lo, hi = d.ci("mae")
        print(f"compare: {t}/{m}: median epochs={d.median('epochs'):.0f} "
              f"MAE={d.median('mae'):.4f} CI=({lo:.4f}, {hi:.4f}) "
              f"stagnated={d.stagnation_count}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="losxfer",
        description="LSTM length-of-stay regression with partial weight "
                    "transfer across domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic multi-domain event files")
    p.add_argument("--config", help="synth config JSON")
    p.add_argument("--preset", choices=["benchmark"],
                   help="use the bundled benchmark configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="curate a long-format event table")
    p.add_argument("--events", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("tune", help="three-step Bayesian hyperparameter search")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=60)
    p.add_argument("--no-surrogate", action="store_true",
                   help="pure random sampling instead of the GP surrogate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="train one model from scratch")
    p.add_argument("--dataset", required=True)
    p.add_argument("--hyperparams", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="adapt a source checkpoint to a target domain")
    p.add_argument("--source", required=True, help="source checkpoint file")
    p.add_argument("--target", required=True, help="target dataset directory")
    p.add_argument("--mode", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=None,
                   help="target batch size (never copied from the source)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("explain", help="expected-gradients feature importance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--background-size", type=int, default=200)
    p.add_argument("--signed", action="store_true",
                   help="signed aggregation instead of magnitudes")
    p.add_argument("--baseline-ranking", default=None,
                   help="importance.csv to compare against (top-k overlap)")
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("compare", help="repeated-run comparison across modes")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonFiniteError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
