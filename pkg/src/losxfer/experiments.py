"""Experiment runners: one run = reshuffle splits, build a model per mode,
train with early stopping, evaluate on the held-out test split.

Modes:
  scratch           fresh Glorot model with the target's own hyperparameters
  weight_transfer   source kernel rows for coinciding features, fresh rows
                    for the rest, recurrent/bias/dense from the source; all
                    source hyperparameters except the batch size
  full_transfer     source model restricted to the target's (subset) feature
                    space, Adam moments carried over, training continues
  discriminative    weight transfer + two-rate Adam: fresh rows at the
                    source rate, pre-trained parameters at alpha * rate
"""

import time
from dataclasses import dataclass, field

import numpy as np

from losxfer.dataprep import PreparedDomain, split_and_scale
from losxfer.errors import ValidationError
from losxfer.evaluation import (RunDistribution, RunRecord, compute_metrics,
                                repeated_runs, tukey_hsd, welch_t_test)
from losxfer.model import Hyperparams, LstmModel, forward_many_to_one, init_model
from losxfer.seeds import derive_rng, derive_seed
from losxfer.training import (AdamOptimizer, DiscriminativeAdam, TrainConfig,
                              train)
from losxfer.transfer import (assign_learning_rates, compute_feature_alignment,
                              full_model_transfer, transfer_weights)

MODES = ("scratch", "weight_transfer", "full_transfer", "discriminative")
DEFAULT_ALPHA = 0.1


def train_source(prepared: PreparedDomain, hyper: Hyperparams, seed: int,
                 max_epochs: int = 100, patience: int = 6):
    """Train the source-domain model once; returns (model, adam_state, report)."""
    splits = split_and_scale(prepared, seed)
    model = init_model(prepared.feature_space(), hyper, derive_rng(seed, "init"))
    optimizer = AdamOptimizer(model.param_dict(), hyper.learning_rate)
    config = TrainConfig(learning_rate=hyper.learning_rate,
                         batch_size=hyper.batch_size,
                         max_epochs=max_epochs, patience=patience)
    model, report = train(model, splits.train.xy(), splits.val.xy(), config,
                          derive_seed(seed, "train"), optimizer=optimizer)
    return model, optimizer.state, report


@dataclass
class TargetExperiment:
    """Picklable single-run closure for repeated_runs."""

    prepared: PreparedDomain
    mode: str
    hyper: Hyperparams
    source_model: LstmModel = None
    source_opt_state: object = None
    alpha: float = DEFAULT_ALPHA
    max_epochs: int = 100
    patience: int = 6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode != "scratch" and self.source_model is None:
            raise ValidationError(f"mode {self.mode!r} needs a trained source model")

    def build(self, seed: int):
        """Model + optimizer for one run; separated for reuse by the CLI."""
        space = self.prepared.feature_space()
        if self.mode == "scratch":
            model = init_model(space, self.hyper, derive_rng(seed, "init"))
            optimizer = AdamOptimizer(model.param_dict(), model.hyper.learning_rate)
            return model, optimizer
        if self.mode == "full_transfer":
            model, opt_state = full_model_transfer(
                self.source_model, self.source_opt_state, space,
                target_batch_size=self.hyper.batch_size,
            )
            state = opt_state.copy() if opt_state is not None else None
            optimizer = AdamOptimizer(model.param_dict(),
                                      model.hyper.learning_rate, state=state)
            return model, optimizer
        plan = compute_feature_alignment(self.source_model.feature_space, space)
        model = transfer_weights(self.source_model, space, plan,
                                 derive_rng(seed, "init"),
                                 target_batch_size=self.hyper.batch_size)
        if self.mode == "weight_transfer":
            optimizer = AdamOptimizer(model.param_dict(), model.hyper.learning_rate)
        else:  # discriminative
            rates = assign_learning_rates(plan, model.hyper.learning_rate, self.alpha)
            optimizer = DiscriminativeAdam(
                model.param_dict(),
                coinciding_rows=plan.coinciding_target_rows(),
                fresh_rows=plan.fresh_target_rows(),
                lr_coinciding=rates["coinciding"],
                lr_fresh=rates["non_coinciding"],
            )
        return model, optimizer

    def __call__(self, seed: int) -> RunRecord:
        wall0 = time.perf_counter()
        cpu0 = time.process_time()
        splits = split_and_scale(self.prepared, seed)
        model, optimizer = self.build(seed)
        config = TrainConfig(learning_rate=model.hyper.learning_rate,
                             batch_size=model.hyper.batch_size,
                             max_epochs=self.max_epochs, patience=self.patience)
        model, report = train(model, splits.train.xy(), splits.val.xy(), config,
                              derive_seed(seed, "train"), optimizer=optimizer)
        pred, _ = forward_many_to_one(splits.test.tensor, model.layers, model.dense)
        metrics = compute_metrics(pred, splits.test.targets)
        return RunRecord(
            seed=seed,
            metrics=metrics,
            epochs_to_converge=report.epochs_to_converge,
            best_epoch=report.best_epoch,
            stagnated=report.stagnated,
            wall_seconds=time.perf_counter() - wall0,
            cpu_seconds=time.process_time() - cpu0,
        )


@dataclass
class CompareConfig:
    """Whole-suite experiment: one source, several targets, several modes."""

    source: str
    targets: tuple
    modes: tuple
    n_runs: int
    seed: int
    source_hyper: Hyperparams
    target_hyper: dict = field(default_factory=dict)  # per-target scratch hyper
    alpha: float = DEFAULT_ALPHA
    max_epochs: int = 100
    patience: int = 6

    def scratch_hyper(self, target: str) -> Hyperparams:
        return self.target_hyper.get(target, self.source_hyper)


@dataclass
class CompareResult:
    distributions: dict          # (target, mode) -> RunDistribution
    welch_rows: list             # per (target, scratch-vs-mode, metric)
    tukey_rows: list             # per (target, metric) pairwise rows
    timing_rows: list
    source_report: dict

    def long_rows(self):
        rows = []
        for dist in self.distributions.values():
            rows.extend(dist.long_rows())
        return rows


def _check_full_transfer(config: CompareConfig, prepared: dict, source_space):
    for target in config.targets:
        space = prepared[target].feature_space()
        blocking = [n for n in space.names if n not in source_space]
        if blocking:
            raise ValidationError(
                f"full_transfer requested but target {target!r} has "
                f"{len(blocking)} blocking features: {', '.join(blocking)}"
            )


def run_compare(config: CompareConfig, prepared: dict, threads=None) -> CompareResult:
    """Run every (target, mode) cell of the suite and assemble statistics.

    `prepared` maps domain name -> PreparedDomain and must include the source
    and every target.
    """
    for name in (config.source, *config.targets):
        if name not in prepared:
            raise ValidationError(f"no prepared dataset for domain {name!r}")
    for mode in config.modes:
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}")

    needs_source = any(m != "scratch" for m in config.modes)
    source_model = source_state = None
    source_report = {}
    if needs_source:
        source_model, source_state, report = train_source(
            prepared[config.source], config.source_hyper,
            derive_seed(config.seed, "source"),
            max_epochs=config.max_epochs, patience=config.patience,
        )
        source_report = report.to_record()
    if "full_transfer" in config.modes:
        _check_full_transfer(config, prepared, source_model.feature_space)

    distributions = {}
    for target in config.targets:
        for mode in config.modes:
            hyper = (config.scratch_hyper(target) if mode == "scratch"
                     else config.source_hyper.replace(
                         batch_size=config.scratch_hyper(target).batch_size))
            exp = TargetExperiment(
                prepared=prepared[target], mode=mode, hyper=hyper,
                source_model=source_model if mode != "scratch" else None,
                source_opt_state=source_state if mode == "full_transfer" else None,
                alpha=config.alpha, max_epochs=config.max_epochs,
                patience=config.patience,
            )
            label = f"{target}/{mode}"
            distributions[(target, mode)] = repeated_runs(
                exp, n_runs=config.n_runs,
                base_seed=derive_seed(config.seed, target, mode),
                label=label, threads=threads,
            )

    welch_rows = []
    if "scratch" in config.modes:
        for target in config.targets:
            base = distributions[(target, "scratch")]
            for mode in config.modes:
                if mode == "scratch":
                    continue
                other = distributions[(target, mode)]
                for metric in ("mae", "epochs"):
                    res = welch_t_test(base.samples(metric), other.samples(metric),
                                       label_a=f"{target}/scratch",
                                       label_b=f"{target}/{mode}")
                    row = res.to_record()
                    row.update({"target": target, "mode": mode, "metric": metric})
                    welch_rows.append(row)

    tukey_rows = []
    if len(config.modes) >= 3:
        for target in config.targets:
            for metric in ("mae", "epochs"):
                groups = {mode: distributions[(target, mode)].samples(metric)
                          for mode in config.modes}
                for res in tukey_hsd(groups):
                    row = res.to_record()
                    row.update({"target": target, "metric": metric})
                    tukey_rows.append(row)

    timing_rows = []
    for (target, mode), dist in sorted(distributions.items()):
        timing_rows.append({
            "target": target, "mode": mode, "runs": dist.n_runs,
            "wall_hours": sum(r.wall_seconds for r in dist.records) / 3600.0,
            "cpu_hours": sum(r.cpu_seconds for r in dist.records) / 3600.0,
        })

    return CompareResult(
        distributions=distributions,
        welch_rows=welch_rows,
        tukey_rows=tukey_rows,
        timing_rows=timing_rows,
        source_report=source_report,
    )
