"""Config-driven experiment runner for private cross-domain adaptation.

One run draws a synthetic source/target pair per seed, pretrains the
encoder on the public source domain (cached per seed and config), adapts it
to the shifted target domain with the chosen method (from scratch, full
fine-tune, linear probe, or residual adapters) under the chosen privacy
regime (none, DP-SGD, or teacher-ensemble aggregation), and evaluates on a
held-out public split. Reports carry accuracy, trainable-parameter counts,
the accuracy-per-log-parameter utility score, and the privacy spent; every
report is reproducible bit for bit from its seeds.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from privadapt import dpsgd as dpsgd_mod
from privadapt import nets, pate
from privadapt.datagen import (
    SyntheticSpec,
    concat,
    generate,
    split_teacher_student_eval,
)
from privadapt.privacy import PrivacyBudget

__all__ = [
    "METHODS",
    "PRIVACY_REGIMES",
    "SWEEP_AXES",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "utility",
    "run",
    "sweep",
    "aggregate_reports",
    "write_report_json",
    "write_summary_csv",
    "clear_pretrain_cache",
]

METHODS = ("fs", "ft", "lp", "adapters")
PRIVACY_REGIMES = ("none", "dpsgd", "pate")
SWEEP_AXES = ("adapter_d", "topology", "lambda")


class ConfigError(ValueError):
    """An experiment configuration that cannot be run."""


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "ft"
    privacy: str = "none"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    delta: float = 1e-5
    target_epsilon: float = 8.0
    # synthetic task
    num_classes: int = 5
    samples_per_class: int = 1200
    feature_dim: int = 40
    class_separation: float = 4.0
    domain_shift: float = 1.0
    test_fraction: float = 0.2
    # model shape
    hidden_dim: int = 64
    num_layers: int = 4
    block: str = "dense"
    adapter_dim: int = 8
    connection: str = "none"
    # optimization
    pretrain_epochs: int = 15
    epochs: int = 40
    learning_rate: float = 2e-3
    batch_size: int = 32
    weight_decay: float = 0.0
    teacher_epochs: int = 80
    teacher_batch: int = 64
    teacher_lr: float = 5e-3
    student_epochs: int = 80
    # teacher-ensemble aggregation
    pate_lambda: float = 20.0
    pate_teachers: int = 100
    pate_max_queries: int = 250
    # DP-SGD (noise multiplier 0 means: calibrate to the target budget)
    dpsgd_clip: float = 1.0
    dpsgd_noise_multiplier: float = 0.0
    dpsgd_steps: int = 150
    dpsgd_batch: int = 32
    dpsgd_lr: float = 0.1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.privacy not in PRIVACY_REGIMES:
            raise ConfigError(
                f"privacy must be one of {PRIVACY_REGIMES}, got {self.privacy!r}"
            )
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.privacy == "pate" and self.pate_teachers < 2:
            raise ConfigError("the pate regime needs at least two teachers")
        if self.privacy == "pate" and not self.pate_lambda > 0.0:
            raise ConfigError("the pate regime needs a positive noise scale")
        if self.privacy == "dpsgd" and (self.dpsgd_steps < 0 or not self.dpsgd_clip > 0):
            raise ConfigError("the dpsgd regime needs a positive clip norm and steps >= 0")

    def data_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            num_classes=self.num_classes,
            samples_per_class=self.samples_per_class,
            feature_dim=self.feature_dim,
            class_separation=self.class_separation,
            domain_shift=self.domain_shift,
            seed=seed,
        )

    def encoder_config(self) -> nets.EncoderConfig:
        return nets.EncoderConfig(self.feature_dim, self.hidden_dim, self.num_layers, self.block)


def utility(accuracy_percent: float, trainable_params: int) -> float:
    """Accuracy margin over chance per log trainable parameter.

    ``(accuracy - 50) / ln(trainable_params)``; natural logarithm.
    """
    if trainable_params < 2:
        raise ValueError("utility needs at least two trainable parameters")
    return (accuracy_percent - 50.0) / math.log(trainable_params)


@dataclass(frozen=True)
class ExperimentReport:
    method: str
    privacy: str
    seeds: tuple[int, ...]
    accuracy_per_seed: tuple[float, ...]
    accuracy_mean: float
    trainable_params: int
    utility: float
    epsilon_spent: float
    delta: float
    wall_time: float
    eval_size: int
    adapter_dim: int | None = None
    connection: str | None = None
    pate_lambda: float | None = None
    queries_spent: int | None = None
    steps_run: int | None = None
    sampling_rate: float | None = None

    def __post_init__(self) -> None:
        recomputed = utility(self.accuracy_mean, self.trainable_params)
        if abs(recomputed - self.utility) > 1e-9:
            raise ValueError(
                f"utility {self.utility} does not match its own fields ({recomputed})"
            )
        if abs(self.accuracy_mean - float(np.mean(self.accuracy_per_seed))) > 1e-9:
            raise ValueError("accuracy_mean does not match the per-seed accuracies")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        doc = self.to_dict()
        doc["seeds"] = list(doc["seeds"])
        doc["accuracy_per_seed"] = list(doc["accuracy_per_seed"])
        return json.dumps(doc, indent=2)


# Pretraining is deterministic per (seed, data, model, schedule), so sweeps
# reuse it; values are never mutated (training is copy-on-write throughout).
_PRETRAIN_CACHE: dict[tuple, nets.Classifier] = {}


def clear_pretrain_cache() -> None:
    _PRETRAIN_CACHE.clear()


def _pretrained_model(config: ExperimentConfig, seed: int) -> nets.Classifier:
    key = (
        seed,
        config.num_classes,
        config.samples_per_class,
        config.feature_dim,
        config.class_separation,
        config.domain_shift,
        config.hidden_dim,
        config.num_layers,
        config.block,
        config.pretrain_epochs,
        config.learning_rate,
        config.batch_size,
    )
    if key not in _PRETRAIN_CACHE:
        source, _ = generate(config.data_spec(seed))
        rng = np.random.default_rng(seed)
        init_rng, train_rng = rng.spawn(2)
        model = nets.init_classifier(
            config.encoder_config(), config.num_classes, None, init_rng
        )
        cfg = nets.TrainConfig(
            epochs=config.pretrain_epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
        )
        trained, _ = nets.train(model, source, "full_finetune", cfg, train_rng)
        _PRETRAIN_CACHE[key] = trained
    return nets.clone(_PRETRAIN_CACHE[key])


def _seed_run(config: ExperimentConfig, seed: int) -> dict:
    _, target = generate(config.data_spec(seed))
    root = np.random.default_rng((seed, 20240527))
    split_rng, scratch_rng, adapter_rng, teacher_rng, label_rng, adapt_rng = root.spawn(6)

    splits = split_teacher_student_eval(target, split_rng, config.test_fraction)

    if config.method == "fs":
        model = nets.init_classifier(
            config.encoder_config(), config.num_classes, None, scratch_rng
        )
    else:
        model = _pretrained_model(config, seed)

    mode = {"fs": "full_finetune", "ft": "full_finetune", "lp": "linear_probe",
            "adapters": "adapters"}[config.method]
    if config.method == "adapters":
        adapter_cfg = nets.AdapterConfig(config.adapter_dim, config.connection)
        model = nets.attach_adapters(model, adapter_cfg, adapter_rng)

    out: dict = {"trainable_params": nets.count_trainable(model, mode)}
    adapt_cfg = nets.TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )

    if config.privacy == "none":
        data = concat(splits.teacher_train, splits.student_public)
        final, _ = nets.train(model, data, mode, adapt_cfg, adapt_rng)
        out["epsilon"] = 0.0

    elif config.privacy == "dpsgd":
        data = concat(splits.teacher_train, splits.student_public)
        multiplier = config.dpsgd_noise_multiplier
        if multiplier == 0.0:
            multiplier = dpsgd_mod.calibrate_noise_multiplier(
                config.dpsgd_steps, config.delta, config.target_epsilon
            )
        allowed = dpsgd_mod.max_steps_within(
            multiplier, config.dpsgd_batch, len(data), config.dpsgd_lr,
            config.delta, config.target_epsilon, clip_norm=config.dpsgd_clip,
        )
        steps = min(config.dpsgd_steps, allowed)
        sgd_cfg = dpsgd_mod.DpsgdConfig(
            clip_norm=config.dpsgd_clip,
            noise_multiplier=multiplier,
            batch_size=config.dpsgd_batch,
            dataset_size=len(data),
            learning_rate=config.dpsgd_lr,
            steps=steps,
        )
        final, _ = dpsgd_mod.dpsgd_train(model, data, mode, sgd_cfg, adapt_rng)
        out["epsilon"] = dpsgd_mod.dpsgd_account(sgd_cfg, config.delta).epsilon
        out["steps_run"] = steps
        out["sampling_rate"] = sgd_cfg.sampling_rate

    else:  # pate
        chunks = pate.partition_disjoint(splits.teacher_train, config.pate_teachers, teacher_rng)
        teacher_cfg = nets.TrainConfig(
            epochs=config.teacher_epochs,
            batch_size=config.teacher_batch,
            learning_rate=config.teacher_lr,
            weight_decay=config.weight_decay,
        )
        ensemble = pate.train_teachers(chunks, model, mode, teacher_cfg, teacher_rng)
        pate_cfg = pate.PateConfig(
            lam=config.pate_lambda,
            num_teachers=config.pate_teachers,
            max_queries=config.pate_max_queries,
            target_budget=PrivacyBudget(config.target_epsilon, config.delta),
        )
        ledger = pate.QueryLedger.fresh(
            pate.per_query_rdp(config.pate_lambda, config.pate_teachers)
        )
        result = pate.label_student_data(
            ensemble, splits.student_public, pate_cfg, ledger, label_rng
        )
        student_cfg = nets.TrainConfig(
            epochs=config.student_epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            weight_decay=config.weight_decay,
        )
        final = pate.train_student(result.dataset, model, mode, student_cfg, adapt_rng)
        out["epsilon"] = result.ledger.epsilon_spent(config.delta)
        out["queries"] = result.ledger.queries_spent

    out["accuracy"] = nets.evaluate(final, splits.eval)
    out["eval_size"] = len(splits.eval)
    return out


def run(config: ExperimentConfig) -> ExperimentReport:
    """Execute the configured experiment across its seeds."""
    started = time.perf_counter()
    per_seed = [_seed_run(config, seed) for seed in config.seeds]

    counts = {r["trainable_params"] for r in per_seed}
    if len(counts) != 1:
        raise RuntimeError(f"trainable count varied across seeds: {counts}")
    trainable = counts.pop()
    accuracies = tuple(r["accuracy"] for r in per_seed)
    mean_acc = float(np.mean(accuracies))
    epsilon = max(r["epsilon"] for r in per_seed)
    if epsilon > config.target_epsilon + 1e-9:
        raise RuntimeError(f"accounting exceeded the configured budget: {epsilon}")

    return ExperimentReport(
        method=config.method,
        privacy=config.privacy,
        seeds=config.seeds,
        accuracy_per_seed=accuracies,
        accuracy_mean=mean_acc,
        trainable_params=trainable,
        utility=utility(mean_acc, trainable),
        epsilon_spent=epsilon,
        delta=config.delta,
        wall_time=time.perf_counter() - started,
        eval_size=sum(r["eval_size"] for r in per_seed),
        adapter_dim=config.adapter_dim if config.method == "adapters" else None,
        connection=config.connection if config.method == "adapters" else None,
        pate_lambda=config.pate_lambda if config.privacy == "pate" else None,
        queries_spent=max((r.get("queries", 0) for r in per_seed), default=None)
        if config.privacy == "pate" else None,
        steps_run=max((r.get("steps_run", 0) for r in per_seed), default=None)
        if config.privacy == "dpsgd" else None,
        sampling_rate=per_seed[0].get("sampling_rate") if config.privacy == "dpsgd" else None,
    )


def sweep(
    config: ExperimentConfig, axis: str, values: Sequence
) -> list[ExperimentReport]:
    """One run per value along ``axis``; reports ordered by axis value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    field_name = {"adapter_d": "adapter_dim", "topology": "connection",
                  "lambda": "pate_lambda"}[axis]
    ordered = sorted(values) if all(isinstance(v, (int, float)) for v in values) else list(values)
    reports = []
    for value in ordered:
        reports.append(run(replace(config, **{field_name: value})))
    return reports


def aggregate_reports(reports: Sequence[ExperimentReport]) -> dict:
    """Weighted-mean accuracy across tasks, weighted by evaluation size."""
    if not reports:
        raise ValueError("nothing to aggregate")
    total = sum(r.eval_size for r in reports)
    acc = sum(r.accuracy_mean * r.eval_size for r in reports) / total
    return {"accuracy": float(acc), "eval_size": int(total), "runs": len(reports)}


def write_report_json(report: ExperimentReport, path) -> None:
    with open(path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")


def write_summary_csv(reports: Sequence[ExperimentReport], path) -> None:
    """One row per report: method, privacy, parameters, utility, accuracy."""
    with open(path, "w") as fh:
        fh.write("method,privacy,trainable_params,utility,accuracy,epsilon_spent,"
                 "adapter_dim,connection,pate_lambda\n")
        for r in reports:
            fh.write(
                f"{r.method},{r.privacy},{r.trainable_params},{r.utility:.4f},"
                f"{r.accuracy_mean:.2f},{r.epsilon_spent:.4f},"
                f"{'' if r.adapter_dim is None else r.adapter_dim},"
                f"{'' if r.connection is None else r.connection},"
                f"{'' if r.pate_lambda is None else r.pate_lambda}\n"
            )
