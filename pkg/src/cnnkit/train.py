"""Training harness: the epoch loop, artifacts, and evaluation entry points.

One run executes scan -> stratified split -> build -> per-epoch
{train minibatches, validate, scheduler update, early-stop check} and
finally evaluates the best-validation-loss checkpoint on the test split
(a flag switches to the last-epoch weights instead). Everything a run
produces lands in ``output_dir``:

    split_manifest.json   the exact sample partition, re-loadable
    epochs.csv            append-only per-epoch log (the plot-data surface)
    best.ckpt             weights at the lowest validation loss
    final.ckpt            last-epoch weights plus optimizer state
    test_report.json      metrics of the selected checkpoint on the test split

With a fixed seed and num_threads=1 two runs produce byte-identical
artifacts (set record_time=false so the one wall-clock column reads zero).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    AugmentConfig,
    compute_class_weights,
    load_manifest,
    make_batches,
    save_manifest,
    scan_dataset,
    split_class_counts,
    stratified_split,
)
from .errors import CompatibilityError, ConfigError, DatasetStructureError, NumericFaultError
from .layers import softmax_cross_entropy
from .metrics import ConfusionMatrix, MetricsReport
from .model import CustomCNN, ModelConfig
from .optim import Adam, EarlyStopper, ReduceLROnPlateau
from .seeding import STREAM_DROPOUT, check_seed, derive_rng

logger = logging.getLogger("cnnkit")

EPOCH_LOG_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc,lr,epoch_time_sec"


@dataclass
class TrainConfig:
    """Flat run configuration; defaults follow the reference recipe."""

    dataset_root: str
    output_dir: str
    seed: int = 0
    batch_size: int = 32
    max_epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-4
    dropout: float = 0.5
    use_class_weights: bool = True
    augment: bool = True
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    scheduler_min_lr: float = 1e-6
    early_stop_min_delta: float = 1e-3
    early_stop_patience: int = 10
    image_size: int = 224
    num_threads: int = 1
    eval_final_model: bool = False
    record_time: bool = True

    def __post_init__(self):
        check_seed(self.seed)
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.image_size % 8 or self.image_size < 8:
            raise ConfigError(f"image_size must be a multiple of 8, got {self.image_size}")
        if self.num_threads < 1:
            raise ConfigError(f"num_threads must be >= 1, got {self.num_threads}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def recipe_dict(self) -> dict:
        """Hyperparameters only — the portable part of the config that goes
        into checkpoints (no run-local filesystem paths)."""
        d = self.to_dict()
        d.pop("dataset_root")
        d.pop("output_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"dataset_root", "output_dir"} - set(d)
        if missing:
            raise ConfigError(f"config is missing required keys: {sorted(missing)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    epoch_time_sec: float

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.train_loss:.6f},{self.train_acc:.6f},"
            f"{self.val_loss:.6f},{self.val_acc:.6f},{self.lr:.6f},"
            f"{self.epoch_time_sec:.6f}"
        )


@dataclass
class RunArtifacts:
    output_dir: Path
    final_checkpoint: Path
    best_checkpoint: Path
    epoch_log: Path
    split_manifest: Path
    test_report: Path
    records: list[EpochRecord]
    test_metrics: MetricsReport
    stopped_early: bool


class Trainer:
    """Owns one training run; split out from run_train so tests can
    override single phases (e.g. rig validate_epoch)."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.out = Path(config.output_dir)

    def setup(self):
        cfg = self.config
        self.index = scan_dataset(cfg.dataset_root)
        self.split = stratified_split(self.index, cfg.seed)
        if not self.split.val:
            raise DatasetStructureError(
                "validation split is empty; every class needs >= 7 samples to train"
            )
        train_counts = split_class_counts(self.split.train, self.index.num_classes)
        if min(train_counts) < 1:
            raise DatasetStructureError("a class has no training samples after splitting")
        self.class_weights = (
            compute_class_weights(train_counts) if cfg.use_class_weights else None
        )
        self.model = CustomCNN.build(
            ModelConfig(num_classes=self.index.num_classes, dropout_rate=cfg.dropout),
            cfg.seed,
        )
        self.optimizer = Adam(
            self.model.named_params(), lr=cfg.lr, weight_decay=cfg.weight_decay
        )
        self.scheduler = ReduceLROnPlateau(
            cfg.lr, factor=cfg.scheduler_factor, patience=cfg.scheduler_patience,
            min_lr=cfg.scheduler_min_lr,
        )
        self.stopper = EarlyStopper(
            min_delta=cfg.early_stop_min_delta, patience=cfg.early_stop_patience
        )
        self.dropout_rng = derive_rng(cfg.seed, STREAM_DROPOUT)
        self.augment_config = AugmentConfig(enabled=cfg.augment)

    def _weight_sum(self, targets) -> float:
        if self.class_weights is None:
            return float(len(targets))
        return float(self.class_weights[targets].sum())

    def train_epoch(self, epoch: int) -> tuple[float, float]:
        cfg = self.config
        self.model.train()
        loss_sum = weight_sum = 0.0
        correct = total = 0
        batches = make_batches(
            self.split.train, cfg.batch_size, image_size=cfg.image_size, shuffle=True,
            seed=cfg.seed, epoch=epoch, augment_config=self.augment_config,
            num_threads=cfg.num_threads,
        )
        for x, y in batches:
            self.model.zero_grads()
            logits = self.model.forward(x, rng=self.dropout_rng)
            loss, grad = softmax_cross_entropy(logits, y, self.class_weights)
            self.model.backward(grad)
            try:
                self.optimizer.step()
            except NumericFaultError as exc:
                raise NumericFaultError(f"epoch {epoch}: {exc}") from exc
            w = self._weight_sum(y)
            loss_sum += loss * w
            weight_sum += w
            correct += int((logits.argmax(axis=1) == y).sum())
            total += len(y)
        return loss_sum / weight_sum, correct / total

    def evaluate_split(self, samples) -> tuple[float, float, ConfusionMatrix]:
        cfg = self.config
        self.model.eval()
        loss_sum = weight_sum = 0.0
        cm = ConfusionMatrix(self.index.num_classes)
        for x, y in make_batches(samples, cfg.batch_size, image_size=cfg.image_size,
                                 num_threads=cfg.num_threads):
            logits = self.model.forward(x)
            loss, _ = softmax_cross_entropy(logits, y, self.class_weights)
            w = self._weight_sum(y)
            loss_sum += loss * w
            weight_sum += w
            cm.update(y, logits.argmax(axis=1))
        acc = float(np.trace(cm.m) / cm.total)
        return loss_sum / weight_sum, acc, cm

    def validate_epoch(self, epoch: int) -> tuple[float, float]:
        loss, acc, _ = self.evaluate_split(self.split.val)
        return loss, acc

    def run(self) -> RunArtifacts:
        cfg = self.config
        self.out.mkdir(parents=True, exist_ok=True)
        self.setup()

        manifest_path = self.out / "split_manifest.json"
        save_manifest(self.split, self.index, manifest_path)
        log_path = self.out / "epochs.csv"
        best_path = self.out / "best.ckpt"
        final_path = self.out / "final.ckpt"
        report_path = self.out / "test_report.json"
        for stale in (log_path, best_path, final_path, report_path):
            stale.unlink(missing_ok=True)

        with open(log_path, "w") as f:
            f.write(EPOCH_LOG_HEADER + "\n")

        cfg_snapshot = cfg.recipe_dict()
        records: list[EpochRecord] = []
        best_val = float("inf")
        stopped_early = False
        for epoch in range(1, cfg.max_epochs + 1):
            started = time.perf_counter()
            current_lr = self.scheduler.current_lr
            self.optimizer.lr = current_lr
            train_loss, train_acc = self.train_epoch(epoch)
            val_loss, val_acc = self.validate_epoch(epoch)
            elapsed = time.perf_counter() - started if cfg.record_time else 0.0

            record = EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc,
                                 current_lr, elapsed)
            records.append(record)
            with open(log_path, "a") as f:
                f.write(record.csv_row() + "\n")
                f.flush()
            logger.info(
                "epoch %d: train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f lr=%.2e",
                epoch, train_loss, train_acc, val_loss, val_acc, current_lr,
            )

            if val_loss < best_val:
                best_val = val_loss
                self._save(best_path, cfg_snapshot, best_val, optimizer=None)

            self.scheduler.observe(val_loss)
            if self.stopper.observe(val_loss):
                stopped_early = True
                logger.info("early stopping after epoch %d", epoch)
                break

        self._save(final_path, cfg_snapshot, best_val, optimizer=self.optimizer)

        eval_model = (
            self.model.eval() if cfg.eval_final_model else load_checkpoint(best_path).model
        )
        _, _, cm = self._test_with(eval_model)
        report = cm.compute()
        doc = report.to_dict(classes=self.index.classes)
        doc["split"] = "test"
        doc["evaluated_checkpoint"] = "final" if cfg.eval_final_model else "best"
        doc["num_samples"] = cm.total
        doc["epochs_run"] = len(records)
        doc["stopped_early"] = stopped_early
        report_path.write_text(json.dumps(doc, indent=1) + "\n")

        return RunArtifacts(
            output_dir=self.out,
            final_checkpoint=final_path,
            best_checkpoint=best_path,
            epoch_log=log_path,
            split_manifest=manifest_path,
            test_report=report_path,
            records=records,
            test_metrics=report,
            stopped_early=stopped_early,
        )

    def _test_with(self, model):
        saved = self.model
        self.model = model
        try:
            return self.evaluate_split(self.split.test)
        finally:
            self.model = saved

    def _save(self, path: Path, cfg_snapshot, best_val_loss, optimizer):
        # Write-then-rename keeps a crash from leaving a partial checkpoint.
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            save_checkpoint(tmp, self.model, self.index.classes, cfg_snapshot,
                            best_val_loss if best_val_loss != float("inf") else None,
                            optimizer)
            tmp.replace(path)
        finally:
            tmp.unlink(missing_ok=True)


def run_train(config: TrainConfig) -> RunArtifacts:
    """Execute the full training pipeline; see Trainer for the phases."""
    return Trainer(config).run()


def run_eval(checkpoint_path, dataset_root, split: str, manifest_path) -> MetricsReport:
    """Evaluate a checkpoint on one split of a manifest, no augmentation."""
    ck = load_checkpoint(checkpoint_path)
    assignment, classes = load_manifest(manifest_path, dataset_root)
    if classes != ck.class_names:
        raise CompatibilityError(
            f"manifest classes {classes} do not match checkpoint classes {ck.class_names}"
        )
    samples = assignment.split(split)
    image_size = int(ck.train_config.get("image_size", 224))
    batch_size = int(ck.train_config.get("batch_size", 32))
    model = ck.model.eval()
    cm = ConfusionMatrix(len(classes))
    for x, y in make_batches(samples, batch_size, image_size=image_size):
        logits = model.forward(x)
        cm.update(y, logits.argmax(axis=1))
    return cm.compute()
