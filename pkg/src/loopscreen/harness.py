"""Training loop with early stopping, evaluation metrics, and the
architecture-comparison runner.

Convention throughout: control = negative class, patient = positive class,
confusion matrix rows are actual [[TN, FP], [FN, TP]].
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, augment_dataset
from .config import read_kv, write_kv
from .dataset import DatasetSplit, LabeledItem, stratified_split
from .errors import (
    BadConfig,
    DivergedLoss,
    EmptyEval,
    EmptySplit,
    NonFiniteTensor,
    ShapeMismatch,
)
from .imaging import PreprocessConfig, preprocess
from .models import ARCHS, Model, build
from .nn import Adam, softmax, softmax_cross_entropy


@dataclass
class TrainConfig:
    arch: str = "custom_cnn"
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 60
    early_stop_patience: int = 10
    seed: int = 0
    deterministic: bool = True
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise BadConfig(f"unknown architecture {self.arch!r}")
        if self.learning_rate < 0:
            raise BadConfig("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise BadConfig("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise BadConfig("max_epochs must be >= 1")
        if not 1 <= self.early_stop_patience <= self.max_epochs:
            raise BadConfig("early_stop_patience must lie in [1, max_epochs]")

    @property
    def canvas(self) -> tuple[int, int]:
        return (self.preprocess.canvas_h, self.preprocess.canvas_w)

    def to_kv(self) -> dict:
        entries = {
            "arch": self.arch,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "deterministic": int(self.deterministic),
        }
        for key, value in self.preprocess.to_kv().items():
            entries[f"preprocess.{key}"] = value
        for key, value in self.augment.to_kv().items():
            entries[f"augment.{key}"] = value
        return entries

    @classmethod
    def from_kv(cls, entries: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        casts = {
            "arch": str,
            "learning_rate": float,
            "batch_size": int,
            "max_epochs": int,
            "early_stop_patience": int,
            "seed": int,
        }
        for key, cast in casts.items():
            if key in entries:
                kwargs[key] = cast(entries[key])
        if "deterministic" in entries:
            kwargs["deterministic"] = entries["deterministic"] not in ("0", "false", "False")
        pre = {k.split(".", 1)[1]: v for k, v in entries.items() if k.startswith("preprocess.")}
        aug = {k.split(".", 1)[1]: v for k, v in entries.items() if k.startswith("augment.")}
        kwargs["preprocess"] = PreprocessConfig.from_kv(pre)
        kwargs["augment"] = AugmentConfig.from_kv(aug)
        return cls(**kwargs)

    def save(self, path) -> None:
        write_kv(path, self.to_kv())

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_kv(read_kv(path))


@dataclass(frozen=True)
class Metrics:
    confusion: tuple[tuple[int, int], tuple[int, int]]  # [[TN, FP], [FN, TP]]
    accuracy: float
    precision_control: float
    recall_control: float
    precision_patient: float
    recall_patient: float

    @property
    def total(self) -> int:
        (tn, fp), (fn, tp) = self.confusion
        return tn + fp + fn + tp

    def text_block(self) -> str:
        (tn, fp), (fn, tp) = self.confusion
        return "\n".join(
            [
                f"accuracy          {self.accuracy:.6f}",
                f"confusion         TN={tn} FP={fp} FN={fn} TP={tp}",
                f"precision_control {self.precision_control:.6f}",
                f"recall_control    {self.recall_control:.6f}",
                f"precision_patient {self.precision_patient:.6f}",
                f"recall_patient    {self.recall_patient:.6f}",
            ]
        )

    def record_line(self) -> str:
        (tn, fp), (fn, tp) = self.confusion
        return (
            f"metrics\taccuracy={self.accuracy!r}\ttn={tn}\tfp={fp}\tfn={fn}\ttp={tp}"
        )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord]
    best_epoch: int
    wall_time: float

    def to_lines(self) -> list[str]:
        lines = ["epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"]
        for r in self.records:
            lines.append(
                f"{r.epoch}\t{r.train_loss!r}\t{r.train_acc!r}\t{r.val_loss!r}\t{r.val_acc!r}"
            )
        lines.append(f"# best_epoch={self.best_epoch} wall_time={self.wall_time:.3f}s")
        return lines


@dataclass(frozen=True)
class PredictionRecord:
    source_id: str
    provenance: str
    label: int
    p_patient: float
    predicted: int

    def line(self) -> str:
        return (
            f"{self.source_id}\t{self.provenance}\t{self.label}"
            f"\t{self.p_patient!r}\t{self.predicted}"
        )


def _stack(items: list[LabeledItem], canvas: tuple[int, int], dtype) -> tuple[np.ndarray, np.ndarray]:
    for item in items:
        if (item.image.height, item.image.width) != canvas:
            raise ShapeMismatch(
                f"item {item.source_id} is {item.image.height}x{item.image.width}, "
                f"expected preprocessed canvas {canvas[0]}x{canvas[1]}"
            )
    x = np.stack([item.image.pixels for item in items]).astype(dtype)[..., None]
    y = np.array([item.label for item in items], dtype=np.int64)
    return x, y


def _batch_eval(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int) -> tuple[float, float]:
    losses, correct = 0.0, 0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        logits = model.forward(xb, training=False)
        loss = softmax_cross_entropy(logits, yb)
        losses += loss.value * len(xb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return losses / len(x), correct / len(x)


def train(cfg: TrainConfig, split: DatasetSplit) -> tuple[Model, TrainHistory]:
    """Mini-batch Adam with per-epoch seeded shuffles; keeps the weights from
    the epoch with the best validation accuracy."""
    if not split.train or not split.validation:
        raise EmptySplit("training requires non-empty train and validation splits")
    started = time.time()
    model = build(cfg.arch, cfg.seed, canvas=cfg.canvas)
    x_train, y_train = _stack(split.train, cfg.canvas, model.dtype)
    x_val, y_val = _stack(split.validation, cfg.canvas, model.dtype)
    optimizer = Adam(learning_rate=cfg.learning_rate)
    shuffler = np.random.default_rng([cfg.seed, 2**32])

    records: list[EpochRecord] = []
    best_acc, best_epoch, best_params = -1.0, 0, model.snapshot()
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffler.permutation(len(x_train))
        losses, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            try:
                logits = model.forward(xb, training=True)
            except NonFiniteTensor as exc:
                raise DivergedLoss(
                    f"diverged at epoch {epoch}, batch {start // cfg.batch_size}: {exc}"
                ) from exc
            loss = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss.value):
                raise DivergedLoss(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            losses += loss.value * len(xb)
            correct += int((logits.argmax(axis=1) == yb).sum())
            model.backward(loss.gradient)
            optimizer.step(model.parameters(), model.gradients())
        train_loss = losses / len(x_train)
        train_acc = correct / len(x_train)
        try:
            val_loss, val_acc = _batch_eval(model, x_val, y_val, cfg.batch_size)
        except NonFiniteTensor as exc:
            raise DivergedLoss(f"diverged during validation at epoch {epoch}: {exc}") from exc
        records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
        if val_acc > best_acc:
            best_acc, best_epoch, best_params = val_acc, epoch, model.snapshot()
        elif epoch - best_epoch >= cfg.early_stop_patience:
            break
    model.restore(best_params)
    return model, TrainHistory(records, best_epoch, time.time() - started)


def predict_items(model: Model, items: list[LabeledItem]) -> list[PredictionRecord]:
    if not items:
        raise EmptyEval("nothing to evaluate")
    x, y = _stack(items, model.input_hw, model.dtype)
    records = []
    for start in range(0, len(x), 64):
        logits = model.forward(x[start:start + 64], training=False)
        probs = softmax(logits.astype(np.float64))
        for row, item in enumerate(items[start:start + 64]):
            p_patient = float(probs[row, 1])
            records.append(
                PredictionRecord(
                    source_id=item.source_id,
                    provenance=str(item.provenance),
                    label=item.label,
                    p_patient=p_patient,
                    predicted=1 if p_patient >= 0.5 else 0,
                )
            )
    return records


def metrics_from_records(records: list[PredictionRecord]) -> Metrics:
    if not records:
        raise EmptyEval("nothing to evaluate")
    tn = sum(1 for r in records if r.label == 0 and r.predicted == 0)
    fp = sum(1 for r in records if r.label == 0 and r.predicted == 1)
    fn = sum(1 for r in records if r.label == 1 and r.predicted == 0)
    tp = sum(1 for r in records if r.label == 1 and r.predicted == 1)

    def ratio(num, den):
        return num / den if den else 0.0

    return Metrics(
        confusion=((tn, fp), (fn, tp)),
        accuracy=(tn + tp) / len(records),
        precision_control=ratio(tn, tn + fn),
        recall_control=ratio(tn, tn + fp),
        precision_patient=ratio(tp, tp + fp),
        recall_patient=ratio(tp, tp + fn),
    )


def evaluate(model: Model, items: list[LabeledItem]) -> Metrics:
    return metrics_from_records(predict_items(model, items))


@dataclass(frozen=True)
class CompareRow:
    arch: str
    metrics: Metrics
    history: TrainHistory


def compare(archs: list[str], cfg: TrainConfig, split: DatasetSplit) -> list[CompareRow]:
    """Train every architecture under the same seed and data; rank by test
    accuracy, best first."""
    if len(archs) < 2:
        raise BadConfig("compare needs at least two architectures")
    rows = []
    for arch in archs:
        model, history = train(replace(cfg, arch=arch), split)
        rows.append(CompareRow(arch, evaluate(model, split.test), history))
    return sorted(rows, key=lambda row: row.metrics.accuracy, reverse=True)


# ---------------------------------------------------------------------------
# raw items -> augmented, preprocessed, split dataset


def prepare_dataset(
    raw_items: list[LabeledItem],
    augment_cfg: AugmentConfig,
    preprocess_cfg: PreprocessConfig,
    seed: int = 0,
    leak_free: bool = True,
) -> DatasetSplit:
    """Augment 3x, LoG-preprocess, and split. leak_free keeps every source's
    variants in a single split; the non-leak-free path splits after augmenting,
    so variants of one source may land in different splits."""
    pairs = [(item.image, item.label) for item in raw_items]
    augmented = []
    for index, (image, label, provenance) in enumerate(augment_dataset(pairs, augment_cfg)):
        source = raw_items[index // 3]
        augmented.append(
            LabeledItem(
                image=preprocess(image, preprocess_cfg),
                label=label,
                source_id=source.source_id,
                provenance=provenance,
            )
        )
    return stratified_split(augmented, seed=seed, leak_free=leak_free)
