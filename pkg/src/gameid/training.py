"""Training protocol: Adam, plateau LR halving on validation accuracy, early stopping on validation loss."""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from gameid.backbones import BackboneSpec, ClassifierModel, assemble_classifier, preprocess
from gameid.curation import TRAIN, VAL, DatasetManifest, SplitSpec, split_train_val

log = logging.getLogger(__name__)

CONTINUE, STOP = "continue", "stop"
EARLY_STOP, EPOCH_CAP = "early-stop", "epoch-cap"
WEIGHT_MODES = ("random", "imagenet", "arcade")


class MissingImage(FileNotFoundError):
    code = "missing-image"


@dataclass(frozen=True)
class TrainingConfig:
    initial_lr: float = 1e-3
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-7
    plateau_patience: int = 2
    plateau_factor: float = 0.5
    min_lr: float = 1e-5
    early_stop_patience: int = 10
    max_epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    weights: str = "imagenet"
    val_fraction: float = 0.2
    dropout_rate: float = 0.2
    freeze_backbone: bool = False

    def __post_init__(self) -> None:
        if self.min_lr > self.initial_lr:
            raise ValueError("min_lr must not exceed initial_lr")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be at least 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")
        if self.weights not in WEIGHT_MODES:
            raise ValueError(f"weights must be one of {WEIGHT_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


# --- schedule ------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleState:
    current_lr: float = 1e-3
    best_metric: float = -math.inf
    epochs_since_improvement: int = 0


def plateau_step(
    state: ScheduleState,
    epoch_val_accuracy: float,
    patience: int = 2,
    factor: float = 0.5,
    min_lr: float = 1e-5,
) -> ScheduleState:
    """Advance the plateau schedule by one observed epoch.

    Improvement means strictly greater than the best accuracy so far. After
    ``patience`` epochs without one the rate becomes ``max(lr * factor, min_lr)``
    and the counter restarts.
    """
    if epoch_val_accuracy > state.best_metric:
        return ScheduleState(state.current_lr, epoch_val_accuracy, 0)
    waited = state.epochs_since_improvement + 1
    lr = state.current_lr
    if waited >= patience:
        lr = max(lr * factor, min_lr)
        waited = 0
    return ScheduleState(lr, state.best_metric, waited)


def early_stop_check(val_loss_history: Sequence[float], patience: int = 10) -> str:
    """``stop`` once the lowest loss so far is ``patience`` or more epochs old."""
    if not val_loss_history:
        raise ValueError("val_loss_history must be non-empty")
    best = min(range(len(val_loss_history)), key=lambda i: (val_loss_history[i], i))
    return STOP if len(val_loss_history) - 1 - best >= patience else CONTINUE


class EpochController:
    """Per-epoch bookkeeping shared by every training loop.

    ``lr`` is the rate to use for the coming epoch; ``observe`` consumes that
    epoch's validation metrics and returns False once training must end.
    """

    def __init__(self, config: "TrainingConfig"):
        self.config = config
        self.state = ScheduleState(config.initial_lr)
        self.val_losses: list[float] = []
        self.stop_reason: str | None = None

    @property
    def lr(self) -> float:
        return self.state.current_lr

    @property
    def epoch(self) -> int:
        return len(self.val_losses)

    def observe(self, val_accuracy: float, val_loss: float) -> bool:
        if self.stop_reason is not None:
            raise RuntimeError("training already stopped")
        c = self.config
        self.val_losses.append(val_loss)
        self.state = plateau_step(self.state, val_accuracy, c.plateau_patience, c.plateau_factor, c.min_lr)
        if early_stop_check(self.val_losses, c.early_stop_patience) == STOP:
            self.stop_reason = EARLY_STOP
        elif self.epoch >= c.max_epochs:
            self.stop_reason = EPOCH_CAP
        return self.stop_reason is None


# --- log -----------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingLog:
    rows: list[EpochRow] = field(default_factory=list)
    stop_reason: str | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.rows)

    @property
    def best_epoch(self) -> int:
        """1-based epoch with the lowest validation loss (first on ties)."""
        return min(self.rows, key=lambda r: (r.val_loss, r.epoch)).epoch

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"])
        for r in self.rows:
            w.writerow([r.epoch, repr(r.lr), f"{r.train_loss:.6f}", f"{r.train_acc:.6f}", f"{r.val_loss:.6f}", f"{r.val_acc:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, stop_reason: str | None = None) -> "TrainingLog":
        rows = [
            EpochRow(int(d["epoch"]), float(d["lr"]), float(d["train_loss"]), float(d["train_acc"]),
                     float(d["val_loss"]), float(d["val_acc"]))
            for d in csv.DictReader(io.StringIO(text))
        ]
        return cls(rows, stop_reason)


# --- data ----------------------------------------------------------------------


class ScreenshotDataset(Dataset):
    def __init__(self, paths: list[Path], labels: list[int], resolution: int, preprocessing_id: str, cache: bool = True):
        self.paths = paths
        self.labels = labels
        self.resolution = resolution
        self.preprocessing_id = preprocessing_id
        self._cache: dict[int, torch.Tensor] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int):
        if self._cache is not None and i in self._cache:
            x = self._cache[i]
        else:
            x = preprocess(self.paths[i], self.resolution, self.preprocessing_id)
            if self._cache is not None:
                self._cache[i] = x
        return x, self.labels[i]


def _dataset(manifest: DatasetManifest, ids: list[str], image_root: Path, spec: BackboneSpec) -> ScreenshotDataset:
    by_id = manifest.by_id()
    index = {g: i for i, g in enumerate(manifest.class_order)}
    paths, labels = [], []
    for sid in ids:
        rec = by_id[sid]
        path = image_root / rec.path
        if not path.exists():
            raise MissingImage(f"image for screenshot {sid} not found at {path}")
        paths.append(path)
        labels.append(index[rec.game_id])
    return ScreenshotDataset(paths, labels, spec.input_resolution, spec.preprocessing_id, cache=len(ids) <= 4000)


def evaluate(model: ClassifierModel, loader: DataLoader) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy in inference mode."""
    model.eval()
    total, loss_sum, correct = 0, 0.0, 0
    with torch.no_grad():
        for x, y in loader:
            logits = model.logits(x)
            loss_sum += F.cross_entropy(logits, y, reduction="sum").item()
            correct += (logits.argmax(dim=1) == y).sum().item()
            total += len(y)
    return loss_sum / total, correct / total


# --- loops ---------------------------------------------------------------------


def fit(
    manifest: DatasetManifest,
    split: SplitSpec,
    spec: BackboneSpec,
    config: TrainingConfig,
    image_root: str | os.PathLike,
    source: ClassifierModel | None = None,
    on_epoch: Callable[[EpochRow], None] | None = None,
) -> tuple[ClassifierModel, TrainingLog]:
    """Train on the split's train ids, driving the schedule from its val ids.

    Returns the model restored to the epoch with the lowest validation loss.
    """
    image_root = Path(image_root)
    train_ds = _dataset(manifest, split.ids(TRAIN), image_root, spec)
    val_ds = _dataset(manifest, split.ids(VAL), image_root, spec)

    if config.weights == "arcade" and source is None:
        raise ValueError("arcade weights require a pretrained source artifact")
    init = {"random": "random", "imagenet": "imagenet", "arcade": "transferred"}[config.weights]
    model = assemble_classifier(
        spec, len(manifest.class_order), init, source=source, class_order=manifest.class_order,
        seed=config.seed, dropout_rate=config.dropout_rate,
    )
    if config.freeze_backbone:
        model.set_backbone_trainable(False)

    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    train_loader = DataLoader(train_ds, batch_size=config.batch_size, shuffle=True, generator=gen)
    val_loader = DataLoader(val_ds, batch_size=config.batch_size, shuffle=False)
    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad],
        lr=config.initial_lr, betas=(config.beta_1, config.beta_2), eps=config.epsilon,
    )

    control = EpochController(config)
    history = TrainingLog()
    best_loss, best_state = math.inf, None
    while True:
        epoch, lr = control.epoch + 1, control.lr
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        seen, loss_sum, correct = 0, 0.0, 0
        for x, y in train_loader:
            optimizer.zero_grad()
            logits = model.logits(x)
            loss = F.cross_entropy(logits, y)
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(y)
            correct += (logits.argmax(dim=1) == y).sum().item()
            seen += len(y)
        val_loss, val_acc = evaluate(model, val_loader)
        row = EpochRow(epoch, lr, loss_sum / seen, correct / seen, val_loss, val_acc)
        history.rows.append(row)
        log.info("epoch %d lr=%.2e loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f",
                 epoch, lr, row.train_loss, row.train_acc, val_loss, val_acc)
        if on_epoch:
            on_epoch(row)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(model.state_dict())
        if not control.observe(val_acc, val_loss):
            break
    history.stop_reason = control.stop_reason
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def train_fold(
    manifest: DatasetManifest,
    held_out_fold: int,
    spec: BackboneSpec,
    config: TrainingConfig,
    image_root: str | os.PathLike,
    source: ClassifierModel | None = None,
) -> tuple[ClassifierModel, TrainingLog]:
    if not 0 <= held_out_fold < manifest.k:
        raise ValueError(f"held_out_fold must be in [0, {manifest.k}), got {held_out_fold}")
    split = split_train_val(manifest.assignment(), held_out_fold, config.val_fraction, config.seed)
    return fit(manifest, split, spec, config, image_root, source)


def pretrain_reference(
    arcade_manifest: DatasetManifest,
    spec: BackboneSpec,
    config: TrainingConfig,
    image_root: str | os.PathLike,
    out_dir: str | os.PathLike | None = None,
) -> ClassifierModel:
    """Train one model on a whole corpus (no held-out fold) to serve as a transfer source."""
    if config.weights == "arcade":
        config = replace(config, weights="imagenet")
    split = split_train_val(arcade_manifest.assignment(), None, config.val_fraction, config.seed)
    model, history = fit(arcade_manifest, split, spec, config, image_root)
    if out_dir is not None:
        from gameid.artifact import save_artifact

        save_artifact(model, out_dir, arcade_manifest.titles(), arcade_manifest.system.display_name,
                      config.to_dict(), {"training": _summary(history)})
        Path(out_dir, "training_log.csv").write_text(history.to_csv(), encoding="utf-8")
    return model


def _summary(history: TrainingLog) -> dict:
    return {"epochs_run": history.epochs_run, "stop_reason": history.stop_reason, "best_epoch": history.best_epoch}
