"""Training, prediction and evaluation over labeled range-image samples."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import AdamState, Tape, adam_step
from .datatypes import NUM_CLASSES, LabeledSample, RangeImage
from .errors import EmptyDataset, ShapeHeterogeneity, ShapeMismatch
from .extractor import ExtractorConfig
from .losses import LossConfig, IoUReport, border_weight_map, confusion_matrix, focal_loss, inverse_frequency_weights
from .model import SegmentationModel, stack_samples
from .pointcloud_io import read_labeled_sample
from .unet import UNetConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 4
    epochs: int = 10
    bn_momentum: float = 0.99
    seed: int = 0
    checkpoint_interval: int = 0  # in optimizer steps; 0 disables intermediate checkpoints
    precision: int = 32

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.bn_momentum < 1:
            raise ValueError("bn_momentum must lie in (0, 1)")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")


@dataclass
class TrainLog:
    steps: list[tuple[int, int, float]] = field(default_factory=list)
    epoch_iou: list[tuple[int, IoUReport]] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [loss for _, _, loss in self.steps]

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")


def load_dataset(directory, expected_shape=None) -> list[LabeledSample]:
    """All ``*.npy`` samples of a directory, in file-name order."""
    paths = sorted(Path(directory).glob("*.npy"))
    return [read_labeled_sample(p, expected_shape=expected_shape) for p in paths]


def _check_dataset(dataset: Sequence[LabeledSample], unet_cfg: UNetConfig) -> tuple[int, int]:
    if not dataset:
        raise EmptyDataset("no samples to train on")
    shapes = {s.image.shape for s in dataset}
    if len(shapes) != 1:
        raise ShapeHeterogeneity(f"samples have different shapes: {sorted(shapes)}")
    H, W = shapes.pop()
    step = 2**unet_cfg.depth
    if H % step or W % step:
        raise ShapeMismatch(f"sample size {H}x{W} not divisible by {step}")
    return H, W


def train(
    dataset: Sequence[LabeledSample],
    cfg: TrainConfig | None = None,
    extractor_cfg: ExtractorConfig | None = None,
    unet_cfg: UNetConfig | None = None,
    loss_cfg: LossConfig | None = None,
    checkpoint_dir=None,
    on_log: Callable[[str], None] | None = None,
    on_epoch_end: Callable[[int, SegmentationModel], bool] | None = None,
) -> tuple[SegmentationModel, TrainLog]:
    """Train extractor and U-Net jointly with Adam on the masked focal loss.

    Every epoch visits the samples in a seeded random order; the last batch
    may be smaller than ``batch_size``.  Log lines have the form
    ``step=<n> epoch=<e> loss=<f>`` plus one ``epoch=<e> train_iou=...``
    line per epoch computed from the training-mode predictions.
    ``on_epoch_end(epoch, model)`` may return True to stop early.
    """
    cfg = cfg or TrainConfig()
    extractor_cfg = extractor_cfg or ExtractorConfig()
    unet_cfg = unet_cfg or UNetConfig()
    loss_cfg = loss_cfg or LossConfig()
    _check_dataset(dataset, unet_cfg)

    model = SegmentationModel(extractor_cfg, unet_cfg, seed=cfg.seed, precision=cfg.precision,
                              bn_momentum=cfg.bn_momentum)
    adam = AdamState()
    neighbors, centers, labels, masks = stack_samples(list(dataset), extractor_cfg.mode)
    class_weights = loss_cfg.class_weights or inverse_frequency_weights(labels, masks)
    weights = np.stack([border_weight_map(l, m, loss_cfg, class_weights) for l, m in zip(labels, masks)])
    gamma = loss_cfg.effective_gamma

    trace = TrainLog()

    def emit(line: str) -> None:
        trace.lines.append(line)
        if on_log is not None:
            on_log(line)

    rng = np.random.default_rng([cfg.seed, 1])
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    n = len(dataset)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            model.zero_grad()
            with Tape() as tape:
                probs = model.probabilities(neighbors[idx], centers[idx], training=True)
                loss = focal_loss(probs, labels[idx], masks[idx], weights[idx], gamma)
            tape.backward(loss)
            grads = {name: p.grad for name, p in model.params.items()}
            adam_step(model.params, grads, adam, cfg.learning_rate)
            step += 1
            value = float(loss.data)
            trace.steps.append((step, epoch, value))
            emit(f"step={step} epoch={epoch} loss={value:.6f}")
            pred = np.argmax(probs.data, axis=1)
            confusion += confusion_matrix(pred, labels[idx], masks[idx])
            if not np.isfinite(value):
                raise FloatingPointError(f"loss became non-finite at step {step}")
            if checkpoint_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                model.save(Path(checkpoint_dir) / f"step{step:06d}.ckpt", adam)
        report = IoUReport(confusion)
        trace.epoch_iou.append((epoch, report))
        per = " ".join(f"{report.class_names[c]}={report.per_class[c]:.4f}" for c in report.average_classes)
        emit(f"epoch={epoch} train_iou={report.average:.4f} {per}")
        if on_epoch_end is not None:
            model.adam = adam
            if on_epoch_end(epoch, model):
                break
    model.adam = adam
    return model, trace


def predict(model: SegmentationModel, img: RangeImage) -> np.ndarray:
    """Segmentation map of one range-image (eval mode); -1 marks invalid pixels."""
    return model.predict(img)


def evaluate(model: SegmentationModel, dataset: Sequence[LabeledSample]) -> IoUReport:
    """IoU from confusion counts accumulated over the whole dataset."""
    total = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for sample in dataset:
        pred = model.predict(sample.image)
        total += confusion_matrix(np.maximum(pred, 0), sample.labels, sample.image.mask)
    return IoUReport(total)


def evaluate_per_sample(model: SegmentationModel, dataset: Sequence[LabeledSample]) -> list[IoUReport]:
    """One report per sample, for per-scan averaging."""
    return [evaluate(model, [s]) for s in dataset]


def mean_of_reports(reports: Sequence[IoUReport]) -> np.ndarray:
    """Per-class mean IoU over reports, ignoring samples where a class is absent."""
    stacked = np.stack([r.per_class for r in reports])
    with np.errstate(invalid="ignore"):
        return np.nanmean(stacked, axis=0)


def read_split(root) -> dict[str, list[str]]:
    """Train/validation sample ids of a SqueezeSeg-style export (``ImageSet/*.txt``)."""
    root = Path(root)
    split = {}
    for name in ("train", "val"):
        path = root / "ImageSet" / f"{name}.txt"
        if path.exists():
            split[name] = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    return split
