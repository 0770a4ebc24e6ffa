"""Masked weighted focal loss, border weight maps and IoU evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .autodiff import Tensor, make_result
from .datatypes import CLASS_NAMES, NUM_CLASSES
from .errors import NonFiniteProbability, ShapeMismatch

OBJECT_CLASSES = (1, 2, 3)


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    use_focal: bool = True
    w0: float = 10.0
    sigma: float = 5.0
    class_weights: tuple[float, ...] | None = None  # None: inverse frequency of the training set

    def __post_init__(self):
        if self.gamma < 0 or self.sigma <= 0:
            raise ValueError("gamma must be >= 0 and sigma > 0")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.use_focal else 0.0


def inverse_frequency_weights(label_maps, masks, num_classes: int = NUM_CLASSES) -> tuple[float, ...]:
    """Per-class weights proportional to 1 / frequency among valid pixels.

    Scaled so that the most frequent class gets 1.  Classes that never occur
    get weight 1.
    """
    counts = np.zeros(num_classes, dtype=np.int64)
    for labels, mask in zip(label_maps, masks):
        valid = np.asarray(mask).astype(bool)
        counts += np.bincount(np.asarray(labels)[valid].ravel(), minlength=num_classes)[:num_classes]
    weights = np.ones(num_classes)
    present = counts > 0
    if present.any():
        weights[present] = counts[present].max() / counts[present]
    return tuple(float(w) for w in weights)


def distance_to_other_label(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Euclidean pixel distance to the nearest valid pixel with a different label.

    ``inf`` where no such pixel exists.
    """
    labels = np.asarray(labels)
    valid = np.asarray(mask).astype(bool)
    dist = np.full(labels.shape, np.inf)
    for k in np.unique(labels[valid]):
        others = valid & (labels != k)
        if not others.any():
            continue
        d = ndimage.distance_transform_edt(~others)
        sel = valid & (labels == k)
        dist[sel] = d[sel]
    return dist


def border_weight_map(labels, mask, cfg: LossConfig, class_weights=None) -> np.ndarray:
    """``w(x) = class_weight[l(x)] + w0 * exp(-dist(x)^2 / (2 sigma^2))``, 0 off-mask."""
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    if labels.shape != mask.shape:
        raise ShapeMismatch(f"labels {labels.shape} vs mask {mask.shape}")
    cw = np.asarray(class_weights if class_weights is not None else (cfg.class_weights or (1.0,) * NUM_CLASSES))
    dist = distance_to_other_label(labels, mask)
    valid = mask.astype(bool)
    safe = np.where(valid, labels, 0)
    w = cw[safe] + cfg.w0 * np.exp(-(dist**2) / (2 * cfg.sigma**2))
    return np.where(valid, w, 0.0)


def focal_loss(probs: Tensor, labels, mask, weights, gamma: float = 2.0) -> Tensor:
    """Masked weighted focal loss, summed over pixels.

    ``E = sum_x -[m(x) > 0] w(x) (1 - p_l(x))^gamma log p_l(x)``

    ``probs`` is (B, K, H, W) or (K, H, W); labels, mask and weights have the
    matching spatial shape.  Probabilities that underflow to zero are
    floored at the smallest normal number of their dtype before the log.
    """
    p_all = probs.data
    squeeze = p_all.ndim == 3
    if squeeze:
        p_all = p_all[None]
    labels = np.asarray(labels).reshape(p_all.shape[:1] + p_all.shape[2:])
    mask = np.asarray(mask).reshape(labels.shape)
    weights = np.asarray(weights).reshape(labels.shape)
    if labels.shape != (p_all.shape[0],) + p_all.shape[2:]:
        raise ShapeMismatch(f"labels {labels.shape} vs probabilities {p_all.shape}")
    if not np.isfinite(p_all).all():
        raise NonFiniteProbability("probabilities contain NaN or Inf")

    dtype = p_all.dtype
    coef = np.where(mask > 0, weights, 0).astype(dtype)
    lab = np.where(mask > 0, labels, 0).astype(np.int64)[:, None]
    p = np.take_along_axis(p_all, lab, axis=1)[:, 0]
    tiny = np.finfo(dtype).tiny
    p = np.clip(p, tiny, 1.0)
    logp = np.log(p)
    one_minus = 1.0 - p
    focus = one_minus**gamma if gamma else np.ones_like(p)
    loss = -(coef * focus * logp).sum(dtype=dtype)

    def backward(g):
        d = focus / p
        if gamma:
            with np.errstate(divide="ignore", invalid="ignore"):
                extra = gamma * one_minus ** (gamma - 1) * logp
            d = d - np.where(one_minus > 0, extra, 0.0)
        dp = np.zeros_like(p_all)
        np.put_along_axis(dp, lab, (-(coef * d) * g)[:, None], axis=1)
        return ((dp[0] if squeeze else dp).astype(dtype, copy=False),)

    return make_result(np.asarray(loss, dtype=dtype), (probs,), backward)


# IoU ---------------------------------------------------------------------------------

def confusion_matrix(pred, gt, mask, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts[gt, pred] over valid pixels."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    mask = np.asarray(mask)
    if pred.shape != gt.shape or gt.shape != mask.shape:
        raise ShapeMismatch(f"pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    valid = mask.astype(bool)
    idx = gt[valid].astype(np.int64) * num_classes + pred[valid].astype(np.int64)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


@dataclass
class IoUReport:
    """Per-class IoU computed from a confusion matrix (rows: truth, cols: prediction)."""

    confusion: np.ndarray
    class_names: tuple[str, ...] = CLASS_NAMES
    average_classes: tuple[int, ...] = OBJECT_CLASSES
    per_class: np.ndarray = field(init=False)
    present: np.ndarray = field(init=False)

    def __post_init__(self):
        cm = self.confusion.astype(np.int64)
        tp = np.diag(cm)
        union = cm.sum(axis=0) + cm.sum(axis=1) - tp
        self.present = union > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            self.per_class = np.where(self.present, tp / np.maximum(union, 1), np.nan)

    @property
    def average(self) -> float:
        vals = [self.per_class[c] for c in self.average_classes if self.present[c]]
        return float(np.mean(vals)) if vals else float("nan")

    def iou(self, cls: int | str) -> float:
        if isinstance(cls, str):
            cls = self.class_names.index(cls)
        return float(self.per_class[cls])

    def __add__(self, other: "IoUReport") -> "IoUReport":
        return IoUReport(self.confusion + other.confusion, self.class_names, self.average_classes)

    def table(self) -> str:
        """Plain-text table: object classes as columns, then the average."""
        headers = [self.class_names[c].capitalize() + "s" for c in self.average_classes] + ["Average"]

        def fmt(v):
            return "   -  " if np.isnan(v) else f"{v:.3f}"

        values = [fmt(self.per_class[c]) for c in self.average_classes] + [fmt(self.average)]
        widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
        head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        return f"{head}\n{row}"

    def __str__(self) -> str:
        return self.table()


def iou(pred_labels, gt_labels, mask, num_classes: int = NUM_CLASSES) -> IoUReport:
    """Per-class intersection-over-union over the valid pixels."""
    return IoUReport(confusion_matrix(pred_labels, gt_labels, mask, num_classes))
