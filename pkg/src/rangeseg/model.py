"""Full segmentation network: feature extractor followed by the U-Net."""

from __future__ import annotations

from dataclasses import asdict, fields

import numpy as np

from .autodiff import AdamState, BatchNormState, Tensor, softmax_channels
from .autodiff import checkpoint as ckpt
from .datatypes import NONE_LABEL, LabeledSample, RangeImage
from .errors import ShapeMismatch
from .extractor import ExtractorConfig, centers_of, extractor_forward, init_extractor
from .neighborhood import build_neighbor_field
from .unet import UNetConfig, init_unet, unet_forward


class SegmentationModel:
    """Parameters, batch-norm running statistics and forward pass.

    ``params`` maps dotted names (``extractor.*``, ``unet.*``) to tensors;
    ``bn`` holds the running statistics of every batch-norm layer.
    """

    def __init__(self, extractor_cfg: ExtractorConfig | None = None, unet_cfg: UNetConfig | None = None,
                 seed: int = 0, precision: int = 32, bn_momentum: float = 0.99):
        self.extractor_cfg = extractor_cfg or ExtractorConfig()
        unet_cfg = unet_cfg or UNetConfig()
        if unet_cfg.in_channels != self.extractor_cfg.n_features:
            unet_cfg = UNetConfig(**{**asdict(unet_cfg), "in_channels": self.extractor_cfg.n_features})
        self.unet_cfg = unet_cfg
        self.precision = precision
        self.dtype = np.float32 if precision == 32 else np.float64
        self.bn_momentum = bn_momentum
        rng = np.random.default_rng(seed)
        p1, b1 = init_extractor(self.extractor_cfg, rng, self.dtype, bn_momentum)
        p2, b2 = init_unet(self.unet_cfg, rng, self.dtype, bn_momentum)
        self.params: dict[str, Tensor] = {**p1, **p2}
        self.bn: dict[str, BatchNormState] = {**b1, **b2}
        self.adam: AdamState | None = None

    # forward ------------------------------------------------------------------------
    def logits(self, neighbors: np.ndarray, centers: np.ndarray, training: bool) -> Tensor:
        feats, _ = extractor_forward(self.extractor_cfg, self.params, self.bn, neighbors, centers, training)
        return unet_forward(self.unet_cfg, self.params, self.bn, feats, training)

    def probabilities(self, neighbors, centers, training: bool) -> Tensor:
        return softmax_channels(self.logits(neighbors, centers, training), axis=1)

    def inputs_for(self, img: RangeImage) -> tuple[np.ndarray, np.ndarray]:
        nf = build_neighbor_field(img, self.extractor_cfg.mode)
        return nf.values, centers_of(img)

    def predict_logits(self, img: RangeImage) -> np.ndarray:
        neighbors, centers = self.inputs_for(img)
        return self.logits(neighbors[None], centers[None], training=False).data[0]

    def predict(self, img: RangeImage) -> np.ndarray:
        """(H, W) class ids; invalid pixels get NONE_LABEL."""
        return labels_from_logits(self.predict_logits(img), img.mask)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # checkpointing --------------------------------------------------------------
    def config_items(self) -> dict[str, str]:
        items = {}
        for prefix, cfg in (("extractor", self.extractor_cfg), ("unet", self.unet_cfg)):
            for f in fields(cfg):
                value = getattr(cfg, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                items[f"{prefix}.{f.name}"] = str(value)
        items["train.precision"] = str(self.precision)
        items["train.bn_momentum"] = repr(self.bn_momentum)
        return items

    def state_tensors(self, adam: AdamState | None = None) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            out[name] = p.data
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
        if adam is not None:
            out["adam.step"] = np.asarray(adam.step, dtype=np.int64)
            out["adam.hyper"] = np.asarray([adam.beta1, adam.beta2, adam.eps], dtype=np.float64)
            for name in self.params:
                if name in adam.m:
                    out[f"adam.m.{name}"] = adam.m[name]
                    out[f"adam.v.{name}"] = adam.v[name]
        return out

    def save(self, path, adam: AdamState | None = None) -> None:
        ckpt.save(path, self.state_tensors(adam or self.adam), self.config_items())

    @classmethod
    def load(cls, path) -> tuple["SegmentationModel", AdamState]:
        tensors, config = ckpt.load(path)
        model = cls.from_config(config)
        for name, p in model.params.items():
            arr = tensors[name]
            if arr.shape != p.shape:
                raise ShapeMismatch(f"checkpoint tensor {name} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.astype(model.dtype)
        for name, st in model.bn.items():
            st.mean = tensors[f"{name}.running_mean"].astype(model.dtype)
            st.var = tensors[f"{name}.running_var"].astype(model.dtype)
        adam = AdamState()
        if "adam.step" in tensors:
            adam.step = int(tensors["adam.step"])
            adam.beta1, adam.beta2, adam.eps = (float(v) for v in tensors["adam.hyper"])
            for name in model.params:
                if f"adam.m.{name}" in tensors:
                    adam.m[name] = tensors[f"adam.m.{name}"]
                    adam.v[name] = tensors[f"adam.v.{name}"]
        model.adam = adam
        return model, adam

    @classmethod
    def from_config(cls, config: dict[str, str]) -> "SegmentationModel":
        from .config import parse_dataclass_items

        ext = parse_dataclass_items(ExtractorConfig, config, "extractor")
        unet = parse_dataclass_items(UNetConfig, config, "unet")
        return cls(ext, unet, precision=int(config.get("train.precision", 32)),
                   bn_momentum=float(config.get("train.bn_momentum", 0.99)))


def labels_from_logits(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Arg-max over the class axis (ties go to the lower id); NONE_LABEL off-mask."""
    pred = np.argmax(logits, axis=0)
    return np.where(np.asarray(mask).astype(bool), pred, NONE_LABEL).astype(np.int64)


def predict(model: SegmentationModel, img: RangeImage) -> np.ndarray:
    return model.predict(img)


def stack_samples(samples: list[LabeledSample], mode: str):
    """Batched network inputs and targets for a list of samples."""
    neighbors = np.stack([build_neighbor_field(s.image, mode).values for s in samples])
    centers = np.stack([centers_of(s.image) for s in samples])
    labels = np.stack([s.labels for s in samples])
    masks = np.stack([s.image.mask for s in samples])
    return neighbors, centers, labels, masks
