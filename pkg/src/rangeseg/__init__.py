"""Semantic segmentation of LiDAR scans in the range-image view.

Scans are projected onto a spherical grid, every pixel gets learned features
from its eight grid neighbors, and a U-Net labels the resulting image.  All
learning runs on the small reverse-mode autodiff core in
:mod:`rangeseg.autodiff`.
"""

from .datatypes import CLASS_NAMES, NONE_LABEL, NUM_CLASSES, LabeledSample, PointCloud, RangeImage
from .extractor import ExtractorConfig, extract
from .losses import IoUReport, LossConfig, border_weight_map, focal_loss, iou
from .model import SegmentationModel
from .neighborhood import ABSOLUTE, RELATIVE, NeighborField, build_neighbor_field
from .pointcloud_io import read_kitti_bin, read_labeled_sample, write_colored_ply, write_labeled_sample
from .projection import GridConfig, ProjectionStats, project, unproject
from .synthetic import SceneConfig, generate, generate_dataset, generate_scene
from .trainer import TrainConfig, evaluate, predict, train
from .unet import UNetConfig

__version__ = "0.1.0"

__all__ = [
    "ABSOLUTE", "CLASS_NAMES", "NONE_LABEL", "NUM_CLASSES", "RELATIVE",
    "ExtractorConfig", "GridConfig", "IoUReport", "LabeledSample", "LossConfig", "NeighborField",
    "PointCloud", "ProjectionStats", "RangeImage", "SceneConfig", "SegmentationModel", "TrainConfig",
    "UNetConfig",
    "border_weight_map", "build_neighbor_field", "evaluate", "extract", "focal_loss", "generate",
    "generate_dataset", "generate_scene", "iou", "predict", "project", "read_kitti_bin",
    "read_labeled_sample", "train", "unproject", "write_colored_ply", "write_labeled_sample",
]
