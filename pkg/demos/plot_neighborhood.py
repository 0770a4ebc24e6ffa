"""
Neighbor fields and learned point features
==========================================

Every valid pixel collects the 3D offsets of its eight grid neighbors.  The
feature extractor turns these sets into a few channels per pixel; this demo
shows the field on a flat patch and runs an untrained extractor over a scan.
"""

import numpy as np

from rangeseg import ExtractorConfig, GridConfig, SceneConfig, build_neighbor_field, extract, generate_scene, project
from rangeseg.datatypes import RangeImage
from rangeseg.extractor import init_extractor
from rangeseg.neighborhood import NEIGHBOR_OFFSETS

# A tilted plane sampled on a 4 x 5 grid: interior pixels see the same offsets.
r, c = np.meshgrid(np.arange(4), np.arange(5), indexing="ij")
xyz = np.stack([10.0 + 0.1 * r, 0.2 * c, -1.0 + 0.05 * r], axis=-1).astype(np.float32)
plane = RangeImage({"x": xyz[..., 0], "y": xyz[..., 1], "z": xyz[..., 2],
                    "reflectance": np.zeros((4, 5), np.float32)}, np.ones((4, 5), np.uint8))
field = build_neighbor_field(plane)
for (dr, dc), offset in zip(NEIGHBOR_OFFSETS, field.values[1, 2]):
    print(f"neighbor ({dr:+d}, {dc:+d}) -> {np.round(offset, 3)}")

# Corners miss five of their neighbors; those slots stay zero.
print("empty slots at the corner:", int((np.abs(field.values[0, 0]).sum(-1) == 0).sum()))

# Run a freshly initialized extractor over a real-sized scan.
grid = GridConfig.from_fov(64, 256)
img = project(generate_scene(SceneConfig(seed=3, grid=grid)).cloud, grid)
cfg = ExtractorConfig(n_features=3)
params, bn = init_extractor(cfg, np.random.default_rng(0))
features = extract(img, build_neighbor_field(img), cfg, params, bn, training=True)
valid = features.mask == 1
for k in range(cfg.n_features):
    f = features.channels[f"f{k}"][valid]
    print(f"f{k}: mean {f.mean():+.3f}  std {f.std():.3f}")
