"""
From a point cloud to a range-image
===================================

A synthetic 64-beam scan is projected onto the spherical grid, the drop
statistics are printed, and the depth channel is saved as a PNG with the
objects painted in their class colors.
"""

import tempfile
from pathlib import Path

import numpy as np

from rangeseg import GridConfig, SceneConfig, generate_scene, project, unproject
from rangeseg.render import save_png

out = Path(tempfile.mkdtemp(prefix="rangeseg_demo_"))

# The simulator casts one ray per pixel center of the grid it is given.
grid = GridConfig()  # 64 x 512, 90 degrees of azimuth in front of the car
scene = generate_scene(SceneConfig(seed=1, grid=grid))
print("points in the scan:", len(scene.cloud))

# Projection keeps the nearest point of every pixel.
img = project(scene.cloud, grid)
print(img.stats)
print("fraction of valid pixels: %.2f" % (img.n_valid / (img.H * img.W)))

# Because every point came from its own pixel, nothing collides.
labels = np.zeros(img.shape, dtype=np.int64)
labels[scene.rows, scene.cols] = scene.labels
save_png(img, out / "scene.png", labels)

# Unprojection gives back exactly the surviving points, in row-major order.
back = unproject(img)
assert np.array_equal(back.points, scene.cloud.points[img.point_index[img.mask == 1]])
print("wrote", out / "scene.png")
