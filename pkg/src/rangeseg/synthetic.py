"""Procedural 64-beam LiDAR scenes with per-point labels.

One ray is cast through the center of every grid pixel.  The scene holds a
ground plane plus axis-aligned boxes (cars, cyclists) and vertical cylinders
(pedestrians); the nearest hit gives the point, its class and a class-coded
reflectance.  Rays that hit nothing within range leave their pixel empty.

Coordinates are in the sensor frame: the sensor sits at the origin, the
ground is the plane ``z = -sensor_height``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datatypes import LabeledSample, PointCloud
from .errors import DegenerateConfig
from .projection import GridConfig, project

BACKGROUND, CAR, PEDESTRIAN, CYCLIST = 0, 1, 2, 3


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_cars: int = 2
    n_pedestrians: int = 2
    n_cyclists: int = 2
    grid: GridConfig = field(default_factory=GridConfig)
    sensor_height: float = 1.73
    min_distance: float = 7.0  # placement region, horizontal distance from the sensor
    max_distance: float = 25.0
    max_range: float = 120.0  # rays travelling further return nothing
    car_size: tuple[float, float, float] = (4.0, 1.8, 1.5)
    pedestrian_radius: float = 0.4
    pedestrian_height: float = 1.7
    cyclist_size: tuple[float, float, float] = (1.8, 0.5, 1.6)
    reflectance: tuple[float, float, float, float] = (0.15, 0.85, 0.55, 0.35)  # per class id
    reflectance_noise: float = 0.02
    azimuth_margin: float = math.radians(1.0)  # free angle kept between objects and FOV edges
    max_attempts: int = 2000


@dataclass(frozen=True)
class SceneObject:
    label: int
    kind: str  # "box" or "cylinder"
    center: tuple[float, float]  # ground-plane x, y
    size: tuple[float, float, float]  # box: extent x, y, z; cylinder: radius, radius, height

    def footprint_corners(self) -> np.ndarray:
        hx, hy = self.size[0] / 2, self.size[1] / 2
        if self.kind == "cylinder":
            hx = hy = self.size[0]
        cx, cy = self.center
        return np.array([[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]])


@dataclass
class Scene:
    cloud: PointCloud
    labels: np.ndarray  # per point
    rows: np.ndarray  # generating pixel of each point
    cols: np.ndarray
    objects: list[SceneObject]
    config: SceneConfig

    def to_sample(self, name: str = "") -> LabeledSample:
        img = project(self.cloud, self.config.grid)
        labels = np.zeros(img.shape, dtype=np.int64)
        valid = img.point_index >= 0
        labels[valid] = self.labels[img.point_index[valid]]
        return LabeledSample(img, labels, name=name)


def _validate(cfg: SceneConfig) -> None:
    if min(cfg.n_cars, cfg.n_pedestrians, cfg.n_cyclists) < 0:
        raise DegenerateConfig("object counts must be non-negative")
    if not 0 < cfg.min_distance < cfg.max_distance:
        raise DegenerateConfig("placement region is empty")
    if cfg.sensor_height <= 0 or cfg.max_range <= 0:
        raise DegenerateConfig("sensor height and range must be positive")
    sizes = list(cfg.car_size) + list(cfg.cyclist_size) + [cfg.pedestrian_radius, cfg.pedestrian_height]
    if min(sizes) <= 0:
        raise DegenerateConfig("object sizes must be positive")
    if len(cfg.reflectance) != 4:
        raise DegenerateConfig("need one reflectance per class")


def _azimuth_span(obj: SceneObject) -> tuple[float, float]:
    ang = np.arctan2(obj.footprint_corners()[:, 1], obj.footprint_corners()[:, 0])
    return float(ang.min()), float(ang.max())


def _place_objects(cfg: SceneConfig, rng: np.random.Generator) -> list[SceneObject]:
    grid = cfg.grid
    lo = grid.theta_origin + cfg.azimuth_margin
    hi = grid.theta_origin + grid.azimuth_fov - cfg.azimuth_margin
    if grid.theta_origin < -math.pi or grid.theta_origin + grid.azimuth_fov > math.pi:
        raise DegenerateConfig("object placement needs a field of view inside (-pi, pi)")
    todo = [CAR] * cfg.n_cars + [PEDESTRIAN] * cfg.n_pedestrians + [CYCLIST] * cfg.n_cyclists
    placed: list[SceneObject] = []
    spans: list[tuple[float, float]] = []
    attempts = 0
    for label in todo:
        while True:
            attempts += 1
            if attempts > cfg.max_attempts:
                raise DegenerateConfig("could not place all objects without overlap inside the field of view")
            dist = rng.uniform(cfg.min_distance, cfg.max_distance)
            az = rng.uniform(lo, hi)
            center = (dist * math.cos(az), dist * math.sin(az))
            if label == PEDESTRIAN:
                obj = SceneObject(label, "cylinder", center,
                                  (cfg.pedestrian_radius, cfg.pedestrian_radius, cfg.pedestrian_height))
            else:
                sx, sy, sz = cfg.car_size if label == CAR else cfg.cyclist_size
                if rng.random() < 0.5:
                    sx, sy = sy, sx
                obj = SceneObject(label, "box", center, (sx, sy, sz))
            a, b = _azimuth_span(obj)
            corners = obj.footprint_corners()
            if a < lo or b > hi or np.hypot(corners[:, 0], corners[:, 1]).min() < 1.0:
                continue
            # disjoint azimuth spans: no overlap and no object hides another
            m = cfg.azimuth_margin
            if any(a < s_hi + m and b > s_lo - m for s_lo, s_hi in spans):
                continue
            placed.append(obj)
            spans.append((a, b))
            break
    return placed


def _ray_directions(grid: GridConfig) -> np.ndarray:
    theta, phi = grid.pixel_center_angles()
    ph, th = np.meshgrid(phi, theta, indexing="ij")
    return np.stack([np.cos(ph) * np.cos(th), np.cos(ph) * np.sin(th), np.sin(ph)], axis=-1)


def _hit_box(o, d, lo, hi) -> np.ndarray:
    """Entry distance of rays from origin ``o`` into an axis-aligned box (inf on miss)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def _hit_cylinder(d, center, radius, z_lo, z_hi) -> np.ndarray:
    """Nearest hit of rays from the origin with a capped vertical cylinder."""
    cx, cy = center
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    b = -2 * (d[..., 0] * cx + d[..., 1] * cy)
    c = cx * cx + cy * cy - radius * radius
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t_side = (-b - np.sqrt(disc)) / (2 * a)
    z = t_side * d[..., 2]
    side = (disc >= 0) & (t_side > 0) & (z >= z_lo) & (z <= z_hi)
    t = np.where(side, t_side, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = z_hi / d[..., 2]
    px = t_cap * d[..., 0] - cx
    py = t_cap * d[..., 1] - cy
    cap = (t_cap > 0) & (px * px + py * py <= radius * radius)
    return np.minimum(t, np.where(cap, t_cap, np.inf))


def generate_scene(cfg: SceneConfig | None = None) -> Scene:
    """Cast every grid ray into a random scene built from ``cfg.seed``."""
    cfg = cfg or SceneConfig()
    _validate(cfg)
    rng = np.random.default_rng(cfg.seed)
    objects = _place_objects(cfg, rng)
    grid = cfg.grid
    d = _ray_directions(grid)  # H, W, 3
    ground = -cfg.sensor_height

    with np.errstate(divide="ignore"):
        t_ground = np.where(d[..., 2] < 0, ground / d[..., 2], np.inf)
    best_t = t_ground
    best_label = np.zeros(d.shape[:2], dtype=np.int64)
    origin = np.zeros(3)
    for obj in objects:
        cx, cy = obj.center
        if obj.kind == "box":
            sx, sy, sz = obj.size
            lo = np.array([cx - sx / 2, cy - sy / 2, ground])
            hi = np.array([cx + sx / 2, cy + sy / 2, ground + sz])
            t = _hit_box(origin, d, lo, hi)
        else:
            t = _hit_cylinder(d, obj.center, obj.size[0], ground, ground + obj.size[2])
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_label = np.where(closer, obj.label, best_label)

    hit = np.isfinite(best_t) & (best_t <= cfg.max_range)
    rows, cols = np.nonzero(hit)
    pts = (best_t[hit][:, None] * d[hit]).astype(np.float32)
    labels = best_label[hit]
    refl = np.asarray(cfg.reflectance)[labels] + rng.normal(0.0, cfg.reflectance_noise, size=len(labels))
    refl = np.clip(refl, 0.0, 1.0).astype(np.float32)
    return Scene(PointCloud(pts, refl), labels, rows, cols, objects, cfg)


def generate(cfg: SceneConfig | None = None) -> tuple[PointCloud, np.ndarray]:
    """Point cloud and per-point class ids of one synthetic scan."""
    scene = generate_scene(cfg)
    return scene.cloud, scene.labels


def generate_dataset(n: int, cfg: SceneConfig | None = None) -> list[LabeledSample]:
    """``n`` labeled samples with seeds ``cfg.seed, cfg.seed + 1, ...``."""
    cfg = cfg or SceneConfig()
    return [generate_scene(replace(cfg, seed=cfg.seed + i)).to_sample(name=f"synth_{cfg.seed + i:05d}")
            for i in range(n)]
