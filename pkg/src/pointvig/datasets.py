"""Seeded synthetic data: single geometric primitives for classification and
floor-plus-objects scenes for per-point segmentation.

Everything is generated from one ``numpy`` generator per call, so a fixed
seed reproduces the datasets bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud
from .errors import ConfigError

SHAPE_CLASSES = ("sphere", "cube", "cylinder", "cone", "torus", "plane")
SCENE_CLASSES = ("floor", "box", "ball", "pole")


# -- surface samplers --------------------------------------------------------


def _sphere(n, rng):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def _cube(n, rng):
    # pick a face, then a uniform point on it
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1, 1, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for i in range(n):
        rest = [a for a in range(3) if a != axis[i]]
        pts[i, axis[i]] = sign[i]
        pts[i, rest[0]] = uv[i, 0]
        pts[i, rest[1]] = uv[i, 1]
    return pts


def _cylinder(n, rng):
    # radius 0.7, height 2; side and caps weighted by area
    r, h = 0.7, 2.0
    side_area = 2 * np.pi * r * h
    cap_area = np.pi * r * r
    p_side = side_area / (side_area + 2 * cap_area)
    on_side = rng.uniform(size=n) < p_side
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    z = rng.uniform(-h / 2, h / 2, size=n)
    rad = r * np.sqrt(rng.uniform(size=n))
    pts[:, 0] = np.where(on_side, r, rad) * np.cos(theta)
    pts[:, 1] = np.where(on_side, r, rad) * np.sin(theta)
    cap_z = np.where(rng.uniform(size=n) < 0.5, h / 2, -h / 2)
    pts[:, 2] = np.where(on_side, z, cap_z)
    return pts


def _cone(n, rng):
    # apex at z=1, base radius 0.8 at z=-1; lateral surface plus base
    r, h = 0.8, 2.0
    slant = np.sqrt(r * r + h * h)
    lat_area = np.pi * r * slant
    base_area = np.pi * r * r
    on_lat = rng.uniform(size=n) < lat_area / (lat_area + base_area)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    # uniform over the lateral surface: density grows with distance from apex
    t = np.sqrt(rng.uniform(size=n))
    pts = np.empty((n, 3))
    lat_r = r * t
    base_r = r * np.sqrt(rng.uniform(size=n))
    rad = np.where(on_lat, lat_r, base_r)
    pts[:, 0] = rad * np.cos(theta)
    pts[:, 1] = rad * np.sin(theta)
    pts[:, 2] = np.where(on_lat, 1.0 - h * t, -1.0)
    return pts


def _torus(n, rng):
    big, small = 1.0, 0.35
    u = rng.uniform(0, 2 * np.pi, size=n)
    # rejection-free sampling would bias toward the inner rim; thin the
    # oversampled side with the standard cos weighting
    v = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0, 2 * np.pi, size=2 * (n - filled))
        accept = rng.uniform(size=cand.size) < (1 + (small / big) * np.cos(cand)) / (1 + small / big)
        take = cand[accept][: n - filled]
        v[filled:filled + take.size] = take
        filled += take.size
    ring = big + small * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)


def _plane(n, rng):
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(-1, 1, size=(n, 2))
    return pts


_SAMPLERS = {
    "sphere": _sphere,
    "cube": _cube,
    "cylinder": _cylinder,
    "cone": _cone,
    "torus": _torus,
    "plane": _plane,
}


def _rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _pose(pts, rng, noise):
    """Random z-rotation, small tilt, mild scale, unit-sphere normalization."""
    rot = _rot_z(rng.uniform(0, 2 * np.pi)) @ _rot_x(rng.uniform(-0.3, 0.3))
    pts = pts @ rot.T
    pts = pts * rng.uniform(0.8, 1.2)
    pts = pts + rng.standard_normal(pts.shape) * noise
    pts = pts - pts.mean(axis=0)
    scale = np.linalg.norm(pts, axis=1).max()
    return (pts / scale).astype(np.float32)


def make_synthetic_shapes(n_train: int = 600, n_test: int = 120,
                          n_points: int = 256, seed: int = 0,
                          noise: float = 0.005):
    """Balanced 6-class primitive dataset; returns (train, test) lists."""
    n_cls = len(SHAPE_CLASSES)
    if n_train % n_cls or n_test % n_cls:
        raise ConfigError(
            f"sample counts must be divisible by {n_cls} for balanced classes"
        )
    rng = np.random.default_rng(seed)

    def build(count):
        clouds = []
        for label, name in enumerate(SHAPE_CLASSES):
            for _ in range(count // n_cls):
                pts = _SAMPLERS[name](n_points, rng)
                clouds.append(PointCloud(pos=_pose(pts, rng, noise),
                                         labels=np.int64(label)))
        perm = rng.permutation(len(clouds))
        return [clouds[i] for i in perm]

    return build(n_train), build(n_test)


# -- segmentation scenes -----------------------------------------------------


def _scene_color(labels, rng):
    """Weakly informative colors: a class tint drowned in per-point noise."""
    tints = np.array([
        [0.45, 0.45, 0.45],   # floor
        [0.60, 0.40, 0.30],   # box
        [0.35, 0.55, 0.40],   # ball
        [0.40, 0.40, 0.60],   # pole
    ])
    base = tints[labels]
    return np.clip(base + rng.standard_normal(base.shape) * 0.10, 0.0, 1.0)


def make_synthetic_scenes(n_train: int = 48, n_test: int = 12,
                          n_points: int = 2048, seed: int = 0,
                          noise: float = 0.005):
    """Floor plus 2-4 objects (box / ball / pole) with per-point labels.

    Coordinates stay inside roughly [-1, 1]^3 so a ball-query radius of 0.2
    captures a realistic local neighborhood at 2048 points per scene.
    """
    rng = np.random.default_rng(seed)

    def object_centers(count):
        # rejection-sample centers so objects never interpenetrate; restart
        # the whole set if a draw paints itself into a corner
        centers, tries = [], 0
        while len(centers) < count:
            c = rng.uniform(-0.6, 0.6, size=2)
            tries += 1
            if all(np.hypot(*(c - o)) > 0.5 for o in centers):
                centers.append(c)
            elif tries > 200:
                centers, tries = [], 0
        return centers

    def one_scene():
        # one object of every kind, sometimes a fourth duplicate
        kinds = list(rng.permutation([1, 2, 3]))  # 1=box, 2=ball, 3=pole
        if rng.uniform() < 0.5:
            kinds.append(int(rng.integers(1, 4)))
        n_objects = len(kinds)
        n_floor = n_points // 2
        per_obj = np.full(n_objects, (n_points - n_floor) // n_objects)
        per_obj[: (n_points - n_floor) - per_obj.sum()] += 1

        pos = [np.stack([rng.uniform(-1, 1, n_floor),
                         rng.uniform(-1, 1, n_floor),
                         np.zeros(n_floor)], axis=1)]
        labels = [np.zeros(n_floor, dtype=np.int64)]
        for (cx, cy), kind, count in zip(object_centers(n_objects), kinds, per_obj):
            if kind == 1:    # box sitting on the floor
                sx, sy, sz = rng.uniform(0.12, 0.25, size=3)
                pts = _cube(count, rng) * [sx, sy, sz]
                pts[:, 2] += sz
            elif kind == 2:  # ball resting on the floor
                r = rng.uniform(0.12, 0.22)
                pts = _sphere(count, rng) * r
                pts[:, 2] += r
            else:            # thin vertical pole
                r = rng.uniform(0.04, 0.07)
                h = rng.uniform(0.5, 0.9)
                theta = rng.uniform(0, 2 * np.pi, count)
                pts = np.stack([r * np.cos(theta), r * np.sin(theta),
                                rng.uniform(0, h, count)], axis=1)
            pts[:, 0] += cx
            pts[:, 1] += cy
            pos.append(pts)
            labels.append(np.full(count, kind, dtype=np.int64))

        pts = np.concatenate(pos) + rng.standard_normal((n_points, 3)) * noise
        labels = np.concatenate(labels)
        perm = rng.permutation(n_points)
        pts, labels = pts[perm], labels[perm]
        colors = _scene_color(labels, rng)
        return PointCloud(pos=pts.astype(np.float32),
                          attrs=colors.astype(np.float32), labels=labels)

    train = [one_scene() for _ in range(n_train)]
    test = [one_scene() for _ in range(n_test)]
    return train, test
