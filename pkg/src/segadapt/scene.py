"""Procedural RGB-D scene source.

Frames are a deterministic function of ``(t, seed)``: a Voronoi partition whose
seeds drift slowly over time, coloured by per-class prototypes plus seeded
pixel noise.  Seeds come in pairs mirrored through the image centre and the
two members of a pair carry mirrored classes (see ``MIRROR``), so the class
layout, the prototypes and the noise field are all point-symmetric.  That
makes a colour shift of ``+d`` and ``-d`` statistically indistinguishable to
the segmentation model, which is what the enhancement-on-clean case needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

CLASS_NAMES = ("sky", "building", "vegetation", "vehicle", "road")

# Prototype table (rgb in [0,1]^3, depth in [0,1]).  Class k and MIRROR[k] are
# point reflections through 0.5.  The rgb means form a right-angled staircase
# 0 -> 2 -> 4 (and its mirror 4 -> 3 -> 1) with unit step 0.2; depth climbs in
# the same 0.2 steps, so neighbouring classes are equally far apart in colour
# and in depth.  A pixel holding the colour of one class and the depth of its
# neighbour is then maximally ambiguous, while colour mixtures across a blurred
# boundary stay close to one of the two sides.
RGB_PROTOTYPES = np.array(
    [
        [0.5842, 0.7681, 0.4677],
        [0.4158, 0.2319, 0.5323],
        [0.6566, 0.5896, 0.4138],
        [0.3434, 0.4104, 0.5862],
        [0.5, 0.5, 0.5],
    ]
)
DEPTH_PROTOTYPES = np.array([0.9, 0.1, 0.7, 0.3, 0.5])
MIRROR = (1, 0, 3, 2, 4)

# Left-half seeds draw from these classes; the right half carries MIRROR[k].
# Keeping k and MIRROR[k] on opposite sides (with a neutral column of class 4
# along the centre line) means mirror classes never share a boundary.
LEFT_CLASSES = (0, 2, 4)

# seed grid (columns, rows) over the left half; the right half is its mirror
GRID = (6, 12)
DRIFT_AMPLITUDE_PX = 3.0
DRIFT_OMEGA = (0.25, 0.45)  # rad/s, per axis


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    num_classes: int = 5
    seed: int = 0
    pixel_noise_sigma: float = 0.02

    def validate(self) -> None:
        if self.num_classes > len(RGB_PROTOTYPES):
            raise SceneError(
                f"num_classes={self.num_classes} exceeds the {len(RGB_PROTOTYPES)} available prototypes"
            )
        if self.num_classes < 2:
            raise SceneError("need at least two classes")
        if self.width < 8 or self.height < 8 or self.width % 2 or self.height % 2:
            raise SceneError("width and height must be even and >= 8")
        if self.pixel_noise_sigma < 0:
            raise SceneError("pixel_noise_sigma must be >= 0")


@dataclass(frozen=True)
class ClassPrototype:
    class_id: int
    rgb_mean: tuple[float, float, float]
    depth_mean: float


@dataclass(frozen=True, eq=False)
class GroundTruthBundle:
    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    labels: np.ndarray  # (H, W) int
    stamp: int  # ms


def prototypes(num_classes: int = 5) -> list[ClassPrototype]:
    return [
        ClassPrototype(k, tuple(float(v) for v in RGB_PROTOTYPES[k]), float(DEPTH_PROTOTYPES[k]))
        for k in range(num_classes)
    ]


def min_prototype_separation(num_classes: int = 5) -> float:
    feats = np.concatenate([RGB_PROTOTYPES, DEPTH_PROTOTYPES[:, None]], axis=1)[:num_classes]
    d = np.linalg.norm(feats[:, None, :] - feats[None, :, :], axis=-1)
    return float(d[~np.eye(num_classes, dtype=bool)].min())


def _class_of(k: int, num_classes: int) -> int:
    # fewer classes than prototypes: fold unused ids back onto the available range
    return k if k < num_classes else k % num_classes


def _seed_layout(spec: SceneSpec):
    """Base seed positions, drift phases and class ids for one scene seed."""
    rng = np.random.default_rng([spec.seed, 0x5EED])
    cols, rows = GRID
    cw, ch = (spec.width / 2) / cols, spec.height / rows
    base = []
    for r in range(rows):
        for c in range(cols):
            x = (c + 0.25 + 0.5 * rng.random()) * cw
            y = (r + 0.25 + 0.5 * rng.random()) * ch
            base.append((x, y))
    base = np.array(base)
    phases = rng.uniform(0, 2 * np.pi, size=(len(base), 2))
    classes = np.empty(len(base), dtype=int)
    inner = np.arange(len(base)) % cols == cols - 1
    classes[inner] = 4
    outer = np.flatnonzero(~inner)
    pool = [LEFT_CLASSES[i % len(LEFT_CLASSES)] for i in range(len(outer))]
    classes[outer] = rng.permutation(pool)
    return base, phases, classes


def seed_positions(t_ms: int, spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """All seed coordinates (x, y) at time t and their class ids."""
    base, phases, left_classes = _seed_layout(spec)
    t = t_ms / 1000.0
    drift = DRIFT_AMPLITUDE_PX * np.sin(np.array(DRIFT_OMEGA) * t + phases)
    left = base + drift
    cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    right = np.column_stack([2 * cx - left[:, 0], 2 * cy - left[:, 1]])
    pts = np.concatenate([left, right])
    right_classes = np.array([MIRROR[k] for k in left_classes])
    classes = np.array(
        [_class_of(int(k), spec.num_classes) for k in np.concatenate([left_classes, right_classes])]
    )
    return pts, classes


def label_mask(t_ms: int, spec: SceneSpec) -> np.ndarray:
    """Voronoi labelling: each pixel takes the class of its nearest seed."""
    pts, classes = seed_positions(t_ms, spec)
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width]
    _, idx = cKDTree(pts).query(np.column_stack([xs.ravel(), ys.ravel()]))
    return classes[idx].reshape(spec.height, spec.width)


def _symmetric_noise(rng: np.random.Generator, shape: tuple[int, ...], sigma: float) -> np.ndarray:
    # antisymmetric under a 180 degree rotation of the image plane, variance sigma^2
    n = rng.normal(0.0, sigma, size=shape)
    return (n - n[::-1, ::-1]) / np.sqrt(2.0)


@lru_cache(maxsize=1024)
def generate_frame(t_ms: int, spec: SceneSpec) -> GroundTruthBundle:
    """Render the scene at virtual time ``t_ms`` (milliseconds).

    Cached because camera, depth sensor and the IoU evaluator all ask for the
    same stamp; callers must treat the arrays as read-only.
    """
    spec.validate()
    labels = label_mask(t_ms, spec)
    rng = np.random.default_rng([spec.seed, int(t_ms)])
    rgb = RGB_PROTOTYPES[labels]
    depth = DEPTH_PROTOTYPES[labels]
    if spec.pixel_noise_sigma > 0:
        rgb = rgb + _symmetric_noise(rng, rgb.shape, spec.pixel_noise_sigma)
        depth = depth + _symmetric_noise(rng, depth.shape, spec.pixel_noise_sigma)
    rgb = np.clip(rgb, 0.0, 1.0)
    depth = np.clip(depth, 0.0, 1.0)
    for a in (rgb, depth, labels):
        a.setflags(write=False)
    return GroundTruthBundle(rgb=rgb, depth=depth, labels=labels, stamp=int(t_ms))
