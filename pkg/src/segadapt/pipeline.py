"""The managed perception pipeline: sensors, enhancement, fusion, segmentation.

The segmentation model is a nearest-prototype softmax classifier over rgb,
depth or the 4-dim concatenation.  Its mean per-pixel entropy is the signal
the monitor watches for degraded segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import ndimage

from . import scene
from .bus import Bus, Message, to_ms
from .lifecycle import AdaptationError, ManagedNode

CAMERA_TOPIC = "/camera/image"
DEPTH_TOPIC = "/depth/image"
ENHANCEMENT_TOPIC = "/enhancement/image"
FUSION_TOPIC = "/fusion/output"
SEGMENTATION_TOPIC = "/segmentation/output"
DIAGNOSTICS_TOPIC = "/diagnostics"
TOPICS = (CAMERA_TOPIC, DEPTH_TOPIC, ENHANCEMENT_TOPIC, FUSION_TOPIC, SEGMENTATION_TOPIC, DIAGNOSTICS_TOPIC)

# which node publishes each pipeline topic
PUBLISHERS = {
    CAMERA_TOPIC: "camera",
    DEPTH_TOPIC: "depth",
    ENHANCEMENT_TOPIC: "enhancement",
    FUSION_TOPIC: "fusion",
    SEGMENTATION_TOPIC: "segmentation",
}

FUSION_MODALITIES = ("fused", "rgb_only", "depth_only")
MODEL_MODALITIES = ("fused", "rgb", "depth")
FRAME_TO_MODEL = {"fused": "fused", "rgb_only": "rgb", "depth_only": "depth"}

# picked by `segadapt calibrate`: largest tau keeping clean and defocused frames
# clearly under the 0.06 entropy threshold
DEFAULT_TEMPERATURE = 0.0094
# Single-modality heads are calibrated to their own feature space: neighbouring
# classes are half as far apart (squared) in rgb or depth alone as in the fused
# space, so their temperature is halved to keep clean-frame confidence equal.
HEAD_TEMPERATURE_SCALE = {"fused": 1.0, "rgb": 0.5, "depth": 0.5}
RECALIBRATION_RADIUS = 4
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class World:
    """Environmental conditions.  They outlive node instances, so redeploying a
    node never clears them."""

    color_shift: float = 0.0
    defocus_sigma: float = 0.0
    depth_noise_sigma: float = 0.0
    misalignment: tuple = (0, 0)


@dataclass(frozen=True, eq=False)
class RgbFrame:
    pixels: np.ndarray
    stamp: int
    tags: tuple = ()


@dataclass(frozen=True, eq=False)
class DepthFrame:
    pixels: np.ndarray
    stamp: int
    tags: tuple = ()


@dataclass(frozen=True, eq=False)
class FusedFrame:
    rgb: Optional[RgbFrame]
    depth: Optional[DepthFrame]
    modality: str
    calibration_offset: tuple = (0, 0)

    @property
    def stamp(self) -> int:
        return (self.rgb or self.depth).stamp


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    labels: np.ndarray
    mean_entropy: float
    stamp: int
    logits: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ModelConfig:
    modality: str
    prototypes: np.ndarray  # (K, D)
    temperature: float


def model_config(modality: str = "fused", temperature: float = DEFAULT_TEMPERATURE, num_classes: int = 5) -> ModelConfig:
    if modality not in MODEL_MODALITIES:
        raise ValueError(f"unknown model modality {modality!r}")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    rgb = scene.RGB_PROTOTYPES[:num_classes]
    depth = scene.DEPTH_PROTOTYPES[:num_classes, None]
    protos = {"fused": np.concatenate([rgb, depth], axis=1), "rgb": rgb, "depth": depth}[modality]
    return ModelConfig(modality, protos, temperature * HEAD_TEMPERATURE_SCALE[modality])


# -- image operations -------------------------------------------------------------


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb @ LUMA


def sharpness(rgb: np.ndarray) -> float:
    """Variance of the discrete Laplacian of the luminance channel."""
    return float(np.var(ndimage.laplace(luminance(rgb), mode="nearest")))


def apply_color_shift(rgb: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(rgb + delta, 0.0, 1.0)


def enhance(rgb: np.ndarray, delta: float) -> np.ndarray:
    """Reverse colour shift: clamp(input - delta)."""
    return np.clip(rgb - delta, 0.0, 1.0)


def blur(rgb: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return rgb
    return ndimage.gaussian_filter(rgb, sigma=(sigma, sigma, 0), mode="nearest")


def shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation by (dx, dy) pixels (content moves right/down), edges replicated."""
    h, w = img.shape[:2]
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    return img[ys][:, xs]


def _edges(img: np.ndarray) -> np.ndarray:
    mag = np.hypot(ndimage.sobel(img, axis=0, mode="nearest"), ndimage.sobel(img, axis=1, mode="nearest"))
    rms = np.sqrt(np.mean(mag**2))
    return mag / rms if rms > 0 else mag


def edge_mismatch(rgb: np.ndarray, depth: np.ndarray, dx: int, dy: int, radius: int = RECALIBRATION_RADIUS) -> float:
    """Mean squared difference of normalised edge maps after shifting depth by (dx, dy)."""
    m = radius + 1
    a = _edges(luminance(rgb))[m:-m, m:-m]
    b = _edges(shift_image(depth, dx, dy))[m:-m, m:-m]
    return float(np.mean((a - b) ** 2))


def estimate_offset(rgb: np.ndarray, depth: np.ndarray, radius: int = RECALIBRATION_RADIUS) -> tuple[int, int]:
    """Exhaustive search over integer offsets in [-radius, radius]^2.

    Ties go to the smallest offset, so a well aligned pair keeps (0, 0).
    """
    m = radius + 1
    a = _edges(luminance(rgb))[m:-m, m:-m]
    best = None
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            b = _edges(shift_image(depth, dx, dy))[m:-m, m:-m]
            cost = float(np.mean((a - b) ** 2))
            key = (round(cost, 12), abs(dx) + abs(dy), dy, dx)
            if best is None or key < best[0]:
                best = (key, (dx, dy))
    return best[1]


def match_pairs(rgb_stamps, depth_stamps, tolerance_ms: int):
    """Indices (i, j) of the pair with minimal |stamp difference| <= tolerance.

    Ties are broken towards the oldest rgb, then the oldest depth entry.
    """
    best = None
    for i, a in enumerate(rgb_stamps):
        for j, b in enumerate(depth_stamps):
            d = abs(a - b)
            if d <= tolerance_ms and (best is None or d < best[0]):
                best = (d, i, j)
    return None if best is None else (best[1], best[2])


def features(frame: FusedFrame) -> tuple[str, np.ndarray]:
    model_mod = FRAME_TO_MODEL[frame.modality]
    if model_mod == "fused":
        x = np.concatenate([frame.rgb.pixels, frame.depth.pixels[..., None]], axis=-1)
    elif model_mod == "rgb":
        x = frame.rgb.pixels
    else:
        x = frame.depth.pixels[..., None]
    return model_mod, x


def softmax_stats(x: np.ndarray, model: ModelConfig, keep_logits: bool = False):
    """Labels, per-pixel probabilities and entropies for a feature image (H, W, D)."""
    h, w, d = x.shape
    flat = x.reshape(-1, d)
    mu = model.prototypes
    d2 = (flat**2).sum(1)[:, None] - 2.0 * flat @ mu.T + (mu**2).sum(1)[None, :]
    logits = -np.maximum(d2, 0.0) / model.temperature
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    tot = e.sum(axis=1, keepdims=True)
    p = e / tot
    ent = np.log(tot[:, 0]) - (p * z).sum(axis=1)
    ent = np.clip(ent, 0.0, np.log(mu.shape[0]))
    labels = z.argmax(axis=1).reshape(h, w)
    return labels, p.reshape(h, w, -1), ent.reshape(h, w), (logits.reshape(h, w, -1) if keep_logits else None)


def segment(frame: FusedFrame, model: ModelConfig, keep_logits: bool = False) -> SegmentationResult:
    modality, x = features(frame)
    if modality != model.modality:
        raise ValueError("modality mismatch")
    labels, _, ent, logits = softmax_stats(x, model, keep_logits)
    return SegmentationResult(labels, float(ent.mean()), frame.stamp, logits)


# frames are shared by every run of a sweep that uses the same seed, so cache them


@lru_cache(maxsize=1024)
def camera_image(t_ms: int, spec: scene.SceneSpec, shift: float, sigma: float) -> np.ndarray:
    rgb = scene.generate_frame(t_ms, spec).rgb
    if shift:
        rgb = apply_color_shift(rgb, shift)
    if sigma:
        rgb = blur(rgb, sigma)
    rgb.setflags(write=False)
    return rgb


@lru_cache(maxsize=1024)
def depth_image(t_ms: int, spec: scene.SceneSpec, noise: float) -> np.ndarray:
    depth = scene.generate_frame(t_ms, spec).depth
    if noise:
        rng = np.random.default_rng([spec.seed, int(t_ms), 0xD])
        depth = np.clip(depth + rng.normal(0.0, noise, depth.shape), 0.0, 1.0)
    depth.setflags(write=False)
    return depth


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# -- nodes ------------------------------------------------------------------------


class CameraNode(ManagedNode):
    node_id = "camera"
    default_parameters = {"frame_rate": 10.0, "focus": "fixed"}

    def __init__(self, bus: Bus, world: World, spec: scene.SceneSpec, **params):
        super().__init__(bus)
        self.world = world
        self.spec = spec
        for k, v in params.items():
            self.parameters[k] = v
            setattr(self, k, v)

    def create_timers(self):
        return [self.bus.create_timer(self.node_id, 1.0 / self.frame_rate, self.tick)]

    def on_parameter_set(self, name, value, old):
        if name == "focus":
            # any focus request triggers an autofocus pass
            if self.world.defocus_sigma:
                self.log.append(self.bus.now, "refocus", self.node_id, detail={"sigma_before": self.world.defocus_sigma})
            self.world.defocus_sigma = 0.0
        elif name == "frame_rate":
            if not value or value <= 0:
                raise AdaptationError("invalid value")
            if self.active:
                for t in self._timers:
                    t.cancel()
                self._timers = self.create_timers()

    def tick(self) -> None:
        now = self.bus.now
        w = self.world
        pixels = camera_image(now, self.spec, w.color_shift, w.defocus_sigma)
        tags = tuple(t for t, on in (("color_shift", w.color_shift), ("defocus", w.defocus_sigma)) if on)
        self.publish(CAMERA_TOPIC, RgbFrame(pixels, now, tags), stamp=now)


class DepthNode(ManagedNode):
    node_id = "depth"
    default_parameters = {"frame_rate": 10.0}

    def __init__(self, bus: Bus, world: World, spec: scene.SceneSpec, **params):
        super().__init__(bus)
        self.world = world
        self.spec = spec
        for k, v in params.items():
            self.parameters[k] = v
            setattr(self, k, v)

    def create_timers(self):
        return [self.bus.create_timer(self.node_id, 1.0 / self.frame_rate, self.tick)]

    def tick(self) -> None:
        now = self.bus.now
        pixels = depth_image(now, self.spec, self.world.depth_noise_sigma)
        tags = ("noise",) if self.world.depth_noise_sigma else ()
        self.publish(DEPTH_TOPIC, DepthFrame(pixels, now, tags), stamp=now)


class EnhancementNode(ManagedNode):
    node_id = "enhancement"
    default_parameters = {"delta": 0.25}
    default_subscriptions = {"image": CAMERA_TOPIC}

    def on_image(self, msg: Message) -> None:
        f = msg.payload
        out = _frozen(enhance(f.pixels, self.delta))
        self.publish(ENHANCEMENT_TOPIC, RgbFrame(out, f.stamp, f.tags + ("enhanced",)), stamp=f.stamp)


class FusionNode(ManagedNode):
    node_id = "fusion"
    default_parameters = {"modality": "fused", "recalibrate": False, "calibration_offset": (0, 0)}
    default_subscriptions = {"rgb": CAMERA_TOPIC, "depth": DEPTH_TOPIC}

    def __init__(self, bus: Bus, world: World, tolerance: float = 0.05, queue_depth: int = 10, radius: int = RECALIBRATION_RADIUS):
        super().__init__(bus)
        self.world = world
        self.tolerance_ms = to_ms(tolerance)
        self.queue_depth = queue_depth
        self.radius = radius
        self.rgb_queue: list[RgbFrame] = []
        self.depth_queue: list[DepthFrame] = []
        self.last_pair: Optional[tuple[np.ndarray, np.ndarray]] = None

    def on_parameter_set(self, name, value, old):
        if name == "modality":
            if value not in FUSION_MODALITIES:
                raise AdaptationError("invalid value")
            self.rgb_queue, self.depth_queue = [], []
        elif name == "calibration_offset":
            self.calibration_offset = tuple(int(v) for v in value)
            self.parameters[name] = self.calibration_offset
        elif name == "recalibrate" and value:
            self.recalibrate_now()

    def recalibrate_now(self) -> tuple[int, int]:
        # one-shot trigger: the flag drops back once the search ran (or failed)
        self.recalibrate = False
        self.parameters["recalibrate"] = False
        if not self.active or self.last_pair is None:
            raise AdaptationError("no data")
        rgb, depth = self.last_pair
        offset = estimate_offset(rgb, depth, self.radius)
        self.log.append(self.bus.now, "recalibration", self.node_id, detail={"before": list(self.calibration_offset), "after": list(offset)})
        self.calibration_offset = offset
        self.parameters["calibration_offset"] = offset
        return offset

    def _push(self, queue: list, item, name: str) -> None:
        queue.append(item)
        if len(queue) > self.queue_depth:
            old = queue.pop(0)
            self.log.append(self.bus.now, "queue_overflow", self.node_id, detail={"queue": name, "stamp": old.stamp / 1000.0})

    def on_rgb(self, msg: Message) -> None:
        frame = msg.payload
        if self.modality == "rgb_only":
            self._emit(FusedFrame(frame, None, "rgb_only", self.calibration_offset))
            return
        if self.modality == "fused":
            self._push(self.rgb_queue, frame, "rgb")
            self._try_pair()

    def on_depth(self, msg: Message) -> None:
        frame = msg.payload
        dx, dy = self.world.misalignment
        if dx or dy:
            frame = DepthFrame(_frozen(shift_image(frame.pixels, dx, dy)), frame.stamp, frame.tags + ("misaligned",))
        if self.modality == "depth_only":
            self._emit(FusedFrame(None, self._calibrated(frame), "depth_only", self.calibration_offset))
            return
        if self.modality == "fused":
            self._push(self.depth_queue, frame, "depth")
            self._try_pair()

    def _calibrated(self, frame: DepthFrame) -> DepthFrame:
        dx, dy = self.calibration_offset
        if not (dx or dy):
            return frame
        return DepthFrame(_frozen(shift_image(frame.pixels, dx, dy)), frame.stamp, frame.tags)

    def _try_pair(self) -> None:
        hit = match_pairs([f.stamp for f in self.rgb_queue], [f.stamp for f in self.depth_queue], self.tolerance_ms)
        if hit is None:
            return
        i, j = hit
        rgb, depth = self.rgb_queue[i], self.depth_queue[j]
        # consumed entries and anything older can no longer form a better pair
        self.rgb_queue = self.rgb_queue[i + 1 :]
        self.depth_queue = self.depth_queue[j + 1 :]
        self.last_pair = (rgb.pixels, depth.pixels)
        self._emit(FusedFrame(rgb, self._calibrated(depth), "fused", self.calibration_offset))

    def _emit(self, frame: FusedFrame) -> None:
        self.publish(FUSION_TOPIC, frame, stamp=frame.stamp)


class SegmentationNode(ManagedNode):
    node_id = "segmentation"
    default_parameters = {"modality": "fused", "temperature": DEFAULT_TEMPERATURE}
    default_subscriptions = {"input": FUSION_TOPIC}

    def __init__(self, bus: Bus, num_classes: int = 5, debug: bool = False, **params):
        super().__init__(bus)
        self.num_classes = num_classes
        self.debug = debug
        for k, v in params.items():
            self.parameters[k] = v
            setattr(self, k, v)
        self._model = model_config(self.modality, self.temperature, num_classes)

    def on_parameter_set(self, name, value, old):
        if name == "modality" and value not in MODEL_MODALITIES:
            raise AdaptationError("invalid value")
        if name == "temperature" and (not isinstance(value, (int, float)) or value <= 0):
            raise AdaptationError("invalid value")
        self._model = model_config(self.modality, self.temperature, self.num_classes)

    def on_input(self, msg: Message) -> None:
        frame = msg.payload
        if FRAME_TO_MODEL[frame.modality] != self._model.modality:
            self.log.append(self.bus.now, "dropped", self.node_id, topic=FUSION_TOPIC, detail={"reason": "modality mismatch"})
            return
        result = segment(frame, self._model, keep_logits=self.debug)
        self.publish(SEGMENTATION_TOPIC, result, stamp=frame.stamp, detail={"entropy": result.mean_entropy, "stamp": frame.stamp / 1000.0})
