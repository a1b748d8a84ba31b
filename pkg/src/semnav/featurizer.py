"""Synthetic per-pose observations: dense feature vectors and caption annotations.

Stands in for a frozen CNN backbone plus a region-captioning model. The
feature vector of a pose is a bank of random sinusoids over what the
camera plausibly sees -- coarse position, heading, and the wall clearances
ahead and to the sides -- plus per-class signature vectors for the objects
currently in view, scaled by view confidence. The projection bank is the
same for every scene, like a shared frozen backbone. Nearby poses get
correlated features; frames staring at bare walls stay ambiguous, while
frames with objects in view are sharply identifiable.

Captions are short template phrases ("a white sink", "the lamp near the
bed") attached to a normalized image box and a confidence that decays with
distance. The template for an object is fixed by (scene seed, object
index), so the same object reads the same from every viewpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, TextIO
from zlib import crc32

import numpy as np

from .gridscene import (HEADING_LETTERS, HEADING_VECTORS, ObjectInstance,
                        Pose, SceneSpec, pose_valid, valid_poses)

DEFAULT_FEATURE_DIM = 128
DEFAULT_FEATURE_SEED = 0
MAX_CAPTION_TOKENS = 12

_PROJ_STREAM = 0xFEA70
_SIG_STREAM = 0x516A1

# heading index -> point on the unit circle (bearing encoding for features)
_HEADING_CIRCLE = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


@dataclass(frozen=True)
class FeaturizerConfig:
    """Free parameters of the synthetic observation model.

    position_bandwidth is deliberately low: global position enters the
    features only coarsely, the way a real camera frame carries no
    coordinates. Sharp structure comes from local wall clearances
    (geometry_bandwidth) and from object signatures, so frames that stare
    at bare walls stay ambiguous while frames with objects pin themselves
    down.
    """
    fov_degrees: float = 90.0
    view_range: float = 5.0
    confidence_slope: float = 0.7
    confidence_floor: float = 0.05
    position_bandwidth: float = 1.2
    heading_bandwidth: float = 1.0
    geometry_bandwidth: float = 3.0
    object_gain: float = 0.3


DEFAULT_CONFIG = FeaturizerConfig()


@dataclass(frozen=True)
class Annotation:
    box: tuple[float, float, float, float]
    confidence: float
    tokens: tuple[str, ...]


class _Visible(NamedTuple):
    index: int
    obj: ObjectInstance
    box: tuple[float, float, float, float]
    confidence: float


_proj_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
_sig_cache: dict[tuple, np.ndarray] = {}


def _projection(feature_seed: int, dim: int, config: FeaturizerConfig):
    key = (feature_seed, dim, config.position_bandwidth,
           config.heading_bandwidth, config.geometry_bandwidth)
    hit = _proj_cache.get(key)
    if hit is not None:
        return hit
    rng = np.random.default_rng(np.random.SeedSequence([_PROJ_STREAM, feature_seed, dim]))
    freq = np.empty((dim, 7))
    freq[:, :2] = rng.normal(0.0, config.position_bandwidth, size=(dim, 2))
    freq[:, 2:4] = rng.normal(0.0, config.heading_bandwidth, size=(dim, 2))
    freq[:, 4:] = rng.normal(0.0, config.geometry_bandwidth, size=(dim, 3))
    phase = rng.uniform(0.0, 2.0 * math.pi, size=dim)
    _proj_cache[key] = (freq, phase)
    return freq, phase


def _clearance(scene: SceneSpec, x: int, y: int, dx: int, dy: int,
               limit: float) -> float:
    """Free cells ahead along (dx, dy), capped at limit."""
    d = 0
    while d < limit:
        x, y = x + dx, y + dy
        if not scene.is_free(x, y):
            break
        d += 1
    return d / limit


def _token_signature(feature_seed: int, dim: int, token: str) -> np.ndarray:
    key = (feature_seed, dim, token)
    hit = _sig_cache.get(key)
    if hit is not None:
        return hit
    rng = np.random.default_rng(
        np.random.SeedSequence([_SIG_STREAM, feature_seed, dim, crc32(token.encode())]))
    v = rng.normal(size=dim)
    v /= np.linalg.norm(v)
    _sig_cache[key] = v
    return v


def _object_signature(feature_seed: int, dim: int, obj: ObjectInstance) -> np.ndarray:
    v = _token_signature(feature_seed, dim, obj.object_class).copy()
    for attr in obj.attributes:
        v += 0.3 * _token_signature(feature_seed, dim, attr)
    return v / np.linalg.norm(v)


def visual_features(scene: SceneSpec, pose: Pose,
                    feature_seed: int = DEFAULT_FEATURE_SEED,
                    dim: int = DEFAULT_FEATURE_DIM,
                    config: FeaturizerConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Deterministic feature vector of length `dim` for (scene, pose)."""
    if not pose_valid(scene, pose):
        raise ValueError(f"invalid pose {pose} for scene {scene.id}")
    freq, phase = _projection(feature_seed, dim, config)
    hx, hy = _HEADING_CIRCLE[pose.heading]
    fx, fy = HEADING_VECTORS[pose.heading]
    rng_cells = config.view_range
    u = np.array([pose.x / (scene.width - 1), pose.y / (scene.height - 1), hx, hy,
                  _clearance(scene, pose.x, pose.y, fx, fy, rng_cells),
                  _clearance(scene, pose.x, pose.y, -fy, fx, rng_cells),
                  _clearance(scene, pose.x, pose.y, fy, -fx, rng_cells)])
    feat = np.sin(freq @ u + phase)
    gain = config.object_gain * math.sqrt(dim)
    for idx, obj, _box, conf in indexed_visible_objects(scene, pose, config):
        feat = feat + gain * conf * _object_signature(feature_seed, dim, obj)
    norm = float(np.linalg.norm(feat))
    if norm < 0.5:
        feat = feat * (0.5 / max(norm, 1e-12))
    elif norm > 50.0:
        feat = feat * (50.0 / norm)
    return feat


def _line_of_sight(scene: SceneSpec, a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Bresenham walk from a to b; blocked if any strictly-interior cell is a wall."""
    x0, y0 = a
    x1, y1 = b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        if (x, y) == (x1, y1):
            return True
        if (x, y) != (x0, y0) and (x, y) in scene.walls:
            return False
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def _project_box(forward, right, offset, dist: float,
                 config: FeaturizerConfig) -> tuple[float, float, float, float]:
    d = forward[0] * offset[0] + forward[1] * offset[1]
    s = right[0] * offset[0] + right[1] * offset[1]
    ang = math.atan2(s, d) if dist > 0 else 0.0
    half_fov = math.radians(config.fov_degrees) / 2.0
    cx = 0.5 + ang / (2.0 * half_fov)  # +-half_fov maps to [0, 1]
    half_w = min(max(0.45 / (1.0 + 0.8 * dist), 0.03), 0.45)
    half_h = 0.8 * half_w
    cy = 0.5 - 0.12 * (dist / config.view_range)
    cx = min(max(cx, half_w), 1.0 - half_w)
    cy = min(max(cy, half_h), 1.0 - half_h)
    return (cx - half_w, cy - half_h, cx + half_w, cy + half_h)


def indexed_visible_objects(scene: SceneSpec, pose: Pose,
                            config: FeaturizerConfig = DEFAULT_CONFIG) -> list[_Visible]:
    """Like visible_objects but keeps each object's index in scene.objects."""
    if not pose_valid(scene, pose):
        raise ValueError(f"invalid pose {pose} for scene {scene.id}")
    forward = HEADING_VECTORS[pose.heading]
    right = (-forward[1], forward[0])
    cos_half = math.cos(math.radians(config.fov_degrees) / 2.0)
    out = []
    for idx, obj in enumerate(scene.objects):
        ox, oy = obj.cell[0] - pose.x, obj.cell[1] - pose.y
        dist = math.hypot(ox, oy)
        if dist > config.view_range:
            continue
        if dist > 0:
            cosang = (forward[0] * ox + forward[1] * oy) / dist
            if cosang < cos_half - 1e-9:
                continue
        if not _line_of_sight(scene, (pose.x, pose.y), obj.cell):
            continue
        conf = 1.0 - (dist / config.view_range) * config.confidence_slope
        conf = min(max(conf, config.confidence_floor), 1.0)
        box = _project_box(forward, right, (ox, oy), dist, config)
        out.append(_Visible(idx, obj, box, conf))
    out.sort(key=lambda v: (-v.confidence, v.index))
    return out


def visible_objects(scene: SceneSpec, pose: Pose,
                    config: FeaturizerConfig = DEFAULT_CONFIG):
    """Objects in the forward view cone: list of (object, box, confidence)."""
    return [(v.obj, v.box, v.confidence)
            for v in indexed_visible_objects(scene, pose, config)]


def caption_tokens(scene: SceneSpec, object_index: int) -> tuple[str, ...]:
    """Template phrase for one object, fixed by (scene seed, object index)."""
    obj = scene.objects[object_index]
    templates = [
        ("a", obj.attributes[0], obj.object_class),
        ("a", obj.attributes[0], obj.object_class, "in", "the", scene.scene_type),
        ("the", *obj.attributes[:2], obj.object_class),
    ]
    if obj.relations:
        rel, other = obj.relations[0]
        templates.append(("the", obj.object_class, rel, "the",
                          scene.objects[other].object_class))
    pick = crc32(f"{scene.seed}:{object_index}".encode()) % len(templates)
    tokens = templates[pick]
    assert len(tokens) <= MAX_CAPTION_TOKENS
    return tokens


def annotate(scene: SceneSpec, pose: Pose,
             config: FeaturizerConfig = DEFAULT_CONFIG) -> list[Annotation]:
    """One caption annotation per visible object, highest confidence first."""
    return [Annotation(box=v.box, confidence=v.confidence,
                       tokens=caption_tokens(scene, v.index))
            for v in indexed_visible_objects(scene, pose, config)]


def annotation_confidence_sum(scene: SceneSpec, pose: Pose, top: int = 5,
                              config: FeaturizerConfig = DEFAULT_CONFIG) -> float:
    confs = sorted((v.confidence for v in indexed_visible_objects(scene, pose, config)),
                   reverse=True)
    return float(sum(confs[:top]))


def top_confidence_scorer(top: int = 5, config: FeaturizerConfig = DEFAULT_CONFIG):
    """Scorer for select_targets(mode="top_semantic")."""
    def score(scene: SceneSpec, pose: Pose) -> float:
        return annotation_confidence_sum(scene, pose, top=top, config=config)
    return score


def dump_annotations(scenes: Iterable[SceneSpec], out: TextIO,
                     config: FeaturizerConfig = DEFAULT_CONFIG) -> int:
    """Write one tab-separated line per (scene, pose); returns the line count.

    Line layout: scene id, x, y, heading letter, then one field per
    annotation formatted `conf:x_min,y_min,x_max,y_max:token token ...`.
    """
    count = 0
    for scene in scenes:
        for pose in valid_poses(scene):
            fields = [scene.id, str(pose.x), str(pose.y), HEADING_LETTERS[pose.heading]]
            for ann in annotate(scene, pose, config):
                x0, y0, x1, y1 = ann.box
                fields.append(f"{ann.confidence:.6f}:{x0:.6f},{y0:.6f},{x1:.6f},{y1:.6f}:"
                              + " ".join(ann.tokens))
            out.write("\t".join(fields) + "\n")
            count += 1
    return count
