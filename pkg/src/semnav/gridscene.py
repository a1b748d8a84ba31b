"""Discrete navigation scenes: grids, poses, actions, rewards and targets.

A scene is a rectangular grid with interior wall cells and a handful of
typed objects (sinks in bathrooms, sofas in living rooms, ...). The agent
occupies a pose (cell plus compass heading) and acts with four actions:
MoveForward, MoveBackward, RotateLeft, RotateRight. Moving into a wall or
off the grid leaves the position unchanged.

Every action costs 0.01 reward; landing on the episode's target pose adds
a +10 completion bonus and ends the episode. Episodes also end, without
the bonus, when the step cap is reached.

Scene generation is a pure function of (seed, scene_type, width, height):
regeneration is bit-identical and the free cells always form a single
connected region, so every pose can reach every other pose.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

SCENE_TYPES = ("bathroom", "bedroom", "kitchen", "livingroom")

STEP_COST = -0.01
COMPLETION_BONUS = 10.0
DEFAULT_EPISODE_CAP = 1000
MIN_SCENE_DIM = 6

TARGET_MODES = ("random", "object_oriented", "top_semantic")

# Per-scene-type object inventories. Overlaps (mirror, chair, lamp, rug,
# sink) are intentional: real rooms share furniture.
OBJECT_CLASSES = {
    "bathroom": ("sink", "toilet", "bathtub", "mirror", "towel", "shower",
                 "cabinet", "rug", "shelf", "basket"),
    "bedroom": ("bed", "wardrobe", "nightstand", "lamp", "dresser", "pillow",
                "curtain", "desk", "chair", "mirror"),
    "kitchen": ("stove", "fridge", "sink", "counter", "oven", "microwave",
                "cupboard", "kettle", "table", "chair"),
    "livingroom": ("sofa", "television", "armchair", "bookshelf", "rug",
                   "lamp", "cushion", "plant", "speaker", "vase"),
}

ATTRIBUTES = ("white", "black", "blue", "green", "red", "wooden", "metal",
              "ceramic", "small", "large", "round", "modern", "old", "clean")

RELATION_TOKENS = ("near", "beside", "by")

_SCENE_STREAM = 0x5CE9E5


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


HEADING_LETTERS = "NESW"
# Grid frame: x grows east, y grows south.
HEADING_VECTORS = ((0, -1), (1, 0), (0, 1), (-1, 0))


class Action(IntEnum):
    MOVE_FORWARD = 0
    MOVE_BACKWARD = 1
    ROTATE_LEFT = 2
    ROTATE_RIGHT = 3


class Pose(NamedTuple):
    x: int
    y: int
    heading: int


@dataclass(frozen=True)
class ObjectInstance:
    object_class: str
    attributes: tuple[str, ...]
    cell: tuple[int, int]
    relations: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class SceneSpec:
    id: str
    scene_type: str
    width: int
    height: int
    walls: frozenset[tuple[int, int]]
    objects: tuple[ObjectInstance, ...]
    seed: int

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and (x, y) not in self.walls

    def free_cells(self) -> list[tuple[int, int]]:
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if (x, y) not in self.walls]


@dataclass(frozen=True)
class Target:
    pose: Pose
    mode: str


@dataclass(frozen=True)
class StepResult:
    next_pose: Pose
    reward: float
    done: bool
    steps_taken: int


def pose_valid(scene: SceneSpec, pose: Pose) -> bool:
    return scene.is_free(pose.x, pose.y) and 0 <= pose.heading < 4


def valid_poses(scene: SceneSpec) -> list[Pose]:
    """All poses on free cells, in canonical (y, x, heading) order."""
    return [Pose(x, y, h) for (x, y) in scene.free_cells() for h in range(4)]


# ---------------------------------------------------------------------------
# generation

def _connected(free: set[tuple[int, int]]) -> bool:
    if not free:
        return False
    seen = {next(iter(free))}
    queue = deque(seen)
    while queue:
        x, y = queue.popleft()
        for dx, dy in HEADING_VECTORS:
            nxt = (x + dx, y + dy)
            if nxt in free and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return len(seen) == len(free)


def _carve_walls(rng: np.random.Generator, width: int, height: int) -> frozenset:
    """Braided maze: a corridor backbone with a fraction of extra openings.

    Rooms sit at even coordinates; a depth-first backbone carves corridors
    between them, then `braid` of the remaining interior walls are knocked
    out to create loops. Connected by construction (braiding only ever adds
    edges), so uniform-random walks stay slow while every pose remains
    reachable.
    """
    walls = {(x, y) for y in range(height) for x in range(width)
             if x % 2 == 1 or y % 2 == 1}
    rooms = [(x, y) for y in range(0, height, 2) for x in range(0, width, 2)]
    start = rooms[int(rng.integers(len(rooms)))]
    seen = {start}
    stack = [start]
    while stack:
        x, y = stack[-1]
        nbrs = [(x + dx, y + dy) for dx, dy in ((2, 0), (-2, 0), (0, 2), (0, -2))
                if 0 <= x + dx < width and 0 <= y + dy < height
                and (x + dx, y + dy) not in seen]
        if not nbrs:
            stack.pop()
            continue
        nx, ny = nbrs[int(rng.integers(len(nbrs)))]
        walls.discard(((x + nx) // 2, (y + ny) // 2))
        seen.add((nx, ny))
        stack.append((nx, ny))

    braid = float(rng.uniform(0.04, 0.12))

    def separates(w):
        x, y = w
        free_lr = (x - 1, y) not in walls and (x + 1, y) not in walls \
            and 0 <= x - 1 and x + 1 < width
        free_ud = (x, y - 1) not in walls and (x, y + 1) not in walls \
            and 0 <= y - 1 and y + 1 < height
        return free_lr or free_ud

    removable = sorted(w for w in walls if separates(w))
    n_extra = int(len(removable) * braid)
    if n_extra:
        idx = rng.choice(len(removable), size=n_extra, replace=False)
        for i in idx:
            walls.discard(removable[int(i)])

    free = {(x, y) for y in range(height) for x in range(width) if (x, y) not in walls}
    if not _connected(free):
        raise AssertionError("maze carving produced a disconnected scene")  # unreachable
    return frozenset(walls)


def generate_scene(seed: int, scene_type: str, width: int, height: int) -> SceneSpec:
    """Build a scene deterministically from (seed, scene_type, width, height)."""
    if scene_type not in SCENE_TYPES:
        raise ValueError(f"unknown scene_type {scene_type!r}; expected one of {SCENE_TYPES}")
    if width < MIN_SCENE_DIM or height < MIN_SCENE_DIM:
        raise ValueError(f"scene dimensions must be at least {MIN_SCENE_DIM}x{MIN_SCENE_DIM}, got {width}x{height}")
    if seed < 0:
        raise ValueError("seed must be non-negative")

    rng = np.random.default_rng(
        np.random.SeedSequence([_SCENE_STREAM, seed, SCENE_TYPES.index(scene_type), width, height]))
    walls = _carve_walls(rng, width, height)
    free = [(x, y) for y in range(height) for x in range(width) if (x, y) not in walls]

    pool = OBJECT_CLASSES[scene_type]
    n_objects = int(rng.integers(5, 9))
    cell_idx = rng.choice(len(free), size=n_objects, replace=False)
    cells = [free[int(i)] for i in cell_idx]
    classes = [pool[int(i)] for i in rng.integers(0, len(pool), size=n_objects)]
    attrs = []
    for _ in range(n_objects):
        n_attr = 2 if rng.random() < 0.5 else 1
        picks = rng.choice(len(ATTRIBUTES), size=n_attr, replace=False)
        attrs.append(tuple(ATTRIBUTES[int(i)] for i in picks))

    objects = []
    for i in range(n_objects):
        relations: tuple[tuple[str, int], ...] = ()
        best_j, best_d = -1, 3.0 + 1e-9
        for j in range(n_objects):
            if j == i:
                continue
            d = float(np.hypot(cells[i][0] - cells[j][0], cells[i][1] - cells[j][1]))
            if d < best_d:
                best_j, best_d = j, d
        rel_tok = RELATION_TOKENS[int(rng.integers(0, len(RELATION_TOKENS)))]
        if best_j >= 0:
            relations = ((rel_tok, best_j),)
        objects.append(ObjectInstance(object_class=classes[i], attributes=attrs[i],
                                      cell=cells[i], relations=relations))

    scene_id = f"{scene_type}-{seed:05d}-{width}x{height}"
    return SceneSpec(id=scene_id, scene_type=scene_type, width=width, height=height,
                     walls=walls, objects=tuple(objects), seed=seed)


# ---------------------------------------------------------------------------
# dynamics

def _apply_move(scene: SceneSpec, pose: Pose, action: int) -> Pose:
    if action == Action.MOVE_FORWARD or action == Action.MOVE_BACKWARD:
        dx, dy = HEADING_VECTORS[pose.heading]
        if action == Action.MOVE_BACKWARD:
            dx, dy = -dx, -dy
        nx, ny = pose.x + dx, pose.y + dy
        if scene.is_free(nx, ny):
            return Pose(nx, ny, pose.heading)
        return pose
    if action == Action.ROTATE_LEFT:
        return Pose(pose.x, pose.y, (pose.heading - 1) % 4)
    if action == Action.ROTATE_RIGHT:
        return Pose(pose.x, pose.y, (pose.heading + 1) % 4)
    raise ValueError(f"invalid action index {action!r}")


def poses_match(a: Pose, b: Pose, match_heading: bool = True) -> bool:
    if match_heading:
        return a == b
    return a.x == b.x and a.y == b.y


def step(scene: SceneSpec, pose: Pose, target: Pose, action: int,
         steps_taken: int, cap: int = DEFAULT_EPISODE_CAP,
         match_heading: bool = True) -> StepResult:
    """Apply one action. Pure function; see module docstring for the reward rule."""
    if not pose_valid(scene, pose):
        raise ValueError(f"invalid pose {pose} for scene {scene.id}")
    if steps_taken >= cap:
        raise ValueError(f"steps_taken {steps_taken} already at cap {cap}")
    next_pose = _apply_move(scene, pose, action)
    reward = STEP_COST
    done = False
    if poses_match(next_pose, target, match_heading):
        reward += COMPLETION_BONUS
        done = True
    elif steps_taken + 1 >= cap:
        done = True
    return StepResult(next_pose=next_pose, reward=reward, done=done,
                      steps_taken=steps_taken + 1)


def shortest_path_length(scene: SceneSpec, frm: Pose, to: Pose,
                         match_heading: bool = True) -> int:
    """Minimum number of actions (rotations included) from `frm` to `to`.

    Breadth-first search over the pose graph under `step` dynamics.
    """
    for p in (frm, to):
        if not pose_valid(scene, p):
            raise ValueError(f"invalid pose {p} for scene {scene.id}")
    if poses_match(frm, to, match_heading):
        return 0
    seen = {frm}
    queue = deque([(frm, 0)])
    while queue:
        pose, dist = queue.popleft()
        for action in range(4):
            nxt = _apply_move(scene, pose, action)
            if nxt in seen:
                continue
            if poses_match(nxt, to, match_heading):
                return dist + 1
            seen.add(nxt)
            queue.append((nxt, dist + 1))
    raise RuntimeError(f"no path from {frm} to {to} in scene {scene.id}")  # unreachable: scenes are connected


def bfs_distances(scene: SceneSpec, target: Pose,
                  match_heading: bool = True) -> dict[Pose, int]:
    """Action-count distance from every pose to `target` (the pose graph is symmetric)."""
    goal_poses = [target] if match_heading else [Pose(target.x, target.y, h) for h in range(4)]
    dist: dict[Pose, int] = {g: 0 for g in goal_poses}
    queue = deque(goal_poses)
    while queue:
        pose = queue.popleft()
        d = dist[pose]
        for action in range(4):
            nxt = _apply_move(scene, pose, action)
            if nxt not in dist:
                dist[nxt] = d + 1
                queue.append(nxt)
    return dist


# ---------------------------------------------------------------------------
# target selection

def select_targets(scene: SceneSpec, mode: str, k: int, seed: int,
                   semantics_oracle: Callable[[SceneSpec, Pose], float] | None = None,
                   exclude: Iterable[Pose] = ()) -> list[Target]:
    """Pick k distinct target poses.

    random: uniform over valid poses. object_oriented: poses that see at
    least one object, preferring poses whose visible objects also appear in
    other candidate views. top_semantic: the k poses with the highest
    semantics_oracle score (summed top-5 annotation confidence when the
    featurizer scorer is passed in).
    """
    if mode not in TARGET_MODES:
        raise ValueError(f"unknown target mode {mode!r}; expected one of {TARGET_MODES}")
    excluded = set(exclude)
    poses = [p for p in valid_poses(scene) if p not in excluded]
    rng = np.random.default_rng(np.random.SeedSequence([0x7A26E7, scene.seed, seed]))

    if mode == "random":
        if k > len(poses):
            raise ValueError(f"mode random: only {len(poses)} candidate poses for k={k}")
        picks = rng.choice(len(poses), size=k, replace=False)
        return [Target(poses[int(i)], mode) for i in picks]

    if mode == "object_oriented":
        from . import featurizer  # deferred: featurizer builds on this module
        vis = []
        cands = []
        for p in poses:
            seen = frozenset(idx for idx, _, _, _ in featurizer.indexed_visible_objects(scene, p))
            if seen:
                cands.append(p)
                vis.append(seen)
        if k > len(cands):
            raise ValueError(f"mode object_oriented: only {len(cands)} candidate poses for k={k}")
        scores = [sum(1 for other in vis if other is not mine and other & mine)
                  for mine in vis]
        perm = rng.permutation(len(cands))
        rank = np.empty(len(cands), dtype=int)
        rank[perm] = np.arange(len(cands))
        order = sorted(range(len(cands)), key=lambda i: (-scores[i], rank[i]))
        return [Target(cands[i], mode) for i in order[:k]]

    # top_semantic
    if semantics_oracle is None:
        raise ValueError("mode top_semantic requires a semantics_oracle")
    if k > len(poses):
        raise ValueError(f"mode top_semantic: only {len(poses)} candidate poses for k={k}")
    scores = [float(semantics_oracle(scene, p)) for p in poses]
    order = sorted(range(len(poses)), key=lambda i: (-scores[i], i))
    return [Target(poses[i], "top_semantic") for i in order[:k]]


# ---------------------------------------------------------------------------
# serialization

_SCENE_KEYS = {"id", "scene_type", "width", "height", "walls", "objects", "seed"}
_OBJECT_KEYS = {"class", "attributes", "cell", "relations"}


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "id": scene.id,
        "scene_type": scene.scene_type,
        "width": scene.width,
        "height": scene.height,
        "walls": sorted([x, y] for (x, y) in scene.walls),
        "objects": [
            {
                "class": o.object_class,
                "attributes": list(o.attributes),
                "cell": list(o.cell),
                "relations": [[rel, idx] for rel, idx in o.relations],
            }
            for o in scene.objects
        ],
        "seed": scene.seed,
    }


def scene_from_dict(data: dict) -> SceneSpec:
    if not isinstance(data, dict):
        raise ValueError("scene document must be a JSON object")
    extra = set(data) - _SCENE_KEYS
    if extra:
        raise ValueError(f"unknown scene keys: {sorted(extra)}")
    missing = _SCENE_KEYS - set(data)
    if missing:
        raise ValueError(f"missing scene keys: {sorted(missing)}")
    objects = []
    for o in data["objects"]:
        oextra = set(o) - _OBJECT_KEYS
        if oextra:
            raise ValueError(f"unknown object keys: {sorted(oextra)}")
        objects.append(ObjectInstance(
            object_class=o["class"],
            attributes=tuple(o["attributes"]),
            cell=(int(o["cell"][0]), int(o["cell"][1])),
            relations=tuple((str(rel), int(idx)) for rel, idx in o.get("relations", [])),
        ))
    return SceneSpec(
        id=str(data["id"]),
        scene_type=str(data["scene_type"]),
        width=int(data["width"]),
        height=int(data["height"]),
        walls=frozenset((int(x), int(y)) for x, y in data["walls"]),
        objects=tuple(objects),
        seed=int(data["seed"]),
    )


def scene_to_json(scene: SceneSpec) -> str:
    return json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n"


def save_scene(scene: SceneSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scene_to_json(scene))


def load_scene(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"scene file {path}: {exc}") from exc
    try:
        return scene_from_dict(data)
    except ValueError as exc:
        raise ValueError(f"scene file {path}: {exc}") from exc


def render_ascii(scene: SceneSpec, pose: Pose | None = None,
                 target: Pose | None = None) -> str:
    """Top-down sketch: # wall, letters for objects, ^>v< agent, * target."""
    rows = []
    arrows = "^>v<"
    for y in range(scene.height):
        row = []
        for x in range(scene.width):
            ch = "#" if (x, y) in scene.walls else "."
            for o in scene.objects:
                if o.cell == (x, y):
                    ch = o.object_class[0].upper()
            if target is not None and (target.x, target.y) == (x, y):
                ch = "*"
            if pose is not None and (pose.x, pose.y) == (x, y):
                ch = arrows[pose.heading]
            row.append(ch)
        rows.append("".join(row))
    return "\n".join(rows)
