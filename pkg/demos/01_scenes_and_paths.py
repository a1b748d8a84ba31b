"""Tour of the navigation environment: scene generation, dynamics, shortest paths.

Run: python3 demos/01_scenes_and_paths.py
"""
import numpy as np

import semnav as sn
from semnav.gridscene import Action, render_ascii, scene_to_json

# Scenes are pure functions of (seed, scene_type, width, height).
scene = sn.generate_scene(7, "kitchen", 11, 11)
again = sn.generate_scene(7, "kitchen", 11, 11)
print(f"scene {scene.id}: {len(scene.walls)} walls, {len(scene.objects)} objects")
print(f"regeneration is bit-identical: {scene == again}")
print()
print(render_ascii(scene))
print()
for i, obj in enumerate(scene.objects):
    print(f"  object {i}: {' '.join(obj.attributes)} {obj.object_class} at {obj.cell}")

# The agent occupies a pose (cell + heading) and has four actions.
poses = sn.valid_poses(scene)
start, goal = poses[0], poses[len(poses) // 2]
print(f"\nposes: {len(poses)} (free cells x 4 headings)")
print(f"start {start} -> goal {goal}")

# step() is a pure function: -0.01 per action, +10 on reaching the target.
res = sn.step(scene, start, goal, Action.MOVE_FORWARD, steps_taken=0)
print(f"one MoveForward: pose {res.next_pose}, reward {res.reward}, done {res.done}")

# BFS over the pose graph counts rotations as actions too.
dist = sn.shortest_path_length(scene, start, goal)
print(f"shortest path length: {dist} actions")

# Distances from everywhere to the goal, e.g. for oracle rollouts.
dists = sn.bfs_distances(scene, goal)
print(f"mean distance over all poses: {np.mean(list(dists.values())):.1f}")
print(f"max distance (pose diameter):  {max(dists.values())}")

# Scenes serialize to JSON losslessly (schema in docs/scene.schema.json).
text = scene_to_json(scene)
print(f"\nserialized scene: {len(text)} bytes, round-trip lossless: "
      f"{sn.gridscene.scene_from_dict(sn.gridscene.scene_to_dict(scene)) == scene}")
