"""Train the plain siamese agent on one scene and one target, then evaluate.

A compressed version of the single-target convergence experiment: two
asynchronous workers, 60k frames (a few minutes). Writes the reward log and
an SVG learning curve next to this script.

Run: python3 demos/05_train_single_target.py
"""
import csv
import pathlib
import time

import numpy as np

import semnav as sn
from semnav.a3c import TrainConfig, train
from semnav.cli import render_reward_svg
from semnav.evalharness import evaluate
from semnav.gridscene import render_ascii

here = pathlib.Path(__file__).parent
scene = sn.generate_scene(3, "bathroom", 8, 8)
targets = {scene.id: sn.select_targets(scene, "object_oriented", 1, seed=0)}
target = targets[scene.id][0]
print(render_ascii(scene, target=target.pose))
print(f"target: {target.pose} (object-oriented)\n")

config = TrainConfig(workers=2, total_frames=60_000, seed=1)
log_path = here / "single_target_rewards.csv"

t0 = time.time()
params, episodes = train(config, [scene], targets, log_path=log_path)
dt = time.time() - t0
print(f"trained {config.total_frames} frames in {dt:.0f}s "
      f"({config.total_frames / dt:.0f} frames/s), {len(episodes)} episodes")

lens = np.array([e.episode_len for e in episodes])
rets = np.array([e.episode_return for e in episodes])
q = len(episodes) // 4
for i in range(4):
    print(f"  episode quartile {i}: mean length {lens[i*q:(i+1)*q].mean():7.1f}  "
          f"mean return {rets[i*q:(i+1)*q].mean():+.2f}")

report = evaluate(params, [(scene, targets[scene.id])], episodes_per_target=100,
                  cap=1000, seed=0, policy="greedy")
dists = sn.bfs_distances(scene, target.pose)
print(f"\ngreedy evaluation: success {report.overall_success_pct:.0f}%, "
      f"mean episode length {report.overall_mean_length:.1f}")
print(f"mean BFS shortest path from a random start: "
      f"{np.mean(list(dists.values())):.1f}")

with open(log_path, newline="") as fh:
    rows = list(csv.DictReader(fh))
svg_path = here / "single_target_curve.svg"
svg_path.write_text(render_reward_svg(rows, window=100))
print(f"\nwrote {log_path.name} and {svg_path.name}")
