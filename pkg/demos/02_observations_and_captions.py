"""What the agent sees: dense features, view cones, and caption annotations.

Run: python3 demos/02_observations_and_captions.py
"""
import io

import numpy as np

import semnav as sn
from semnav.gridscene import Pose, render_ascii

scene = sn.generate_scene(4, "livingroom", 11, 11)
print(render_ascii(scene))

# Every pose gets a deterministic feature vector: smooth sinusoids of the
# pose plus signature bumps for objects in view.
poses = sn.valid_poses(scene)
pose = poses[8]
feat = sn.visual_features(scene, pose)
print(f"\nfeature vector at {pose}: dim {feat.shape[0]}, "
      f"norm {np.linalg.norm(feat):.2f}")

# Nearby poses look alike; far poses do not. That smoothness is what lets a
# policy generalize across starts.
def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

neighbors = [p for p in poses if abs(p.x - pose.x) + abs(p.y - pose.y) == 1
             and p.heading == pose.heading]
far = [p for p in poses if abs(p.x - pose.x) + abs(p.y - pose.y) >= 6
       and p.heading == pose.heading]
print(f"cosine to adjacent poses: "
      f"{np.mean([cos(feat, sn.visual_features(scene, p)) for p in neighbors]):.3f}")
print(f"cosine to far poses:      "
      f"{np.mean([cos(feat, sn.visual_features(scene, p)) for p in far]):.3f}")

# The view cone: 90 degrees forward, range 5, walls block sight.
print("\nvisible objects per heading from", (pose.x, pose.y))
for h, name in enumerate("NESW"):
    vis = sn.visible_objects(scene, Pose(pose.x, pose.y, h))
    parts = [f"{o.object_class}@{c:.2f}" for o, _, c in vis]
    print(f"  {name}: {', '.join(parts) if parts else '(nothing)'}")

# Each visible object carries a templated caption, a box, and a confidence.
for h in range(4):
    anns = sn.annotate(scene, Pose(pose.x, pose.y, h))
    if anns:
        a = anns[0]
        print(f"\ntop annotation facing {'NESW'[h]}: \"{' '.join(a.tokens)}\"")
        print(f"  box {tuple(round(v, 2) for v in a.box)}, confidence {a.confidence:.2f}")
        break

# The dump-annotations format, one line per pose:
buf = io.StringIO()
sn.dump_annotations([scene], buf)
line = next(l for l in buf.getvalue().splitlines() if len(l.split("\t")) > 4)
print(f"\ndump-annotations sample line:\n  {line[:120]}...")
