"""The semantic pipeline: corpus, autoencoder training, frame vectors.

Run: python3 demos/03_sentence_space.py
"""
import numpy as np

import semnav as sn

scenes = [sn.generate_scene(100 * t + i, st_name, 11, 11)
          for t, st_name in enumerate(sn.SCENE_TYPES) for i in range(3)]

# The corpus is every caption that survives the per-frame top-5 confidence
# filter, deduplicated across all poses of all scenes.
corpus = sn.build_corpus(scenes)
print(f"corpus: {len(corpus.sentences)} sentences, {len(corpus.vocabulary)} word vocabulary")
for sent in corpus.sentences[:5]:
    print("  ", " ".join(sent))

# A bag-of-tokens autoencoder compresses each sentence to a 64-d code.
enc = sn.train_autoencoder(corpus, sentence_dim=64, epochs=200, lr=0.05, seed=0)
print(f"\nreconstruction loss: {enc.losses[0]:.3f} -> {enc.losses[-1]:.3f} "
      f"over {len(enc.losses) - 1} epochs (never increasing)")

# Codes separate object classes; the same class with different attributes
# stays close.
def sim(a, b):
    va, vb = enc.encode(a), enc.encode(b)
    return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))

pairs = [(("a", "white", "sink"), ("a", "blue", "sink")),
         (("a", "white", "sink"), ("a", "wooden", "bed")),
         (("a", "white", "sink"), ("the", "sofa", "near", "the", "lamp"))]
for a, b in pairs:
    print(f"  cos({' '.join(a)!r}, {' '.join(b)!r}) = {sim(a, b):.2f}")

# A frame's semantics: its top-5 annotations packed as
# [64-d code | 4 box coords | confidence] each -> 345 numbers.
scene = scenes[0]
pose = next(p for p in sn.valid_poses(scene) if len(sn.annotate(scene, p)) >= 2)
vec = sn.frame_semantics(sn.annotate(scene, pose), enc)
print(f"\nframe semantics at {pose}: length {vec.shape[0]} (5 slots x 69)")
occupied = sum(1 for i in range(5) if vec[i * 69:(i + 1) * 69].any())
print(f"occupied slots: {occupied}; confidences: "
      f"{[round(float(vec[i * 69 + 68]), 2) for i in range(occupied)]}")
