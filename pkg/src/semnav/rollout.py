"""Per-scene observation tables and episode bookkeeping shared by training
and evaluation.

A ScenePack caches every pose's feature vector (and, when an encoder is
supplied, its frame-semantics vector) so rollouts index into arrays instead
of re-deriving observations. Poses are keyed by their position in the
scene's canonical pose list. Packs are immutable after construction and
safe to share across worker threads.
"""

from __future__ import annotations

import numpy as np

from . import featurizer, semantics
from .gridscene import Pose, SceneSpec, bfs_distances, valid_poses


class ScenePack:
    def __init__(self, scene: SceneSpec, feature_dim: int, feature_seed: int,
                 config: featurizer.FeaturizerConfig = featurizer.DEFAULT_CONFIG,
                 encoder: semantics.SentenceEncoder | None = None):
        self.scene = scene
        self.config = config
        self.feature_dim = feature_dim
        self.feature_seed = feature_seed
        self.poses = valid_poses(scene)
        self.pose_index = {p: i for i, p in enumerate(self.poses)}
        self.features = np.stack([
            featurizer.visual_features(scene, p, feature_seed, feature_dim, config)
            for p in self.poses])
        self.semantics = None
        if encoder is not None:
            self.semantics = np.stack([
                semantics.frame_semantics(featurizer.annotate(scene, p, config), encoder)
                for p in self.poses])
        self._dist_maps: dict[Pose, dict[Pose, int]] = {}

    @property
    def n_poses(self) -> int:
        return len(self.poses)

    def distances(self, target: Pose) -> dict[Pose, int]:
        hit = self._dist_maps.get(target)
        if hit is None:
            hit = bfs_distances(self.scene, target)
            self._dist_maps[target] = hit
        return hit

    def sample_start(self, rng: np.random.Generator, target: Pose) -> int:
        """Index of a uniform-random valid pose distinct from the target."""
        while True:
            i = int(rng.integers(self.n_poses))
            if self.poses[i] != target:
                return i


class EpisodeHistory:
    """Sliding window of the last four observed poses (current pose last).

    At episode start the first observation fills all four slots. Maintains
    rolling flat buffers (4F and, with semantics, 4*S_f) so network inputs
    need no per-step concatenation; feats()/sems() return live buffers that
    mutate on advance, so callers that retain them must copy.
    """

    __slots__ = ("pack", "idxs", "feat_buf", "sem_buf", "_f", "_s")

    def __init__(self, pack: ScenePack, start_idx: int):
        self.pack = pack
        self.idxs = [start_idx] * 4
        f = pack.features.shape[1]
        self._f = f
        self.feat_buf = np.empty(4 * f)
        for k in range(4):
            self.feat_buf[k * f:(k + 1) * f] = pack.features[start_idx]
        self.sem_buf = None
        self._s = 0
        if pack.semantics is not None:
            s = pack.semantics.shape[1]
            self._s = s
            self.sem_buf = np.empty(4 * s)
            for k in range(4):
                self.sem_buf[k * s:(k + 1) * s] = pack.semantics[start_idx]

    def advance(self, pose_idx: int) -> None:
        self.idxs = self.idxs[1:] + [pose_idx]
        f = self._f
        self.feat_buf[:3 * f] = self.feat_buf[f:]
        self.feat_buf[3 * f:] = self.pack.features[pose_idx]
        if self.sem_buf is not None:
            s = self._s
            self.sem_buf[:3 * s] = self.sem_buf[s:]
            self.sem_buf[3 * s:] = self.pack.semantics[pose_idx]

    def key(self) -> tuple[int, ...]:
        return tuple(self.idxs)

    def feats(self) -> np.ndarray:
        return self.feat_buf

    def sems(self) -> np.ndarray | None:
        return self.sem_buf
