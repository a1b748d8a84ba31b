"""Asynchronous multi-worker training against a shared parameter store.

Worker threads repeatedly snapshot the shared parameters, roll out up to
t_max steps on their assigned (scene, target) pair -- assignment is
round-robin over all pairs so every scene-type head trains -- compute the
actor-critic gradients on the snapshot, and apply them to the store through
a shared RMSProp. The store is the single mutation point: updates and
snapshots are serialized under one lock, so a snapshot always contains
matrices from the same update generation.

Frames count environment steps. A worker that notices the frame budget is
met finishes its current episode before exiting, so at exit the frame
counter equals the sum of recorded episode lengths.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import featurizer
from .gridscene import DEFAULT_EPISODE_CAP, SceneSpec, Target, pose_valid, step
from .policynet import (NetworkParams, NumericError, StepInputs, StepRecord,
                        Trajectory, a3c_loss_and_grads, init_params,
                        make_target_context, policy_with_context)
from .rollout import EpisodeHistory, ScenePack
from .semantics import SentenceEncoder

REWARD_LOG_HEADER = "frames,scene_id,target_idx,episode_return,episode_len,success"
LOG_FLUSH_EVERY = 100

_TRAIN_STREAM = 0xA3C0


class TrainingError(RuntimeError):
    """A worker failed; training was aborted."""


@dataclass
class TrainConfig:
    workers: int = 1
    total_frames: int = 100_000
    t_max: int = 5
    gamma: float = 0.99
    beta: float = 0.01
    value_coef: float = 0.5
    lr: float = 3.5e-4
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    variant: str = "sn"
    target_mode: str = "object_oriented"
    seed: int = 0
    feature_dim: int = featurizer.DEFAULT_FEATURE_DIM
    embed_dim: int = 64
    feature_seed: int = featurizer.DEFAULT_FEATURE_SEED
    episode_cap: int = DEFAULT_EPISODE_CAP
    grad_clip: float = 40.0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.total_frames < self.t_max:
            raise ValueError(f"total_frames {self.total_frames} < t_max {self.t_max}")
        if self.variant not in ("sn", "ssn"):
            raise ValueError(f"unknown variant {self.variant!r}")


class EpisodeRow(NamedTuple):
    frames: int
    scene_id: str
    target_idx: int
    episode_return: float
    episode_len: int
    success: bool


def format_episode_row(row: EpisodeRow) -> str:
    return (f"{row.frames},{row.scene_id},{row.target_idx},"
            f"{row.episode_return!r},{row.episode_len},{int(row.success)}")


class SharedStore:
    """Shared parameters plus shared RMSProp accumulators and counters."""

    def __init__(self, params: NetworkParams):
        self.params = params
        self.acc = params.zeros_like()
        self.frames = 0
        self.generation = 0
        self.pair_cursor = 0
        self.episodes: list[EpisodeRow] = []
        self.stop = False
        self.lock = threading.Lock()
        self.next_milestone = 0
        self._scratch = np.empty_like(params.flat)

    def snapshot(self) -> NetworkParams:
        with self.lock:
            return self.params.copy()


def apply_update(store: SharedStore, grads: NetworkParams, lr: float,
                 decay: float, eps: float) -> None:
    """Shared RMSProp: acc <- decay*acc + (1-decay)*g^2; p <- p - lr*g/(sqrt(acc)+eps).

    The whole update runs under the store lock so snapshots never observe a
    half-applied generation (and, a fortiori, no torn matrices).
    """
    g = grads.flat
    if not np.isfinite(g).all():
        raise NumericError("non-finite gradient")
    with store.lock:
        acc = store.acc.flat
        scratch = store._scratch
        np.multiply(g, g, out=scratch)
        scratch *= 1.0 - decay
        acc *= decay
        acc += scratch
        np.sqrt(acc, out=scratch)
        scratch += eps
        np.divide(g, scratch, out=scratch)
        scratch *= lr
        store.params.flat -= scratch
        store.generation += 1


def clip_gradients(grads: NetworkParams, max_norm: float) -> float:
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    norm = float(np.linalg.norm(grads.flat))
    if norm > max_norm:
        grads.flat *= max_norm / norm
    return norm


class _RewardLogWriter:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8")
        self.fh.write(REWARD_LOG_HEADER + "\n")
        self.pending = 0

    def write(self, row: EpisodeRow) -> None:
        self.fh.write(format_episode_row(row) + "\n")
        self.pending += 1
        if self.pending >= LOG_FLUSH_EVERY:
            self.fh.flush()
            self.pending = 0

    def close(self) -> None:
        self.fh.flush()
        self.fh.close()


def _validate(config: TrainConfig, scenes: Sequence[SceneSpec],
              targets: dict[str, list[Target]],
              encoder: SentenceEncoder | None) -> None:
    if config.variant == "ssn" and encoder is None:
        raise ValueError("ssn training requires a sentence encoder")
    if not scenes:
        raise ValueError("no scenes to train on")
    for scene in scenes:
        scene_targets = targets.get(scene.id)
        if not scene_targets:
            raise ValueError(f"scene {scene.id} has no targets")
        for t in scene_targets:
            if not pose_valid(scene, t.pose):
                raise ValueError(f"target pose {t.pose} invalid in scene {scene.id}")


def _worker_loop(wid: int, store: SharedStore, config: TrainConfig,
                 pairs: list, writer, on_milestone, milestone_every: int) -> None:
    rng = np.random.default_rng(np.random.SeedSequence([_TRAIN_STREAM, config.seed, wid]))
    semantic = config.variant == "ssn"

    while True:
        with store.lock:
            if store.frames >= config.total_frames or store.stop:
                return
            pack, target_idx, target = pairs[store.pair_cursor % len(pairs)]
            store.pair_cursor += 1

        scene = pack.scene
        t_pose_idx = pack.pose_index[target.pose]
        target_feat = pack.features[t_pose_idx]
        target_sem = pack.semantics[t_pose_idx] if semantic else None

        pose_idx = pack.sample_start(rng, target.pose)
        pose = pack.poses[pose_idx]
        hist = EpisodeHistory(pack, pose_idx)
        steps_taken = 0
        ep_return = 0.0
        success = False
        done = False

        while not done:
            snap = store.snapshot()
            ctx = make_target_context(snap, target_feat, target_sem)
            records = []
            for _ in range(config.t_max):
                # history buffers mutate on advance; keep a copy per step
                inputs = StepInputs(history_feats=hist.feats().copy(),
                                    target_feat=target_feat,
                                    scene_type=scene.scene_type,
                                    history_sem=None if not semantic else hist.sems().copy(),
                                    target_sem=target_sem)
                policy, _ = policy_with_context(snap, ctx, inputs.history_feats,
                                                inputs.history_sem, scene.scene_type)
                action = int(np.searchsorted(np.cumsum(policy), rng.random()))
                action = min(action, 3)
                res = step(scene, pose, target.pose, action, steps_taken,
                           config.episode_cap)
                records.append(StepRecord(inputs=inputs, action=action,
                                          reward=res.reward, done=res.done))
                pose = res.next_pose
                steps_taken = res.steps_taken
                ep_return += res.reward
                if res.done:
                    success = res.reward > 0.0
                    done = True
                    break
                hist.advance(pack.pose_index[pose])

            bootstrap = 0.0
            if not done:
                _, bootstrap = policy_with_context(snap, ctx, hist.feats(),
                                                   hist.sems(), scene.scene_type)
            traj = Trajectory(steps=tuple(records), bootstrap_value=bootstrap)
            _, grads = a3c_loss_and_grads(snap, traj, config.gamma, config.beta,
                                          config.value_coef)
            if config.grad_clip > 0:
                clip_gradients(grads, config.grad_clip)
            apply_update(store, grads, config.lr, config.rmsprop_decay,
                         config.rmsprop_eps)

            claimed = None
            with store.lock:
                store.frames += len(records)
                frames_now = store.frames
                if milestone_every and store.next_milestone <= frames_now:
                    claimed = store.next_milestone
                    while store.next_milestone <= frames_now:
                        store.next_milestone += milestone_every
            if claimed is not None and on_milestone is not None:
                if on_milestone(frames_now, store.snapshot()):
                    with store.lock:
                        store.stop = True

        with store.lock:
            row = EpisodeRow(frames=store.frames, scene_id=scene.id,
                             target_idx=target_idx, episode_return=ep_return,
                             episode_len=steps_taken, success=success)
            store.episodes.append(row)
            if writer is not None:
                writer.write(row)


def train(config: TrainConfig, scenes: Sequence[SceneSpec],
          targets: dict[str, list[Target]],
          encoder: SentenceEncoder | None = None,
          log_path=None,
          on_milestone: Callable[[int, NetworkParams], bool] | None = None,
          milestone_every: int = 0,
          featurizer_config: featurizer.FeaturizerConfig = featurizer.DEFAULT_CONFIG,
          packs: dict[str, ScenePack] | None = None):
    """Run asynchronous training; returns (final params, reward log rows).

    on_milestone(frames, params_snapshot) fires each time the frame counter
    crosses a multiple of milestone_every; returning True stops training
    early. The reward log records one row per finished episode. Prebuilt
    scene packs may be passed in to skip observation-table rebuilds.
    """
    _validate(config, scenes, targets, encoder)
    semantic = config.variant == "ssn"
    if packs is None:
        packs = {scene.id: ScenePack(scene, config.feature_dim, config.feature_seed,
                                     featurizer_config, encoder if semantic else None)
                 for scene in scenes}
    else:
        for scene in scenes:
            pack = packs.get(scene.id)
            if pack is None:
                raise ValueError(f"no prebuilt pack for scene {scene.id}")
            if pack.feature_dim != config.feature_dim or pack.feature_seed != config.feature_seed:
                raise ValueError(f"pack for {scene.id} was built with different feature settings")
            if semantic and pack.semantics is None:
                raise ValueError(f"pack for {scene.id} lacks semantics for ssn training")
    pairs = []
    for scene in scenes:
        for ti, target in enumerate(targets[scene.id]):
            pairs.append((packs[scene.id], ti, target))

    sem_dim = encoder.frame_dim if semantic else 0
    params = init_params(config.variant, config.feature_dim, config.embed_dim,
                         sem_dim, config.seed)
    store = SharedStore(params)
    store.next_milestone = milestone_every if milestone_every else 0

    writer = _RewardLogWriter(log_path) if log_path is not None else None
    failures: list[tuple[int, BaseException]] = []

    def run(wid: int) -> None:
        try:
            _worker_loop(wid, store, config, pairs, writer, on_milestone,
                         milestone_every)
        except BaseException as exc:  # propagate to the caller with context
            with store.lock:
                store.stop = True
            failures.append((wid, exc))

    if config.workers == 1:
        run(0)
    else:
        threads = [threading.Thread(target=run, args=(w,), name=f"a3c-worker-{w}")
                   for w in range(config.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    if writer is not None:
        writer.close()
    if failures:
        wid, exc = failures[0]
        raise TrainingError(f"worker {wid} failed: {exc}") from exc
    if not store.params.all_finite():
        raise NumericError("training produced non-finite parameters")
    return store.params, list(store.episodes)
