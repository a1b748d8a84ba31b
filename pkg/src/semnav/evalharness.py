"""Evaluation protocol: greedy rollouts, baselines, and benchmark tables.

evaluate() runs a fixed number of episodes per target from uniform-random
start poses and aggregates success rate and mean episode length per scene
type (episodes that hit the cap count at the cap). Every episode draws its
randomness from a seed derived from (eval seed, scene, target, episode), so
reports are identical whatever the worker count or execution order.

run_t1 trains on every scene's training targets and evaluates on fresh
targets in one held instance per scene type; run_t2 holds one scene per
type out of training entirely and evaluates on the held scenes' own
targets. Both produce a table with Random / SN / SSN / SSN_S rows.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import a3c, featurizer, semantics
from .a3c import TrainConfig
from .gridscene import (SCENE_TYPES, DEFAULT_EPISODE_CAP, Pose, SceneSpec,
                        Target, generate_scene, select_targets)
from .policynet import NetworkParams, make_target_context, policy_with_context
from .rollout import EpisodeHistory, ScenePack

POLICIES = ("greedy", "sample", "random", "oracle")
MODEL_LABELS = {"random": "R", "sn": "SN", "ssn": "SSN", "ssn_s": "SSN_S"}

_EVAL_STREAM = 0xE7A1


@dataclass(frozen=True)
class TargetStats:
    scene_id: str
    scene_type: str
    target_idx: int
    episodes: int
    successes: int
    total_length: int

    @property
    def success_pct(self) -> float:
        return 100.0 * self.successes / self.episodes

    @property
    def mean_length(self) -> float:
        return self.total_length / self.episodes


@dataclass
class EvalReport:
    per_scene_type: dict[str, dict]
    per_target: list[TargetStats]
    config: dict

    @property
    def overall_success_pct(self) -> float:
        eps = sum(t.episodes for t in self.per_target)
        return 100.0 * sum(t.successes for t in self.per_target) / eps

    @property
    def overall_mean_length(self) -> float:
        eps = sum(t.episodes for t in self.per_target)
        return sum(t.total_length for t in self.per_target) / eps

    def csv_rows(self, model: str) -> list[str]:
        return [f"{st},{model},{stats['el']:.2f},{stats['success_pct']:.2f}"
                for st, stats in self.per_scene_type.items()]


def _episode(pack: ScenePack, target: Target, params: NetworkParams | None,
             ctx, cap: int, rng: np.random.Generator, policy: str,
             dists: dict[Pose, int] | None) -> tuple[bool, int]:
    from .gridscene import _apply_move, step as env_step

    scene = pack.scene
    semantic = params is not None and params.is_semantic
    pose_idx = pack.sample_start(rng, target.pose)
    pose = pack.poses[pose_idx]
    hist = EpisodeHistory(pack, pose_idx)
    steps_taken = 0
    visited: set | None = set() if policy == "greedy" else None

    while True:
        if policy == "random":
            action = int(rng.integers(4))
        elif policy == "oracle":
            action = min(range(4), key=lambda a: (dists[_apply_move(scene, pose, a)], a))
        else:
            if visited is not None:
                key = hist.key()
                if key in visited:
                    return False, cap  # deterministic policy entered a loop
                visited.add(key)
            probs, _ = policy_with_context(params, ctx, hist.feats(),
                                           hist.sems() if semantic else None,
                                           scene.scene_type)
            if policy == "greedy":
                action = int(np.argmax(probs))
            else:  # sample
                action = min(int(np.searchsorted(np.cumsum(probs), rng.random())), 3)
        res = env_step(scene, pose, target.pose, action, steps_taken, cap)
        pose = res.next_pose
        steps_taken = res.steps_taken
        if res.done:
            return res.reward > 0.0, steps_taken
        hist.advance(pack.pose_index[pose])


def evaluate(params: NetworkParams | None,
             scene_targets: Sequence[tuple[SceneSpec, Sequence[Target]]],
             episodes_per_target: int = 100, cap: int = DEFAULT_EPISODE_CAP,
             encoder: semantics.SentenceEncoder | None = None,
             seed: int = 0, policy: str = "greedy",
             feature_seed: int = featurizer.DEFAULT_FEATURE_SEED,
             workers: int = 1,
             featurizer_config: featurizer.FeaturizerConfig = featurizer.DEFAULT_CONFIG,
             packs: dict[str, ScenePack] | None = None) -> EvalReport:
    """Evaluate a policy over (scene, targets) pairs; never mutates params."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if policy in ("greedy", "sample") and params is None:
        raise ValueError(f"policy {policy!r} requires network parameters")
    semantic = params is not None and params.is_semantic
    if semantic and encoder is None and packs is None:
        raise ValueError("ssn evaluation requires the sentence encoder")
    if semantic and encoder is not None and params.sem_dim != encoder.frame_dim:
        raise ValueError(f"checkpoint semantic dim {params.sem_dim} != "
                         f"encoder frame dim {encoder.frame_dim}")

    feature_dim = params.feature_dim if params is not None else featurizer.DEFAULT_FEATURE_DIM
    if packs is None:
        packs = {scene.id: ScenePack(scene, feature_dim, feature_seed,
                                     featurizer_config,
                                     encoder if semantic else None)
                 for scene, _ in scene_targets}

    jobs = []
    for si, (scene, targets) in enumerate(scene_targets):
        pack = packs[scene.id]
        if semantic and pack.semantics is None:
            raise ValueError(f"scene pack {scene.id} lacks semantics for ssn evaluation")
        for ti, target in enumerate(targets):
            t_idx = pack.pose_index[target.pose]
            ctx = None
            if params is not None:
                ctx = make_target_context(params, pack.features[t_idx],
                                          pack.semantics[t_idx] if semantic else None)
            dists = pack.distances(target.pose) if policy == "oracle" else None
            jobs.append((si, ti, scene, pack, target, ctx, dists))

    def run_target(job):
        si, ti, scene, pack, target, ctx, dists = job
        successes = 0
        total_len = 0
        for ep in range(episodes_per_target):
            rng = np.random.default_rng(
                np.random.SeedSequence([_EVAL_STREAM, seed, si, ti, ep]))
            ok, length = _episode(pack, target, params, ctx, cap, rng, policy, dists)
            successes += ok
            total_len += length
        return TargetStats(scene_id=scene.id, scene_type=scene.scene_type,
                           target_idx=ti, episodes=episodes_per_target,
                           successes=successes, total_length=total_len)

    if workers <= 1:
        per_target = [run_target(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_target = list(pool.map(run_target, jobs))

    per_scene_type: dict[str, dict] = {}
    for st in SCENE_TYPES:
        stats = [t for t in per_target if t.scene_type == st]
        if not stats:
            continue
        eps = sum(t.episodes for t in stats)
        per_scene_type[st] = {
            "el": sum(t.total_length for t in stats) / eps,
            "success_pct": 100.0 * sum(t.successes for t in stats) / eps,
            "episodes": eps,
        }
    cfg = {"episodes_per_target": episodes_per_target, "cap": cap, "seed": seed,
           "policy": policy, "feature_seed": feature_seed,
           "variant": params.variant if params is not None else None}
    return EvalReport(per_scene_type=per_scene_type, per_target=per_target,
                      config=cfg)


# ---------------------------------------------------------------------------
# benchmark orchestration

@dataclass
class BenchmarkConfig:
    count_per_type: int = 5
    width: int = 19
    height: int = 19
    scene_seed: int = 0
    targets_per_scene: int = 5
    target_seed: int = 0
    fresh_target_seed: int = 1
    episodes_per_target: int = 100
    cap: int = DEFAULT_EPISODE_CAP
    eval_seed: int = 0
    sentence_dim: int = semantics.DEFAULT_SENTENCE_DIM
    autoencoder_epochs: int = semantics.DEFAULT_EPOCHS
    autoencoder_lr: float = semantics.DEFAULT_LR
    autoencoder_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)


def build_inventory(cfg: BenchmarkConfig) -> list[SceneSpec]:
    """count_per_type scenes per scene type; the last of each type is the held instance."""
    scenes = []
    for t_idx, st in enumerate(SCENE_TYPES):
        for i in range(cfg.count_per_type):
            scenes.append(generate_scene(cfg.scene_seed + 100 * t_idx + i, st,
                                         cfg.width, cfg.height))
    return scenes


def held_instances(scenes: Sequence[SceneSpec]) -> list[SceneSpec]:
    """One held scene per scene type: the last listed instance of each type."""
    held = []
    for st in SCENE_TYPES:
        of_type = [s for s in scenes if s.scene_type == st]
        if not of_type:
            raise ValueError(f"no scenes of type {st}")
        held.append(of_type[-1])
    return held


def training_targets(scenes: Sequence[SceneSpec], mode: str,
                     cfg: BenchmarkConfig) -> dict[str, list[Target]]:
    oracle = featurizer.top_confidence_scorer() if mode == "top_semantic" else None
    return {s.id: select_targets(s, mode, cfg.targets_per_scene, cfg.target_seed,
                                 semantics_oracle=oracle) for s in scenes}


def fresh_eval_targets(scene: SceneSpec, cfg: BenchmarkConfig) -> list[Target]:
    """Unseen object-oriented targets: excludes every training-target pose
    (both the object-oriented and the top-semantic training sets)."""
    try:
        exclude = {t.pose for t in select_targets(scene, "object_oriented",
                                                  cfg.targets_per_scene, cfg.target_seed)}
        exclude |= {t.pose for t in select_targets(scene, "top_semantic",
                                                   cfg.targets_per_scene, cfg.target_seed,
                                                   semantics_oracle=featurizer.top_confidence_scorer())}
        return select_targets(scene, "object_oriented", cfg.targets_per_scene,
                              cfg.fresh_target_seed, exclude=exclude)
    except ValueError as exc:
        raise ValueError(f"scene {scene.id}: not enough candidate poses for "
                         f"fresh evaluation targets ({exc})") from exc


@dataclass
class ComparisonTable:
    task: str
    rows: dict[str, EvalReport]
    held_scene_ids: tuple[str, ...]
    frames_budget: int

    def to_csv(self) -> str:
        lines = ["scene_type,model,el,success_pct"]
        for model, report in self.rows.items():
            lines.extend(report.csv_rows(model))
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        types = [st for st in SCENE_TYPES
                 if any(st in r.per_scene_type for r in self.rows.values())]
        header1 = f"{self.task.upper():<10}" + "".join(f"{st:>22}" for st in types)
        header2 = f"{'':<10}" + "".join(f"{'E.L.':>12}{'%':>10}" for _ in types)
        lines = [header1, header2, "-" * len(header2)]
        for model, report in self.rows.items():
            label = MODEL_LABELS.get(model, model)
            cells = []
            for st in types:
                stats = report.per_scene_type.get(st)
                if stats is None:
                    cells.append(f"{'-':>12}{'-':>10}")
                else:
                    cells.append(f"{stats['el']:>12.0f}{stats['success_pct']:>10.1f}")
            lines.append(f"{label:<10}" + "".join(cells))
        return "\n".join(lines) + "\n"


def _build_encoder(scenes: Sequence[SceneSpec], cfg: BenchmarkConfig) -> semantics.SentenceEncoder:
    corpus = semantics.build_corpus(scenes)
    return semantics.train_autoencoder(corpus, sentence_dim=cfg.sentence_dim,
                                       epochs=cfg.autoencoder_epochs,
                                       lr=cfg.autoencoder_lr,
                                       seed=cfg.autoencoder_seed)


_VARIANT_SETUP = {
    # row name -> (network variant, training target mode)
    "sn": ("sn", "object_oriented"),
    "ssn": ("ssn", "object_oriented"),
    "ssn_s": ("ssn", "top_semantic"),
}


@dataclass
class BenchmarkContext:
    """Scenes, encoder, and observation packs shared across benchmark runs."""
    scenes: list[SceneSpec]
    encoder: semantics.SentenceEncoder | None
    packs: dict[str, ScenePack]


def prepare_benchmark(cfg: BenchmarkConfig, needs_semantics: bool = True) -> BenchmarkContext:
    """Build the inventory once; reuse it across seeds and variants.

    The caption corpus covers all scenes (the annotator, like the captioner
    it stands in for, is not trained here), even when policy training holds
    scenes out.
    """
    scenes = build_inventory(cfg)
    encoder = _build_encoder(scenes, cfg) if needs_semantics else None
    packs = {s.id: ScenePack(s, cfg.train.feature_dim, cfg.train.feature_seed,
                             featurizer.DEFAULT_CONFIG, encoder)
             for s in scenes}
    return BenchmarkContext(scenes=scenes, encoder=encoder, packs=packs)


def _run_task(task: str, variants: Sequence[str], frames_budget: int,
              cfg: BenchmarkConfig, seed: int,
              context: BenchmarkContext | None = None) -> ComparisonTable:
    model_rows = [v for v in ("random", "sn", "ssn", "ssn_s") if v in set(variants)]
    unknown = set(variants) - {"random", "sn", "ssn", "ssn_s"}
    if unknown:
        raise ValueError(f"unknown variants: {sorted(unknown)}")
    needs_sem = any(v in ("ssn", "ssn_s") for v in model_rows)

    if context is None:
        context = prepare_benchmark(cfg, needs_semantics=needs_sem)
    scenes, encoder = context.scenes, context.encoder
    if needs_sem and encoder is None:
        raise ValueError("benchmark context lacks an encoder for semantic rows")
    held = held_instances(scenes)
    held_ids = {s.id for s in held}

    if task == "t1":
        train_scenes = scenes
        eval_pairs = [(s, fresh_eval_targets(s, cfg)) for s in held]
    else:
        train_scenes = [s for s in scenes if s.id not in held_ids]
        eval_pairs = [(s, select_targets(s, "object_oriented",
                                         cfg.targets_per_scene, cfg.target_seed))
                      for s in held]

    rows: dict[str, EvalReport] = {}
    for model in model_rows:
        if model == "random":
            rows[model] = evaluate(None, eval_pairs, cfg.episodes_per_target,
                                   cfg.cap, seed=cfg.eval_seed, policy="random",
                                   feature_seed=cfg.train.feature_seed,
                                   packs=context.packs)
            continue
        net_variant, mode = _VARIANT_SETUP[model]
        tc = replace(cfg.train, variant=net_variant, target_mode=mode,
                     total_frames=frames_budget, seed=seed)
        targets = training_targets(train_scenes, mode, cfg)
        params, _log = a3c.train(tc, train_scenes, targets,
                                 encoder=encoder if net_variant == "ssn" else None,
                                 packs=context.packs)
        rows[model] = evaluate(params, eval_pairs, cfg.episodes_per_target,
                               cfg.cap, encoder=encoder if net_variant == "ssn" else None,
                               seed=cfg.eval_seed, policy="greedy",
                               feature_seed=cfg.train.feature_seed,
                               packs=context.packs)
    return ComparisonTable(task=task, rows=rows,
                           held_scene_ids=tuple(s.id for s in held),
                           frames_budget=frames_budget)


def run_t1(variants: Sequence[str], frames_budget: int = 500_000,
           cfg: BenchmarkConfig | None = None, seed: int = 0,
           context: BenchmarkContext | None = None) -> ComparisonTable:
    """Generalization to unseen targets in seen scenes."""
    return _run_task("t1", variants, frames_budget, cfg or BenchmarkConfig(),
                     seed, context)


def run_t2(variants: Sequence[str], frames_budget: int = 1_000_000,
           cfg: BenchmarkConfig | None = None, seed: int = 0,
           context: BenchmarkContext | None = None) -> ComparisonTable:
    """Generalization to entirely unseen scenes (held out of training)."""
    return _run_task("t2", variants, frames_budget, cfg or BenchmarkConfig(),
                     seed, context)
