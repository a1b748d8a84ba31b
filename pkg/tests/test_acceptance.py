"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 1-3 and 9 are quick; 4-8 train real models and together take on
the order of an hour or two on a small desktop (the T1/T2 trend criteria
dominate). Run with `pytest tests/test_acceptance.py -v -s` to watch the
per-criterion lines.
"""

import itertools
import statistics
import time

import numpy as np
import pytest

import semnav as sn
from semnav.a3c import TrainConfig, train
from semnav.cli import main as cli_main
from semnav.evalharness import (BenchmarkConfig, evaluate, held_instances,
                                fresh_eval_targets, prepare_benchmark, run_t1,
                                run_t2)
from semnav.featurizer import Annotation
from semnav.policynet import (StepInputs, StepRecord, Trajectory,
                              a3c_loss_and_grads, a3c_surrogate_loss, forward,
                              init_params, n_step_returns)
from semnav.semantics import FRAME_SLOTS, SLOT_EXTRAS


def report(n, text):
    print(f"\n[criterion {n}] PASS: {text}")


# ---------------------------------------------------------------------------
# shared benchmark artifacts

T1_FRAMES = 500_000
T2_FRAMES = 1_000_000
T1_SEEDS = (1, 2, 3)
T2_SEEDS = (1, 2, 3)


@pytest.fixture(scope="module")
def bench_cfg():
    return BenchmarkConfig()


@pytest.fixture(scope="module")
def bench_context(bench_cfg):
    return prepare_benchmark(bench_cfg, needs_semantics=True)


@pytest.fixture(scope="module")
def t1_tables(bench_cfg, bench_context):
    t0 = time.time()
    tables = {seed: run_t1(["random", "sn", "ssn", "ssn_s"], T1_FRAMES,
                           cfg=bench_cfg, seed=seed, context=bench_context)
              for seed in T1_SEEDS}
    tables["elapsed"] = time.time() - t0
    return tables


@pytest.fixture(scope="module")
def t2_tables(bench_cfg, bench_context):
    return {seed: run_t2(["random", "ssn"], T2_FRAMES, cfg=bench_cfg,
                         seed=seed, context=bench_context)
            for seed in T2_SEEDS}


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness

def test_criterion_1_gradient_correctness():
    t0 = time.time()
    f_dim, e_dim, d_s = 6, 8, 4
    sem_dim = FRAME_SLOTS * (d_s + SLOT_EXTRAS)  # 45
    scene_types = list(sn.SCENE_TYPES)
    checked = 0
    worst = 0.0

    for variant in ("sn", "ssn"):
        for trial in range(10):
            rng = np.random.default_rng(5000 + trial)
            semantic = variant == "ssn"
            params = init_params(variant, f_dim, e_dim,
                                 sem_dim if semantic else 0, seed=trial)
            steps = []
            length = 3 + trial % 3
            for t in range(length):
                steps.append(StepRecord(
                    inputs=StepInputs(
                        history_feats=tuple(rng.normal(size=f_dim) for _ in range(4)),
                        target_feat=rng.normal(size=f_dim),
                        scene_type=scene_types[(trial + t) % 4],
                        history_sem=tuple(rng.normal(size=sem_dim) for _ in range(4))
                        if semantic else None,
                        target_sem=rng.normal(size=sem_dim) if semantic else None),
                    action=int(rng.integers(4)),
                    reward=float(rng.normal()),
                    done=(trial % 2 == 0) and t == length - 1))
            traj = Trajectory(steps=tuple(steps),
                              bootstrap_value=float(rng.normal()))

            loss, grads = a3c_loss_and_grads(params, traj, 0.99, 0.01, 0.5)
            rets = n_step_returns([s.reward for s in traj.steps], 0.99,
                                  traj.steps[-1].done, traj.bootstrap_value)
            vals = [forward(params, s.inputs.history_feats, s.inputs.target_feat,
                            s.inputs.history_sem, s.inputs.target_sem,
                            s.inputs.scene_type).value for s in traj.steps]
            adv = [r - v for r, v in zip(rets, vals)]
            assert a3c_surrogate_loss(params, traj, adv) == pytest.approx(loss)

            eps = 1e-4
            flat, analytic = params.flat, grads.flat
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                lp = a3c_surrogate_loss(params, traj, adv)
                flat[i] = orig - eps
                lm = a3c_surrogate_loss(params, traj, adv)
                flat[i] = orig
                gn = (lp - lm) / (2 * eps)
                rel = abs(analytic[i] - gn) / max(1e-8, abs(analytic[i]) + abs(gn))
                worst = max(worst, rel)
            assert worst < 1e-3, f"{variant} trial {trial}: rel err {worst:.2e}"
            checked += 1

    elapsed = time.time() - t0
    assert checked == 20
    assert elapsed < 60.0, f"gradient check took {elapsed:.0f}s"
    report(1, f"20 trajectories (SN+SSN, all heads), worst relative error "
              f"{worst:.2e} < 1e-3, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 2: reward algebra

def test_criterion_2_reward_algebra():
    scene = sn.generate_scene(11, "kitchen", 8, 8)
    targets = {scene.id: sn.select_targets(scene, "random", 2, seed=0)}
    # lr=0 keeps the policy at its random initialization; cap 60 keeps
    # episodes short so the log accumulates quickly
    config = TrainConfig(workers=1, total_frames=60_000, seed=4, lr=0.0,
                         feature_dim=16, embed_dim=8, episode_cap=60)
    _, log = train(config, [scene], targets)
    assert len(log) >= 1000, f"only {len(log)} episodes recorded"
    for row in log[:1000]:
        expected = 10.0 - 0.01 * row.episode_len if row.success \
            else -0.01 * row.episode_len
        assert row.episode_return == pytest.approx(expected, abs=1e-12)
    report(2, f"{min(len(log), 1000)} recorded episode returns match "
              f"10 - 0.01*L / -0.01*L within 1e-12")


# ---------------------------------------------------------------------------
# criterion 3: semantic shape

def test_criterion_3_semantic_shape():
    corpus = sn.build_corpus([sn.generate_scene(0, "bathroom", 8, 8),
                              sn.generate_scene(1, "livingroom", 8, 8)])
    encoder = sn.train_autoencoder(corpus, sentence_dim=64, epochs=0, seed=0)
    rng = np.random.default_rng(0)

    def random_annotation():
        x0, y0 = rng.uniform(0, 0.5, size=2)
        w, h = rng.uniform(0.05, 0.5, size=2)
        return Annotation(box=(float(x0), float(y0), float(min(x0 + w, 1.0)),
                               float(min(y0 + h, 1.0))),
                          confidence=float(rng.uniform(0.01, 1.0)),
                          tokens=("a", "white", "sink"))

    vec = sn.frame_semantics([random_annotation() for _ in range(3)], encoder)
    assert vec.shape == (345,)

    width = 64 + SLOT_EXTRAS
    for trial in range(500):
        n = int(rng.integers(0, 11))
        anns = [random_annotation() for _ in range(n)]
        vec = sn.frame_semantics(anns, encoder)
        kept = [float(vec[i * width + 64 + 4]) for i in range(FRAME_SLOTS)
                if vec[i * width:(i + 1) * width].any()]
        best = max((sum(a.confidence for a in combo)
                    for combo in itertools.combinations(anns, min(5, n))),
                   default=0.0)
        assert sum(kept) == pytest.approx(best), f"trial {trial}"
        assert kept == sorted(kept, reverse=True)
    report(3, "frame vector is 345-d at D_s=64; top-5 selection matches "
              "brute-force subset scoring on 500 random annotation lists")


# ---------------------------------------------------------------------------
# criterion 4: single-target convergence

def test_criterion_4_single_target_convergence():
    t0 = time.time()
    scene = sn.generate_scene(3, "bathroom", 8, 8)
    targets = {scene.id: sn.select_targets(scene, "object_oriented", 1, seed=0)}
    target = targets[scene.id][0]
    config = TrainConfig(workers=2, total_frames=300_000, seed=1, variant="sn")
    params, _ = train(config, [scene], targets)
    rep = evaluate(params, [(scene, targets[scene.id])],
                   episodes_per_target=100, cap=1000, seed=0, policy="greedy")
    bfs_mean = float(np.mean(list(sn.bfs_distances(scene, target.pose).values())))
    elapsed = time.time() - t0

    assert rep.overall_success_pct >= 90.0, f"success {rep.overall_success_pct}%"
    assert rep.overall_mean_length <= 3 * bfs_mean, \
        f"E.L. {rep.overall_mean_length:.1f} > 3x BFS {3 * bfs_mean:.1f}"
    assert elapsed <= 15 * 60, f"took {elapsed:.0f}s"
    report(4, f"SN, 2 workers, 300k frames: success "
              f"{rep.overall_success_pct:.0f}% >= 90%, E.L. "
              f"{rep.overall_mean_length:.1f} <= {3 * bfs_mean:.1f} "
              f"(3x BFS), {elapsed / 60:.1f} min")


# ---------------------------------------------------------------------------
# criterion 5: object-oriented targets converge faster

def _frames_to_threshold(scene, mode, seed, budget=300_000, threshold=90.0):
    targets = {scene.id: sn.select_targets(scene, mode, 1, seed=seed)}
    hit = {}

    def on_milestone(frames, snapshot):
        rep = evaluate(snapshot, [(scene, targets[scene.id])],
                       episodes_per_target=50, cap=1000, seed=0, policy="greedy")
        if rep.overall_success_pct >= threshold:
            hit["frames"] = frames
            return True
        return False

    config = TrainConfig(workers=2, total_frames=budget, seed=seed, variant="sn")
    train(config, [scene], targets, on_milestone=on_milestone,
          milestone_every=20_000)
    return hit.get("frames", budget + 1)


def test_criterion_5_object_targets_converge_faster():
    scene = sn.generate_scene(3, "bathroom", 8, 8)
    seeds = (1, 2, 3, 4, 5)
    obj = [_frames_to_threshold(scene, "object_oriented", s) for s in seeds]
    rand = [_frames_to_threshold(scene, "random", s) for s in seeds]
    med_obj = statistics.median(obj)
    med_rand = statistics.median(rand)
    assert med_obj < med_rand, \
        f"object-oriented median {med_obj} not faster than random {med_rand} " \
        f"(object {obj}, random {rand})"
    report(5, f"frames to 90% success, median over 5 seeds: object-oriented "
              f"{med_obj:.0f} < random {med_rand:.0f}")


# ---------------------------------------------------------------------------
# criterion 6: T1 ordering trend

def _median_success(tables, seeds, model):
    return statistics.median(tables[s].rows[model].overall_success_pct
                             for s in seeds)


def test_criterion_6_t1_ordering(t1_tables):
    rnd = _median_success(t1_tables, T1_SEEDS, "random")
    snr = _median_success(t1_tables, T1_SEEDS, "sn")
    ssn = _median_success(t1_tables, T1_SEEDS, "ssn")
    ssn_s = _median_success(t1_tables, T1_SEEDS, "ssn_s")
    elapsed = t1_tables["elapsed"]

    assert rnd < 20.0, f"random baseline too strong: {rnd:.1f}%"
    assert snr >= rnd, f"SN {snr:.1f}% < Random {rnd:.1f}%"
    assert ssn >= snr, f"SSN {ssn:.1f}% < SN {snr:.1f}%"
    assert ssn_s >= ssn, f"SSN_S {ssn_s:.1f}% < SSN {ssn:.1f}%"
    assert elapsed <= 2 * 3600, f"T1 block took {elapsed / 60:.0f} min"
    report(6, f"T1 median success over 3 seeds: SSN_S {ssn_s:.1f}% >= "
              f"SSN {ssn:.1f}% >= SN {snr:.1f}% >= Random {rnd:.1f}% "
              f"(random < 20%), {elapsed / 60:.0f} min")


# ---------------------------------------------------------------------------
# criterion 7: T2 sanity

def test_criterion_7_t2_sanity(t2_tables):
    rnd = _median_success(t2_tables, T2_SEEDS, "random")
    ssn = _median_success(t2_tables, T2_SEEDS, "ssn")
    # Generalizing to entirely unseen scenes is the hard task; the reference
    # experiment reports only small gains there, and so does this one. The
    # requirement is just that semantics do not hurt: SSN >= Random.
    assert ssn >= rnd, f"SSN {ssn:.1f}% < Random {rnd:.1f}% on held-out scenes"
    report(7, f"T2 median success over 3 seeds: SSN {ssn:.1f}% >= "
              f"Random {rnd:.1f}% (small gains expected on unseen scenes)")


# ---------------------------------------------------------------------------
# criterion 8: oracle and zero-learning controls

def test_criterion_8_oracle_and_zero_learning(bench_cfg, bench_context):
    held = held_instances(bench_context.scenes)
    eval_pairs = [(s, fresh_eval_targets(s, bench_cfg)) for s in held]

    oracle = evaluate(None, eval_pairs, episodes_per_target=20, cap=1000,
                      seed=0, policy="oracle", packs=bench_context.packs)
    assert oracle.overall_success_pct == 100.0
    for stats in oracle.per_target:
        assert stats.successes == stats.episodes

    # lr = 0: parameters must not move, and the untrained policy sampled
    # from pi must behave like the uniform-random baseline
    train_scenes = bench_context.scenes
    targets = {s.id: sn.select_targets(s, "object_oriented",
                                       bench_cfg.targets_per_scene,
                                       bench_cfg.target_seed)
               for s in train_scenes}
    config = TrainConfig(workers=2, total_frames=20_000, seed=2, lr=0.0,
                         variant="sn")
    params, _ = train(config, train_scenes, targets, packs=bench_context.packs)
    fresh = init_params("sn", config.feature_dim, config.embed_dim,
                        seed=config.seed)
    assert np.array_equal(params.flat, fresh.flat), "lr=0 moved parameters"

    random_row = evaluate(None, eval_pairs, episodes_per_target=100, cap=1000,
                          seed=0, policy="random", packs=bench_context.packs)
    zero_row = evaluate(params, eval_pairs, episodes_per_target=100, cap=1000,
                        seed=0, policy="sample", packs=bench_context.packs)
    gap = abs(zero_row.overall_success_pct - random_row.overall_success_pct)
    assert gap <= 3.0, (f"zero-learning {zero_row.overall_success_pct:.1f}% vs "
                        f"random {random_row.overall_success_pct:.1f}%")
    report(8, f"oracle 100% success; lr=0 parameters bit-identical; "
              f"zero-learning sampled policy within {gap:.1f}pp of the "
              f"Random row (<= 3pp)")


# ---------------------------------------------------------------------------
# criterion 9: reproducibility

def test_criterion_9_cli_reproducibility(tmp_path):
    def run(*argv):
        assert cli_main(list(argv)) == 0

    # scene generation: bit-identical files
    for d in ("s1", "s2"):
        run("gen-scenes", "--count-per-type", "1", "--width", "8", "--height", "8",
            "--seed", "3", "--out", str(tmp_path / d))
    for f in sorted((tmp_path / "s1").iterdir()):
        assert f.read_bytes() == (tmp_path / "s2" / f.name).read_bytes()

    # encoder build: bit-identical checkpoints
    for d in ("e1.bin", "e2.bin"):
        run("build-semantics", "--scenes", str(tmp_path / "s1"), "--dim", "8",
            "--hidden", "16", "--epochs", "5", "--out", str(tmp_path / d))
    assert (tmp_path / "e1.bin").read_bytes() == (tmp_path / "e2.bin").read_bytes()

    # single-worker training: bit-identical reward logs and checkpoints
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"""
[scenes]
dir = {tmp_path / 's1'}

[train]
workers = 1
total_frames = 600
feature_dim = 16
embed_dim = 8
episode_cap = 60
targets_per_scene = 1
seed = 9
""")
    for d in ("r1", "r2"):
        run("train", "--config", str(cfg), "--variant", "sn",
            "--out", str(tmp_path / d))
    assert (tmp_path / "r1" / "rewards.csv").read_bytes() == \
        (tmp_path / "r2" / "rewards.csv").read_bytes()
    assert (tmp_path / "r1" / "checkpoint.bin").read_bytes() == \
        (tmp_path / "r2" / "checkpoint.bin").read_bytes()

    # evaluation: identical reports across runs and across worker counts
    for d in ("v1", "v2"):
        run("eval", "--checkpoint", str(tmp_path / "r1" / "checkpoint.bin"),
            "--scenes", str(tmp_path / "s1"), "--episodes", "3", "--cap", "60",
            "--targets-per-scene", "1", "--seed", "5", "--out", str(tmp_path / d))
    assert (tmp_path / "v1" / "report.csv").read_bytes() == \
        (tmp_path / "v2" / "report.csv").read_bytes()

    scene = sn.load_scene(next((tmp_path / "s1").glob("*.json")))
    targets = sn.select_targets(scene, "random", 2, seed=0)
    params = sn.load_params(tmp_path / "r1" / "checkpoint.bin")
    seq = evaluate(params, [(scene, targets)], episodes_per_target=6,
                   cap=60, seed=7, workers=1)
    par = evaluate(params, [(scene, targets)], episodes_per_target=6,
                   cap=60, seed=7, workers=4)
    assert seq.per_target == par.per_target
    report(9, "gen-scenes / build-semantics / single-worker train / eval all "
              "bit-identical across reruns; EvalReports identical for any "
              "evaluation worker count")
