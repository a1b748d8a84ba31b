"""Operator entry point.

Subcommands: gen-scenes, build-semantics, train, eval, plot,
dump-annotations. Every command is reproducible under fixed seeds and exits
nonzero with a one-line diagnostic on error: 2 for config/usage problems,
3 for IO failures, 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import a3c, evalharness, featurizer, gridscene, policynet, semantics
from .evalharness import BenchmarkConfig
from .policynet import NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

TARGET_MODE_FLAGS = {"random": "random", "object": "object_oriented",
                     "top-semantic": "top_semantic"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration file: flat `key = value` entries in per-module sections

_CONFIG_SCHEMA = {
    "scenes": {"dir": str},
    "train": {
        "variant": str, "targets": str, "workers": int, "total_frames": int,
        "t_max": int, "gamma": float, "beta": float, "value_coef": float,
        "lr": float, "rmsprop_decay": float, "rmsprop_eps": float, "seed": int,
        "feature_dim": int, "embed_dim": int, "feature_seed": int,
        "episode_cap": int, "targets_per_scene": int, "target_seed": int,
    },
    "semantics": {"encoder": str},
    "paths": {"out": str},
}


def load_run_config(path) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    out: dict = {}
    for section in parser.sections():
        schema = _CONFIG_SCHEMA.get(section)
        if schema is None:
            raise ConfigError(f"config {path}: unknown section [{section}]")
        out[section] = {}
        for key, raw in parser.items(section):
            typ = schema.get(key)
            if typ is None:
                raise ConfigError(f"config {path}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"config {path}: bad value for {section}.{key}: {raw!r}") from exc
    return out


def _load_scene_dir(path) -> list[gridscene.SceneSpec]:
    root = Path(path)
    if not root.is_dir():
        raise ConfigError(f"scene directory {root} does not exist")
    manifest = root / "manifest.txt"
    if manifest.exists():
        ids = [line.strip() for line in manifest.read_text().splitlines() if line.strip()]
        files = [root / f"{sid}.json" for sid in ids]
    else:
        files = sorted(root.glob("*.json"))
    if not files:
        raise ConfigError(f"no scene files in {root}")
    return [gridscene.load_scene(f) for f in files]


def _load_encoder(path) -> semantics.SentenceEncoder:
    return semantics.load_encoder(path, str(path) + ".vocab")


# ---------------------------------------------------------------------------
# commands

def cmd_gen_scenes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for t_idx, scene_type in enumerate(gridscene.SCENE_TYPES):
        for i in range(args.count_per_type):
            scene = gridscene.generate_scene(args.seed + 100 * t_idx + i,
                                             scene_type, args.width, args.height)
            gridscene.save_scene(scene, out / f"{scene.id}.json")
            ids.append(scene.id)
    (out / "manifest.txt").write_text("".join(sid + "\n" for sid in ids))
    print(f"wrote {len(ids)} scenes + manifest to {out}")
    return EXIT_OK


def cmd_build_semantics(args) -> int:
    scenes = _load_scene_dir(args.scenes)
    corpus = semantics.build_corpus(scenes)
    print(f"corpus: {len(corpus.sentences)} sentences, "
          f"{len(corpus.vocabulary)} word vocabulary")
    encoder = semantics.train_autoencoder(corpus, sentence_dim=args.dim,
                                          epochs=args.epochs, lr=args.lr,
                                          seed=args.seed, hidden=args.hidden)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    semantics.save_encoder(encoder, out)
    semantics.save_vocabulary(encoder.vocabulary, str(out) + ".vocab")
    print(f"training loss {encoder.losses[0]:.4f} -> {encoder.losses[-1]:.4f} "
          f"over {len(encoder.losses) - 1} epochs")
    print(f"wrote encoder to {out} (vocabulary: {out}.vocab)")
    return EXIT_OK


def _train_config_from(rc: dict, args) -> tuple[a3c.TrainConfig, dict]:
    train_keys = dict(rc.get("train", {}))
    extras = {
        "targets": train_keys.pop("targets", "object"),
        "targets_per_scene": train_keys.pop("targets_per_scene", 5),
        "target_seed": train_keys.pop("target_seed", 0),
    }
    if args.variant:
        train_keys["variant"] = args.variant
    if args.targets:
        extras["targets"] = args.targets
    if extras["targets"] not in TARGET_MODE_FLAGS:
        raise ConfigError(f"unknown targets mode {extras['targets']!r}; "
                          f"expected one of {sorted(TARGET_MODE_FLAGS)}")
    try:
        config = a3c.TrainConfig(**train_keys)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [train] configuration: {exc}") from exc
    return config, extras


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    if "scenes" not in rc or "dir" not in rc["scenes"]:
        raise ConfigError("config needs [scenes] dir = ...")
    config, extras = _train_config_from(rc, args)
    out = Path(args.out or rc.get("paths", {}).get("out", "run"))
    out.mkdir(parents=True, exist_ok=True)

    scenes = _load_scene_dir(rc["scenes"]["dir"])
    mode = TARGET_MODE_FLAGS[extras["targets"]]
    oracle = featurizer.top_confidence_scorer() if mode == "top_semantic" else None
    targets = {s.id: gridscene.select_targets(s, mode, extras["targets_per_scene"],
                                              extras["target_seed"],
                                              semantics_oracle=oracle)
               for s in scenes}

    encoder = None
    if config.variant == "ssn":
        enc_path = rc.get("semantics", {}).get("encoder")
        if not enc_path:
            raise ConfigError("variant ssn requires [semantics] encoder = <checkpoint>")
        encoder = _load_encoder(enc_path)

    params, episodes = a3c.train(config, scenes, targets, encoder=encoder,
                                 log_path=out / "rewards.csv")
    policynet.save_params(params, out / "checkpoint.bin")
    tail = episodes[-100:]
    pct = 100.0 * sum(e.success for e in tail) / len(tail) if tail else 0.0
    print(f"trained {config.variant} for {config.total_frames}+ frames, "
          f"{len(episodes)} episodes; trailing success {pct:.0f}%")
    print(f"wrote {out / 'checkpoint.bin'} and {out / 'rewards.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenes = _load_scene_dir(args.scenes)
    cfg = BenchmarkConfig(targets_per_scene=args.targets_per_scene,
                          target_seed=args.target_seed,
                          fresh_target_seed=args.fresh_target_seed)
    held = evalharness.held_instances(scenes)
    if args.task == "t1":
        pairs = [(s, evalharness.fresh_eval_targets(s, cfg)) for s in held]
    else:
        pairs = [(s, gridscene.select_targets(s, "object_oriented",
                                              cfg.targets_per_scene, cfg.target_seed))
                 for s in held]

    params = None
    encoder = None
    if args.policy in ("greedy", "sample"):
        if not args.checkpoint:
            raise ConfigError(f"policy {args.policy!r} requires --checkpoint")
        params = policynet.load_params(args.checkpoint)
        if params.is_semantic:
            if not args.encoder:
                raise ConfigError("ssn checkpoint requires --encoder")
            encoder = _load_encoder(args.encoder)
            if encoder.frame_dim != params.sem_dim:
                raise ConfigError(f"dim mismatch: checkpoint semantic dim "
                                  f"{params.sem_dim} != encoder frame dim "
                                  f"{encoder.frame_dim}")

    report = evalharness.evaluate(params, pairs, episodes_per_target=args.episodes,
                                  cap=args.cap, encoder=encoder, seed=args.seed,
                                  policy=args.policy, feature_seed=args.feature_seed)
    model = args.policy if params is None else params.variant
    table = evalharness.ComparisonTable(task=args.task, rows={model: report},
                                        held_scene_ids=tuple(s.id for s in held),
                                        frames_budget=0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(table.to_csv())
    (out / "report.txt").write_text(table.format_table())
    print(table.format_table(), end="")
    print(f"held scenes: {', '.join(s.id for s in held)}")
    print(f"wrote {out / 'report.csv'} and {out / 'report.txt'}")
    return EXIT_OK


def _moving_average_series(points: list[tuple[int, float]], window: int):
    if window >= len(points):
        xs = [points[-1][0]]
        ys = [sum(p[1] for p in points) / len(points)]
        return xs, ys
    xs, ys = [], []
    acc = 0.0
    for i, (frame, value) in enumerate(points):
        acc += value
        if i >= window:
            acc -= points[i - window][1]
        xs.append(frame)
        ys.append(acc / min(i + 1, window))
    return xs, ys


_SVG_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def render_reward_svg(rows: list[dict], window: int) -> str:
    """Moving-average episode return vs frames, one polyline per (scene, target)."""
    groups: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for row in rows:
        key = (row["scene_id"], row["target_idx"])
        groups.setdefault(key, []).append((int(row["frames"]),
                                           float(row["episode_return"])))
    series = {key: _moving_average_series(pts, window) for key, pts in groups.items()}
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    width, height, margin = 800, 500, 60

    def sx(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
             f'y2="{height - margin}" stroke="black"/>',
             f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
             f'y2="{height - margin}" stroke="black"/>',
             f'<text x="{margin}" y="{height - margin + 20}" font-size="12">{x_lo}</text>',
             f'<text x="{width - margin}" y="{height - margin + 20}" font-size="12" '
             f'text-anchor="end">{x_hi}</text>',
             f'<text x="{margin - 8}" y="{height - margin}" font-size="12" '
             f'text-anchor="end">{y_lo:.2f}</text>',
             f'<text x="{margin - 8}" y="{margin}" font-size="12" '
             f'text-anchor="end">{y_hi:.2f}</text>',
             f'<text x="{width // 2}" y="{height - 15}" font-size="13" '
             f'text-anchor="middle">frames</text>',
             f'<text x="15" y="{height // 2}" font-size="13" text-anchor="middle" '
             f'transform="rotate(-90 15 {height // 2})">return (window {window})</text>']
    for i, (key, (xs, ys)) in enumerate(sorted(series.items())):
        color = _SVG_PALETTE[i % len(_SVG_PALETTE)]
        label = f"{key[0]}/{key[1]}"
        if len(xs) == 1:
            parts.append(f'<circle cx="{sx(xs[0]):.2f}" cy="{sy(ys[0]):.2f}" r="4" '
                         f'fill="{color}"><title>{label}</title></circle>')
        else:
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"><title>{label}</title></polyline>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    with open(args.log, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"reward log {args.log} is empty")
    if args.window < 1:
        raise ConfigError("--window must be >= 1")
    svg = render_reward_svg(rows, args.window)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out} ({len(rows)} episodes, window {args.window})")
    return EXIT_OK


def cmd_dump_annotations(args) -> int:
    scenes = _load_scene_dir(args.scenes)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            n = featurizer.dump_annotations(scenes, fh)
        print(f"wrote {n} pose lines to {args.out}")
    else:
        featurizer.dump_annotations(scenes, sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semnav",
                                     description="desk-scale target-driven navigation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate a scene inventory")
    p.add_argument("--count-per-type", type=int, default=5)
    p.add_argument("--width", type=int, default=11)
    p.add_argument("--height", type=int, default=11)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("build-semantics", help="build corpus and train the sentence encoder")
    p.add_argument("--scenes", required=True)
    p.add_argument("--dim", type=int, default=semantics.DEFAULT_SENTENCE_DIM)
    p.add_argument("--hidden", type=int, default=semantics.DEFAULT_HIDDEN_DIM)
    p.add_argument("--epochs", type=int, default=semantics.DEFAULT_EPOCHS)
    p.add_argument("--lr", type=float, default=semantics.DEFAULT_LR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_semantics)

    p = sub.add_parser("train", help="run asynchronous training")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", choices=["sn", "ssn"])
    p.add_argument("--targets", choices=sorted(TARGET_MODE_FLAGS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the T1/T2 split")
    p.add_argument("--checkpoint")
    p.add_argument("--scenes", required=True)
    p.add_argument("--task", choices=["t1", "t2"], default="t1")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--cap", type=int, default=gridscene.DEFAULT_EPISODE_CAP)
    p.add_argument("--encoder")
    p.add_argument("--policy", choices=list(evalharness.POLICIES), default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-seed", type=int, default=featurizer.DEFAULT_FEATURE_SEED)
    p.add_argument("--targets-per-scene", type=int, default=5)
    p.add_argument("--target-seed", type=int, default=0)
    p.add_argument("--fresh-target-seed", type=int, default=1)
    p.add_argument("--out", default="eval-report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render the reward log as an SVG curve")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=500)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("dump-annotations", help="write per-pose caption annotations")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_annotations)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, a3c.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
