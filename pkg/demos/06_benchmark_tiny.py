"""A miniature T1 benchmark: Random vs SN rows on a reduced inventory.

The full benchmark (20 scenes, 500k/1M frames, all four rows) runs through
evalharness.run_t1 / run_t2 with default BenchmarkConfig; this demo shrinks
everything so it finishes in about a minute.

Run: python3 demos/06_benchmark_tiny.py
"""
from semnav.a3c import TrainConfig
from semnav.evalharness import BenchmarkConfig, run_t1

cfg = BenchmarkConfig(
    count_per_type=2,          # 8 scenes instead of 20
    width=9, height=9,
    targets_per_scene=2,
    episodes_per_target=30,
    train=TrainConfig(workers=2, feature_dim=64, embed_dim=32,
                      episode_cap=1000),
)

table = run_t1(["random", "sn"], frames_budget=40_000, cfg=cfg, seed=0)
print(table.format_table())
print("held instances:", ", ".join(table.held_scene_ids))
print()
print("csv form:")
print(table.to_csv())
