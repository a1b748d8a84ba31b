"""semnav: desk-scale target-driven navigation.

Grid scenes with typed objects, synthetic visual features and caption
annotations, a sentence autoencoder, siamese policy networks with
scene-type heads, asynchronous actor-critic training, and a T1/T2
generalization benchmark.
"""

from .gridscene import (SCENE_TYPES, Action, Heading, ObjectInstance, Pose,
                        SceneSpec, StepResult, Target, bfs_distances,
                        generate_scene, load_scene, save_scene,
                        select_targets, shortest_path_length, step,
                        valid_poses)
from .featurizer import (Annotation, FeaturizerConfig, annotate,
                         annotation_confidence_sum, dump_annotations,
                         top_confidence_scorer, visible_objects,
                         visual_features)
from .semantics import (Corpus, SentenceEncoder, build_corpus,
                        encode_sentence, frame_semantics, load_encoder,
                        save_encoder, train_autoencoder)
from .policynet import (ForwardOutput, NetworkParams, NumericError,
                        StepInputs, StepRecord, Trajectory,
                        a3c_loss_and_grads, forward, init_params,
                        load_params, save_params)
from .a3c import EpisodeRow, SharedStore, TrainConfig, TrainingError, apply_update, train
from .evalharness import (BenchmarkConfig, ComparisonTable, EvalReport,
                          evaluate, run_t1, run_t2)
from .rollout import ScenePack

__version__ = "0.1.0"
