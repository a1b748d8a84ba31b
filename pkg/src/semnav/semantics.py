"""Sentence corpus, bag-of-tokens autoencoder, and per-frame semantic vectors.

The corpus is the deduplicated set of caption token lists that survive the
top-5 confidence filter over every pose of every scene. A small dense
autoencoder (token counts -> hidden -> code -> hidden -> token softmax) is
trained on it by full-batch gradient descent; the bottleneck activation is
the sentence embedding. Token order is deliberately ignored: the captions
are short templated phrases, so a bag of tokens loses nothing we need.

A frame's semantic vector packs its top five annotations, highest
confidence first, each as [sentence code | box | confidence]; missing
slots stay zero. With a 64-d code that is 5 x 69 = 345 numbers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import featurizer
from .gridscene import SceneSpec, valid_poses

DEFAULT_SENTENCE_DIM = 64
DEFAULT_HIDDEN_DIM = 128
DEFAULT_EPOCHS = 200
DEFAULT_LR = 0.05
FRAME_SLOTS = 5
SLOT_EXTRAS = 5  # 4 box coordinates + 1 confidence

ENCODER_MAGIC = b"SEMNAV01"


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[tuple[str, ...], ...]
    vocabulary: tuple[str, ...]


def rank_annotations(annotations: Sequence[featurizer.Annotation]) -> list[featurizer.Annotation]:
    """Confidence-descending order; ties by larger box area, then input order."""
    def area(a: featurizer.Annotation) -> float:
        x0, y0, x1, y1 = a.box
        return (x1 - x0) * (y1 - y0)

    order = sorted(range(len(annotations)),
                   key=lambda i: (-annotations[i].confidence, -area(annotations[i]), i))
    return [annotations[i] for i in order]


def build_corpus(scenes: Sequence[SceneSpec],
                 config: featurizer.FeaturizerConfig = featurizer.DEFAULT_CONFIG) -> Corpus:
    """Collect the top-5 caption phrases over every pose of every scene."""
    if not scenes:
        raise ValueError("build_corpus needs at least one scene")
    seen: set[tuple[str, ...]] = set()
    for scene in scenes:
        for pose in valid_poses(scene):
            anns = featurizer.annotate(scene, pose, config)
            for ann in rank_annotations(anns)[:FRAME_SLOTS]:
                seen.add(ann.tokens)
    if not seen:
        raise ValueError("empty corpus: no annotations visible in any scene")
    sentences = tuple(sorted(seen))
    vocabulary = tuple(sorted({tok for s in sentences for tok in s}))
    return Corpus(sentences=sentences, vocabulary=vocabulary)


@dataclass
class SentenceEncoder:
    """Trained bag-of-tokens autoencoder; encode() is the bottleneck activation."""
    vocabulary: tuple[str, ...]
    enc_w1: np.ndarray  # (V, H)
    enc_b1: np.ndarray  # (H,)
    enc_w2: np.ndarray  # (H, D)
    enc_b2: np.ndarray  # (D,)
    dec_w1: np.ndarray  # (D, H)
    dec_b1: np.ndarray  # (H,)
    dec_w2: np.ndarray  # (H, V)
    dec_b2: np.ndarray  # (V,)
    losses: tuple[float, ...] = ()
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}

    @property
    def sentence_dim(self) -> int:
        return self.enc_w2.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.enc_w1.shape[1]

    @property
    def frame_dim(self) -> int:
        return FRAME_SLOTS * (self.sentence_dim + SLOT_EXTRAS)

    def count_vector(self, tokens: Sequence[str]) -> np.ndarray:
        counts = np.zeros(len(self.vocabulary))
        for tok in tokens:
            i = self._index.get(tok)
            if i is not None:
                counts[i] += 1.0
        return counts

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        x = self.count_vector(tokens)
        h = np.maximum(x @ self.enc_w1 + self.enc_b1, 0.0)
        return h @ self.enc_w2 + self.enc_b2


def encode_sentence(encoder: SentenceEncoder, tokens: Sequence[str]) -> np.ndarray:
    """Token list -> D_s vector. Unknown tokens are dropped; order is ignored."""
    return encoder.encode(tokens)


def _batch_loss(weights: dict, X: np.ndarray, P: np.ndarray):
    z1 = X @ weights["enc_w1"] + weights["enc_b1"]
    a1 = np.maximum(z1, 0.0)
    code = a1 @ weights["enc_w2"] + weights["enc_b2"]
    z2 = code @ weights["dec_w1"] + weights["dec_b1"]
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ weights["dec_w2"] + weights["dec_b2"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logq = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(P * logq).sum(axis=1).mean())
    cache = (z1, a1, code, z2, a2, np.exp(logq))
    return loss, cache


def _batch_grads(weights: dict, X: np.ndarray, P: np.ndarray, cache) -> dict:
    z1, a1, code, z2, a2, q = cache
    n = X.shape[0]
    dlogits = (q - P) / n
    g = {}
    g["dec_w2"] = a2.T @ dlogits
    g["dec_b2"] = dlogits.sum(axis=0)
    da2 = dlogits @ weights["dec_w2"].T
    dz2 = da2 * (z2 > 0)
    g["dec_w1"] = code.T @ dz2
    g["dec_b1"] = dz2.sum(axis=0)
    dcode = dz2 @ weights["dec_w1"].T
    g["enc_w2"] = a1.T @ dcode
    g["enc_b2"] = dcode.sum(axis=0)
    da1 = dcode @ weights["enc_w2"].T
    dz1 = da1 * (z1 > 0)
    g["enc_w1"] = X.T @ dz1
    g["enc_b1"] = dz1.sum(axis=0)
    return g


def train_autoencoder(corpus: Corpus, sentence_dim: int = DEFAULT_SENTENCE_DIM,
                      epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR,
                      seed: int = 0, hidden: int = DEFAULT_HIDDEN_DIM) -> SentenceEncoder:
    """Full-batch gradient descent on reconstruction cross-entropy.

    A step that would increase the loss is rejected and the learning rate
    halved, so the recorded loss sequence never increases.
    """
    if sentence_dim < 2:
        raise ValueError(f"sentence_dim must be >= 2, got {sentence_dim}")
    if not corpus.sentences:
        raise ValueError("corpus has no sentences")
    vocab = corpus.vocabulary
    v = len(vocab)
    rng = np.random.default_rng(np.random.SeedSequence([0xAE0AE, seed]))

    def glorot(n_in, n_out):
        a = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-a, a, size=(n_in, n_out))

    weights = {
        "enc_w1": glorot(v, hidden), "enc_b1": np.zeros(hidden),
        "enc_w2": glorot(hidden, sentence_dim), "enc_b2": np.zeros(sentence_dim),
        "dec_w1": glorot(sentence_dim, hidden), "dec_b1": np.zeros(hidden),
        "dec_w2": glorot(hidden, v), "dec_b2": np.zeros(v),
    }

    index = {tok: i for i, tok in enumerate(vocab)}
    X = np.zeros((len(corpus.sentences), v))
    for r, sent in enumerate(corpus.sentences):
        for tok in sent:
            X[r, index[tok]] += 1.0
    P = X / X.sum(axis=1, keepdims=True)

    loss, cache = _batch_loss(weights, X, P)
    if not np.isfinite(loss):
        raise ValueError(f"autoencoder loss diverged at initialization (lr={lr})")
    losses = [loss]
    for _ in range(epochs):
        grads = _batch_grads(weights, X, P, cache)
        candidate = {k: w - lr * grads[k] for k, w in weights.items()}
        new_loss, new_cache = _batch_loss(candidate, X, P)
        if not np.isfinite(new_loss):
            raise ValueError(f"autoencoder loss diverged (lr={lr})")
        if new_loss > loss:
            lr *= 0.5  # reject the step, keep current weights
            losses.append(loss)
            continue
        weights, loss, cache = candidate, new_loss, new_cache
        losses.append(loss)

    return SentenceEncoder(vocabulary=vocab, losses=tuple(losses), **weights)


def frame_semantics(annotations: Sequence[featurizer.Annotation],
                    encoder: SentenceEncoder) -> np.ndarray:
    """Pack the top-5 annotations into one flat vector; empty slots stay zero."""
    d = encoder.sentence_dim
    width = d + SLOT_EXTRAS
    out = np.zeros(FRAME_SLOTS * width)
    for i, ann in enumerate(rank_annotations(list(annotations))[:FRAME_SLOTS]):
        base = i * width
        out[base:base + d] = encoder.encode(ann.tokens)
        out[base + d:base + d + 4] = ann.box
        out[base + d + 4] = ann.confidence
    return out


# ---------------------------------------------------------------------------
# checkpoint + vocabulary files

_MATRIX_ORDER = ("enc_w1", "enc_b1", "enc_w2", "enc_b2",
                 "dec_w1", "dec_b1", "dec_w2", "dec_b2")


def save_encoder(encoder: SentenceEncoder, path) -> None:
    """Binary layout: magic, little-endian u32 dims (V, H, D), then float64
    row-major matrices in a fixed order."""
    with open(path, "wb") as fh:
        fh.write(ENCODER_MAGIC)
        fh.write(struct.pack("<3I", len(encoder.vocabulary),
                             encoder.hidden_dim, encoder.sentence_dim))
        for name in _MATRIX_ORDER:
            arr = getattr(encoder, name)
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_encoder(path, vocabulary_path) -> SentenceEncoder:
    vocab = load_vocabulary(vocabulary_path)
    with open(path, "rb") as fh:
        magic = fh.read(len(ENCODER_MAGIC))
        if magic != ENCODER_MAGIC:
            raise ValueError(f"{path}: bad encoder magic {magic!r}")
        v, h, d = struct.unpack("<3I", fh.read(12))
        if v != len(vocab):
            raise ValueError(f"{path}: checkpoint vocabulary size {v} != "
                             f"vocabulary file size {len(vocab)}")
        shapes = {"enc_w1": (v, h), "enc_b1": (h,), "enc_w2": (h, d), "enc_b2": (d,),
                  "dec_w1": (d, h), "dec_b1": (h,), "dec_w2": (h, v), "dec_b2": (v,)}
        arrays = {}
        for name in _MATRIX_ORDER:
            shape = shapes[name]
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated encoder checkpoint")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes in encoder checkpoint")
    return SentenceEncoder(vocabulary=vocab, **arrays)


def save_vocabulary(vocabulary: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in sorted(vocabulary):
            fh.write(tok + "\n")


def load_vocabulary(path) -> tuple[str, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        return tuple(line.strip() for line in fh if line.strip())
