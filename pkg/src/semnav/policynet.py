"""Siamese policy/value networks with per-scene-type heads.

Two variants share one layout. The visual trunk projects the concatenated
history frames (4F) and the 4x-tiled target frame through one shared
matrix W1 into E-d embeddings. The plain variant ("sn") fuses
[history | target] with W2; the semantic variant ("ssn") also projects the
concatenated history semantics and 4x-tiled target semantics through a
shared W1p and fuses the four embeddings with a wider W2. The fused vector
feeds one two-layer head per scene type: 5 outputs, the first four softmax
into the policy and the fifth is the raw value.

Gradients are hand-rolled backprop through cached activations and are
checked against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import struct
from typing import Sequence

import numpy as np

from .gridscene import SCENE_TYPES

N_ACTIONS = 4
HISTORY_LEN = 4
HEAD_OUTPUTS = N_ACTIONS + 1

PARAMS_MAGIC = b"SNPARAM1"
VARIANTS = ("sn", "ssn")


class NumericError(RuntimeError):
    """A computation produced a non-finite number."""


@dataclass
class HeadParams:
    W1: np.ndarray  # (E, E)
    b1: np.ndarray  # (E,)
    W2: np.ndarray  # (E, 5)
    b2: np.ndarray  # (5,)


_layout_cache: dict[tuple, tuple] = {}


def _layout(variant: str, feature_dim: int, embed_dim: int, sem_dim: int):
    """(name, shape, start, stop) spans of every matrix in the flat buffer."""
    key = (variant, feature_dim, embed_dim, sem_dim)
    hit = _layout_cache.get(key)
    if hit is not None:
        return hit
    e = embed_dim
    shapes = [("W1", (HISTORY_LEN * feature_dim, e)), ("b1", (e,))]
    if variant == "ssn":
        shapes += [("W1p", (HISTORY_LEN * sem_dim, e)), ("b1p", (e,))]
    fuse_in = 2 * e if variant == "sn" else 4 * e
    shapes += [("W2", (fuse_in, e)), ("b2", (e,))]
    for st in SCENE_TYPES:
        shapes += [(f"head/{st}/W1", (e, e)), (f"head/{st}/b1", (e,)),
                   (f"head/{st}/W2", (e, HEAD_OUTPUTS)),
                   (f"head/{st}/b2", (HEAD_OUTPUTS,))]
    layout = []
    off = 0
    for name, shape in shapes:
        n = 1
        for d in shape:
            n *= d
        layout.append((name, shape, off, off + n))
        off += n
    _layout_cache[key] = (tuple(layout), off)
    return _layout_cache[key]


class NetworkParams:
    """All weights of one network, backed by a single flat float64 buffer.

    Every matrix (W1, optional W1p, W2, the four heads) is a contiguous view
    into `flat`, so whole-network operations -- RMSProp updates, snapshots,
    gradient norms -- run as single array passes.
    """

    def __init__(self, variant: str, feature_dim: int, embed_dim: int,
                 sem_dim: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if feature_dim <= 0 or embed_dim <= 0:
            raise ValueError("feature_dim and embed_dim must be positive")
        if variant == "ssn" and sem_dim <= 0:
            raise ValueError("ssn variant needs a positive sem_dim")
        self.variant = variant
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        self.sem_dim = sem_dim if variant == "ssn" else 0

        layout, total = _layout(variant, feature_dim, embed_dim, self.sem_dim)
        self.flat = np.zeros(total)
        self._views = {name: self.flat[start:stop].reshape(shape)
                       for name, shape, start, stop in layout}

        self.W1 = self._views["W1"]
        self.b1 = self._views["b1"]
        self.W1p = self._views.get("W1p")
        self.b1p = self._views.get("b1p")
        self.W2 = self._views["W2"]
        self.b2 = self._views["b2"]
        self.heads = {st: HeadParams(W1=self._views[f"head/{st}/W1"],
                                     b1=self._views[f"head/{st}/b1"],
                                     W2=self._views[f"head/{st}/W2"],
                                     b2=self._views[f"head/{st}/b2"])
                      for st in SCENE_TYPES}

    @property
    def is_semantic(self) -> bool:
        return self.W1p is not None

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All matrices in the canonical (checkpoint) order."""
        return list(self._views.items())

    def copy(self) -> "NetworkParams":
        out = NetworkParams(self.variant, self.feature_dim, self.embed_dim,
                            self.sem_dim)
        out.flat[:] = self.flat
        return out

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(self.variant, self.feature_dim, self.embed_dim,
                             self.sem_dim)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())


def init_params(variant: str, feature_dim: int, embed_dim: int,
                sem_dim: int = 0, seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    params = NetworkParams(variant, feature_dim, embed_dim, sem_dim)
    rng = np.random.default_rng(np.random.SeedSequence([0x9A2A35, seed]))
    for name, arr in params.named_arrays():
        if name.split("/")[-1].startswith("b"):
            continue  # biases stay zero
        a = np.sqrt(6.0 / (arr.shape[0] + arr.shape[1]))
        arr[:] = rng.uniform(-a, a, size=arr.shape)
    return params


@dataclass
class ForwardOutput:
    policy: np.ndarray   # (4,) positive, sums to 1
    value: float
    cache: dict


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _stack_history(arrs) -> np.ndarray:
    """Accepts either four per-frame vectors or one prestacked flat vector."""
    if isinstance(arrs, np.ndarray) and arrs.ndim == 1:
        return arrs
    arrs = list(arrs)
    if len(arrs) != HISTORY_LEN:
        raise ValueError(f"expected {HISTORY_LEN} history entries, got {len(arrs)}")
    return np.concatenate([np.asarray(a).ravel() for a in arrs])


def forward(params: NetworkParams, history_feats, target_feat,
            history_sem=None, target_sem=None, scene_type: str = "") -> ForwardOutput:
    """Single-state forward pass; the cache feeds the backward pass."""
    if scene_type not in params.heads:
        raise ValueError(f"no head for scene_type {scene_type!r}")
    if params.is_semantic:
        if history_sem is None or target_sem is None:
            raise ValueError("ssn parameters require semantic inputs")
    elif history_sem is not None or target_sem is not None:
        raise ValueError("sn parameters do not accept semantic inputs")

    hist_in = _stack_history(history_feats)
    targ = np.asarray(target_feat).ravel()
    if hist_in.shape[0] != HISTORY_LEN * params.feature_dim:
        raise ValueError(f"history feature size {hist_in.shape[0]} != "
                         f"{HISTORY_LEN * params.feature_dim}")
    if targ.shape[0] != params.feature_dim:
        raise ValueError(f"target feature size {targ.shape[0]} != {params.feature_dim}")
    targ_in = np.tile(targ, HISTORY_LEN)

    h_hist_pre = hist_in @ params.W1 + params.b1
    h_hist = np.maximum(h_hist_pre, 0.0)
    h_targ_pre = targ_in @ params.W1 + params.b1
    h_targ = np.maximum(h_targ_pre, 0.0)

    cache = {"hist_in": hist_in, "targ_in": targ_in,
             "h_hist_pre": h_hist_pre, "h_targ_pre": h_targ_pre,
             "scene_type": scene_type}

    if params.is_semantic:
        sem_hist_in = _stack_history(history_sem)
        sem_targ = np.asarray(target_sem).ravel()
        if sem_hist_in.shape[0] != HISTORY_LEN * params.sem_dim:
            raise ValueError(f"history semantics size {sem_hist_in.shape[0]} != "
                             f"{HISTORY_LEN * params.sem_dim}")
        if sem_targ.shape[0] != params.sem_dim:
            raise ValueError(f"target semantics size {sem_targ.shape[0]} != {params.sem_dim}")
        sem_targ_in = np.tile(sem_targ, HISTORY_LEN)
        s_hist_pre = sem_hist_in @ params.W1p + params.b1p
        s_hist = np.maximum(s_hist_pre, 0.0)
        s_targ_pre = sem_targ_in @ params.W1p + params.b1p
        s_targ = np.maximum(s_targ_pre, 0.0)
        joint_in = np.concatenate([h_hist, h_targ, s_hist, s_targ])
        cache.update({"sem_hist_in": sem_hist_in, "sem_targ_in": sem_targ_in,
                      "s_hist_pre": s_hist_pre, "s_targ_pre": s_targ_pre})
    else:
        joint_in = np.concatenate([h_hist, h_targ])

    joint_pre = joint_in @ params.W2 + params.b2
    joint = np.maximum(joint_pre, 0.0)
    head = params.heads[scene_type]
    h1_pre = joint @ head.W1 + head.b1
    h1 = np.maximum(h1_pre, 0.0)
    out = h1 @ head.W2 + head.b2

    logp = _log_softmax(out[:N_ACTIONS])
    policy = np.exp(logp)
    cache.update({"joint_in": joint_in, "joint_pre": joint_pre, "joint": joint,
                  "h1_pre": h1_pre, "h1": h1, "logp": logp, "policy": policy})
    return ForwardOutput(policy=policy, value=float(out[N_ACTIONS]), cache=cache)


@dataclass
class TargetContext:
    """Target-stream activations, reusable while params and target are fixed."""
    h_targ: np.ndarray
    s_targ: np.ndarray | None = None


def make_target_context(params: NetworkParams, target_feat,
                        target_sem=None) -> TargetContext:
    targ_in = np.tile(np.asarray(target_feat).ravel(), HISTORY_LEN)
    h_targ = np.maximum(targ_in @ params.W1 + params.b1, 0.0)
    s_targ = None
    if params.is_semantic:
        if target_sem is None:
            raise ValueError("ssn parameters require target semantics")
        sem_targ_in = np.tile(np.asarray(target_sem).ravel(), HISTORY_LEN)
        s_targ = np.maximum(sem_targ_in @ params.W1p + params.b1p, 0.0)
    return TargetContext(h_targ=h_targ, s_targ=s_targ)


def policy_with_context(params: NetworkParams, ctx: TargetContext, history_feats,
                        history_sem=None, scene_type: str = ""):
    """(policy, value) for one state; bitwise-identical to forward()."""
    head = params.heads.get(scene_type)
    if head is None:
        raise ValueError(f"no head for scene_type {scene_type!r}")
    hist_in = _stack_history(history_feats)
    h_hist = np.maximum(hist_in @ params.W1 + params.b1, 0.0)
    if params.is_semantic:
        sem_hist_in = _stack_history(history_sem)
        s_hist = np.maximum(sem_hist_in @ params.W1p + params.b1p, 0.0)
        joint_in = np.concatenate([h_hist, ctx.h_targ, s_hist, ctx.s_targ])
    else:
        joint_in = np.concatenate([h_hist, ctx.h_targ])
    joint = np.maximum(joint_in @ params.W2 + params.b2, 0.0)
    h1 = np.maximum(joint @ head.W1 + head.b1, 0.0)
    out = h1 @ head.W2 + head.b2
    policy = np.exp(_log_softmax(out[:N_ACTIONS]))
    return policy, float(out[N_ACTIONS])


# ---------------------------------------------------------------------------
# trajectories and the A3C loss

@dataclass(frozen=True)
class StepInputs:
    history_feats: object         # 4 per-frame vectors or one stacked 4F vector
    target_feat: np.ndarray
    scene_type: str
    history_sem: object | None = None
    target_sem: np.ndarray | None = None


@dataclass(frozen=True)
class StepRecord:
    inputs: StepInputs
    action: int
    reward: float
    done: bool


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[StepRecord, ...]
    bootstrap_value: float = 0.0


def n_step_returns(rewards: Sequence[float], gamma: float, terminal: bool,
                   bootstrap_value: float) -> list[float]:
    """R_t = r_t + gamma * R_{t+1}, seeded with 0 if terminal else bootstrap."""
    r = 0.0 if terminal else float(bootstrap_value)
    out = [0.0] * len(rewards)
    for t in range(len(rewards) - 1, -1, -1):
        r = rewards[t] + gamma * r
        out[t] = r
    return out


def a3c_surrogate_loss(params: NetworkParams, traj: Trajectory,
                       advantages: Sequence[float], gamma: float = 0.99,
                       beta: float = 0.01, value_coef: float = 0.5) -> float:
    """The objective whose gradient a3c_loss_and_grads returns.

    The policy term is weighted by the given fixed advantages, making the
    advantage's stop-gradient explicit; finite differences of this function
    match the analytic gradients.
    """
    if len(advantages) != len(traj.steps):
        raise ValueError("one advantage per trajectory step required")
    returns = n_step_returns([s.reward for s in traj.steps], gamma,
                             traj.steps[-1].done, traj.bootstrap_value)
    loss = 0.0
    for step_rec, ret, adv in zip(traj.steps, returns, advantages):
        out = forward(params, step_rec.inputs.history_feats, step_rec.inputs.target_feat,
                      step_rec.inputs.history_sem, step_rec.inputs.target_sem,
                      step_rec.inputs.scene_type)
        logp = out.cache["logp"]
        p = out.cache["policy"]
        entropy = float(-(p * logp).sum())
        loss += -logp[step_rec.action] * adv \
            + value_coef * (ret - out.value) ** 2 - beta * entropy
    return float(loss)


def _batched_pass(params: NetworkParams, steps, returns, beta: float,
                  value_coef: float, grads: NetworkParams) -> float:
    """Forward + backward for steps sharing one scene type, batched over time."""
    scene_type = steps[0].inputs.scene_type
    head = params.heads[scene_type]
    t_len = len(steps)
    e = params.embed_dim

    hist = np.stack([_stack_history(s.inputs.history_feats) for s in steps])
    targ = np.stack([np.tile(np.asarray(s.inputs.target_feat).ravel(), HISTORY_LEN)
                     for s in steps])
    if hist.shape[1] != HISTORY_LEN * params.feature_dim:
        raise ValueError(f"history feature size {hist.shape[1]} != "
                         f"{HISTORY_LEN * params.feature_dim}")

    h_hist_pre = hist @ params.W1 + params.b1
    h_hist = np.maximum(h_hist_pre, 0.0)
    h_targ_pre = targ @ params.W1 + params.b1
    h_targ = np.maximum(h_targ_pre, 0.0)

    if params.is_semantic:
        sem_hist = np.stack([_stack_history(s.inputs.history_sem) for s in steps])
        sem_targ = np.stack([np.tile(np.asarray(s.inputs.target_sem).ravel(), HISTORY_LEN)
                             for s in steps])
        if sem_hist.shape[1] != HISTORY_LEN * params.sem_dim:
            raise ValueError(f"history semantics size {sem_hist.shape[1]} != "
                             f"{HISTORY_LEN * params.sem_dim}")
        s_hist_pre = sem_hist @ params.W1p + params.b1p
        s_hist = np.maximum(s_hist_pre, 0.0)
        s_targ_pre = sem_targ @ params.W1p + params.b1p
        s_targ = np.maximum(s_targ_pre, 0.0)
        joint_in = np.hstack([h_hist, h_targ, s_hist, s_targ])
    else:
        joint_in = np.hstack([h_hist, h_targ])

    joint_pre = joint_in @ params.W2 + params.b2
    joint = np.maximum(joint_pre, 0.0)
    h1_pre = joint @ head.W1 + head.b1
    h1 = np.maximum(h1_pre, 0.0)
    out = h1 @ head.W2 + head.b2

    logits = out[:, :N_ACTIONS]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    policy = np.exp(logp)
    values = out[:, N_ACTIONS]

    actions = np.array([s.action for s in steps])
    if (actions < 0).any() or (actions >= N_ACTIONS).any():
        raise ValueError("invalid action index in trajectory")
    rets = np.asarray(returns)
    adv = rets - values
    entropy = -(policy * logp).sum(axis=1)
    rows = np.arange(t_len)
    loss = float((-logp[rows, actions] * adv
                  + value_coef * (rets - values) ** 2 - beta * entropy).sum())

    dlogits = adv[:, None] * policy
    dlogits[rows, actions] -= adv
    dlogits += beta * policy * (logp + entropy[:, None])
    dout = np.empty((t_len, HEAD_OUTPUTS))
    dout[:, :N_ACTIONS] = dlogits
    dout[:, N_ACTIONS] = 2.0 * value_coef * (values - rets)

    ghead = grads.heads[scene_type]
    ghead.W2 += h1.T @ dout
    ghead.b2 += dout.sum(axis=0)
    dh1 = (dout @ head.W2.T) * (h1_pre > 0)
    ghead.W1 += joint.T @ dh1
    ghead.b1 += dh1.sum(axis=0)
    djoint = (dh1 @ head.W1.T) * (joint_pre > 0)
    grads.W2 += joint_in.T @ djoint
    grads.b2 += djoint.sum(axis=0)
    dji = djoint @ params.W2.T

    dh_hist = dji[:, :e] * (h_hist_pre > 0)
    dh_targ = dji[:, e:2 * e] * (h_targ_pre > 0)
    grads.W1 += hist.T @ dh_hist
    grads.W1 += targ.T @ dh_targ
    grads.b1 += dh_hist.sum(axis=0) + dh_targ.sum(axis=0)
    if params.is_semantic:
        ds_hist = dji[:, 2 * e:3 * e] * (s_hist_pre > 0)
        ds_targ = dji[:, 3 * e:] * (s_targ_pre > 0)
        grads.W1p += sem_hist.T @ ds_hist
        grads.W1p += sem_targ.T @ ds_targ
        grads.b1p += ds_hist.sum(axis=0) + ds_targ.sum(axis=0)
    return loss


def a3c_loss_and_grads(params: NetworkParams, traj: Trajectory,
                       gamma: float = 0.99, beta: float = 0.01,
                       value_coef: float = 0.5):
    """Loss and gradients of the advantage actor-critic objective.

    Per step: -log pi(a_t) * A_t (advantage held constant) plus
    value_coef * (R_t - V_t)^2 minus beta * entropy(pi). Steps are processed
    in batches grouped by scene type.
    """
    if not traj.steps:
        raise ValueError("trajectory is empty")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    for s in traj.steps:
        if params.is_semantic:
            if s.inputs.history_sem is None or s.inputs.target_sem is None:
                raise ValueError("ssn parameters require semantic inputs")
        elif s.inputs.history_sem is not None or s.inputs.target_sem is not None:
            raise ValueError("sn parameters do not accept semantic inputs")
        if s.inputs.scene_type not in params.heads:
            raise ValueError(f"no head for scene_type {s.inputs.scene_type!r}")

    returns = n_step_returns([s.reward for s in traj.steps], gamma,
                             traj.steps[-1].done, traj.bootstrap_value)
    by_type: dict[str, list[int]] = {}
    for i, s in enumerate(traj.steps):
        by_type.setdefault(s.inputs.scene_type, []).append(i)

    grads = params.zeros_like()
    loss = 0.0
    for idxs in by_type.values():
        loss += _batched_pass(params, [traj.steps[i] for i in idxs],
                              [returns[i] for i in idxs], beta, value_coef, grads)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite A3C loss {loss}")
    return loss, grads


# ---------------------------------------------------------------------------
# checkpointing

def save_params(params: NetworkParams, path) -> None:
    """Binary layout: magic, variant byte (0=sn, 1=ssn), little-endian u32
    dims (F, E, S_f), then float64 row-major matrices in named_arrays order."""
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<B3I", VARIANTS.index(params.variant),
                             params.feature_dim, params.embed_dim, params.sem_dim))
        for _, arr in params.named_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(PARAMS_MAGIC))
        if magic != PARAMS_MAGIC:
            raise ValueError(f"{path}: bad parameter magic {magic!r}")
        variant_byte, f, e, s = struct.unpack("<B3I", fh.read(13))
        if variant_byte >= len(VARIANTS):
            raise ValueError(f"{path}: unknown variant byte {variant_byte}")
        variant = VARIANTS[variant_byte]
        params = init_params(variant, f, e, s if variant == "ssn" else 0, seed=0)
        for name, arr in params.named_arrays():
            n = arr.size
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated checkpoint at {name}")
            arr[:] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes in checkpoint")
    return params
