import numpy as np
import pytest

import semnav as sn
from semnav.gridscene import SCENE_TYPES
from semnav.policynet import (HISTORY_LEN, NumericError, StepInputs,
                              StepRecord, Trajectory, a3c_surrogate_loss,
                              init_params, load_params, make_target_context,
                              n_step_returns, policy_with_context, save_params)

rng = np.random.default_rng(12345)


def random_inputs(variant, f, s, scene_type="bathroom", r=None):
    r = r or rng
    return StepInputs(
        history_feats=tuple(r.normal(size=f) for _ in range(HISTORY_LEN)),
        target_feat=r.normal(size=f),
        scene_type=scene_type,
        history_sem=tuple(r.normal(size=s) for _ in range(HISTORY_LEN)) if variant == "ssn" else None,
        target_sem=r.normal(size=s) if variant == "ssn" else None,
    )


def random_trajectory(variant, f, s, length=4, terminal=True, scene_types=("bathroom",),
                      r=None):
    r = r or rng
    steps = []
    for t in range(length):
        steps.append(StepRecord(
            inputs=random_inputs(variant, f, s, scene_types[t % len(scene_types)], r),
            action=int(r.integers(4)),
            reward=float(r.normal()),
            done=terminal and t == length - 1,
        ))
    return Trajectory(steps=tuple(steps), bootstrap_value=float(r.normal()))


# ---------------------------------------------------------------------------
# init

def test_init_deterministic():
    a = init_params("sn", 6, 8, seed=4)
    b = init_params("sn", 6, 8, seed=4)
    for (na, aa), (nb, ab) in zip(a.named_arrays(), b.named_arrays()):
        assert na == nb
        assert np.array_equal(aa, ab)


def test_init_paper_scale_shapes():
    p = init_params("sn", 2048, 512, seed=0)
    assert p.W1.shape == (8192, 512)  # 4 x 2048 history concat
    assert p.W2.shape == (1024, 512)
    assert set(p.heads) == set(SCENE_TYPES)
    for h in p.heads.values():
        assert h.W1.shape == (512, 512)
        assert h.W2.shape == (512, 5)
        assert not h.b1.any() and not h.b2.any()


def test_init_ssn_semantic_projection_shape():
    # D_s=64 -> frame vector 345 -> 4x stacked input 1380
    p = init_params("ssn", 2048, 512, sem_dim=345, seed=0)
    assert p.W1p.shape == (1380, 512)
    assert p.W2.shape == (4 * 512, 512)


def test_init_validates():
    with pytest.raises(ValueError):
        init_params("cnn", 6, 8)
    with pytest.raises(ValueError):
        init_params("ssn", 6, 8, sem_dim=0)
    with pytest.raises(ValueError):
        init_params("sn", 0, 8)


# ---------------------------------------------------------------------------
# forward

def test_zero_weights_uniform_policy_zero_value():
    p = init_params("sn", 6, 8, seed=0)
    for _, arr in p.named_arrays():
        arr[:] = 0.0
    inp = random_inputs("sn", 6, 0)
    out = sn.forward(p, inp.history_feats, inp.target_feat, scene_type="kitchen")
    assert out.policy == pytest.approx([0.25] * 4)
    assert out.value == 0.0


def test_head_copy_symmetry():
    p = init_params("sn", 6, 8, seed=1)
    src, dst = "bathroom", "bedroom"
    for attr in ("W1", "b1", "W2", "b2"):
        getattr(p.heads[dst], attr)[:] = getattr(p.heads[src], attr)
    inp = random_inputs("sn", 6, 0)
    a = sn.forward(p, inp.history_feats, inp.target_feat, scene_type=src)
    b = sn.forward(p, inp.history_feats, inp.target_feat, scene_type=dst)
    assert np.array_equal(a.policy, b.policy)
    assert a.value == b.value


@pytest.mark.parametrize("variant,s", [("sn", 0), ("ssn", 15)])
def test_policy_is_distribution_and_pure(variant, s):
    p = init_params(variant, 6, 8, sem_dim=s, seed=2)
    for trial in range(20):
        inp = random_inputs(variant, 6, s)
        a = sn.forward(p, inp.history_feats, inp.target_feat, inp.history_sem,
                       inp.target_sem, "livingroom")
        b = sn.forward(p, inp.history_feats, inp.target_feat, inp.history_sem,
                       inp.target_sem, "livingroom")
        assert (a.policy > 0).all()
        assert abs(a.policy.sum() - 1.0) < 1e-9
        assert np.array_equal(a.policy, b.policy) and a.value == b.value


def test_forward_input_validation():
    p_sn = init_params("sn", 6, 8, seed=0)
    p_ssn = init_params("ssn", 6, 8, sem_dim=15, seed=0)
    inp = random_inputs("ssn", 6, 15)
    with pytest.raises(ValueError):  # sn forbids semantics
        sn.forward(p_sn, inp.history_feats, inp.target_feat, inp.history_sem,
                   inp.target_sem, "bathroom")
    with pytest.raises(ValueError):  # ssn requires semantics
        sn.forward(p_ssn, inp.history_feats, inp.target_feat, scene_type="bathroom")
    with pytest.raises(ValueError, match="scene_type"):
        sn.forward(p_sn, inp.history_feats, inp.target_feat, scene_type="garage")
    with pytest.raises(ValueError):  # shape mismatch
        sn.forward(p_sn, inp.history_feats, np.zeros(7), scene_type="bathroom")


def test_target_context_fast_path_matches_forward():
    for variant, s in (("sn", 0), ("ssn", 15)):
        p = init_params(variant, 6, 8, sem_dim=s, seed=3)
        inp = random_inputs(variant, 6, s)
        full = sn.forward(p, inp.history_feats, inp.target_feat, inp.history_sem,
                          inp.target_sem, "bathroom")
        ctx = make_target_context(p, inp.target_feat, inp.target_sem)
        pol, val = policy_with_context(p, ctx, inp.history_feats, inp.history_sem,
                                       "bathroom")
        assert np.array_equal(pol, full.policy)
        assert val == full.value


# ---------------------------------------------------------------------------
# returns and loss

def test_n_step_returns_hand_recursion():
    # R_2 = 9.99; R_1 = -0.01 + 0.99 * 9.99; R_0 = -0.01 + 0.99 * R_1
    rets = n_step_returns([-0.01, -0.01, 9.99], gamma=0.99, terminal=True,
                          bootstrap_value=0.0)
    assert rets[2] == pytest.approx(9.99)
    assert rets[1] == pytest.approx(9.8801)
    assert rets[0] == pytest.approx(9.771299)


def test_n_step_returns_gamma_zero():
    rewards = [0.3, -0.2, 0.7]
    assert n_step_returns(rewards, 0.0, False, 5.0) == pytest.approx(rewards)


def test_n_step_returns_bootstrap():
    rets = n_step_returns([1.0], gamma=0.5, terminal=False, bootstrap_value=4.0)
    assert rets[0] == pytest.approx(3.0)


def test_loss_validates():
    p = init_params("sn", 6, 8, seed=0)
    with pytest.raises(ValueError):
        sn.a3c_loss_and_grads(p, Trajectory(steps=()), 0.99, 0.01, 0.5)
    traj = random_trajectory("sn", 6, 0)
    with pytest.raises(ValueError):
        sn.a3c_loss_and_grads(p, traj, gamma=1.5)


def test_untouched_heads_get_exactly_zero_gradient():
    p = init_params("sn", 6, 8, seed=5)
    traj = random_trajectory("sn", 6, 0, scene_types=("bathroom", "kitchen"))
    _, grads = sn.a3c_loss_and_grads(p, traj)
    for st_name in ("bedroom", "livingroom"):
        h = grads.heads[st_name]
        assert not h.W1.any() and not h.b1.any()
        assert not h.W2.any() and not h.b2.any()
    assert grads.heads["bathroom"].W2.any()
    assert grads.heads["kitchen"].W2.any()


def test_entropy_gradient_zero_at_uniform():
    # zero weights -> uniform policy and V=0; zero rewards -> zero advantage
    # and zero returns, so only the entropy term remains, whose gradient at
    # the uniform policy vanishes.
    p = init_params("sn", 6, 8, seed=0)
    for _, arr in p.named_arrays():
        arr[:] = 0.0
    steps = tuple(StepRecord(random_inputs("sn", 6, 0), action=1, reward=0.0,
                             done=(i == 2)) for i in range(3))
    loss, grads = sn.a3c_loss_and_grads(p, Trajectory(steps=steps), 0.99, 0.01, 0.5)
    for _, arr in grads.named_arrays():
        assert not arr.any()
    # loss is just -beta * H(uniform) per step
    assert loss == pytest.approx(3 * -0.01 * np.log(4.0))


def _finite_difference_check(variant, s, trial, length, terminal, tol=1e-3):
    f, e = 6, 8
    r = np.random.default_rng(1000 + trial)
    params = init_params(variant, f, e, sem_dim=s, seed=trial)
    traj = random_trajectory(variant, f, s, length=length, terminal=terminal,
                             scene_types=SCENE_TYPES, r=r)
    loss, grads = sn.a3c_loss_and_grads(params, traj, 0.99, 0.01, 0.5)

    rets = n_step_returns([st.reward for st in traj.steps], 0.99,
                          traj.steps[-1].done, traj.bootstrap_value)
    vals = [sn.forward(params, st.inputs.history_feats, st.inputs.target_feat,
                       st.inputs.history_sem, st.inputs.target_sem,
                       st.inputs.scene_type).value for st in traj.steps]
    advantages = [ret - v for ret, v in zip(rets, vals)]
    assert a3c_surrogate_loss(params, traj, advantages) == pytest.approx(loss)

    eps = 1e-4
    worst = 0.0
    analytic = {name: g for name, g in grads.named_arrays()}
    for name, arr in params.named_arrays():
        flat = arr.ravel()
        ga = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = a3c_surrogate_loss(params, traj, advantages)
            flat[i] = orig - eps
            lm = a3c_surrogate_loss(params, traj, advantages)
            flat[i] = orig
            gn = (lp - lm) / (2 * eps)
            rel = abs(ga[i] - gn) / max(1e-8, abs(ga[i]) + abs(gn))
            worst = max(worst, rel)
    assert worst < tol, f"{variant} trial {trial}: rel err {worst}"


@pytest.mark.parametrize("trial", range(2))
def test_gradients_match_finite_differences_sn(trial):
    _finite_difference_check("sn", 0, trial, length=3, terminal=trial % 2 == 0)


@pytest.mark.parametrize("trial", range(2))
def test_gradients_match_finite_differences_ssn(trial):
    _finite_difference_check("ssn", 10, trial, length=3, terminal=trial % 2 == 0)


def test_loss_nan_raises_numeric_error():
    p = init_params("sn", 6, 8, seed=0)
    steps = (StepRecord(random_inputs("sn", 6, 0), 0, float("nan"), True),)
    with pytest.raises(NumericError):
        sn.a3c_loss_and_grads(p, Trajectory(steps=steps))


# ---------------------------------------------------------------------------
# checkpointing

@pytest.mark.parametrize("variant,s", [("sn", 0), ("ssn", 15)])
def test_params_checkpoint_roundtrip(variant, s, tmp_path):
    p = init_params(variant, 6, 8, sem_dim=s, seed=9)
    path = tmp_path / "params.bin"
    save_params(p, path)
    q = load_params(path)
    assert q.variant == p.variant
    assert (q.feature_dim, q.embed_dim, q.sem_dim) == (p.feature_dim, p.embed_dim, p.sem_dim)
    for (na, aa), (nb, ab) in zip(p.named_arrays(), q.named_arrays()):
        assert na == nb
        assert np.array_equal(aa, ab)
    # byte-identical re-save
    save_params(q, tmp_path / "params2.bin")
    assert (tmp_path / "params.bin").read_bytes() == (tmp_path / "params2.bin").read_bytes()


def test_params_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"WRONGMAG" + b"\x00" * 32)
    with pytest.raises(ValueError, match="magic"):
        load_params(path)
    p = init_params("sn", 6, 8, seed=0)
    save_params(p, tmp_path / "trunc.bin")
    data = (tmp_path / "trunc.bin").read_bytes()
    (tmp_path / "trunc.bin").write_bytes(data[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_params(tmp_path / "trunc.bin")
