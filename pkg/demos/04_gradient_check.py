"""Backprop through the siamese networks, verified by finite differences.

Run: python3 demos/04_gradient_check.py
"""
import numpy as np

from semnav.policynet import (StepInputs, StepRecord, Trajectory,
                              a3c_loss_and_grads, a3c_surrogate_loss, forward,
                              init_params, n_step_returns)

rng = np.random.default_rng(0)
F, E, SEM = 6, 8, 45  # tiny dims keep the finite-difference sweep fast

for variant in ("sn", "ssn"):
    params = init_params(variant, F, E, sem_dim=SEM, seed=1)
    semantic = variant == "ssn"
    steps = []
    for t in range(4):
        steps.append(StepRecord(
            inputs=StepInputs(
                history_feats=tuple(rng.normal(size=F) for _ in range(4)),
                target_feat=rng.normal(size=F),
                scene_type=("bathroom", "kitchen", "bedroom", "livingroom")[t],
                history_sem=tuple(rng.normal(size=SEM) for _ in range(4)) if semantic else None,
                target_sem=rng.normal(size=SEM) if semantic else None),
            action=int(rng.integers(4)),
            reward=float(rng.normal()),
            done=t == 3))
    traj = Trajectory(steps=tuple(steps))

    loss, grads = a3c_loss_and_grads(params, traj, gamma=0.99, beta=0.01,
                                     value_coef=0.5)

    # The advantage weights are stop-gradients: freeze them, then sweep every
    # parameter with central differences on the surrogate loss.
    rets = n_step_returns([s.reward for s in traj.steps], 0.99, True, 0.0)
    vals = [forward(params, s.inputs.history_feats, s.inputs.target_feat,
                    s.inputs.history_sem, s.inputs.target_sem,
                    s.inputs.scene_type).value for s in traj.steps]
    advantages = [r - v for r, v in zip(rets, vals)]

    eps = 1e-4
    worst = 0.0
    flat = params.flat
    analytic = grads.flat
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp = a3c_surrogate_loss(params, traj, advantages)
        flat[i] = orig - eps
        lm = a3c_surrogate_loss(params, traj, advantages)
        flat[i] = orig
        numeric = (lp - lm) / (2 * eps)
        rel = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
        worst = max(worst, rel)
    print(f"{variant}: loss {loss:+.4f}, {flat.size} parameters, "
          f"worst relative gradient error {worst:.2e}")
