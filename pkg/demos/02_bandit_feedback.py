"""
Learning from one pulled arm
============================

"""

import numpy as np

from bccp import (PolicySpec, batch_update, delta_weights, forward, init_params,
                  policy_probs, sample_arm)

rng = np.random.default_rng(1)

# The learner never sees the label. It pulls one arm and is told only
# whether that arm was the right class.
K, y = 4, 2
pi = policy_probs(PolicySpec("uniform"), K)
print("uniform policy:", pi)

# Reweighting the hit by 1/pi gives an unbiased one-hot estimate
N = 50_000
P = np.tile(pi, (N, 1))
arms = sample_arm(P, rng)
w = delta_weights(arms, np.full(N, y), P)
est = np.array([np.where(arms == k, w, 0).mean() for k in range(K)])
print("mean estimate of one-hot(y=2):", np.round(est, 3))

# A softmax policy with a floor never starves an arm
soft = policy_probs(PolicySpec("softmax", floor=0.05), K,
                   model_probs=np.array([0.97, 0.01, 0.01, 0.01]))
print("softmax policy with floor 0.05:", np.round(soft, 3))

# Training a linear model on these weights: one mean-gradient step per batch.
# Class k sits at 3 * e_k.
params = init_params(4, K, hidden=0, rng=rng)
for step in range(300):
    ys = rng.integers(0, K, size=64)
    xs = 3.0 * np.eye(4)[ys] + rng.standard_normal((64, 4))
    pi_b = np.full((64, K), 1 / K)
    a = sample_arm(pi_b, rng)
    params, loss, _ = batch_update(params, xs, a, delta_weights(a, ys, pi_b), 0.1)
    if step % 100 == 0:
        print(f"step {step:3d}  bandit cross-entropy {loss:.3f}")

ys = rng.integers(0, K, size=2000)
xs = 3.0 * np.eye(4)[ys] + rng.standard_normal((2000, 4))
_, probs = forward(params, xs)
print("held-out accuracy: %.3f" % (probs.argmax(axis=1) == ys).mean())
