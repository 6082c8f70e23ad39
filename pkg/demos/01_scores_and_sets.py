"""
Conformity scores and class-wise prediction sets
================================================

"""

import numpy as np

from bccp import ScoreSpec, check_loss, predict_set, score_all, softmax_transform

# A classifier's logits become probabilities through the softmax
logits = np.array([2.0, 0.5, 1.0, -1.0])
p = softmax_transform(logits)
print("probabilities:", np.round(p, 3))

# Three score families. Higher means "more plausible".
# APS sums the mass of every class ranked at or below k;
# RAPS subtracts a small penalty for deep ranks.
for kind in ("softmax", "aps", "raps"):
    print(f"{kind:>8}:", np.round(score_all(p, 0.0, ScoreSpec(kind)), 3))

# u randomises APS/RAPS ties; one draw is shared by all classes of a point
print("aps, u=0.7:", np.round(score_all(p, 0.7, ScoreSpec("aps")), 3))

# Each class has its own threshold; class k is kept when s_k >= tau_k
s = score_all(p, 0.0, ScoreSpec("aps"))
for tau in ([0.0] * 4, [0.5] * 4, [0.9, 0.1, 0.9, 0.9]):
    print("thresholds", tau, "->", sorted(predict_set(s, tau).members))

# With u = 0 an APS set is always a run of the most likely classes
order = np.argsort(-p, kind="stable")
print("rank order:", order.tolist())

# The thresholds are fitted with the pinball (check) loss. Its minimiser
# over tau is the alpha-quantile of the scores.
rng = np.random.default_rng(0)
scores = rng.beta(5, 2, size=400)
grid = np.linspace(0, 1, 1001)
loss = [check_loss(scores, t, 0.1).sum() for t in grid]
print("argmin of pinball loss: %.3f" % grid[int(np.argmin(loss))])
print("empirical 10%% quantile:  %.3f" % np.quantile(scores, 0.1))
