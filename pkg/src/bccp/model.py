"""Small softmax classifier trained online on the importance-weighted cross-entropy.

Two architectures are supported: a linear map (``hidden=0``) and a single
ReLU hidden layer. Parameters live in an ordered mapping of named arrays so
that gradients, SGD steps and snapshot files share one layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import InvalidInputError, softmax_transform

LOG_CLAMP = 1e-12


@dataclass
class ModelParameters:
    """Weights of the classifier.

    ``arrays`` holds ``W``/``b`` for the linear model and ``W1``/``b1``/``W2``/``b2``
    for the hidden-layer model. Weight matrices are stored ``(out, in)``.
    """

    n_features: int
    n_classes: int
    hidden: int = 0
    arrays: dict = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return ("W", "b") if self.hidden == 0 else ("W1", "b1", "W2", "b2")

    def shapes(self) -> dict:
        d, K, H = self.n_features, self.n_classes, self.hidden
        if H == 0:
            return {"W": (K, d), "b": (K,)}
        return {"W1": (H, d), "b1": (H,), "W2": (K, H), "b2": (K,)}

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.n_features, self.n_classes, self.hidden,
            {k: v.copy() for k, v in self.arrays.items()},
        )

    def zeros_like(self) -> "ModelParameters":
        return ModelParameters(
            self.n_features, self.n_classes, self.hidden,
            {k: np.zeros_like(v) for k, v in self.arrays.items()},
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in self.names])

    def with_flat(self, vec) -> "ModelParameters":
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = {}, 0
        for name, shape in self.shapes().items():
            size = int(np.prod(shape))
            out[name] = vec[pos:pos + size].reshape(shape).copy()
            pos += size
        return ModelParameters(self.n_features, self.n_classes, self.hidden, out)


# Gradients have exactly the parameter layout.
GradientBundle = ModelParameters


def init_params(n_features: int, n_classes: int, hidden: int = 0, rng=None) -> ModelParameters:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    if n_classes < 2 or n_features < 1 or hidden < 0:
        raise InvalidInputError("need n_features >= 1, n_classes >= 2, hidden >= 0")
    rng = np.random.default_rng() if rng is None else rng
    params = ModelParameters(n_features, n_classes, hidden)
    for name, shape in params.shapes().items():
        if name.startswith("b"):
            params.arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            params.arrays[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _check_x(params: ModelParameters, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_features:
        raise InvalidInputError(
            f"expected {params.n_features} features, got {x.shape[-1]}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("features must be finite")
    return x


def _forward_cache(params, x):
    a = params.arrays
    if params.hidden == 0:
        return x @ a["W"].T + a["b"], None
    pre = x @ a["W1"].T + a["b1"]
    h = np.maximum(pre, 0.0)
    return h @ a["W2"].T + a["b2"], (pre, h)


def forward(params: ModelParameters, x):
    """Logits and class probabilities for one instance ``(d,)`` or a batch ``(n, d)``."""
    x = _check_x(params, x)
    logits, _ = _forward_cache(params, x)
    return logits, softmax_transform(logits)


def bandit_ce_loss(probs, delta) -> float:
    """``-sum_k delta_k * log probs[k]``.

    ``delta`` is a dense per-class weight vector or a
    :class:`~bccp.policy.DeltaEstimate`. Log arguments are clamped at
    ``LOG_CLAMP``; :func:`is_saturated` reports when that happened.
    """
    d = np.asarray(delta, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    support = d != 0
    if not support.any():
        return 0.0
    return -float(np.sum(d[support] * np.log(np.maximum(p[support], LOG_CLAMP))))


def is_saturated(probs, delta) -> bool:
    d = np.asarray(delta, dtype=np.float64)
    return bool(np.any((d > 0) & (np.asarray(probs) < LOG_CLAMP)))


def bandit_ce_gradient(params: ModelParameters, x, arm, weight) -> GradientBundle:
    """Backpropagated gradient of the mean weighted cross-entropy.

    ``x`` may be one instance or a batch; ``arm`` and ``weight`` then hold one
    entry per row and the gradient is averaged over rows. At the logit layer
    the per-row gradient is ``weight * (p - onehot(arm))``.
    """
    x = _check_x(params, x)
    X = np.atleast_2d(x)
    arms = np.atleast_1d(np.asarray(arm, dtype=np.intp))
    w = np.atleast_1d(np.asarray(weight, dtype=np.float64))
    n = X.shape[0]

    logits, cache = _forward_cache(params, X)
    p = softmax_transform(logits)
    g = p.copy()
    g[np.arange(n), arms] -= 1.0
    g *= w[:, None] / n

    a = params.arrays
    grad = params.zeros_like()
    if params.hidden == 0:
        grad.arrays["W"] = g.T @ X
        grad.arrays["b"] = g.sum(axis=0)
    else:
        pre, h = cache
        grad.arrays["W2"] = g.T @ h
        grad.arrays["b2"] = g.sum(axis=0)
        gh = (g @ a["W2"]) * (pre > 0)
        grad.arrays["W1"] = gh.T @ X
        grad.arrays["b1"] = gh.sum(axis=0)
    return grad


def sgd_step(params: ModelParameters, grad: GradientBundle, eta1: float) -> ModelParameters:
    out = params.copy()
    for name in params.names:
        if grad.arrays[name].shape != params.arrays[name].shape:
            raise InvalidInputError(f"gradient shape mismatch for {name}")
        out.arrays[name] -= eta1 * grad.arrays[name]
    return out


def batch_update(params: ModelParameters, xs, arms, weights, eta1: float):
    """One SGD step on the batch-mean gradient.

    All forward passes use the pre-update parameters.

    Returns
    -------
    (ModelParameters, float, int)
        Updated parameters, mean loss over the batch and the number of
        instances whose log argument had to be clamped.
    """
    X = np.atleast_2d(_check_x(params, xs))
    if X.shape[0] == 0:
        raise InvalidInputError("empty batch")
    arms = np.asarray(arms, dtype=np.intp)
    weights = np.asarray(weights, dtype=np.float64)
    _, probs = forward(params, X)
    picked = probs[np.arange(X.shape[0]), arms]
    active = weights > 0
    saturated = int(np.count_nonzero(active & (picked < LOG_CLAMP)))
    losses = np.where(active, -weights * np.log(np.maximum(picked, LOG_CLAMP)), 0.0)
    mean_loss = float(losses.mean())
    if not active.any():
        return params.copy(), mean_loss, saturated
    grad = bandit_ce_gradient(params, X, arms, weights)
    return sgd_step(params, grad, eta1), mean_loss, saturated


def write_snapshot(params: ModelParameters, path) -> None:
    """Line-oriented dump: ``name shape v0 v1 ...`` with row-major values."""
    lines = [f"# bccp-params d={params.n_features} K={params.n_classes} hidden={params.hidden}"]
    for name in params.names:
        arr = params.arrays[name]
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(" ".join([name, shape] + [repr(float(v)) for v in arr.ravel()]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path) -> ModelParameters:
    with open(path) as fh:
        header = fh.readline().split()
        meta = dict(tok.split("=") for tok in header[2:])
        params = ModelParameters(int(meta["d"]), int(meta["K"]), int(meta["hidden"]))
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            shape = tuple(int(s) for s in parts[1].split("x"))
            params.arrays[parts[0]] = np.array([float(v) for v in parts[2:]]).reshape(shape)
    return params
