"""Arm-pulling policies and the importance-weighted label indicator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import InvalidInputError

POLICY_KINDS = ("uniform", "softmax", "bayes_oracle", "label_oracle")


@dataclass(frozen=True)
class PolicySpec:
    """Policy family plus an exploration floor.

    With ``floor = eps`` the base distribution is mixed as
    ``(1 - K*eps) * pi + eps``, so every arm has probability at least ``eps``.
    ``bayes_oracle`` needs the true posterior (synthetic data only) and
    ``label_oracle`` puts all mass on the hidden label; both exist for tests.
    """

    kind: str = "softmax"
    floor: float = 0.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise InvalidInputError(f"unknown policy {self.kind!r}")
        if self.floor < 0:
            raise InvalidInputError("floor must be >= 0")

    def min_prob(self, n_classes: int) -> float:
        """Guaranteed lower bound on every arm probability (0 when none)."""
        if self.kind == "uniform":
            return 1.0 / n_classes
        return self.floor


def policy_probs(spec: PolicySpec, n_classes: int, model_probs=None,
                 true_posterior=None, labels=None) -> np.ndarray:
    """Arm distribution for one instance ``(K,)`` or a batch ``(n, K)``.

    ``model_probs`` feeds the softmax policy, ``true_posterior`` the Bayes
    oracle and ``labels`` the label oracle.
    """
    K = n_classes
    if spec.floor > 1.0 / K:
        raise InvalidInputError(f"floor must be <= 1/K = {1.0 / K}")

    if spec.kind == "uniform":
        ref = model_probs if model_probs is not None else true_posterior
        shape = (K,) if ref is None else np.shape(ref)
        return np.full(shape, 1.0 / K)
    if spec.kind == "softmax":
        if model_probs is None:
            raise InvalidInputError("softmax policy needs the model posterior")
        pi = np.array(model_probs, dtype=np.float64)
    elif spec.kind == "bayes_oracle":
        if true_posterior is None:
            raise InvalidInputError("bayes_oracle policy needs the true posterior")
        pi = np.array(true_posterior, dtype=np.float64)
    else:
        if labels is None:
            raise InvalidInputError("label_oracle policy needs the labels")
        lab = np.asarray(labels, dtype=np.intp)
        pi = np.zeros(lab.shape + (K,))
        np.put_along_axis(pi, lab[..., None], 1.0, axis=-1)

    if pi.shape[-1] != K:
        raise InvalidInputError("context has the wrong number of classes")
    if spec.floor > 0:
        pi = (1.0 - K * spec.floor) * pi + spec.floor
    return pi


def sample_arm(pi, rng) -> np.ndarray | int:
    """Inverse-CDF draw over ascending class index, one uniform per row."""
    p = np.asarray(pi, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    u = rng.random(p2.shape[0])
    cdf = np.cumsum(p2, axis=1)
    arms = (cdf <= u[:, None]).sum(axis=1)
    # guard against cdf[-1] < u from rounding
    arms = np.minimum(arms, p2.shape[1] - 1)
    # never land on a zero-probability arm because of the guard above
    bad = p2[np.arange(p2.shape[0]), arms] == 0
    if bad.any():
        for i in np.flatnonzero(bad):
            arms[i] = np.flatnonzero(p2[i] > 0)[-1]
    return int(arms[0]) if single else arms


@dataclass(frozen=True)
class DeltaEstimate:
    """Unbiased estimate of the one-hot label vector from a single pull.

    Only the pulled arm can be nonzero: ``weight = 1{correct} / pi[arm]``.
    """

    arm: int
    weight: float
    n_classes: int

    def __getitem__(self, k: int) -> float:
        return self.weight if k == self.arm else 0.0

    def __array__(self, dtype=None, copy=None):
        out = np.zeros(self.n_classes, dtype=dtype or np.float64)
        out[self.arm] = self.weight
        return out


def delta_from_feedback(arm: int, correct: bool, pi) -> DeltaEstimate:
    p = float(pi[arm])
    if p <= 0.0:
        raise InvalidInputError(f"arm {arm} has zero probability under the policy")
    return DeltaEstimate(int(arm), (1.0 / p) if correct else 0.0, len(pi))


def delta_weights(arms, labels, pi) -> np.ndarray:
    """Batch form of :func:`delta_from_feedback`: the weight at each pulled arm."""
    arms = np.asarray(arms, dtype=np.intp)
    picked = np.asarray(pi)[np.arange(arms.shape[0]), arms]
    if np.any(picked <= 0):
        raise InvalidInputError("pulled an arm with zero probability")
    correct = arms == np.asarray(labels)
    return np.where(correct, 1.0 / picked, 0.0)
