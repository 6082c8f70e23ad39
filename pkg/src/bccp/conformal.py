"""Per-class online quantile tracking and its learning-rate ensemble.

Each class keeps a threshold that moves by stochastic subgradient steps on
the importance-weighted pinball loss. :class:`ExpertBank` runs one tracker
per learning rate and mixes them with exponential weights on their
accumulated losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_math import InvalidInputError, check_loss


@dataclass
class PredictionSet:
    members: frozenset
    scores: np.ndarray
    thresholds: np.ndarray

    def __len__(self):
        return len(self.members)

    def __contains__(self, k):
        return k in self.members


def predict_set(scores, thresholds) -> PredictionSet:
    """Keep class ``k`` iff ``scores[k] >= thresholds[k]``."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    if s.shape != t.shape:
        raise InvalidInputError("scores and thresholds must have equal length")
    return PredictionSet(frozenset(np.flatnonzero(s >= t).tolist()), s, t)


@dataclass
class QuantileBank:
    """One threshold per class, all starting at zero."""

    n_classes: int
    alpha: float
    eta2: float
    tau: np.ndarray = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInputError("alpha must be in (0, 1)")
        if self.eta2 <= 0:
            raise InvalidInputError("eta2 must be > 0")
        if self.tau is None:
            self.tau = np.zeros(self.n_classes)

    def thresholds(self) -> np.ndarray:
        return self.tau.copy()

    def step(self, k: int, s_k: float, delta_k: float) -> float:
        """In-place update of class ``k``; returns the applied increment."""
        if delta_k == 0.0:
            return 0.0
        tau = self.tau[k]
        inc = self.eta2 * delta_k * (self.alpha - (1.0 if s_k < tau else 0.0))
        self.tau[k] = tau + inc
        return inc


def quantile_step(bank: QuantileBank, k: int, s_k: float, delta_k: float) -> QuantileBank:
    """Functional form of :meth:`QuantileBank.step`."""
    out = QuantileBank(bank.n_classes, bank.alpha, bank.eta2, bank.tau.copy())
    out.step(k, s_k, delta_k)
    return out


@dataclass
class ExpertBank:
    """Thresholds ``taus[j, k]`` for each expert ``j`` (one learning rate each).

    ``losses[j, k]`` accumulates the weighted pinball loss of expert ``j`` on
    class ``k``, evaluated at its threshold *before* each update. ``t`` counts
    processed instances; expert weights are ``exp(-losses / sqrt(t + 1))``.
    """

    n_classes: int
    alpha: float
    rates: np.ndarray
    taus: np.ndarray = None
    losses: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if self.rates.ndim != 1 or self.rates.size < 2:
            raise InvalidInputError("need at least two experts")
        if np.any(self.rates <= 0):
            raise InvalidInputError("expert learning rates must be > 0")
        if not 0 < self.alpha < 1:
            raise InvalidInputError("alpha must be in (0, 1)")
        shape = (self.rates.size, self.n_classes)
        if self.taus is None:
            self.taus = np.zeros(shape)
        if self.losses is None:
            self.losses = np.zeros(shape)

    @property
    def n_experts(self) -> int:
        return self.rates.size

    def copy(self) -> "ExpertBank":
        return ExpertBank(self.n_classes, self.alpha, self.rates.copy(),
                          self.taus.copy(), self.losses.copy(), self.t)

    def weights(self) -> np.ndarray:
        """Normalised expert weights, shape ``(J, K)``."""
        L = self.losses - self.losses.min(axis=0, keepdims=True)
        w = np.exp(-L / math.sqrt(self.t + 1))
        return w / w.sum(axis=0, keepdims=True)

    def aggregate(self) -> np.ndarray:
        """Weighted threshold per class, shape ``(K,)``."""
        agg = (self.weights() * self.taus).sum(axis=0)
        # rounding can push a convex combination a hair outside its hull
        return np.clip(agg, self.taus.min(axis=0), self.taus.max(axis=0))

    thresholds = aggregate

    def step(self, k: int, s_k: float, delta_k: float) -> None:
        """Process one instance whose only nonzero weight sits on class ``k``.

        Losses accrue at the pre-update thresholds, then every expert takes
        its own subgradient step; the instance counter always advances.
        """
        if delta_k != 0.0:
            col = self.taus[:, k]
            below = s_k < col
            self.losses[:, k] += delta_k * (s_k - col) * (self.alpha - below)
            self.taus[:, k] = col + self.rates * delta_k * (self.alpha - below)
        self.t += 1


def expert_weights(bank: ExpertBank, k: int) -> np.ndarray:
    return bank.weights()[:, k]


def aggregate_quantile(bank: ExpertBank, k: int) -> float:
    return float(bank.aggregate()[k])


def expert_step(bank: ExpertBank, k: int, s_k: float, delta_k: float, alpha=None) -> ExpertBank:
    """Functional form of :meth:`ExpertBank.step`."""
    if alpha is not None and alpha != bank.alpha:
        raise InvalidInputError("alpha is fixed for the bank's lifetime")
    out = bank.copy()
    out.step(k, s_k, delta_k)
    return out


def realized_check_loss(s: float, tau: float, alpha: float, delta: float) -> float:
    return delta * check_loss(s, tau, alpha) if delta else 0.0


@dataclass
class ThresholdTrace:
    """Per-instance record of thresholds, written as ``t,class,tau,tau_bar`` rows."""

    rows: list = field(default_factory=list)

    def add(self, t: int, tau, tau_bar) -> None:
        for k in range(len(tau)):
            self.rows.append((t, k + 1, float(tau[k]), float(tau_bar[k])))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,class,tau,tau_bar\n")
            for t, k, a, b in self.rows:
                fh.write(f"{t},{k},{a!r},{b!r}\n")
