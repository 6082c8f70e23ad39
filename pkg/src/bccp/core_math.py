"""Simplex utilities, conformity scores and the check (pinball) loss.

Scores follow the convention that a *larger* conformity score means the
observation looks more like the class, so prediction sets keep every class
whose score reaches its threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCORE_KINDS = ("softmax", "aps", "raps")

# Plain float64 arrays with a trailing class axis of length K >= 2.
# A ProbVector lies on the simplex (checked by validate_probs); a
# ScoreVector holds one conformity score per class.
ProbVector = np.ndarray
ScoreVector = np.ndarray


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


def softmax_transform(logits) -> ProbVector:
    """Map logits to the probability simplex.

    Works on a single vector of shape ``(K,)`` or a batch ``(n, K)``; the
    maximum is subtracted row-wise before exponentiating.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise InvalidInputError("need at least two classes")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def validate_probs(probs, atol: float = 1e-9) -> ProbVector:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1] < 2:
        raise InvalidInputError("probability vector needs K >= 2 entries")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise InvalidInputError("probabilities must sum to 1")
    return p


@dataclass(frozen=True)
class ScoreSpec:
    """Which conformity score to use.

    ``lam`` and ``k_reg`` only matter for RAPS, where classes ranked beyond
    ``k_reg`` pay ``lam`` per extra rank.
    """

    kind: str = "raps"
    lam: float = 0.01
    k_reg: int = 1

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise InvalidInputError(f"unknown score kind {self.kind!r}")
        if self.lam < 0:
            raise InvalidInputError("lam must be >= 0")
        if self.k_reg < 1:
            raise InvalidInputError("k_reg must be >= 1")

    def bounds(self, n_classes: int) -> tuple[float, float]:
        """Range every score of this family falls in."""
        if self.kind == "raps":
            return -self.lam * max(0, n_classes - self.k_reg), 1.0
        return 0.0, 1.0


def _descending_ranks(p: np.ndarray) -> np.ndarray:
    # stable sort on -p keeps ascending class index among ties
    return np.argsort(-p, axis=-1, kind="stable")


def score_all(probs: ProbVector, u, spec: ScoreSpec) -> ScoreVector:
    """Conformity score of every class.

    Parameters
    ----------
    probs : array_like, shape (K,) or (n, K)
        Estimated class probabilities.
    u : float or array_like, shape () or (n,)
        Uniform randomisation draw, one per instance and shared across its
        classes. Ignored by the softmax score.
    spec : ScoreSpec

    Returns
    -------
    np.ndarray
        Same shape as ``probs``.

    Notes
    -----
    For APS, classes are ordered by decreasing probability (ties by class
    index); the class at rank ``r`` scores
    ``1 - sum(p of ranks < r) - u * p_r``. RAPS further subtracts
    ``lam * max(0, r - k_reg)``.
    """
    p = np.asarray(probs, dtype=np.float64)
    if spec.kind == "softmax":
        return p.copy()

    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(u_arr < 0) or np.any(u_arr > 1) or not np.all(np.isfinite(u_arr)):
        raise InvalidInputError("u must lie in [0, 1]")

    squeeze = p.ndim == 1
    p2 = np.atleast_2d(p)
    u2 = np.broadcast_to(u_arr, (p2.shape[0],)) if u_arr.ndim == 0 else u_arr.reshape(-1)
    if u2.shape[0] != p2.shape[0]:
        raise InvalidInputError("one u draw per instance is required")

    order = _descending_ranks(p2)
    p_sorted = np.take_along_axis(p2, order, axis=1)
    before = np.cumsum(p_sorted, axis=1) - p_sorted
    sorted_scores = 1.0 - before - u2[:, None] * p_sorted
    if spec.kind == "raps":
        rank = np.arange(1, p2.shape[1] + 1)
        sorted_scores = sorted_scores - spec.lam * np.maximum(0, rank - spec.k_reg)

    scores = np.empty_like(p2)
    np.put_along_axis(scores, order, sorted_scores, axis=1)
    return scores[0] if squeeze else scores


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")


def check_loss(s, tau, alpha: float):
    """Pinball loss ``(s - tau) * (alpha - 1{s < tau})``; vectorises over s and tau."""
    _check_alpha(alpha)
    s_arr = np.asarray(s, dtype=np.float64)
    tau_arr = np.asarray(tau, dtype=np.float64)
    out = (s_arr - tau_arr) * (alpha - (s_arr < tau_arr))
    return float(out) if out.ndim == 0 else out


def check_subgradient(s: float, tau: float, alpha: float) -> float:
    """Subgradient in ``tau`` of :func:`check_loss`, with ``s == tau`` counted as ``s >= tau``."""
    _check_alpha(alpha)
    if not (math.isfinite(s) and math.isfinite(tau)):
        raise InvalidInputError("s and tau must be finite")
    return -(alpha - (1.0 if s < tau else 0.0))


def split_conformal_threshold(scores, alpha: float) -> float:
    """Offline class-wise threshold from a labelled calibration sample.

    Returns the ``(floor(n * alpha) + 1)``-th smallest score, the usual
    split-conformal choice for a lower score threshold. Used as a baseline
    for the online trackers.
    """
    _check_alpha(alpha)
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise InvalidInputError("need at least one calibration score")
    idx = min(int(math.floor(s.size * alpha)), s.size - 1)
    return float(s[idx])
