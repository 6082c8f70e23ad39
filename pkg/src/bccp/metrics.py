"""Accumulative coverage metrics and finite-sample diagnostics.

Classes with no observations yet are reported as absent (``None``), never
as zero coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_math import InvalidInputError, check_loss


@dataclass
class CoverageAccumulator:
    """Running counts behind the accumulative metrics."""

    n_classes: int
    covered: np.ndarray = None
    total: np.ndarray = None
    arm_correct: np.ndarray = None
    arm_total: np.ndarray = None
    set_size_sum: int = 0
    instances: int = 0
    ce_loss_sum: float = 0.0

    def __post_init__(self):
        K = self.n_classes
        for name in ("covered", "total", "arm_correct", "arm_total"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(K, dtype=np.int64))

    def record(self, y: int, covered: bool, set_size: int, arm: int | None = None) -> None:
        self.total[y] += 1
        if covered:
            self.covered[y] += 1
        self.set_size_sum += set_size
        self.instances += 1
        if arm is not None:
            self.arm_total[arm] += 1
            if arm == y:
                self.arm_correct[y] += 1

    def add_loss(self, loss_sum: float) -> None:
        self.ce_loss_sum += loss_sum

    def class_coverage(self) -> list:
        return [None if n == 0 else c / n for c, n in zip(self.covered.tolist(), self.total.tolist())]

    def acum_size(self):
        return None if self.instances == 0 else self.set_size_sum / self.instances

    def acum_ce_loss(self):
        return None if self.instances == 0 else self.ce_loss_sum / self.instances

    def arm_accuracy(self) -> list:
        """Fraction of class-``k`` instances on which the pulled arm was right."""
        return [None if n == 0 else c / n for c, n in zip(self.arm_correct.tolist(), self.total.tolist())]


def record_step(acc: CoverageAccumulator, prediction_set, y: int, arm=None,
                ce_loss: float = 0.0, set_size=None) -> CoverageAccumulator:
    """Fold one instance into the accumulator (in place) and return it."""
    if not 0 <= y < acc.n_classes:
        raise InvalidInputError(f"label {y} out of range")
    if set_size is None:
        set_size = len(prediction_set)
    acc.record(y, y in prediction_set, set_size, arm)
    acc.add_loss(ce_loss)
    return acc


def acum_cvg_extrema(acc: CoverageAccumulator):
    """(min, max) of per-class accumulative coverage over observed classes."""
    seen = [c for c in acc.class_coverage() if c is not None]
    if not seen:
        return None, None
    return min(seen), max(seen)


def coverage_gap(alpha: float, missed: int, n_k: int):
    """``|alpha - missed / n_k|``; ``None`` when the class was never seen."""
    if n_k == 0:
        return None
    return abs(alpha - missed / n_k)


def oracle_tau_star(scores, alpha: float) -> float:
    """Smallest minimiser of ``tau -> sum_i check_loss(s_i, tau, alpha)``.

    That is the ``max(1, ceil(alpha * n))``-th smallest score.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise InvalidInputError("need at least one score")
    m = max(1, math.ceil(alpha * s.size - 1e-12))
    return float(s[m - 1])


def zeta(c_k: float, sum_b: float, delta: float) -> float:
    """Bernstein-type deviation term ``2/(3c) log(2/delta) + sqrt(2 log(2/delta) sum_b)``."""
    lg = math.log(2.0 / delta)
    return 2.0 / (3.0 * c_k) * lg + math.sqrt(2.0 * lg * sum_b)


def thm1_bound(n_k: int, eta2: float, tau_T: float, c_k: float, sum_b: float,
               delta: float, n_classes: int):
    """High-probability ceiling on the class-``k`` coverage gap.

    ``|tau_T| / (eta2 * n_k) + zeta(c_k, sum_b, delta / K) / n_k``. Returns
    ``None`` when the class was never seen or the floor ``c_k`` is unknown.
    """
    if n_k == 0 or not c_k or sum_b is None:
        return None
    return abs(tau_T) / (eta2 * n_k) + zeta(c_k, sum_b, delta / n_classes) / n_k


def expert_regret_bound(c_k: float, T: int, n_experts: int) -> float:
    return 1.0 / (4.0 * c_k ** 2 * math.sqrt(T)) + 2.0 * math.log(n_experts) / math.sqrt(T)


@dataclass
class TheoremDiagnostics:
    """Per-class quantities accumulated online for the finite-sample checks.

    ``signed_sum[k]`` is ``sum_t delta_tk * (alpha - 1{s < tau})`` (shape
    ``(J, K)`` for the expert ensemble); ``bandit_loss[k]`` the weighted
    pinball loss of the deployed threshold; ``score_log[k]`` the class-``k``
    scores of instances whose label was ``k``.
    """

    n_classes: int
    alpha: float
    delta_conf: float = 0.1
    c_k: float = 0.0
    b_k: np.ndarray | None = None
    log_scores: bool = True
    signed_sum: np.ndarray = None
    bandit_loss: np.ndarray = None
    missed: np.ndarray = None
    score_log: list = field(default_factory=list)

    def __post_init__(self):
        K = self.n_classes
        if self.bandit_loss is None:
            self.bandit_loss = np.zeros(K)
        if self.missed is None:
            self.missed = np.zeros(K, dtype=np.int64)
        if not self.score_log:
            self.score_log = [[] for _ in range(K)]

    def realized_check_loss_star(self, k: int, tau_star: float) -> float:
        s = np.asarray(self.score_log[k])
        return float(np.sum(check_loss(s, tau_star, self.alpha))) if s.size else 0.0


def bandit_regret(diag: TheoremDiagnostics, k: int, T: int):
    """Realised check-loss regret of the deployed class-``k`` threshold.

    Compares the accumulated weighted loss against the best fixed threshold
    in hindsight on the logged true-class scores. ``None`` when scores were
    not logged.
    """
    if not diag.log_scores:
        return None
    scores = diag.score_log[k]
    if not scores:
        return float(diag.bandit_loss[k]) / T
    tau_star = oracle_tau_star(scores, diag.alpha)
    return (float(diag.bandit_loss[k]) - diag.realized_check_loss_star(k, tau_star)) / T


@dataclass
class RunSummary:
    """Everything one seeded run reports."""

    seed: int
    config_hash: str
    n_classes: int
    series: dict
    scalars: dict
    accumulator: CoverageAccumulator | None = None
    diagnostics: TheoremDiagnostics | None = None
    tau_final: np.ndarray | None = None
    bank: object = None
    trace: object = None
    params: object = None

    def columns(self) -> list[str]:
        return (["step", "acum_cvg_min", "acum_cvg_max", "acum_size", "cum_ce_loss"]
                + [f"cvg_class_{k + 1}" for k in range(self.n_classes)])

    def write_metrics(self, path) -> None:
        write_series(path, self.columns(), self.series)

    def write_summary(self, path) -> None:
        write_key_values(path, self.scalars)


def fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def write_series(path, columns, series) -> None:
    n = len(series[columns[0]])
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for i in range(n):
            fh.write(",".join(fmt(series[c][i]) for c in columns) + "\n")


def read_series(path) -> dict:
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
        out = {c: [] for c in cols}
        for line in fh:
            for c, v in zip(cols, line.strip().split(",")):
                out[c].append(None if v == "NA" else float(v))
    return out


def write_key_values(path, values: dict) -> None:
    with open(path, "w") as fh:
        for key, v in values.items():
            fh.write(f"{key}={fmt(v)}\n")


def read_key_values(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            out[key] = _parse_scalar(raw)
    return out


def _parse_scalar(raw: str):
    if raw == "NA":
        return None
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw
