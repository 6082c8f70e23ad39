"""Online loop, replication and learning-rate sweeps.

Within a batch, the model state is frozen at the batch start: it supplies the
scores, the policy and hence the arm draws for every instance. Thresholds
are then processed instance by instance, so each prediction set uses the
thresholds left by the previous instance and is followed by that instance's
threshold update. The model takes one mean-gradient step at the end of the
batch.

``T`` counts instances, not batches.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import statistics
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .conformal import ExpertBank, QuantileBank, ThresholdTrace
from .core_math import InvalidInputError, ScoreSpec, score_all
from .datastream import ArraySource, GaussianMixtureSource, GaussianMixtureSpec, load_file
from .metrics import (
    CoverageAccumulator,
    RunSummary,
    TheoremDiagnostics,
    acum_cvg_extrema,
    bandit_regret,
    coverage_gap,
    expert_regret_bound,
    thm1_bound,
    write_key_values,
    write_series,
)
from .model import batch_update, forward, init_params
from .policy import PolicySpec, policy_probs, sample_arm

log = logging.getLogger(__name__)

DEFAULT_ETA2_GRID = (0.1, 0.01, 0.001, 0.0001)


class ConfigError(InvalidInputError):
    """Bad configuration key or value."""


class RunError(RuntimeError):
    """A run aborted; the message names the failing instance."""


@dataclass
class RunConfig:
    algorithm: str = "alg1"
    alpha: float = 0.05
    eta1: float = 1e-4
    eta2: float = 0.01
    eta2_grid: tuple = DEFAULT_ETA2_GRID
    score: str = "raps"
    lam: float = 0.01
    k_reg: int = 1
    policy: str = "softmax"
    floor: float = 0.0
    data: str = "gm"
    gm_classes: int = 3
    gm_features: int = 4
    gm_separation: float = 3.0
    gm_sigma: float = 1.0
    file_classes: int = 0
    file_header: bool = False
    hidden: int = 0
    optimizer: str = "sgd"
    T: int = 100_000
    batch_size: int = 256
    replications: int = 5
    seed: int = 0
    log_every: int = 1
    score_log: bool = True
    delta_conf: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        if self.algorithm not in ("alg1", "alg2"):
            bad("algorithm", "must be alg1 or alg2")
        if not 0 < self.alpha < 1:
            bad("alpha", "must be in (0, 1)")
        if self.eta1 < 0:
            bad("eta1", "must be >= 0")
        if self.eta2 <= 0:
            bad("eta2", "must be > 0")
        self.eta2_grid = tuple(float(v) for v in self.eta2_grid)
        if not self.eta2_grid or any(v <= 0 for v in self.eta2_grid):
            bad("eta2_grid", "must be a nonempty list of positive rates")
        if self.algorithm == "alg2" and len(self.eta2_grid) < 2:
            bad("eta2_grid", "the expert ensemble needs at least two rates")
        if self.score not in ("softmax", "aps", "raps"):
            bad("score", "must be softmax, aps or raps")
        if self.lam < 0:
            bad("lam", "must be >= 0")
        if self.k_reg < 1:
            bad("k_reg", "must be >= 1")
        if self.policy not in ("uniform", "softmax", "bayes_oracle", "label_oracle"):
            bad("policy", "must be uniform, softmax, bayes_oracle or label_oracle")
        if self.floor < 0:
            bad("floor", "must be >= 0")
        if self.data != "gm" and not self.data.startswith("file:"):
            bad("data", "must be gm or file:PATH")
        if self.policy == "bayes_oracle" and self.data != "gm":
            bad("policy", "bayes_oracle needs the synthetic mixture")
        if self.optimizer != "sgd":
            bad("optimizer", "only sgd is implemented")
        for key in ("T", "batch_size", "replications", "log_every", "gm_classes", "gm_features"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if self.gm_classes < 2:
            bad("gm_classes", "must be >= 2")
        if self.hidden < 0:
            bad("hidden", "must be >= 0")
        if self.gm_sigma <= 0:
            bad("gm_sigma", "must be > 0")
        if not 0 < self.delta_conf < 1:
            bad("delta_conf", "must be in (0, 1)")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def canonical(self) -> str:
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            parts.append(f"{f.name}={v!r}" if not isinstance(v, str) else f"{f.name}={v}")
        return "\n".join(parts)

    def hash(self) -> str:
        """Digest of every setting except the seed."""
        text = "\n".join(l for l in self.canonical().splitlines() if not l.startswith("seed="))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_ALIASES = {
    "lambda": "lam", "kreg": "k_reg", "batch": "batch_size", "reps": "replications",
    "n_classes": "gm_classes",
}
_POLICY_ALIASES = {"bayes": "bayes_oracle", "label-oracle": "label_oracle"}


def _convert(key: str, raw, ftype):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
        if ftype in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype in ("tuple", tuple):
            return tuple(float(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None
    return raw


def normalize_key(key: str) -> str:
    key = key.strip().lstrip("-").replace("-", "_")
    return _ALIASES.get(key, key)


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Resolve a :class:`RunConfig` from a ``key=value`` file plus overrides.

    Overrides (e.g. from command-line flags) win over file values; unset
    keys keep their defaults. Unknown keys are rejected.
    """
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}

    def put(key, raw):
        name = normalize_key(key)
        if name not in types:
            raise ConfigError(f"{key}: unknown configuration key")
        if name == "policy" and isinstance(raw, str):
            raw = _POLICY_ALIASES.get(raw.strip(), raw.strip())
        values[name] = _convert(name, raw, types[name])

    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ConfigError(f"line {lineno}: expected key=value")
                key, _, raw = text.partition("=")
                put(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is not None:
            put(key, raw)
    return RunConfig(**values)


class LabelGuard:
    """Hands out the hidden labels only to named call sites.

    The loop reads labels for feedback and metrics; oracle policies are the
    only other consumer. ``audit`` records every access for inspection.
    """

    ALLOWED = frozenset({"feedback", "metrics", "oracle"})

    def __init__(self, labels, audit: list | None = None):
        self._labels = labels
        self._audit = audit

    def reveal(self, site: str):
        if site not in self.ALLOWED:
            raise RunError(f"label access from disallowed site {site!r}")
        if self._audit is not None:
            self._audit.append(site)
        return self._labels


def _seed_streams(seed: int):
    names = ("data", "arm", "u", "init", "shuffle")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_source(config: RunConfig, rngs):
    if config.data == "gm":
        spec = GaussianMixtureSpec.separated(
            config.gm_classes, config.gm_features, config.gm_separation, config.gm_sigma
        )
        return GaussianMixtureSource(spec, rngs["data"])
    path = config.data[len("file:"):]
    xs, ys = load_file(path, n_classes=config.file_classes or None, header=config.file_header)
    K = config.file_classes or int(ys.max()) + 1
    return ArraySource(xs, ys, K, rngs["shuffle"])


def _policy_constants(config: RunConfig, source, n_classes: int):
    """Arm-probability floor and closed-form ``E[1{Y=k}/pi_k]`` when known."""
    spec = PolicySpec(config.policy, config.floor)
    c_k = spec.min_prob(n_classes)
    b_k = None
    if config.data == "gm":
        if config.policy == "uniform":
            b_k = n_classes * source.spec.priors
        elif config.policy == "bayes_oracle" and config.floor == 0.0:
            b_k = np.ones(n_classes)
    return c_k, b_k


def run_online(config: RunConfig, seed: int | None = None, trace: bool = False,
               label_audit: list | None = None) -> RunSummary:
    """Run one seeded online pass of ``config.T`` instances."""
    seed = config.seed if seed is None else seed
    rngs = _seed_streams(seed)
    source = build_source(config, rngs)
    K = source.n_classes
    score_spec = ScoreSpec(config.score, config.lam, config.k_reg)
    policy_spec = PolicySpec(config.policy, config.floor)
    alpha = config.alpha
    params = init_params(source.n_features, K, config.hidden, rngs["init"])

    if config.algorithm == "alg1":
        bank = QuantileBank(K, alpha, config.eta2)
        signed = np.zeros(K)
    else:
        bank = ExpertBank(K, alpha, np.array(config.eta2_grid))
        signed = np.zeros((bank.n_experts, K))
    c_k, b_k = _policy_constants(config, source, K)
    diag = TheoremDiagnostics(K, alpha, config.delta_conf, c_k, b_k, config.score_log)
    diag.signed_sum = signed
    acc = CoverageAccumulator(K)
    thr_trace = ThresholdTrace() if trace else None
    columns = (["step", "acum_cvg_min", "acum_cvg_max", "acum_size", "cum_ce_loss"]
               + [f"cvg_class_{k + 1}" for k in range(K)])
    series = {c: [] for c in columns}
    saturated = 0

    def snapshot(step):
        lo, hi = acum_cvg_extrema(acc)
        row = [step, lo, hi, acc.acum_size(), acc.acum_ce_loss()] + acc.class_coverage()
        for c, v in zip(columns, row):
            series[c].append(v)

    t, b_index = 0, 0
    is_alg1 = config.algorithm == "alg1"
    while t < config.T:
        n = min(config.batch_size, config.T - t)
        batch = source.next_batch(b_index, n)
        guard = LabelGuard(batch.ys, label_audit)
        batch.ys = None
        xs = batch.xs
        try:
            _, probs = forward(params, xs)
            scores = score_all(probs, rngs["u"].random(n), score_spec)
            if policy_spec.kind == "bayes_oracle":
                pi = policy_probs(policy_spec, K, true_posterior=source.posterior(xs))
            elif policy_spec.kind == "label_oracle":
                pi = policy_probs(policy_spec, K, labels=guard.reveal("oracle"))
            else:
                pi = policy_probs(policy_spec, K, model_probs=probs)
            arms = sample_arm(pi, rngs["arm"])
            picked = pi[np.arange(n), arms]
            if np.any(picked <= 0):
                raise InvalidInputError("pulled an arm with zero probability")
            correct = arms == guard.reveal("feedback")
            weights = np.where(correct, 1.0 / picked, 0.0)
        except InvalidInputError as exc:
            raise RunError(f"instance {t + 1}: {exc}") from exc

        ys = guard.reveal("metrics")
        for i in range(n):
            s_i = scores[i]
            thr = bank.tau if is_alg1 else bank.aggregate()
            members = s_i >= thr
            y = int(ys[i])
            a = int(arms[i])
            acc.record(y, bool(members[y]), int(members.sum()), a)
            if not members[y]:
                diag.missed[y] += 1
            if diag.log_scores:
                diag.score_log[y].append(float(s_i[y]))
            w = float(weights[i])
            if w:
                s = float(s_i[a])
                if is_alg1:
                    tau = float(bank.tau[a])
                    g = alpha - (1.0 if s < tau else 0.0)
                    signed[a] += w * g
                    diag.bandit_loss[a] += w * (s - tau) * g
                else:
                    tau = float(thr[a])
                    g = alpha - (1.0 if s < tau else 0.0)
                    diag.bandit_loss[a] += w * (s - tau) * g
                    signed[:, a] += w * (alpha - (s < bank.taus[:, a]))
            bank.step(a, float(s_i[a]), w)
            if thr_trace is not None:
                if is_alg1:
                    thr_trace.add(t + i + 1, bank.tau, bank.tau)
                else:
                    best = bank.weights().argmax(axis=0)
                    thr_trace.add(t + i + 1, bank.taus[best, np.arange(K)], bank.aggregate())

        params, mean_loss, sat = batch_update(params, xs, arms, weights, config.eta1)
        acc.add_loss(mean_loss * n)
        saturated += sat
        t += n
        b_index += 1
        if b_index % config.log_every == 0 or t >= config.T:
            snapshot(t)

    tau_final = bank.tau.copy() if is_alg1 else bank.aggregate()
    scalars = _summary_scalars(config, seed, K, acc, diag, bank, tau_final, saturated)
    summary = RunSummary(seed, config.hash(), K, series, scalars, acc, diag, tau_final,
                         bank, thr_trace)
    summary.params = params
    return summary


def _summary_scalars(config, seed, K, acc, diag, bank, tau_final, saturated) -> dict:
    T = acc.instances
    lo, hi = acum_cvg_extrema(acc)
    out = {
        "seed": seed,
        "config_hash": config.hash(),
        "algorithm": config.algorithm,
        "T": T,
        "n_classes": K,
        "acum_cvg_min": lo,
        "acum_cvg_max": hi,
        "acum_size": acc.acum_size(),
        "cum_ce_loss": acc.acum_ce_loss(),
        "saturated": saturated,
        "c_k": diag.c_k or None,
    }
    cvg = acc.class_coverage()
    arm_acc = acc.arm_accuracy()
    for k in range(K):
        j = k + 1
        n_k = int(acc.total[k])
        out[f"T_{j}"] = n_k
        out[f"cvg_{j}"] = cvg[k]
        out[f"arm_acc_{j}"] = arm_acc[k]
        out[f"cvg_gap_{j}"] = coverage_gap(config.alpha, int(diag.missed[k]), n_k)
        out[f"regret_{j}"] = bandit_regret(diag, k, T)
        out[f"tau_final_{j}"] = float(tau_final[k])
        if config.algorithm == "alg1":
            sum_b = None if diag.b_k is None else float(diag.b_k[k]) * T
            out[f"thm1_bound_{j}"] = thm1_bound(n_k, config.eta2, float(tau_final[k]),
                                                diag.c_k, sum_b, diag.delta_conf, K)
        else:
            lhs = (float(diag.bandit_loss[k]) - float(bank.losses[:, k].min())) / T
            out[f"expert_regret_{j}"] = lhs
    if config.algorithm == "alg2" and diag.c_k:
        out["expert_regret_bound"] = expert_regret_bound(diag.c_k, T, bank.n_experts)
    return out


# ---------------------------------------------------------------- replication

def write_run(summary: RunSummary, out_dir, tag: str) -> list[Path]:
    """Write the metrics, summary and (if recorded) trace files; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"metrics_{tag}.csv", out / f"summary_{tag}.txt"]
    summary.write_metrics(paths[0])
    summary.write_summary(paths[1])
    if summary.trace is not None:
        paths.append(out / f"trace_{tag}.csv")
        summary.trace.write(paths[2])
    return paths


def _mean_std(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return None, None
    mean = statistics.fmean(vals)
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return mean, std


def aggregate(summaries: list[RunSummary]) -> dict:
    """Mean and stdev per series entry and per numeric summary value.

    Runs are ordered by seed first, so the result does not depend on the
    order in which they finished.
    """
    runs = sorted(summaries, key=lambda s: s.seed)
    cols = runs[0].columns()
    series = {"step": list(runs[0].series["step"])}
    for c in cols[1:]:
        for stat in ("mean", "std"):
            series[f"{c}_{stat}"] = []
        for i in range(len(series["step"])):
            m, s = _mean_std([r.series[c][i] for r in runs])
            series[f"{c}_mean"].append(m)
            series[f"{c}_std"].append(s)
    scalars = {"runs": len(runs), "seeds": ";".join(str(r.seed) for r in runs)}
    for key, v in runs[0].scalars.items():
        if key == "seed" or isinstance(v, str):
            continue
        m, s = _mean_std([r.scalars.get(key) for r in runs])
        scalars[f"{key}_mean"] = m
        scalars[f"{key}_std"] = s
    return {"series": series, "scalars": scalars}


@dataclass
class RunHandle:
    """Bookkeeping for one replication: where its files went and how it ended."""

    run_id: str
    seed: int
    paths: tuple = ()
    status: str = "pending"
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "done"


def replicate(config: RunConfig, out_dir=None, trace: bool = False):
    """Run ``config.replications`` seeds (``seed + r``) and aggregate.

    A failing replication is logged and skipped; the aggregate covers the
    completed runs. Returns ``(summaries, aggregate, handles)`` with one
    :class:`RunHandle` per replication, failed ones included.
    """
    summaries, handles = [], []
    for r in range(config.replications):
        handle = RunHandle(f"rep{r}", config.seed + r)
        handles.append(handle)
        try:
            summ = run_online(config, seed=handle.seed, trace=trace)
        except (RunError, InvalidInputError) as exc:
            log.error("replication %d (seed %d) failed: %s", r, handle.seed, exc)
            handle.status, handle.error = "failed", str(exc)
            continue
        summaries.append(summ)
        if out_dir is not None:
            handle.paths = tuple(write_run(summ, out_dir, handle.run_id))
        handle.status = "done"
    if not summaries:
        raise RunError("every replication failed: " + "; ".join(h.error for h in handles))
    agg = aggregate(summaries)
    if out_dir is not None:
        cols = list(agg["series"].keys())
        write_series(Path(out_dir) / "aggregate.csv", cols, agg["series"])
        write_key_values(Path(out_dir) / "aggregate_summary.txt", agg["scalars"])
    return summaries, agg, handles


def band_entry_step(series: dict, target: float, band: float):
    """First logged step at which both coverage extrema lie within ``target +- band``."""
    for step, lo, hi in zip(series["step"], series["acum_cvg_min"], series["acum_cvg_max"]):
        if lo is None or hi is None:
            continue
        if abs(lo - target) <= band and abs(hi - target) <= band:
            return int(step)
    return None


def size_oscillation(series: dict) -> float:
    """Stdev of the accumulative set size over the second half of the log."""
    sizes = [v for v in series["acum_size"] if v is not None]
    tail = sizes[len(sizes) // 2:]
    return statistics.pstdev(tail) if len(tail) > 1 else 0.0


def sweep_eta2(config: RunConfig, grid=None, out_dir=None, band: float = 0.02):
    """Replicate the single-rate algorithm once per learning rate.

    Returns a list of table rows (one per rate): final coverage extrema and
    set size averaged over replications, the mean step at which coverage
    entered ``1 - alpha +- band`` and the mean set-size oscillation.
    """
    if config.algorithm != "alg1":
        raise ConfigError("algorithm: sweeps apply to alg1 only")
    grid = tuple(config.eta2_grid if grid is None else grid)
    rows = []
    for eta in grid:
        sub = None if out_dir is None else Path(out_dir) / f"eta2_{eta:g}"
        summaries, agg, _ = replicate(config.replace(eta2=float(eta)), sub)
        entries = [band_entry_step(s.series, 1 - config.alpha, band) for s in summaries]
        reached = [e for e in entries if e is not None]
        rows.append({
            "eta2": float(eta),
            "acum_cvg_min": agg["scalars"]["acum_cvg_min_mean"],
            "acum_cvg_max": agg["scalars"]["acum_cvg_max_mean"],
            "acum_size": agg["scalars"]["acum_size_mean"],
            "band_entry_step": statistics.fmean(reached) if len(reached) == len(entries) else None,
            "size_oscillation": statistics.fmean(size_oscillation(s.series) for s in summaries),
        })
    if out_dir is not None:
        cols = list(rows[0].keys())
        write_series(Path(out_dir) / "sweep.csv", cols, {c: [r[c] for r in rows] for c in cols})
    return rows
