"""Aggregation of rollout records into report tables, plus score calibration
and latency measurement."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .envs import RolloutResult
from .policy import ChoicePolicyModel, NormalizationStats, propose_batch


@dataclass
class RolloutRecord:
    """The persisted part of a rollout: enough to rebuild every report table."""

    episode: int
    strategy: str
    success: bool
    reason: str
    steps: int
    heads: list[int]
    phases: list[str]
    stages: dict[str, bool]

    @classmethod
    def from_result(cls, episode: int, strategy: str, r: RolloutResult) -> "RolloutRecord":
        return cls(episode, strategy, bool(r.success), r.reason, r.steps, list(r.heads), list(r.phases), dict(r.stages))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MetricsReport:
    trials: int
    successes: int
    stage_counts: dict[str, int]
    head_histograms: dict[str, dict[int, int]]
    spearman: float | None = None
    latency: dict[str, float] | None = None
    strategy: str = "score"
    reasons: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.successes > self.trials or any(v > self.trials for v in self.stage_counts.values()):
            raise ValueError("success counts exceed trial count")

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def head_histograms(records: list[RolloutRecord], phases: list[str]) -> dict[str, dict[int, int]]:
    """Per-phase counts of the executed head, over every logged step."""
    out = {p: Counter() for p in phases}
    for r in records:
        for h, p in zip(r.heads, r.phases):
            out.setdefault(p, Counter())[h] += 1
    return {p: dict(sorted(c.items())) for p, c in out.items()}


def summarize(records: list[RolloutRecord], stages: list[str], phases: list[str], strategy: str = "score",
              spearman: float | None = None) -> MetricsReport:
    return MetricsReport(
        trials=len(records),
        successes=sum(r.success for r in records),
        stage_counts={s: sum(bool(r.stages.get(s)) for r in records) for s in stages},
        head_histograms=head_histograms(records, phases),
        spearman=spearman,
        strategy=strategy,
        reasons=dict(sorted(Counter(r.reason for r in records).items())),
    )


def rollout_specializes(record: RolloutRecord, min_share: float = 0.6) -> bool:
    """True when at least two phases have distinct modal heads, each covering >= ``min_share`` of that phase."""
    modal = set()
    for p in dict.fromkeys(record.phases):
        hs = [h for h, ph in zip(record.heads, record.phases) if ph == p]
        head, n = Counter(hs).most_common(1)[0]
        if n / len(hs) >= min_share:
            modal.add(head)
    return len(modal) >= 2


def stage_spread(rates_by_strategy: dict[str, dict[str, float]]) -> tuple[float, str]:
    """Largest best-minus-worst gap in per-stage success across strategies, and the stage it occurs at."""
    stages = next(iter(rates_by_strategy.values())).keys()
    best = (-1.0, "")
    for s in stages:
        vals = [r[s] for r in rates_by_strategy.values()]
        best = max(best, (max(vals) - min(vals), s))
    return best


def score_calibration(model: ChoicePolicyModel, obs: np.ndarray, chunks: np.ndarray) -> float:
    """Spearman correlation between predicted scores and true per-proposal MSE,
    pooled over every (state, proposal) pair. Inputs are in raw units."""
    norm = model.norm or NormalizationStats.identity(model.config.obs_dim, model.config.action_dim)
    props, scores = propose_batch(model, norm.normalize_obs(obs))
    true = ((props - norm.normalize_chunk(chunks)[:, None]) ** 2).mean(axis=(2, 3))
    return float(spearmanr(scores.ravel(), true.ravel())[0])


def time_calls(fn, n: int = 1000, warmup: int = 10) -> dict[str, float]:
    """Wall-clock statistics (seconds) of ``n`` calls to ``fn(i)``."""
    for i in range(warmup):
        fn(i)
    times = np.empty(n)
    for i in range(n):
        t0 = time.perf_counter()
        fn(i)
        times[i] = time.perf_counter() - t0
    return {"calls": n, "mean": float(times.mean()), "p50": float(np.percentile(times, 50)),
            "p90": float(np.percentile(times, 90)), "p99": float(np.percentile(times, 99))}
