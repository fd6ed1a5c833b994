from __future__ import annotations

import hashlib
import statistics
from dataclasses import dataclass, field

import numpy as np

from fedpews.nncore import ModelSpec, forward


@dataclass
class RoundRecord:
    round: int
    accuracy: float           # global test accuracy, percent
    loss: float
    elapsed_ms: float
    warmup: bool
    client_accuracy: dict[int, float] | None = None
    uploaded_all_ones: bool = True   # every uploaded parameter mask was all ones

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 100]")


@dataclass
class RunLog:
    config: dict
    records: list[RoundRecord] = field(default_factory=list)
    digest: str = ""

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.records]

    @property
    def final_accuracy(self) -> float | None:
        return self.records[-1].accuracy if self.records else None


def model_digest(params: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()


def rounds_to_target(accuracies, target: float) -> int | None:
    """First 1-based round whose accuracy reaches ``target`` percent, or None.

    Accepts a RunLog or a plain sequence of per-round accuracies.
    """
    if isinstance(accuracies, RunLog):
        accuracies = accuracies.accuracies
    if not 0.0 < target <= 100.0:
        raise ValueError(f"target must be in (0, 100], got {target}")
    for t, acc in enumerate(accuracies, start=1):
        if acc >= target:
            return t
    return None


def penalized_mean_rounds(logs, target: float) -> float:
    """Mean rounds-to-target where a run that never gets there counts as T + 1.

    Keeps a comparison defined when only some seeds reach the target.
    """
    if not logs:
        raise ValueError("need at least one run")
    total = 0
    for log in logs:
        acc = log.accuracies if isinstance(log, RunLog) else list(log)
        r = rounds_to_target(acc, target)
        total += len(acc) + 1 if r is None else r
    return total / len(logs)


@dataclass
class SeedSummary:
    n_seeds: int
    n_reached: int
    rounds_mean: float | None    # None: no seed reached the target
    rounds_std: float | None     # None: fewer than two seeds reached ("NA")
    final_mean: float
    final_std: float | None

    def rounds_text(self) -> str:
        if self.rounds_mean is None:
            return "✗"
        std = "NA" if self.rounds_std is None else f"{self.rounds_std:.2f}"
        return f"{self.rounds_mean:.2f}±{std}"

    def final_text(self) -> str:
        std = "NA" if self.final_std is None else f"{self.final_std:.2f}"
        return f"{self.final_mean:.2f}±{std}"


def _mean_std(values):
    values = list(values)
    mean = statistics.fmean(values)
    return mean, (statistics.stdev(values) if len(values) >= 2 else None)


def summarize_seeds(logs, target: float) -> SeedSummary:
    """Rounds-to-target over the seeds that reached it; final accuracy over all seeds.

    Standard deviations use the n-1 denominator. ``logs`` may hold RunLogs or
    per-round accuracy sequences.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("no runs to summarize")
    curves = [l.accuracies if isinstance(l, RunLog) else list(l) for l in logs]
    if any(not c for c in curves):
        raise ValueError("cannot summarize a run with no rounds")
    reached = sorted(r for r in (rounds_to_target(c, target) for c in curves) if r is not None)
    rounds_mean = rounds_std = None
    if reached:
        rounds_mean, rounds_std = _mean_std(reached)
    final_mean, final_std = _mean_std(sorted(c[-1] for c in curves))
    return SeedSummary(len(curves), len(reached), rounds_mean, rounds_std, final_mean, final_std)


def activation_profile(spec: ModelSpec, params: np.ndarray, neuron_mask, batch: np.ndarray) -> np.ndarray:
    """Per hidden neuron, the batch sum of its masked ReLU activation (length h)."""
    trace = forward(spec, params, neuron_mask, batch)
    return np.concatenate([a.sum(axis=0) for a in trace.acts])
