"""Convergence metrics, runtime checks of the deviation bounds, and result files.

Result files per run, both carrying ``schema_version``:

- ``{name}.trace.jsonl``: one ``TraceRow`` per line (k, clock, node, neighbor,
  iter_time, deviation, spread, objective); k=0 is the initial state.
- ``{name}.summary.json``: a ``RunSummary`` (final deviation, time-to-epsilon
  per configured epsilon, link usage, policy changes, lambda history and the
  resolved config).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from netmax.core.exceptions import NetMaxError
from netmax.models.records import RunRecord, RunSummary, TraceRow
from netmax.services.policy_engine import DegenerateLambdaError

logger = structlog.get_logger(__name__)

STATIC = "static"
DYNAMIC = "dynamic"
DEFAULT_SLACK = 0.10


class MetricsError(NetMaxError):
    """Base exception for metric and result-file errors."""
    pass


class IoFailureError(MetricsError):
    pass


def deviation(xs: np.ndarray, x_star: np.ndarray) -> float:
    """Sum over nodes of ||x_i - x*||^2."""
    diff = np.asarray(xs, dtype=float) - np.asarray(x_star, dtype=float)[None, :]
    return float(np.sum(diff * diff))


def consensus_spread(xs: np.ndarray) -> float:
    """Largest pairwise distance between node models."""
    xs = np.asarray(xs, dtype=float)
    if xs.shape[0] < 2:
        return 0.0
    diffs = xs[:, None, :] - xs[None, :, :]
    return float(np.sqrt(np.max(np.sum(diffs * diffs, axis=2))))


def theorem_bound(kind: str, lam: float, k: int, init_dev: float, alpha: float, sigma: float) -> float:
    """lambda^k * init_dev + alpha^2 sigma^2 lambda / (1 - lambda)."""
    if kind not in (STATIC, DYNAMIC):
        raise MetricsError(f"unknown bound kind '{kind}'")
    if not 0.0 < lam < 1.0:
        raise DegenerateLambdaError(lam)
    return lam ** k * init_dev + alpha ** 2 * sigma ** 2 * lam / (1.0 - lam)


@dataclass(frozen=True)
class DeviationTrace:
    k: np.ndarray
    clock: np.ndarray
    deviation: np.ndarray
    spread: np.ndarray
    objective: np.ndarray

    def __len__(self) -> int:
        return int(self.k.size)

    @classmethod
    def from_rows(cls, rows: Sequence[TraceRow]) -> "DeviationTrace":
        ks = np.array([r.k for r in rows], dtype=int)
        if ks.size > 1 and np.any(np.diff(ks) <= 0):
            raise MetricsError("trace steps must be strictly increasing")
        return cls(
            ks,
            np.array([r.clock for r in rows], dtype=float),
            np.array([r.deviation for r in rows], dtype=float),
            np.array([r.spread for r in rows], dtype=float),
            np.array([r.objective for r in rows], dtype=float),
        )

    @classmethod
    def from_record(cls, record: RunRecord) -> "DeviationTrace":
        return cls.from_rows(record.trace)


def mean_trace(traces: Sequence[DeviationTrace]) -> DeviationTrace:
    """Average traces step by step, truncated to the shortest one."""
    if not traces:
        raise MetricsError("no traces to average")
    n = min(len(t) for t in traces)
    return DeviationTrace(
        traces[0].k[:n],
        np.mean([t.clock[:n] for t in traces], axis=0),
        np.mean([t.deviation[:n] for t in traces], axis=0),
        np.mean([t.spread[:n] for t in traces], axis=0),
        np.mean([t.objective[:n] for t in traces], axis=0),
    )


@dataclass
class BoundReport:
    kind: str
    bound: np.ndarray
    slack: float
    assumptions_met: bool
    violations: int = 0
    max_relative_violation: float = 0.0
    violation_steps: List[int] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def binding(self) -> bool:
        return self.assumptions_met

    @property
    def passed(self) -> bool:
        return not self.binding or self.violations == 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "slack": self.slack,
            "assumptions_met": self.assumptions_met,
            "violations": self.violations,
            "max_relative_violation": self.max_relative_violation,
            "violation_steps": self.violation_steps[:20],
            "notes": self.notes,
        }


def check_bound_trace(
    trace: DeviationTrace,
    kind: str,
    lam: Union[float, Sequence[float]],
    alpha: float,
    sigma: float,
    slack: float = DEFAULT_SLACK,
    init_dev: Optional[float] = None,
    assumptions_met: bool = True,
    notes: Sequence[str] = (),
) -> BoundReport:
    """Flag steps whose (mean) deviation exceeds the bound times (1 + slack).

    ``lam`` is a single lambda2 for the static bound or, for the dynamic bound,
    the running maximum of observed lambda2 values aligned with the trace.
    When the assumptions are not met the report lists violations but is not
    binding.
    """
    if slack < 0:
        raise MetricsError("slack must be non-negative")
    n = len(trace)
    lams = np.broadcast_to(np.asarray(lam, dtype=float), (n,))
    dev0 = float(trace.deviation[0]) if init_dev is None else init_dev
    bound = np.array([
        theorem_bound(kind, float(l), int(k), dev0, alpha, sigma) for l, k in zip(lams, trace.k)
    ])
    limit = bound * (1.0 + slack) + 1e-12 * max(dev0, 1.0)
    over = trace.deviation > limit
    report = BoundReport(kind, bound, slack, assumptions_met, notes=list(notes))
    if over.any():
        rel = (trace.deviation[over] - bound[over]) / np.maximum(bound[over], 1e-300)
        report.violations = int(over.sum())
        report.max_relative_violation = float(rel.max())
        report.violation_steps = trace.k[over].astype(int).tolist()
    if not assumptions_met:
        logger.info("Bound check is non-binding", kind=kind, violations=report.violations)
    return report


def running_lambda_max(record: RunRecord) -> np.ndarray:
    """Maximum lambda2 delivered up to each trace row's clock.

    Rows before the first monitor cycle use the first recorded value.
    """
    if not record.lambda_history:
        raise MetricsError("run has no lambda history")
    clocks = np.array([c for c, _ in record.lambda_history])
    running = np.maximum.accumulate(np.array([v for _, v in record.lambda_history]))
    idx = np.searchsorted(clocks, [r.clock for r in record.trace], side="right") - 1
    return running[np.clip(idx, 0, None)]


def time_to_epsilon(record_or_trace: Union[RunRecord, DeviationTrace], epsilon: float) -> Optional[float]:
    """First simulated time at which the deviation is at most ``epsilon``."""
    trace = record_or_trace if isinstance(record_or_trace, DeviationTrace) else DeviationTrace.from_record(record_or_trace)
    hit = np.flatnonzero(trace.deviation <= epsilon)
    return float(trace.clock[hit[0]]) if hit.size else None


def link_key(i: int, m: int) -> str:
    return f"{min(i, m)}-{max(i, m)}"


def link_usage(record: RunRecord) -> Dict[str, int]:
    usage: Dict[str, int] = {}
    for row in record.trace:
        if row.node is None or row.neighbor is None or row.node == row.neighbor:
            continue
        key = link_key(row.node, row.neighbor)
        usage[key] = usage.get(key, 0) + 1
    return dict(sorted(usage.items()))


def build_summary(record: RunRecord, epsilons: Sequence[float]) -> RunSummary:
    trace = record.trace
    lambda_values = [v for _, v in record.lambda_history]
    return RunSummary(
        name=record.name,
        protocol=record.protocol,
        seed=record.seed,
        steps=record.steps,
        end_clock=record.end_clock,
        stop_reason=record.stop_reason,
        initial_deviation=trace[0].deviation if trace else None,
        final_deviation=trace[-1].deviation if trace else None,
        final_spread=trace[-1].spread if trace else None,
        time_to_epsilon={f"{eps:g}": (time_to_epsilon(record, eps) if trace else None) for eps in epsilons},
        link_usage=link_usage(record),
        policy_changes=record.policy_changes,
        lambda_history=record.lambda_history,
        lambda_max=max(lambda_values) if lambda_values else None,
        monitor_failures=record.monitor_failures,
        learning_rate_ok=record.learning_rate_ok,
        warnings=record.warnings,
        config=record.config,
    )


def result_paths(out_dir: Union[str, Path], name: str) -> Tuple[Path, Path]:
    out = Path(out_dir)
    return out / f"{name}.trace.jsonl", out / f"{name}.summary.json"


def write_metrics(
    record: RunRecord,
    out_dir: Union[str, Path],
    epsilons: Sequence[float],
    name: Optional[str] = None,
) -> Tuple[Path, Path]:
    """Write the JSONL trace and the summary JSON; returns both paths."""
    name = name or record.name
    trace_path, summary_path = result_paths(out_dir, name)
    summary = build_summary(record, epsilons)
    try:
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with trace_path.open("w", encoding="utf-8") as fh:
            for row in record.trace:
                fh.write(json.dumps({"schema_version": record.schema_version, **row.model_dump()}))
                fh.write("\n")
        summary_path.write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        raise IoFailureError(f"cannot write results to {out_dir}: {e}") from e
    logger.info("Metrics written", trace=str(trace_path), summary=str(summary_path))
    return trace_path, summary_path


def read_summary(path: Union[str, Path]) -> RunSummary:
    try:
        return RunSummary.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}") from e


def read_trace(path: Union[str, Path]) -> List[TraceRow]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}") from e
    rows = []
    for line in lines:
        data = json.loads(line)
        data.pop("schema_version", None)
        rows.append(TraceRow.model_validate(data))
    return rows


CSV_FIELDS = ("k", "clock", "node", "neighbor", "iter_time", "deviation", "spread", "objective")


def export_csv(record: RunRecord, path: Union[str, Path]) -> Path:
    """Trace as CSV for external plotting."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for row in record.trace:
                writer.writerow(row.model_dump())
    except OSError as e:
        raise IoFailureError(f"cannot write {path}: {e}") from e
    return path
