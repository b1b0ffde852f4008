"""Seed sweeps, protocol comparisons and the learning-rate decay check."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

from netmax.core.exceptions import NetMaxError
from netmax.models.experiment import ExperimentConfig, ProtocolName
from netmax.models.records import ComparisonSummary, ProtocolComparison, RunRecord
from netmax.services.metrics import time_to_epsilon
from netmax.services.simulation import run_simulation

logger = structlog.get_logger(__name__)


class ComparisonError(NetMaxError):
    """Raised when a comparison has fewer than two protocols."""
    pass


def run_protocol(
    config: ExperimentConfig, protocol: Optional[ProtocolName] = None, seed: Optional[int] = None
) -> RunRecord:
    if protocol is not None:
        config = config.with_protocol(ProtocolName(protocol))
    if seed is not None:
        config = config.with_seed(seed)
    return run_simulation(config)


def _run_from_document(document: dict, protocol: str, seed: int) -> RunRecord:
    return run_protocol(ExperimentConfig.model_validate(document), ProtocolName(protocol), seed)


def run_sweep(
    config: ExperimentConfig,
    protocol: ProtocolName,
    seeds: Sequence[int],
    workers: int = 1,
) -> List[RunRecord]:
    """One run per seed, in seed order; ``workers > 1`` fans out over processes."""
    protocol = ProtocolName(protocol)
    if workers <= 1 or len(seeds) <= 1:
        return [run_protocol(config, protocol, s) for s in seeds]
    document = config.model_dump(mode="json")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_from_document, document, protocol.value, s) for s in seeds]
        return [f.result() for f in futures]


def _mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    if not values or any(v is None for v in values):
        return None
    return float(np.mean(values))


def compare(
    config: ExperimentConfig,
    protocols: Optional[Sequence[ProtocolName]] = None,
    seeds: Optional[Sequence[int]] = None,
    epsilon: Optional[float] = None,
    workers: int = 1,
) -> ComparisonSummary:
    """Mean time-to-epsilon per protocol over a seed sweep.

    ``speedup_vs_first`` is this protocol's mean time divided by the first
    protocol's, so values above 1 mean the first protocol is faster.
    """
    protocols = [ProtocolName(p) for p in (protocols if protocols is not None else config.compare.protocols)]
    if len(protocols) < 2:
        raise ComparisonError("comparison needs at least two protocols")
    seeds = list(seeds if seeds is not None else config.compare.seeds)
    eps = epsilon or config.compare.epsilon or min(config.metrics.epsilons)

    results: List[ProtocolComparison] = []
    for protocol in protocols:
        records = run_sweep(config, protocol, seeds, workers)
        times = [time_to_epsilon(r, eps) for r in records]
        results.append(ProtocolComparison(
            protocol=protocol.value, seeds=seeds, time_to_epsilon=times,
            mean_time_to_epsilon=_mean_or_none(times),
        ))
        logger.info("Protocol swept", protocol=protocol.value, seeds=len(seeds),
                    mean_time_to_epsilon=results[-1].mean_time_to_epsilon)

    first = results[0].mean_time_to_epsilon
    for entry in results:
        if first and entry.mean_time_to_epsilon is not None:
            entry.speedup_vs_first = entry.mean_time_to_epsilon / first
    return ComparisonSummary(name=config.name, epsilon=eps, protocols=results)


@dataclass(frozen=True)
class RateCheckResult:
    horizons: List[int]
    alphas: List[float]
    mean_final_deviation: List[float]
    slope: float


def rate_check(
    config: ExperimentConfig,
    horizons: Sequence[int],
    c: float,
    seeds: Sequence[int],
    protocol: Optional[ProtocolName] = None,
) -> RateCheckResult:
    """Rerun with alpha = c / sqrt(k) for each step horizon k and fit the log-log decay slope."""
    if len(horizons) < 2:
        raise NetMaxError("rate check needs at least two horizons")
    protocol = ProtocolName(protocol or config.protocol.name)
    alphas, means = [], []
    for k in horizons:
        alpha = c / np.sqrt(k)
        cfg = config.model_copy(update={
            "protocol": config.protocol.model_copy(update={"alpha": alpha, "name": protocol}),
            "stop": config.stop.model_copy(update={"max_steps": int(k), "max_time": None, "target_deviation": None}),
        })
        finals = [run_protocol(cfg, seed=s).trace[-1].deviation for s in seeds]
        alphas.append(float(alpha))
        means.append(float(np.mean(finals)))
    slope = float(np.polyfit(np.log(horizons), np.log(np.maximum(means, 1e-300)), 1)[0])
    logger.info("Rate check", horizons=list(horizons), slope=slope)
    return RateCheckResult(list(horizons), alphas, means, slope)


ABLATION_PROTOCOLS = (ProtocolName.NETMAX, ProtocolName.NETMAX_UNIFORM)
EXECUTION_MODES = ("parallel", "serial")


def ablation(
    config: ExperimentConfig,
    seeds: Optional[Sequence[int]] = None,
    epsilon: Optional[float] = None,
    workers: int = 1,
) -> Dict[str, ComparisonSummary]:
    """Adaptive vs fixed uniform selection under the same update rule, once per execution mode.

    Both arms use the policy-weighted mixing step; only ``netmax`` runs the
    monitor. Keys are the execution modes.
    """
    summaries: Dict[str, ComparisonSummary] = {}
    for mode in EXECUTION_MODES:
        cfg = config.model_copy(update={
            "name": f"{config.name}-{mode}",
            "link_times": config.link_times.model_copy(update={"execution": mode}),
        })
        summaries[mode] = compare(cfg, ABLATION_PROTOCOLS, seeds, epsilon, workers)
    return summaries
