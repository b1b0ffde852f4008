"""Command surface: run, policy, compare, verify.

Exit codes: 0 success, 1 config or input error, 2 runtime error,
3 no feasible policy, 4 property failure.
"""

import json
from pathlib import Path
from typing import Optional, Sequence, Tuple

import click
import numpy as np
import structlog

from netmax.core.config import get_settings, load_experiment_config
from netmax.core.exceptions import ConfigInvalidError, NetMaxError
from netmax.core.logging import setup_logging
from netmax.models.experiment import ExperimentConfig, ProtocolName
from netmax.services.experiments import ComparisonError, ablation, compare
from netmax.services.metrics import export_csv, write_metrics
from netmax.services.network_model import NetworkModelError, topology_for_times
from netmax.services.policy_engine import DEFAULT_MARGIN, NoFeasiblePolicyError, PolicyEngineError, generate_policy_matrix
from netmax.services.simulation import run_simulation
from netmax.services.verification import SUITES, run_suites

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_NO_POLICY = 3
EXIT_PROPERTY = 4

PROTOCOL_CHOICE = click.Choice([p.value for p in ProtocolName])


def _fail(code: int, message: str) -> None:
    click.echo(message, err=True)
    raise SystemExit(code)


def _load(config_path: str, overrides: Sequence[str], seed: Optional[int],
          protocol: Optional[str], out: Optional[str]) -> ExperimentConfig:
    extra = list(overrides)
    if seed is not None:
        extra.append(f"seed={seed}")
    if protocol is not None:
        extra.append(f"protocol.name={json.dumps(protocol)}")
    if out is not None:
        extra.append(f"output.out_dir={json.dumps(out)}")
    try:
        return load_experiment_config(config_path, extra)
    except ConfigInvalidError as e:
        _fail(EXIT_CONFIG, e.describe())


@click.group()
def cli():
    """Decentralized consensus-SGD simulator and communication-policy optimizer."""
    setup_logging()


def experiment_options(fn):
    fn = click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Dotted config override, value parsed as JSON when possible")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), help="Output directory")(fn)
    fn = click.option("--seed", type=int, help="Run seed")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(),
                      help="Experiment config (JSON)")(fn)
    return fn


@cli.command()
@experiment_options
@click.option("--protocol", type=PROTOCOL_CHOICE, help="Protocol to run")
def run(config_path: str, seed: Optional[int], out: Optional[str], overrides: Tuple[str, ...],
        protocol: Optional[str]):
    """Run one simulation and write its trace and summary."""
    config = _load(config_path, overrides, seed, protocol, out)
    try:
        record = run_simulation(config)
        name = config.output.name or config.name
        trace_path, summary_path = write_metrics(record, config.output.out_dir, config.metrics.epsilons, name)
        if config.output.csv:
            export_csv(record, Path(config.output.out_dir) / f"{name}.trace.csv")
    except ConfigInvalidError as e:
        _fail(EXIT_CONFIG, e.describe())
    except NetMaxError as e:
        logger.error("Run failed", error=str(e), error_type=type(e).__name__)
        _fail(EXIT_RUNTIME, f"run failed: {e}")
    click.echo(json.dumps({"trace": str(trace_path), "summary": str(summary_path)}))


def read_time_document(path: str) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """A square JSON array, or an object with "times" and optional "adjacency"."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigInvalidError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigInvalidError(f"Malformed JSON in {path}: {e.msg}", line=e.lineno, column=e.colno) from e
    adjacency = None
    if isinstance(document, dict):
        if "times" not in document:
            raise ConfigInvalidError(f"{path} has no 'times' entry")
        adjacency = document.get("adjacency")
        document = document["times"]
    if not isinstance(document, list) or not document or any(
        not isinstance(row, list) or len(row) != len(document) for row in document
    ):
        raise ConfigInvalidError(f"time matrix in {path} must be a non-empty square array")
    try:
        times = np.asarray(document, dtype=float)
        adj = None if adjacency is None else np.asarray(adjacency, dtype=np.int64)
    except (TypeError, ValueError) as e:
        raise ConfigInvalidError(f"time matrix in {path} is not numeric: {e}") from e
    return times, adj


@cli.command()
@click.argument("time_matrix", type=click.Path())
@click.option("--alpha", type=float, default=0.1, show_default=True, help="Learning rate")
@click.option("-K", "--outer-rounds", type=int, default=16, show_default=True, help="rho grid size")
@click.option("-R", "--inner-rounds", type=int, default=16, show_default=True, help="t-bar grid size")
@click.option("--epsilon", type=float, default=0.01, show_default=True, help="Objective shrink factor")
@click.option("--margin", type=float, default=DEFAULT_MARGIN, show_default=True, help="Lower-bound margin")
def policy(time_matrix: str, alpha: float, outer_rounds: int, inner_rounds: int, epsilon: float, margin: float):
    """Generate a communication policy from an iteration-time matrix."""
    try:
        times, adjacency = read_time_document(time_matrix)
        topology = topology_for_times(times, adjacency)
        result = generate_policy_matrix(alpha, outer_rounds, inner_rounds, times, topology, epsilon, margin)
    except ConfigInvalidError as e:
        _fail(EXIT_CONFIG, e.describe())
    except NetworkModelError as e:
        _fail(EXIT_CONFIG, f"invalid time matrix: {e}")
    except NoFeasiblePolicyError as e:
        _fail(EXIT_NO_POLICY, f"no feasible policy: {e}")
    except PolicyEngineError as e:
        _fail(EXIT_CONFIG, f"invalid policy parameters: {e}")
    click.echo(json.dumps(result.to_dict(), indent=2))


@cli.command(name="compare")
@experiment_options
@click.option("--workers", type=int, default=None, help="Worker processes for the seed sweep")
@click.option("--ablation", "run_ablation", is_flag=True,
              help="netmax vs netmax-uniform under parallel and serial execution")
def compare_cmd(config_path: str, seed: Optional[int], out: Optional[str], overrides: Tuple[str, ...],
                workers: Optional[int], run_ablation: bool):
    """Compare protocols over a seed sweep by mean time-to-epsilon."""
    config = _load(config_path, overrides, seed, None, out)
    seeds = [seed] if seed is not None else None
    workers = workers or get_settings().sweep_workers
    try:
        if run_ablation:
            summaries = ablation(config, seeds=seeds, workers=workers)
        else:
            summary = compare(config, seeds=seeds, workers=workers)
    except ComparisonError as e:
        _fail(EXIT_CONFIG, str(e))
    except NetMaxError as e:
        logger.error("Comparison failed", error=str(e), error_type=type(e).__name__)
        _fail(EXIT_RUNTIME, f"compare failed: {e}")
    out_dir = Path(config.output.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if run_ablation:
            text = json.dumps({mode: s.model_dump(mode="json") for mode, s in summaries.items()}, indent=2)
            suffix = "ablation"
        else:
            text = summary.model_dump_json(indent=2)
            suffix = "compare"
        (out_dir / f"{config.output.name or config.name}.{suffix}.json").write_text(text, encoding="utf-8")
    except OSError as e:
        _fail(EXIT_RUNTIME, f"cannot write comparison: {e}")
    click.echo(text)


@cli.command()
@click.option("--suite", type=click.Choice(["all", *SUITES]), default="all", show_default=True)
@click.option("--margin", type=float, default=DEFAULT_MARGIN, show_default=True,
              help="LP margin used by the policy suite")
@click.option("--topologies", type=int, default=None, help="Random topologies in the policy suite")
@click.option("--seeds", type=int, default=None, help="Seeds per bound check")
def verify(suite: str, margin: float, topologies: Optional[int], seeds: Optional[int]):
    """Run the property suites and print a pass/fail table."""
    results = run_suites(suite, margin=margin, topology_count=topologies, seed_count=seeds)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status}  {r.suite:<10} {r.name:<{width}}  {r.detail}")
    failed = [r for r in results if not r.passed]
    click.echo(f"{len(results) - len(failed)}/{len(results)} properties passed")
    if failed:
        raise SystemExit(EXIT_PROPERTY)


def main():
    cli(prog_name="netmax")


if __name__ == "__main__":
    main()
