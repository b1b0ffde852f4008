import pytest

from netmax.core.exceptions import NetMaxError
from netmax.models.experiment import ProtocolName
from netmax.services.experiments import ComparisonError, ablation, compare, rate_check, run_sweep
from netmax.services.verification import small_config


def test_sweep_runs_in_seed_order():
    config = small_config(loss={"noise_sigma": 0.1}, protocol={"alpha": 0.3}, stop={"max_steps": 30})
    records = run_sweep(config, ProtocolName.NETMAX, [3, 1])
    assert [r.seed for r in records] == [3, 1]


def test_process_pool_matches_serial():
    config = small_config(loss={"noise_sigma": 0.1}, protocol={"alpha": 0.3}, stop={"max_steps": 30})
    serial = run_sweep(config, ProtocolName.UNIFORM_ASYNC, [0, 1])
    pooled = run_sweep(config, ProtocolName.UNIFORM_ASYNC, [0, 1], workers=2)
    assert [r.model_dump() for r in serial] == [r.model_dump() for r in pooled]


def test_compare_needs_two_protocols():
    with pytest.raises(ComparisonError):
        compare(small_config(), protocols=[ProtocolName.NETMAX])


def test_speedup_is_relative_to_first_protocol():
    config = small_config(stop={"max_steps": 200})
    summary = compare(config, protocols=[ProtocolName.NETMAX, ProtocolName.UNIFORM_ASYNC], seeds=[0], epsilon=0.5)
    first, second = summary.protocols
    assert first.speedup_vs_first == pytest.approx(1.0)
    assert second.speedup_vs_first == pytest.approx(second.mean_time_to_epsilon / first.mean_time_to_epsilon)
    assert summary.epsilon == 0.5


def test_unreached_epsilon_gives_no_mean():
    config = small_config(stop={"max_steps": 5})
    summary = compare(config, protocols=[ProtocolName.NETMAX, ProtocolName.UNIFORM_ASYNC], seeds=[0], epsilon=1e-12)
    assert all(p.mean_time_to_epsilon is None for p in summary.protocols)
    assert all(p.speedup_vs_first is None for p in summary.protocols)


def test_rate_check_decays_with_horizon():
    config = small_config(loss={"noise_sigma": 0.1})
    result = rate_check(config, [50, 800], c=1.0, seeds=[0, 1])
    assert result.alphas == pytest.approx([1.0 / 50 ** 0.5, 1.0 / 800 ** 0.5])
    assert result.mean_final_deviation[1] < result.mean_final_deviation[0]
    assert result.slope < 0


def test_rate_check_needs_two_horizons():
    with pytest.raises(NetMaxError):
        rate_check(small_config(), [100], c=1.0, seeds=[0])


def test_ablation_covers_both_execution_modes():
    config = small_config(link_times={"compute_time": 0.2}, stop={"max_steps": 200})
    summaries = ablation(config, seeds=[0], epsilon=0.5)
    assert list(summaries) == ["parallel", "serial"]
    for mode, summary in summaries.items():
        assert summary.name == f"verify-{mode}"
        assert [p.protocol for p in summary.protocols] == ["netmax", "netmax-uniform"]


def test_serial_execution_slows_the_clock():
    config = small_config(link_times={"compute_time": 0.2}, stop={"max_steps": 40})
    serial = config.model_copy(update={"link_times": config.link_times.model_copy(update={"execution": "serial"})})
    fast = run_sweep(config, ProtocolName.NETMAX_UNIFORM, [0])[0]
    slow = run_sweep(serial, ProtocolName.NETMAX_UNIFORM, [0])[0]
    assert slow.end_clock > fast.end_clock
