from netmax.models.experiment import ExperimentConfig, ProtocolName
from netmax.models.records import RunRecord, RunSummary, TraceRow

__all__ = ["ExperimentConfig", "ProtocolName", "RunRecord", "RunSummary", "TraceRow"]
