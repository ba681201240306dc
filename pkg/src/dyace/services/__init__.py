from .backends import BackendReply, BackendRequest, ControllerBackend, OpenAIBackend, ReplayBackend, ScriptedBackend, create_backend
from .control_loop import run_dyace, run_static, run_variant
from .controller import AlgorithmPopulation, MetaController, ReasoningMode, ScoredSpec, VerbalGradient, evolve_algorithms
from .probe import RolloutReport, TrajectoryFeatures, extract_features, probe, score
from .trace import BudgetLedger, ControlTrace, budget_ledger, read_trace, summarize

__all__ = [
    "AlgorithmPopulation",
    "BackendReply",
    "BackendRequest",
    "BudgetLedger",
    "ControlTrace",
    "ControllerBackend",
    "MetaController",
    "OpenAIBackend",
    "ReasoningMode",
    "ReplayBackend",
    "RolloutReport",
    "ScoredSpec",
    "ScriptedBackend",
    "TrajectoryFeatures",
    "VerbalGradient",
    "budget_ledger",
    "create_backend",
    "evolve_algorithms",
    "extract_features",
    "probe",
    "read_trace",
    "run_dyace",
    "run_static",
    "run_variant",
    "score",
    "summarize",
]
