"""BDI agent runtime with a pluggable external concurrency model, plus
trace tooling that infers which model a run actually used."""
from .agent import (
    Action,
    Agent,
    AgentSpec,
    Belief,
    Event,
    GuardTerm,
    Intention,
    InternalModelConfig,
    Message,
    PlanRule,
    Trigger,
)
from .runtime import MasConfig, QuiescenceConfig, assemble, await_quiescence, deliver
from .strategy import StrategyKind, aa1t_schedule, launch, parse_strategy
from .tracing import (
    TraceEvent,
    TraceSink,
    check_program_order,
    classify,
    logical_diff,
    logical_trace,
)

__version__ = "0.1.0"
