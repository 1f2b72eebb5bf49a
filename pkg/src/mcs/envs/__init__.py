from .alicebob import (
    ACTIONS,
    N_ACTIONS,
    ActionError,
    AliceBobEnv,
    ConfigurationError,
    StepResult,
    TaskSpec,
    TraceRecorder,
    load_series,
    make_series,
    scripted_actions,
)

__all__ = [
    "ACTIONS", "N_ACTIONS", "ActionError", "AliceBobEnv", "ConfigurationError", "StepResult",
    "TaskSpec", "TraceRecorder", "load_series", "make_series", "scripted_actions",
]
