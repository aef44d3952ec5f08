"""
Error hierarchy for the D&Q engine.

Every failure the engine can report derives from DQError so callers (the
management commands, the evaluation harness) can fold them into results or
exit codes without catching bare Exception.
"""


class DQError(Exception):
    """Base class for all engine errors"""
    pass


# Trajectory

class EmptyQuestion(DQError):
    """Question or sub-question is blank after trimming"""
    pass


class NodeClosed(DQError):
    """Operation requires an Open active node"""
    pass


class AtRoot(DQError):
    """Rollback requested while the root node is active"""
    pass


class InvalidStep(DQError):
    """Step rejected by the trajectory API (e.g. Finish through append_step)"""
    pass


class EmptyAnswer(DQError):
    """Empty Finish while retrieval budget remains"""
    pass


class MalformedTrajectory(DQError):
    """Trajectory tree violates its structural invariants"""
    pass


class NonTerminalTrajectory(DQError):
    """Export requested for a trajectory that has not terminated"""
    pass


# Action grammar / policy

class ParseError(DQError):
    """Policy output holds no usable action"""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


class ScriptExhausted(DQError):
    """Scripted policy has no actions left"""
    pass


class BackendError(DQError):
    """Chat-completion backend answered with an error"""

    def __init__(self, status, note):
        super().__init__(f"backend error {status}: {note}")
        self.status = status
        self.note = note


# Tools and budget

class UnknownTool(DQError):
    """Tool is not registered for the active toolset"""
    pass


class BudgetExceeded(DQError):
    """Retriever call attempted after the per-episode cap was reached"""
    pass


class StoreUnavailable(DQError):
    """QA base store is missing or corrupt"""
    pass


class NetworkError(DQError):
    """HTTP call failed after bounded retries"""

    def __init__(self, status, message=''):
        super().__init__(message or f"network error (status={status})")
        self.status = status


class MalformedResponse(DQError):
    """Remote API returned a payload we cannot interpret"""
    pass


# QA base and aggregation

class ScorerUnavailable(DQError):
    """Remote GEC/intent scorer could not produce a score"""
    pass


class ClassifierUnavailable(DQError):
    """Remote question classifier could not produce a label"""
    pass


class PartitionViolation(DQError):
    """Viewpoint output omits or duplicates answer ids"""
    pass


# Evaluation

class EmptyGold(DQError):
    """Recall requested against an empty gold title set"""
    pass


# Files and configuration

class SchemaError(DQError):
    """JSON/JSONL record does not match its documented schema"""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(DQError):
    """Configuration file or override is invalid"""
    pass
