from typing import List, Optional


class DyaceError(Exception):
    """Base class for every error raised by the package"""


class ConfigError(DyaceError):
    """Run or suite configuration could not be loaded"""


class InstanceParseError(DyaceError):
    """Benchmark file does not match its declared format"""


class BksMissingError(DyaceError):
    """No best-known cost registered for an instance"""

    def __init__(self, name: str):
        super().__init__(f"missing BKS registry entry for instance '{name}'")
        self.name = name


class DomainMismatchError(DyaceError):
    """Encoding, spec or population belongs to another problem domain"""


class SpecValidationError(DyaceError):
    """Operator spec failed schema, bounds or domain checks"""

    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class InterpreterBudgetExceeded(DyaceError):
    """Operator graph exceeded its node evaluation cap"""


class RolloutTimeout(DyaceError):
    """Rollout ran past its wall-clock limit"""


class ApplyError(DyaceError):
    """Real horizon could not be advanced with the chosen spec or any earlier one"""


class BackendError(DyaceError):
    """Controller back end failed to answer"""


class DiagnosisError(DyaceError):
    """Diagnosis reply never carried the required tags"""


class SynthesisError(DyaceError):
    """No valid operator spec after all retries"""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = list(errors or [])


class BudgetExceededError(DyaceError):
    """Evaluation ledger went over the configured budget"""


class TraceSchemaError(DyaceError):
    """Control trace is unreadable or has an unexpected schema version"""
