from .logging import configure_logging, run_context
from .rng import RandomStream, stable_key

__all__ = ["RandomStream", "configure_logging", "run_context", "stable_key"]
