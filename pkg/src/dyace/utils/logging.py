import json
import logging
import logging.config
from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

from ..config import settings

# fields stamped on every record; suite workers each run in their own context
_run_fields: ContextVar[Dict[str, Any]] = ContextVar("dyace_run_fields", default={})

RUN_FIELDS = ("instance", "variant", "seed")


class RunContextFilter(logging.Filter):
    """Copies the active run's instance, variant and seed onto each record"""

    def filter(self, record: logging.LogRecord) -> bool:
        fields = _run_fields.get()
        for name in RUN_FIELDS:
            setattr(record, name, fields.get(name, "-"))
        return True


@contextmanager
def run_context(**fields: Any) -> Iterator[None]:
    """Tag log records emitted inside the block, e.g. ``run_context(instance="ta01", variant="dyace", seed=3)``"""
    token = _run_fields.set({**_run_fields.get(), **fields})
    try:
        yield
    finally:
        _run_fields.reset(token)


def configure_logging(
    config_file: Optional[str] = None,
    default_level: Optional[int] = None,
    log_file: Optional[str] = None,
    env_override: bool = True,
) -> None:
    """
    Configure logging for runs and CLI commands.

    Args:
        config_file: JSON dictConfig fragment merged over the defaults
        default_level: Logging level; falls back to settings.log_level
        log_file: JSON-lines log destination; falls back to settings.log_file, none disables it
        env_override: Quiet the console outside development
    """
    level = default_level if default_level is not None else logging.getLevelName(settings.log_level.upper())
    if not isinstance(level, int):
        level = logging.INFO
    config = base_config(level, log_file or settings.log_file)

    if config_file:
        try:
            config = merge_configs(config, json.loads(Path(config_file).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            logging.warning(f"Failed to load logging config: {e}. Using defaults.")

    if env_override and settings.app_env == "production":
        config["handlers"]["console"]["level"] = logging.WARNING
    elif env_override and settings.app_env == "test":
        config["handlers"]["console"]["level"] = logging.ERROR

    logging.config.dictConfig(config)
    logging.captureWarnings(True)
    logging.getLogger(__name__).debug("Logging configured at %s", logging.getLevelName(level))


def base_config(level: int, log_file: Optional[str] = None) -> Dict[str, Any]:
    """Console in plain text, optional rotating file in JSON; both carry the run fields"""
    config: Dict[str, Any] = {
        "version": 1,
        "disable_existing_loggers": False,
        "filters": {"run": {"()": RunContextFilter}},
        "formatters": {
            "console": {
                "format": "%(asctime)s [%(levelname)s] %(name)s (%(instance)s/%(variant)s/%(seed)s): %(message)s",
                "datefmt": "%H:%M:%S",
            },
            "json": {
                "()": "pythonjsonlogger.jsonlogger.JsonFormatter",
                "format": "%(asctime)s %(levelname)s %(name)s %(instance)s %(variant)s %(seed)s %(message)s",
            },
        },
        "handlers": {
            "console": {
                "class": "logging.StreamHandler",
                "formatter": "console",
                "filters": ["run"],
                "level": level,
                "stream": "ext://sys.stderr",
            },
        },
        "loggers": {
            "": {"handlers": ["console"], "level": level},
            # the openai client logs every request at INFO
            "httpx": {"level": logging.WARNING},
            "openai": {"level": logging.WARNING},
        },
    }
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        config["handlers"]["file"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "formatter": "json",
            "filters": ["run"],
            "filename": str(log_file),
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
            "encoding": "utf8",
        }
        config["loggers"][""]["handlers"].append("file")
    return config


def merge_configs(base: Dict[str, Any], custom: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in custom.items():
        if isinstance(merged.get(key), dict) and isinstance(value, dict):
            merged[key] = merge_configs(merged[key], value)
        else:
            merged[key] = value
    return merged
