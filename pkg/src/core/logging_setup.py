import json
import logging
import sys
from logging.handlers import RotatingFileHandler

from src.core.config import get_settings

_configured = False

JSON_FIELDS = ("asctime", "name", "levelname", "message", "module", "funcName")


class JSONFormatter(logging.Formatter):
    """One JSON object per record, keys sorted so that log lines diff cleanly."""

    def format(self, record: logging.LogRecord) -> str:
        entry = {key: getattr(record, key, None) for key in JSON_FIELDS}
        entry["asctime"] = self.formatTime(record, self.datefmt)
        entry["message"] = record.getMessage()
        if record.exc_info:
            entry["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(entry, sort_keys=True)


def _level() -> int:
    level = logging.getLevelName(get_settings().LOGGING_DEFAULT_LEVEL.upper())
    return level if isinstance(level, int) else logging.INFO


def setup_logging(force: bool = False) -> None:
    """
    Configure the application logger once.

    A delimited text format goes to stderr. When LOGGING_FILE_NAME is set, a rotating
    JSON file handler is added so that suite runs leave a machine-readable trace.
    """
    global _configured
    if _configured and not force:
        return

    settings = get_settings()
    sep = settings.LOGGING_DELIMITER
    text_format = sep.join(f"%({key})s" for key in JSON_FIELDS)

    app_logger = logging.getLogger(settings.LOGGING_APP_ID)
    for handler in list(app_logger.handlers):
        app_logger.removeHandler(handler)
    app_logger.setLevel(_level())
    app_logger.propagate = False

    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter(text_format, datefmt=settings.LOGGING_DATE_FORMAT))
    app_logger.addHandler(stream)

    if settings.LOGGING_FILE_NAME:
        rotating = RotatingFileHandler(
            filename=f"{settings.LOGGING_FILE_NAME}.json",
            maxBytes=settings.LOGGING_MAX_FILE_SIZE * 1024 * 1024,
            backupCount=settings.LOGGING_BACKUP_COUNT,
        )
        rotating.setFormatter(JSONFormatter(datefmt=settings.LOGGING_DATE_FORMAT))
        app_logger.addHandler(rotating)

    _configured = True


def get_logger(name: str) -> logging.Logger:
    """`<LOGGING_APP_ID>.<name>` at the configured level."""
    child = logging.getLogger(f"{get_settings().LOGGING_APP_ID}.{name}")
    child.setLevel(_level())
    return child
