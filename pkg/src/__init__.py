from .core import logging_setup as _log_setup

_log_setup.setup_logging()
LOGGER = _log_setup.get_logger(__name__)
LOGGER.debug("Main package initialized")
