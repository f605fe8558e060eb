import logging
import os
from logging.handlers import RotatingFileHandler

from psygames.config import Config

__version__ = '0.1.0'

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def init_logging(config_class=Config, level: str = None) -> logging.Logger:
    """
    Configure the package logger from a configuration class.

    Handlers are attached once; later calls only adjust the level. A rotating
    file handler is added when ``LOG_FILE_PATH`` is set, and a stderr stream
    handler when ``LOG_TO_STDERR`` is true.

    Args:
        config_class (class): Configuration class providing LOG_* settings.
        level (str): Optional level overriding ``config_class.LOG_LEVEL``.

    Returns:
        logging.Logger: The configured ``psygames`` logger.
    """
    logger = logging.getLogger('psygames')
    resolved = getattr(logging, (level or config_class.LOG_LEVEL).upper(), logging.WARNING)
    logger.setLevel(resolved)

    if not getattr(logger, '_psygames_configured', False):
        formatter = logging.Formatter(LOG_FORMAT)
        if config_class.LOG_FILE_PATH:
            log_dir = os.path.dirname(config_class.LOG_FILE_PATH)
            try:
                if log_dir:
                    os.makedirs(log_dir, exist_ok=True)
                file_handler = RotatingFileHandler(config_class.LOG_FILE_PATH, maxBytes=10240, backupCount=10)
                file_handler.setFormatter(formatter)
                logger.addHandler(file_handler)
            except OSError as e:
                # Fall back to stderr only.
                logging.getLogger(__name__).error(f"Could not open log file '{config_class.LOG_FILE_PATH}': {e}")
        if config_class.LOG_TO_STDERR:
            stream_handler = logging.StreamHandler()
            stream_handler.setFormatter(formatter)
            logger.addHandler(stream_handler)
        logger.propagate = False
        logger._psygames_configured = True

    for handler in logger.handlers:
        handler.setLevel(resolved)
    logger.debug('psygames logging initialised')
    return logger
