"""logger service"""
import logging

from config import Config

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(app=None, level=None):
    """Configure root logging once; attach the handlers to a Flask app when given."""
    level = level or Config.LOG_LEVEL
    logging.basicConfig(level=level, format=LOG_FORMAT)
    root = logging.getLogger()
    root.setLevel(level)
    if app is not None:
        app.logger.handlers = root.handlers
        app.logger.setLevel(root.level)


logger = logging.getLogger(__name__)
