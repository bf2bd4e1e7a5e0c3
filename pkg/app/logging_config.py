"""Logging setup.

Operational messages go to stderr as `time level logger message` lines. Messages
that carry data are a single JSON object built as a `log_data` dict, e.g.

    {"event": "dataset", "records": 1000, "valid_fraction": 0.41}

Per-step training metrics go to the `app.metrics` logger.
"""

import logging
import sys

METRICS_LOGGER = "app.metrics"

_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: str = "INFO") -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_workbench", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_FORMAT))
    handler._workbench = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(level)


def progress_enabled() -> bool:
    """tqdm bars only when stderr is a terminal."""
    return sys.stderr.isatty()
