"""
Per-step training metrics.

Each step becomes one tab-separated line in the metrics log
    step  L_LLM  L_valid  lambda1  lambda2  mean_p_valid
(`nan` where a column does not apply) and one JSON message on `app.metrics`.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from app.logging_config import METRICS_LOGGER

metrics_logger = logging.getLogger(METRICS_LOGGER)

COLUMNS = ("step", "L_LLM", "L_valid", "lambda1", "lambda2", "mean_p_valid")


@dataclass(frozen=True)
class StepMetrics:
    step: int
    L_LLM: float = math.nan
    L_valid: float = math.nan
    lambda1: float = math.nan
    lambda2: float = math.nan
    mean_p_valid: float = math.nan

    def line(self) -> str:
        values = [str(self.step)] + [format(getattr(self, c), ".10g") for c in COLUMNS[1:]]
        return "\t".join(values)


class MetricsLog:
    """Appends step lines to a TSV file; the header is written only for a new file."""

    def __init__(self, path: Optional[Path], run: str):
        self.path = Path(path) if path else None
        self.run = run
        self.history: list[StepMetrics] = []
        if self.path is not None and not self.path.exists():
            self.path.write_text("\t".join(COLUMNS) + "\n", encoding="utf-8")

    def record(self, metrics: StepMetrics) -> None:
        self.history.append(metrics)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(metrics.line() + "\n")
        log_data = {"run": self.run, **asdict(metrics)}
        metrics_logger.info(json.dumps(log_data))
