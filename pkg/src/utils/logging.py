"""
Logging setup and run-record persistence.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

METRICS_FILE = "metrics.jsonl"
CSV_FILE = "metrics.csv"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Union[str, int] = "INFO") -> None:
    """
    Configure the root logger once for a CLI process.

    Args:
        level: Logging level name or number
    """
    if isinstance(level, str):
        level = level.upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


class MetricsLogger:
    """
    Append-only JSONL writer for MetricsRecord dictionaries.

    Records are grouped by their "kind"; the step field must strictly increase
    within each kind. One logger per run directory.
    """

    def __init__(self, run_dir: Union[str, Path], resume_step: Optional[int] = None):
        """
        Open (or create) the metrics file of a run.

        Args:
            run_dir: Run directory
            resume_step: When resuming, drop every record logged after this step
        """
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.run_dir / METRICS_FILE
        self._last_step: Dict[str, int] = {}

        if resume_step is None:
            self.path.write_text("")
        else:
            kept = [r for r in read_records(self.path) if r["step"] <= resume_step] if self.path.exists() else []
            self.path.write_text("".join(_dumps(r) + "\n" for r in kept))
            for record in kept:
                self._last_step[record["kind"]] = record["step"]

    def log(self, record: Dict[str, Any]) -> None:
        """
        Append one record.

        Args:
            record: Mapping with at least "kind" and "step"

        Raises:
            ValueError: If the step does not increase within the record kind
        """
        kind, step = record["kind"], int(record["step"])
        last = self._last_step.get(kind)
        if last is not None and step <= last:
            raise ValueError(f"Non-increasing step {step} for '{kind}' records (last {last})")
        self._last_step[kind] = step
        with self.path.open("a") as f:
            f.write(_dumps(record) + "\n")

    def export_csv(self) -> Path:
        """Write metrics.csv next to the JSONL file and return its path."""
        out = self.run_dir / CSV_FILE
        records_to_frame(read_records(self.path)).to_csv(out, index=False)
        return out


def _dumps(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def read_records(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Read every record of a metrics.jsonl file."""
    with Path(path).open() as f:
        return [json.loads(line) for line in f if line.strip()]


def records_to_frame(records: List[Dict[str, Any]]) -> pd.DataFrame:
    """DataFrame with "kind" and "step" first and the remaining columns sorted."""
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        return pd.DataFrame(columns=["kind", "step"])
    rest = sorted(c for c in frame.columns if c not in ("kind", "step"))
    return frame[["kind", "step"] + rest]


def load_metrics(run_dir: Union[str, Path], kind: Optional[str] = None) -> pd.DataFrame:
    """Metrics of a run as a DataFrame, optionally filtered to one record kind."""
    frame = records_to_frame(read_records(Path(run_dir) / METRICS_FILE))
    if kind is not None:
        frame = frame[frame["kind"] == kind].dropna(axis=1, how="all").reset_index(drop=True)
    return frame
