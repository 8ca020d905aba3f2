"""
Results archive layout::

    <root>/manifest.json          run metadata, configuration, failures
    <root>/records.csv            one row per repetition x cell x metric
    <root>/metrics.csv            mean and sd per (rate, q, method, mapping, metric)
    <root>/age_histograms.csv     selected age-bracket shares (ensemble vs equal utility)
    <root>/risk_by_group.json     score distributions by race and illness level
    <root>/samples/<method>/q<q>_p<p>_d<d>/   persisted Rashomon samples
    <root>/figures/<id>.csv       emitted plot data
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from modules.multiplicity.domain import RashomonSample
from modules.multiplicity.exceptions import MissingMetricError
from modules.multiplicity.rashomon import load_rashomon_sample, save_rashomon_sample
from modules.multiplicity.summary import MeanSD

logger = logging.getLogger(__name__)

CELL_COLUMNS = ["selection_rate", "q", "method", "mapping", "metric"]
RECORD_COLUMNS = ["partition", "draw", "q", "selection_rate", "method", "mapping", "metric", "value"]
METRIC_COLUMNS = CELL_COLUMNS + ["count", "missing", "mean", "sd"]
FLOAT_FORMAT = "%.10g"


def aggregate_records(records: pd.DataFrame) -> pd.DataFrame:
    """Collapse repetitions into one row per cell with count, missing, mean and sd."""
    rows: List[Dict[str, Any]] = []
    if not records.empty:
        for key, group in records.groupby(CELL_COLUMNS, sort=True):
            summary = MeanSD.from_values(group["value"])
            rows.append({**dict(zip(CELL_COLUMNS, key)), **summary.model_dump(include={"count", "missing", "mean", "sd"})})
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


class ResultsArchive:
    """Reads and writes one results directory."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    @property
    def figures_dir(self) -> Path:
        return self.root / "figures"

    def sample_dir(self, method: str, q: int, partition: int, draw: int) -> Path:
        return self.root / "samples" / method / f"q{q}_p{partition}_d{draw}"

    def write_sample(self, sample: RashomonSample, method: str, q: int, partition: int, draw: int, seeds: Dict[str, Any]) -> Path:
        return save_rashomon_sample(sample, self.sample_dir(method, q, partition, draw), seeds)

    def read_sample(self, method: str, q: int, partition: int = 0, draw: int = 0) -> RashomonSample:
        return load_rashomon_sample(self.sample_dir(method, q, partition, draw))

    def write(
        self,
        records: List[Dict[str, Any]],
        failures: List[Dict[str, Any]],
        age_rows: List[Dict[str, Any]],
        risk: Dict[str, Any],
        manifest: Dict[str, Any],
    ) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(records, columns=RECORD_COLUMNS)
        frame.to_csv(self.root / "records.csv", index=False, float_format=FLOAT_FORMAT)
        aggregate_records(frame).to_csv(self.root / "metrics.csv", index=False, float_format=FLOAT_FORMAT)
        pd.DataFrame(age_rows).to_csv(self.root / "age_histograms.csv", index=False, float_format=FLOAT_FORMAT)
        with open(self.root / "risk_by_group.json", "w") as f:
            json.dump(risk, f, indent=2, sort_keys=True)
        with open(self.root / "manifest.json", "w") as f:
            json.dump({**manifest, "failures": failures}, f, indent=2, sort_keys=True)
        if failures:
            logger.warning("%d stages failed; see %s", len(failures), self.root / "manifest.json")

    def _require(self, name: str) -> Path:
        path = self.root / name
        if not path.exists():
            raise MissingMetricError(f"{path} not found; run an experiment into {self.root} first")
        return path

    def load_manifest(self) -> Dict[str, Any]:
        with open(self._require("manifest.json"), "r") as f:
            return json.load(f)

    def load_records(self) -> pd.DataFrame:
        return pd.read_csv(self._require("records.csv"))

    def load_metrics(self) -> pd.DataFrame:
        return pd.read_csv(self._require("metrics.csv"))

    def load_age_histograms(self) -> pd.DataFrame:
        return pd.read_csv(self._require("age_histograms.csv"))

    def load_risk(self) -> Dict[str, Any]:
        with open(self._require("risk_by_group.json"), "r") as f:
            return json.load(f)

    def metric(self, name: str, method: Optional[str] = None, mapping: Optional[str] = None) -> pd.DataFrame:
        """Aggregated rows of one metric, optionally narrowed to a method and mapping."""
        metrics = self.load_metrics()
        rows = metrics[metrics["metric"] == name]
        if method is not None:
            rows = rows[rows["method"] == method]
        if mapping is not None:
            rows = rows[rows["mapping"] == mapping]
        if rows.empty:
            raise MissingMetricError(f"Metric '{name}' is not in {self.root / 'metrics.csv'}")
        return rows.reset_index(drop=True)
