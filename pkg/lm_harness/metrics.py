"""
Metrics Writer
Per-step training metrics collected in memory and written as a versioned CSV
"""

from pathlib import Path
from typing import Any, Dict, List, Union

import pandas as pd
from loguru import logger

from tensor_core.errors import ContractError

METRICS_FORMAT_TAG = "# dstoy-metrics v1"
LEADING_COLUMNS = ["stage_index", "stage", "step"]


class MetricsWriter:
    """Rows keyed by stage and step.

    The CSV starts with the format tag line, then a header of the leading
    columns followed by every metric name in order of first appearance. Cells
    a stage never reports are left empty.
    """

    def __init__(self):
        self.rows: List[Dict[str, Any]] = []

    def log(self, stage_index: int, stage: str, step: int, values: Dict[str, Any]) -> None:
        row = {"stage_index": stage_index, "stage": stage, "step": step}
        row.update(values)
        self.rows.append(row)

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.rows)
        if df.empty:
            return pd.DataFrame(columns=LEADING_COLUMNS)
        others = [c for c in df.columns if c not in LEADING_COLUMNS]
        return df[LEADING_COLUMNS + others]

    def column(self, name: str, stage: str = None) -> List[float]:
        return [row[name] for row in self.rows
                if name in row and (stage is None or row["stage"] == stage)]

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(METRICS_FORMAT_TAG + "\n")
            self.frame().to_csv(f, index=False, float_format="%.17g")
        logger.info(f"Wrote {len(self.rows)} metric rows to {path}")
        return path


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        tag = f.readline().strip()
        if tag != METRICS_FORMAT_TAG:
            raise ContractError(f"{path} is not a metrics file (format tag '{tag}')")
        return pd.read_csv(f)
