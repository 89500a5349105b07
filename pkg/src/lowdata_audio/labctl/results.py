# Copyright 2024 The lowdata-audio Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Result rows, their aggregation into accuracy curves and CSV output."""

from typing import Any, Iterable

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from lowdata_audio.errors import ArgumentError


logger = logging.getLogger(__name__)


RESULT_DTYPES = {
    "strategy": str,
    "n": "int64",
    "fold": str,
    "run": "int64",
    "seed": "int64",
    "accuracy": "float64",
    "epochs_trained": "int64",
    "wall_seconds": "float64",
    "compression": str,
    "distance": str,
    "error": str,
}
RESULT_COLUMNS = list(RESULT_DTYPES)
TIMING_COLUMNS = ["wall_seconds"]
FORMATS = ("csv", "curve_csv")
FLOAT_FORMAT = "%.17g"

# Published mean accuracies per (strategy, n)
_N_VALUES = (1, 2, 5, 10, 20, 50, 100)
_US8K = {
    "nn_mfcc": (20.57, 23.03, 27.15, 31.40, 36.45, 40.89, 43.81),
    "sbcnn": (18.30, 22.81, 29.89, 36.66, 42.34, 53.19, 60.43),
    "vgg": (16.58, 22.03, 27.94, 32.41, 35.49, 58.62, 67.41),
    "timbre": (18.98, 24.95, 34.21, 40.12, 37.70, 46.11, 49.57),
    "protonet": (21.69, 30.02, 43.58, 51.14, 58.86, 62.14, 63.08),
    "nn_features": (40.17, 46.00, 52.02, 56.91, 59.42, 62.85, 65.47),
    "transfer_softmax": (38.15, 48.44, 59.89, 63.81, 67.64, 71.95, 74.26),
    "transfer_proto": (31.48, 40.82, 54.61, 61.48, 67.07, 71.47, 73.28),
    "random": (9.99,) * 7,
}
_ASC_TUT = {
    "nn_mfcc": (26.33, 30.52, 33.31, 39.21, 41.99, 45.98, 48.66),
    "sbcnn": (13.70, 18.08, 21.24, 27.81, 36.61, 52.32, 58.56),
    "vgg": (17.01, 20.05, 20.36, 29.45, 44.58, 52.46, 57.71),
    "timbre": (17.00, 20.21, 25.40, 27.74, 39.02, 46.61, 50.16),
    "protonet": (18.16, 24.68, 35.36, 45.39, 53.78, 62.03, 67.78),
    "nn_features": (32.18, 39.58, 43.56, 49.09, 51.39, 54.28, 55.69),
    "transfer_softmax": (35.18, 40.13, 46.09, 50.53, 54.00, 58.79, 60.56),
    "transfer_proto": (24.25, 31.91, 44.41, 49.15, 53.09, 60.22, 60.39),
    "random": (6.66,) * 7,
}
PUBLISHED_REFERENCE: dict[str, dict[tuple[str, int], float]] = {
    dataset: {
        (strategy, n): value / 100.0
        for strategy, values in table.items()
        for n, value in zip(_N_VALUES, values)
    }
    for dataset, table in (("us8k", _US8K), ("asc-tut", _ASC_TUT))
}


def _normalize(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.reindex(columns=RESULT_COLUMNS)
    frame["error"] = frame["error"].fillna("")
    for column in ("compression", "distance"):
        frame[column] = frame[column].fillna("")
    return frame.astype(RESULT_DTYPES).reset_index(drop=True)


@dataclass
class ResultsTable:
    """One row per trained and evaluated model.

    Attrs:
        frame: The rows with the columns strategy, n, fold, run, seed,
            accuracy, epochs_trained, wall_seconds, compression, distance
            and error. Failed runs have an empty accuracy and the error
            message in the error column.
    """
    frame: pd.DataFrame

    def __post_init__(self) -> None:
        self.frame = _normalize(self.frame)
        accuracy = self.frame["accuracy"].dropna()
        if ((accuracy < 0) | (accuracy > 1)).any():
            raise ArgumentError("Accuracies have to be in [0, 1]")

    @classmethod
    def from_rows(cls, rows: Iterable[dict[str, Any]]) -> "ResultsTable":
        return cls(pd.DataFrame(list(rows), columns=RESULT_COLUMNS))

    @classmethod
    def concat(cls, tables: Iterable["ResultsTable"]) -> "ResultsTable":
        return cls(pd.concat([table.frame for table in tables], ignore_index=True))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def errors(self) -> pd.DataFrame:
        return self.frame[self.frame["error"] != ""]

    def equals(self, other: "ResultsTable", ignore_timing: bool = True) -> bool:
        """Compare two tables, by default without their wall-clock times."""
        columns = [c for c in RESULT_COLUMNS if not (ignore_timing and c in TIMING_COLUMNS)]
        return self.frame[columns].equals(other.frame[columns])


def read_results(path: str) -> ResultsTable:
    frame = pd.read_csv(path, dtype={"fold": str, "error": str, "compression": str, "distance": str, "strategy": str})
    return ResultsTable(frame)


def aggregate(results: ResultsTable, reference: str | None = None) -> pd.DataFrame:
    """Average accuracies over all folds and runs of every (strategy, n) cell.

    Error rows are left out. The standard deviation is the population one.

    Args:
        results: The raw results.
        reference: Optionally 'us8k' or 'asc-tut' to add the published
            accuracies as a reference column.

    Returns:
        One row per (strategy, n) with mean, std, runs and errors, sorted
        by strategy and n.

    Raises:
        ArgumentError: No successful rows or an unknown reference.
    """
    if reference is not None and reference not in PUBLISHED_REFERENCE:
        raise ArgumentError(f"Unknown reference '{reference}', expected one of {list(PUBLISHED_REFERENCE)}")
    frame = results.frame
    ok = frame[frame["error"] == ""]
    if ok.empty:
        raise ArgumentError("Can't aggregate a results table without successful rows")

    grouped = ok.groupby(["strategy", "n"], sort=True)["accuracy"]
    curve = pd.DataFrame(
        {
            "mean": grouped.mean(),
            "std": grouped.std(ddof=0),
            "runs": grouped.count(),
        }
    ).reset_index()
    failed = frame[frame["error"] != ""].groupby(["strategy", "n"]).size()
    curve["errors"] = [int(failed.get((s, n), 0)) for s, n in zip(curve["strategy"], curve["n"])]
    if reference is not None:
        table = PUBLISHED_REFERENCE[reference]
        curve["reference"] = [table.get((s, int(n)), np.nan) for s, n in zip(curve["strategy"], curve["n"])]
    return curve.sort_values(["strategy", "n"], kind="stable").reset_index(drop=True)


def compression_gains(results: ResultsTable) -> pd.DataFrame:
    """Mean accuracy of log-learn minus log-eps for every (strategy, n).

    Only cells holding both compressions are listed.
    """
    ok = results.frame[results.frame["error"] == ""]
    means = ok.groupby(["strategy", "n", "compression"])["accuracy"].mean().unstack("compression")
    if "log-learn" not in means.columns or "log-eps" not in means.columns:
        return pd.DataFrame(columns=["strategy", "n", "gain"])
    gains = (means["log-learn"] - means["log-eps"]).dropna().rename("gain")
    return gains.reset_index().sort_values(["strategy", "n"], kind="stable").reset_index(drop=True)


def emit(results: ResultsTable, path: str, format: str = "csv", reference: str | None = None) -> None:
    """Write raw rows ('csv') or the aggregated accuracy curve ('curve_csv')."""
    if format not in FORMATS:
        raise ArgumentError(f"Unknown format '{format}', expected one of {FORMATS}")
    if len(results) == 0:
        raise ArgumentError("Can't emit an empty results table")
    frame = results.frame if format == "csv" else aggregate(results, reference)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    logger.info(f"Wrote {len(frame)} {format} rows to '{path}'")
