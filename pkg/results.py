import json
import math
import os
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone

import pandas as pd

from errors import DataError
from global_settings import LAB_VERSION, SIGNIFICANCE_FACTOR, SIGNIFICANCE_RULE
from logging_functions import log_action

COLUMNS = ["experiment", "shape", "h", "quantity", "value", "error", "seed"]

# statuses that make a run exit with code 2
FAILING_STATUSES = ("violated", "inconclusive", "failed")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    shape: str
    h: float
    quantity: str
    value: float
    error: float
    seed: int = None


class ResultTable:
    """
    Ordered result rows of one experiment.

    Rows are kept in the order they are added, which the orchestrator keeps
    equal to the configuration order; the CSV is therefore byte-identical
    across runs with the same configuration.
    """

    def __init__(self, experiment, rows=None):
        self.experiment = experiment
        self.rows = list(rows or [])

    def __len__(self):
        return len(self.rows)

    def add(self, shape, h, quantity, value, error, seed=None):
        self.rows.append(ResultRow(self.experiment, shape, float(h), quantity, float(value), float(error), seed))

    def to_dataframe(self):
        df = pd.DataFrame([asdict(row) for row in self.rows], columns=COLUMNS)
        return df.astype(
            {
                "experiment": "str",
                "shape": "str",
                "h": "float",
                "quantity": "str",
                "value": "float",
                "error": "float",
                "seed": "Int64",
            }
        )

    def value(self, shape, h, quantity):
        for row in self.rows:
            if row.shape == shape and row.h == h and row.quantity == quantity:
                return row.value
        raise KeyError((shape, h, quantity))

    def select(self, quantity):
        return [row for row in self.rows if row.quantity == quantity]

    def save_to_csv(self, filename):
        """Write the table after a '# ' header line stating the significance rule."""
        with open(filename, "w", newline="") as file:
            file.write(f"# {SIGNIFICANCE_RULE}\n")
            self.to_dataframe().to_csv(file, index=False, float_format="%.17g", lineterminator="\n")
        log_action(f"{len(self.rows)} rows written to {filename}", action_type="OUTPUT")

    @classmethod
    def load_from_csv(cls, filename):
        try:
            df = pd.read_csv(
                filename,
                comment="#",
                dtype={"experiment": str, "shape": str, "quantity": str},
                float_precision="round_trip",
            )
        except (OSError, pd.errors.ParserError) as e:
            raise DataError(f"cannot read result table {filename}: {e}") from e
        if list(df.columns) != COLUMNS:
            raise DataError(f"unexpected columns {list(df.columns)} in {filename}")
        experiment = str(df["experiment"].iloc[0]) if len(df) else ""
        table = cls(experiment)
        for record in df.to_dict("records"):
            seed = record["seed"]
            table.rows.append(
                ResultRow(
                    record["experiment"],
                    record["shape"],
                    float(record["h"]),
                    record["quantity"],
                    float(record["value"]),
                    float(record["error"]),
                    None if pd.isna(seed) else int(seed),
                )
            )
        return table


def classify(gap, error, reference=False):
    """
    Verdict status of a comparison whose expected sign is gap > 0.

    confirmed: gap > 3 x error; violated: gap < -3 x error; inconclusive
    otherwise or when no finite error is available; reference when the
    compared shape is itself the extremal one.
    """
    if reference:
        return "reference"
    if not math.isfinite(error):
        return "inconclusive"
    if gap > SIGNIFICANCE_FACTOR * error:
        return "confirmed"
    if gap < -SIGNIFICANCE_FACTOR * error:
        return "violated"
    return "inconclusive"


@dataclass(frozen=True)
class Verdict:
    experiment: str
    shape: str
    h: float
    quantity: str
    gap: float
    error: float
    status: str

    @property
    def failed(self):
        return self.status in FAILING_STATUSES

    def to_dict(self):
        return asdict(self)


def check_verdict(experiment, shape, h, quantity, passed, gap=0.0, error=0.0):
    """Verdict for a pass/fail invariant check rather than a signed comparison."""
    return Verdict(experiment, shape, float(h), quantity, float(gap), float(error), "passed" if passed else "failed")


class ExperimentResult:
    """
    Table, verdicts and extra artifacts of one experiment run.

    Attributes:
        table (ResultTable): Result rows.
        verdicts (list[Verdict]): Comparison and check verdicts, in run order.
        notes (dict): JSON-ready extras for the manifest (trends, flags).
        artifacts (dict): File name -> callable(path) writing a side output.
    """

    def __init__(self, experiment):
        self.table = ResultTable(experiment)
        self.verdicts = []
        self.notes = {}
        self.artifacts = {}

    @property
    def experiment(self):
        return self.table.experiment

    def add_verdict(self, verdict):
        self.verdicts.append(verdict)
        log_action(
            f"{verdict.experiment} {verdict.shape} h={verdict.h:g} {verdict.quantity}: "
            f"{verdict.status} (gap {verdict.gap:.6g}, error {verdict.error:.3g})",
            action_type="VERDICT",
        )

    @property
    def exit_code(self):
        return 2 if any(v.failed for v in self.verdicts) else 0


class RunManifest:
    """
    JSON record of one run: configuration echo, version, timing and verdicts.
    """

    def __init__(self, config_dict):
        self.config = config_dict
        self.version = LAB_VERSION
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self._t0 = time.perf_counter()
        self.wall_clock = None
        self.outputs = []
        self.verdicts = []
        self.notes = {}

    def finish(self, result, outputs):
        self.wall_clock = time.perf_counter() - self._t0
        self.outputs = list(outputs)
        self.verdicts = [v.to_dict() for v in result.verdicts]
        self.notes = result.notes
        return self

    def to_dict(self):
        return {
            "version": self.version,
            "started": self.started,
            "wall_clock_seconds": self.wall_clock,
            "significance_rule": SIGNIFICANCE_RULE,
            "config": self.config,
            "outputs": self.outputs,
            "verdicts": self.verdicts,
            "notes": self.notes,
        }

    def save_to_file(self, filename):
        with open(filename, "w") as file:
            json.dump(self.to_dict(), file, indent=4, default=str)
        log_action(f"manifest written to {filename}", action_type="OUTPUT")


def write_outputs(result, manifest, output_dir):
    """
    Write `<experiment>.csv`, side artifacts and `manifest.json` into output_dir.

    Returns:
        list[str]: Paths written, manifest last.
    """
    os.makedirs(output_dir, exist_ok=True)
    csv_path = os.path.join(output_dir, f"{result.experiment}.csv")
    result.table.save_to_csv(csv_path)
    written = [csv_path]
    for name, writer in result.artifacts.items():
        path = os.path.join(output_dir, name)
        writer(path)
        written.append(path)
    manifest_path = os.path.join(output_dir, "manifest.json")
    manifest.finish(result, written).save_to_file(manifest_path)
    written.append(manifest_path)
    return written
