"""Long-format CSV ingestion and run-artifact emission.

Data files are UTF-8 CSV with header ``subject,feature,time,value``.
Subjects and features are relabeled to dense 0-based indices (numeric
label order when every label parses as a number); the label maps are
written alongside decomposition outputs.

A decomposition run emits, with numbers at 17 significant digits so
doubles round-trip exactly:

    A.csv, B.csv      factor tables (one row per subject / feature)
    theta.csv         kernel coefficient table (one row per component)
    grid.csv          the global time grid
    trajectory.csv    per-iteration (or per-epoch) loss and wall time
    summary           run metadata, stable key order
    subjects.csv, features.csv   label maps
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .kernels import KernelSpec
from .tensor import GlobalGrid, FactorModel, TensorError, UnalignedTensor, build_tensor, relabel

DATA_HEADER = ["subject", "feature", "time", "value"]
FMT = "%.17g"


class CsvFormatError(ValueError):
    """Malformed data CSV; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def read_records(path):
    """Parse a long-format CSV into (subject, feature, time, value) rows."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DATA_HEADER:
            raise CsvFormatError(path, 1, f"expected header {','.join(DATA_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise CsvFormatError(path, line_no, f"expected 4 fields, got {len(row)}")
            try:
                records.append((row[0], row[1], float(row[2]), float(row[3])))
            except ValueError as exc:
                raise CsvFormatError(path, line_no, str(exc)) from None
    if not records:
        raise CsvFormatError(path, 2, "no data rows")
    return records


def load_tensor(path, rescale=False):
    """Read a data CSV; returns (tensor, subject labels, feature labels)."""
    records = read_records(path)
    tensor = build_tensor(records, rescale=rescale)
    return tensor, relabel(r[0] for r in records), relabel(r[1] for r in records)


def write_tensor(path, x: UnalignedTensor, subject_labels=None, feature_labels=None):
    """Write a tensor as long-format CSV (dense indices unless labels given)."""
    subject_labels = subject_labels or list(range(x.n))
    feature_labels = feature_labels or list(range(x.p))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATA_HEADER)
        for i in range(x.n):
            for s, t in enumerate(x.times[i]):
                for j in range(x.p):
                    writer.writerow(
                        [
                            subject_labels[i],
                            feature_labels[j],
                            FMT % t,
                            FMT % x.values[i][s, j],
                        ]
                    )


def _write_matrix(path, mat):
    np.savetxt(path, np.atleast_2d(mat), delimiter=",", fmt=FMT)


def _write_labels(path, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, lab])


def write_model(out_dir, model: FactorModel, subject_labels=None, feature_labels=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "A.csv", model.A)
    _write_matrix(out / "B.csv", model.B)
    _write_matrix(out / "theta.csv", model.Theta)
    _write_matrix(out / "grid.csv", model.grid.points.reshape(1, -1))
    if subject_labels is not None:
        _write_labels(out / "subjects.csv", subject_labels)
    if feature_labels is not None:
        _write_labels(out / "features.csv", feature_labels)


def load_model(out_dir) -> FactorModel:
    """Rebuild a FactorModel from an artifact directory (reads `summary`
    for the kernel name)."""
    out = Path(out_dir)
    meta = read_summary(out / "summary")
    kern = KernelSpec(meta["kernel"])
    a = np.loadtxt(out / "A.csv", delimiter=",", ndmin=2)
    b = np.loadtxt(out / "B.csv", delimiter=",", ndmin=2)
    theta = np.loadtxt(out / "theta.csv", delimiter=",", ndmin=2)
    grid = GlobalGrid(np.loadtxt(out / "grid.csv", delimiter=",").ravel())
    return FactorModel(a, b, theta, grid, kern)


def write_trajectory(path, losses, wall_times, plan_seeds=None, row_label="iteration",
                     loss_label="relative_loss"):
    """Trajectory CSV: row 0 is the initialization at wall time 0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [row_label, loss_label, "wall_time_sec"]
        if plan_seeds is not None:
            header.append("plan_seed")
        writer.writerow(header)
        for h, (loss, t) in enumerate(zip(losses, wall_times)):
            row = [h, FMT % loss, FMT % t]
            if plan_seeds is not None:
                row.append("" if h == 0 else plan_seeds[h - 1])
            writer.writerow(row)


def write_summary(path, fields: dict):
    """Key = value metadata lines, in the given (stable) order."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in fields.items():
            if isinstance(val, float):
                val = FMT % val
            fh.write(f"{key} = {val}\n")


def read_summary(path) -> dict:
    fields = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            fields[key.strip()] = val.strip()
    return fields


def artifact_dir(cli_value, env_var="RAGGEDCP_OUT"):
    """Artifact directory: the env var overrides the CLI value."""
    return Path(os.environ.get(env_var) or cli_value)
