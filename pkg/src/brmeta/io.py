"""Study-table CSV input and the bundled example datasets.

A study table has a header row and the columns ``study``, ``y`` and either
``se`` (standard error) or ``var`` (variance), plus optional numeric
covariate columns.  An intercept is always included in the design.
"""

from __future__ import annotations

import csv
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import BrmetaError, DomainError, RankDeficiencyError
from .model import Dataset

BUNDLED = {
    "cocoa": {"file": "cocoa.csv", "covariates": ()},
    "meat": {"file": "meat.csv", "covariates": ("processed",)},
}


class DataFormatError(BrmetaError, ValueError):
    """Malformed study table; the message names the row and column."""


def _number(text, row, col):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DataFormatError(f"row {row}, column {col!r}: {text!r} is not a number") from None
    if not math.isfinite(v):
        raise DataFormatError(f"row {row}, column {col!r}: value must be finite")
    return v


def read_study_table(fh, se_column=None, var_column=None, covariates=(), source="<table>") -> Dataset:
    """Parse a study table from an open text file.

    Exactly one of ``se_column`` / ``var_column`` names the precision
    column.  When both are ``None`` the header must contain exactly one of
    the columns ``se`` and ``var``.
    """
    reader = csv.DictReader(fh)
    header = reader.fieldnames
    if not header:
        raise DataFormatError(f"{source}: empty file or missing header row")
    header = [h.strip() for h in header]
    reader.fieldnames = header
    if se_column and var_column:
        raise DataFormatError("give either a standard-error column or a variance column, not both")
    if se_column is None and var_column is None:
        present = [c for c in ("se", "var") if c in header]
        if len(present) != 1:
            raise DataFormatError(
                f"{source}: header must contain exactly one of 'se' or 'var' "
                "(or pass --se-column / --var-column)"
            )
        if present[0] == "se":
            se_column = "se"
        else:
            var_column = "var"
    prec = se_column or var_column
    needed = ["y", prec, *covariates]
    for col in needed:
        if col not in header:
            raise DataFormatError(f"{source}: missing column {col!r} (header: {', '.join(header)})")

    labels, y, s, cov = [], [], [], []
    for i, rec in enumerate(reader, start=2):
        if None in rec or any(v is None for v in rec.values()):
            raise DataFormatError(f"{source}: row {i} has {len(header)} columns expected")
        labels.append((rec.get("study") or f"study{i - 1}").strip())
        y.append(_number(rec["y"], i, "y"))
        v = _number(rec[prec], i, prec)
        if v <= 0:
            raise DataFormatError(f"{source}: row {i}, column {prec!r}: must be positive")
        s.append(v * v if se_column else v)
        cov.append([_number(rec[c], i, c) for c in covariates])
    if len(y) < 2:
        raise DataFormatError(f"{source}: need at least two studies")
    X = np.column_stack([np.ones(len(y)), np.array(cov).reshape(len(y), -1)])
    try:
        return Dataset(y, s, X, labels=labels, names=("intercept", *covariates))
    except RankDeficiencyError:
        raise
    except DomainError as exc:
        raise DataFormatError(f"{source}: {exc}") from None


def read_study_csv(path, se_column=None, var_column=None, covariates=()) -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        return read_study_table(fh, se_column, var_column, covariates, source=str(path))


def bundled_csv_text(name: str) -> str:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    return resources.files("brmeta.data").joinpath(BUNDLED[name]["file"]).read_text("utf-8")


def load_dataset(name: str) -> Dataset:
    """Bundled dataset ``"cocoa"`` (5 studies) or ``"meat"`` (16 studies)."""
    import io

    text = bundled_csv_text(name)
    return read_study_table(io.StringIO(text), covariates=BUNDLED[name]["covariates"], source=name)


def write_study_csv(data: Dataset, fh, measure="var"):
    """Write ``data`` as a study table (``measure`` is ``"var"`` or ``"se"``)."""
    w = csv.writer(fh, lineterminator="\n")
    covs = list(data.names[1:])
    w.writerow(["study", "y", measure, *covs])
    labels = data.labels or [f"study{i + 1}" for i in range(data.K)]
    for i in range(data.K):
        prec = data.sigma2[i] if measure == "var" else math.sqrt(data.sigma2[i])
        w.writerow([labels[i], repr(float(data.y[i])), repr(float(prec)), *[repr(float(v)) for v in data.X[i, 1:]]])
