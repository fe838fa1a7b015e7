"""CSV ingestion with a small column schema."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedfusion.data.dataset import FullDataset
from fedfusion.data.partition import train_test_split
from fedfusion.errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass
class CsvSchema:
    target: str
    task: str = "classification"
    columns: dict[str, str] = field(default_factory=dict)  # name -> numeric|categorical
    categorical_encoding: str = "ordinal"  # or onehot

    @classmethod
    def load(cls, source) -> CsvSchema:
        if isinstance(source, CsvSchema):
            return source
        if isinstance(source, dict):
            return cls(**source)
        path = Path(source)
        text = path.read_text(encoding="utf-8")
        data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        return cls(**data)


class CsvError(ValueError):
    pass


def _to_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise CsvError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None


def minmax_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[int]]:
    lo, hi = X.min(axis=0), X.max(axis=0)
    constant = [int(j) for j in np.flatnonzero(hi - lo == 0)]
    return lo, hi, constant


def minmax_apply(X: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    out = (X - lo) / np.where(span == 0, 1.0, span)
    out[:, span == 0] = 0.0
    return out


def scale_dataset(ds: FullDataset) -> FullDataset:
    """Min-max scale every feature with statistics from the training rows only."""
    train = ds.X[~ds.is_test]
    lo, hi, constant = minmax_fit(train)
    if constant:
        log.info("constant columns scaled to zero: %s", [ds.feature_names[j] for j in constant])
    ds.X = minmax_apply(ds.X, lo, hi)
    ds.info = {**ds.info, "constant_columns": constant}
    return ds


def load_csv(
    path,
    schema,
    test_fraction: float = 0.0,
    seed: int = 0,
) -> FullDataset:
    schema = CsvSchema.load(schema)
    if schema.task not in ("classification", "regression"):
        raise ConfigError(f"schema.task must be classification or regression, got {schema.task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if schema.target not in header:
        raise CsvError(f"target column {schema.target!r} not in header")
    for name in schema.columns:
        if name not in header:
            raise CsvError(f"unknown column {name!r} in schema")
    features = [h for h in header if h != schema.target]
    if schema.columns:
        features = [h for h in features if h in schema.columns]
    kinds = {h: schema.columns.get(h, "numeric") for h in features}
    ti = header.index(schema.target)

    kept, dropped = [], 0
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise CsvError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        if row[ti].strip() == "":
            dropped += 1
            continue
        kept.append((r, row))

    columns, names = [], []
    for h in features:
        ci = header.index(h)
        cells = [(r, row[ci].strip()) for r, row in kept]
        if kinds[h] == "categorical":
            levels = sorted({c for _, c in cells})
            if schema.categorical_encoding == "onehot":
                for lev in levels:
                    columns.append([1.0 if c == lev else 0.0 for _, c in cells])
                    names.append(f"{h}={lev}")
            else:
                index = {lev: i for i, lev in enumerate(levels)}
                columns.append([float(index[c]) for _, c in cells])
                names.append(h)
        elif kinds[h] == "numeric":
            columns.append([_to_float(c, r, h) for r, c in cells])
            names.append(h)
        else:
            raise ConfigError(f"column {h!r}: unknown type {kinds[h]!r}")
    X = np.array(columns, dtype=np.float64).T.reshape(len(kept), len(names))

    targets = [row[ti].strip() for _, row in kept]
    if schema.task == "classification":
        classes = sorted(set(targets))
        index = {c: i for i, c in enumerate(classes)}
        y = np.array([index[t] for t in targets], dtype=np.int64)
        n_classes = len(classes)
        info = {"classes": classes}
    else:
        y = np.array([_to_float(t, r, schema.target) for (r, _), t in zip(kept, targets)])
        n_classes, info = None, {}
    info["dropped_missing_target"] = dropped
    ds = FullDataset(X, y, names, schema.task, n_classes, name=Path(path).stem, info=info)
    if test_fraction > 0:
        ds = train_test_split(ds, test_fraction, seed)
    return scale_dataset(ds)
