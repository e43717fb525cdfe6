"""
Readers and writers for every on-disk artifact.

CSV files use a header row and plain ``str(float)`` cells, which Python
writes as the shortest repr that parses back to the same double.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from . import FORMAT_VERSION
from .errors import InvalidInputError
from .experiment import RECORD_COLUMNS, EpochRecord
from .model import Checkpoint, ModelSpec, validate_params
from .models import InputDiagnostics
from .risk import Dataset, JointDistribution

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_rows(path: PathLike) -> List[List[str]]:
    try:
        with open(path, newline="") as f:
            rows = [row for row in csv.reader(f) if row]
    except OSError as e:
        raise InvalidInputError(f"cannot read {path}: {e}") from e
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    return rows


def _feature_header(header: Sequence[str], trailing: Sequence[str], path: PathLike) -> int:
    """Number of feature columns in a header ``f0,…,f{d-1},<trailing>``."""
    d = len(header) - len(trailing)
    expected = [f"f{i}" for i in range(d)] + list(trailing)
    if d < 1 or list(header) != expected:
        raise InvalidInputError(f"{path}: expected header {','.join(expected) if d >= 1 else 'f0,…'}, got {','.join(header)}")
    return d


def _parse_float(cell: str, path: PathLike, line: int) -> float:
    try:
        value = float(cell)
    except ValueError as e:
        raise InvalidInputError(f"{path}:{line}: {cell!r} is not a number") from e
    if not np.isfinite(value):
        raise InvalidInputError(f"{path}:{line}: value must be finite")
    return value


def _parse_label(cell: str, path: PathLike, line: int) -> int:
    try:
        label = int(cell)
    except ValueError as e:
        raise InvalidInputError(f"{path}:{line}: label {cell!r} is not an integer") from e
    if label < 0:
        raise InvalidInputError(f"{path}:{line}: label must be non-negative")
    return label


def _write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_dataset_csv(path: PathLike, num_classes: Optional[int] = None) -> Dataset:
    """
    Load samples from ``f0,…,f{d-1},label`` and group identical feature rows.

    Without ``num_classes`` the label alphabet is 0..max(label).
    """
    header, *body = _read_rows(path)
    d = _feature_header(header, ["label"], path)
    if not body:
        raise InvalidInputError(f"{path} has no samples")
    X = np.empty((len(body), d))
    y = np.empty(len(body), dtype=np.int64)
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != d + 1:
            raise InvalidInputError(f"{path}:{line}: expected {d + 1} cells, got {len(row)}")
        X[i] = [_parse_float(cell, path, line) for cell in row[:d]]
        y[i] = _parse_label(row[d], path, line)
    k = int(y.max()) + 1 if num_classes is None else num_classes
    dataset = Dataset.from_samples(X, y, k)
    logger.info("Loaded %d samples over %d distinct inputs from %s", len(body), dataset.size, path)
    return dataset


def write_dataset_csv(path: PathLike, dataset: Dataset) -> None:
    X, y = dataset.expand()
    header = [f"f{i}" for i in range(dataset.input_dim)] + ["label"]
    _write_csv(path, header, ([*map(float, x), int(label)] for x, label in zip(X, y)))


def write_joint_csv(path: PathLike, q_bar: JointDistribution) -> None:
    """One row ``f0,…,label,probability`` per cell of the ground-truth joint."""
    header = [f"f{i}" for i in range(q_bar.features.shape[1])] + ["label", "probability"]
    rows = (
        [*map(float, x), label, float(q_bar.probs[i, label])]
        for i, x in enumerate(q_bar.features)
        for label in range(q_bar.num_classes)
    )
    _write_csv(path, header, rows)


def read_joint_csv(path: PathLike) -> JointDistribution:
    header, *body = _read_rows(path)
    d = _feature_header(header, ["label", "probability"], path)
    cells: Dict[tuple, Dict[int, float]] = {}
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != d + 2:
            raise InvalidInputError(f"{path}:{line}: expected {d + 2} cells, got {len(row)}")
        x = tuple(_parse_float(cell, path, line) for cell in row[:d])
        label = _parse_label(row[d], path, line)
        if label in cells.setdefault(x, {}):
            raise InvalidInputError(f"{path}:{line}: duplicate cell")
        cells[x][label] = _parse_float(row[d + 1], path, line)
    if not cells:
        raise InvalidInputError(f"{path} has no cells")
    k = max(label for row in cells.values() for label in row) + 1
    features = np.array(list(cells))
    probs = np.zeros((len(cells), k))
    for i, row in enumerate(cells.values()):
        for label, p in row.items():
            probs[i, label] = p
    return JointDistribution(features=features, probs=probs)


def write_records_csv(path: PathLike, records: Sequence[EpochRecord]) -> None:
    _write_csv(path, RECORD_COLUMNS, (r.row() for r in records))


def read_records_csv(path: PathLike) -> Dict[str, List[float]]:
    """Columns of an epoch-records CSV keyed by name."""
    header, *body = _read_rows(path)
    if tuple(header) != RECORD_COLUMNS:
        raise InvalidInputError(f"{path}: expected header {','.join(RECORD_COLUMNS)}")
    columns: Dict[str, List[float]] = {name: [] for name in RECORD_COLUMNS}
    for i, row in enumerate(body):
        if len(row) != len(RECORD_COLUMNS):
            raise InvalidInputError(f"{path}:{i + 2}: expected {len(RECORD_COLUMNS)} cells")
        for name, cell in zip(RECORD_COLUMNS, row):
            columns[name].append(_parse_float(cell, path, i + 2))
    return columns


def write_decomposition_csv(path: PathLike, rows: Sequence[InputDiagnostics]) -> None:
    header = list(InputDiagnostics.model_fields)
    _write_csv(path, header, ([getattr(r, name) for name in header] for r in rows))


def write_table_csv(path: PathLike, rows: Sequence[Mapping[str, Any]]) -> None:
    """Rows of equal keys, columns in first-row order."""
    if not rows:
        _write_csv(path, [], [])
        return
    header = list(rows[0])
    _write_csv(path, header, ([row[name] for name in header] for row in rows))


def save_checkpoint(path: PathLike, spec: ModelSpec, theta: np.ndarray, seed: Optional[int] = None) -> None:
    checkpoint = Checkpoint(spec=spec, theta=[float(t) for t in validate_params(spec, theta)], seed=seed)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(checkpoint.model_dump_json(indent=2) + "\n")


def load_checkpoint(path: PathLike) -> Checkpoint:
    try:
        checkpoint = Checkpoint.model_validate_json(Path(path).read_text())
    except OSError as e:
        raise InvalidInputError(f"cannot read checkpoint {path}: {e}") from e
    except ValidationError as e:
        raise InvalidInputError(f"invalid checkpoint {path}: {e}") from e
    if checkpoint.format_version != FORMAT_VERSION:
        raise InvalidInputError(
            f"checkpoint {path} has format {checkpoint.format_version}, expected {FORMAT_VERSION}"
        )
    checkpoint.params()
    return checkpoint


def write_report(
    path: PathLike,
    report: Union[BaseModel, Mapping[str, Any]],
    command: str,
    config: Mapping[str, Any],
) -> Dict[str, Any]:
    """
    Write ``{format_version, command, config, report}`` as indented JSON.

    No timestamps go in, so identical runs give identical files.
    """
    body = report.model_dump() if isinstance(report, BaseModel) else dict(report)
    document = {
        "format_version": FORMAT_VERSION,
        "command": command,
        "config": dict(config),
        "report": body,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(document, indent=2, default=str) + "\n")
    return document
