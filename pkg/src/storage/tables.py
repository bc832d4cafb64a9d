"""CSV / JSON / plot-data writers shared by the cli commands.

Every CSV carries a header row and ends with a `# version=... seed=...`
manifest line; `read_table` skips comment lines.
"""
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from src.core.errors import StorageError
from src.storage.provenance import manifest_line

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def write_table(frame: pd.DataFrame, path: PathLike, seed: int) -> Path:
    """Write `frame` as CSV followed by the manifest comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        fh.write(manifest_line(seed) + "\n")
    logger.debug("Wrote %d rows to %s", len(frame), path)
    return path


def write_rows(rows: Iterable[BaseModel], path: PathLike, seed: int, columns: Sequence[str] = ()) -> Path:
    """Write pydantic rows as a table (header from the model fields)."""
    records = [row.model_dump(mode="json") for row in rows]
    frame = pd.DataFrame.from_records(records, columns=list(columns) or None)
    return write_table(frame, path, seed)


def read_table(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise StorageError(f"Cannot read table {path}: {exc}") from exc


def write_json(model: BaseModel, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n")
    logger.debug("Wrote %s", path)
    return path


def read_json(path: PathLike) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"Cannot read JSON document {path}: {exc}") from exc


def write_plot_data(path: PathLike, columns: dict[str, Sequence[float]], seed: int) -> Path:
    """Whitespace-separated columns for gnuplot; the header is a comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[name], dtype=np.float64) for name in names])
    with path.open("w") as fh:
        fh.write("# " + " ".join(names) + "\n")
        np.savetxt(fh, data, fmt="%.10g")
        fh.write(manifest_line(seed) + "\n")
    return path
