"""Dataset files: one CSV row per profile plus a JSON manifest.

Columns are named `v_<bidder>_<item>` (1-based) in bidder-major order.
"""
import logging
import re
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.core.errors import StorageError
from src.schemas.distribution import DatasetManifest
from src.services.distributions import Dataset
from src.storage.tables import PathLike, read_json, read_table, write_json, write_table

logger = logging.getLogger(__name__)

_COLUMN = re.compile(r"^v_(\d+)_(\d+)$")


def manifest_path(csv_path: PathLike) -> Path:
    return Path(csv_path).with_suffix(".json")


def value_columns(n: int, m: int) -> list[str]:
    return [f"v_{i + 1}_{j + 1}" for i in range(n) for j in range(m)]


def write_dataset(dataset: Dataset, path: PathLike) -> tuple[Path, Path]:
    """Write the profiles CSV and its manifest; returns both paths."""
    K, n, m = dataset.profiles.shape
    frame = pd.DataFrame(dataset.profiles.reshape(K, n * m), columns=value_columns(n, m))
    csv_path = write_table(frame, path, dataset.manifest.seed)
    json_path = write_json(dataset.manifest, manifest_path(csv_path))
    logger.info("Wrote dataset of %d profiles to %s", K, csv_path)
    return csv_path, json_path


def read_dataset(path: PathLike) -> Dataset:
    """Read a dataset CSV and its manifest back.

    Raises:
        StorageError: malformed CSV, missing manifest, or a shape mismatch between them.
    """
    try:
        manifest = DatasetManifest.model_validate(read_json(manifest_path(path)))
    except ValidationError as exc:
        raise StorageError(f"Invalid dataset manifest for {path}: {exc}") from exc

    frame = read_table(path)
    n, m = manifest.spec.n, manifest.spec.m
    expected = value_columns(n, m)
    if list(frame.columns) != expected or not all(_COLUMN.match(c) for c in frame.columns):
        raise StorageError(f"Dataset {path} has columns {list(frame.columns)}, expected {expected}")
    if len(frame) != manifest.count:
        raise StorageError(f"Dataset {path} has {len(frame)} rows, manifest says {manifest.count}")

    profiles = frame.to_numpy(dtype=np.float64).reshape(len(frame), n, m)
    return Dataset(profiles=profiles, spec=manifest.spec, manifest=manifest)
