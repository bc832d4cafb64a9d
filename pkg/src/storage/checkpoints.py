"""Checkpoint JSON bundles of trained mechanisms."""
import logging
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from src.core.errors import StorageError
from src.schemas.checkpoint import CheckpointDocument, parse_checkpoint
from src.schemas.distribution import DistributionSpec
from src.schemas.training import TrainConfig
from src.services.cor_net import CorPaymentNet
from src.services.relaxation import RawAmaParams
from src.services.trainer import TrainState
from src.storage.tables import PathLike, read_json, write_json

logger = logging.getLogger(__name__)


def checkpoint_from_state(state: TrainState, cfg: TrainConfig, spec: DistributionSpec) -> CheckpointDocument:
    return CheckpointDocument(
        mode=state.mode,
        distribution=spec,
        config=cfg,
        raw=state.raw.to_document(),
        cor=state.cor.to_document() if state.cor is not None else None,
        iter=state.iter,
        gamma=state.gamma,
        seed=cfg.seed,
    )


def save_checkpoint(doc: CheckpointDocument, path: PathLike) -> Path:
    path = write_json(doc, path)
    logger.info("Saved %s checkpoint at iteration %d to %s", doc.mode.value, doc.iter, path)
    return path


def load_checkpoint(path: PathLike) -> CheckpointDocument:
    """Parse a checkpoint file; malformed documents raise `StorageError`."""
    try:
        return parse_checkpoint(read_json(path))
    except ValidationError as exc:
        raise StorageError(f"Invalid checkpoint {path}: {exc}") from exc


def restore(doc: CheckpointDocument) -> tuple[Optional[RawAmaParams], Optional[CorPaymentNet]]:
    """Trainable parameters held by a checkpoint."""
    raw = RawAmaParams.from_document(doc.raw) if doc.raw is not None else None
    cor = CorPaymentNet.from_document(doc.cor) if doc.cor is not None else None
    return raw, cor
