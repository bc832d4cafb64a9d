"""JSON documents for trained parameters.

Checkpoints are parsed back through these models, so a truncated or
hand-edited file fails loudly with a pydantic `ValidationError`.
"""
from typing import Literal, Optional

from pydantic import BaseModel, Field

from src.schemas.distribution import DistributionSpec
from src.schemas.training import MechanismMode, TrainConfig

COR_NET_FORMAT = "ca-ama/cor-net/v1"
CHECKPOINT_FORMAT = "ca-ama/checkpoint/v1"


class PaymentBlockDocument(BaseModel):
    """Row-major weight arrays of one bidder's payment network."""
    W1: list[list[float]]
    b1: list[float]
    W2: list[list[float]]
    b2: list[float]
    W3: list[list[float]]
    b3: list[float]


class CorNetDocument(BaseModel):
    format: Literal["ca-ama/cor-net/v1"] = COR_NET_FORMAT
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    h1: int = Field(ge=1)
    h2: int = Field(ge=1)
    use_bias: bool = True
    blocks: list[PaymentBlockDocument]


class RawAmaDocument(BaseModel):
    """Unconstrained AMA parameters: logits shaped S x m x (n+1)."""
    menu_logits: list[list[list[float]]]
    weight_logits: list[float]
    boosts: list[float]
    temperature_feas: float = Field(default=1.0, gt=0.0)


class CheckpointDocument(BaseModel):
    """Everything needed to rebuild and re-evaluate a trained mechanism.

    Attributes:
        mode: Which mechanism family was trained.
        distribution: Valuation distribution of the training run.
        config: Hyperparameters of the run.
        raw: Trainable AMA parameters (absent for VCG).
        cor: Payment networks (absent unless mode is CAAMA).
        iter: Iterations completed.
        gamma: Final penalty strength.
        seed: Seed of the run.
    """
    format: Literal["ca-ama/checkpoint/v1"] = CHECKPOINT_FORMAT
    mode: MechanismMode
    distribution: DistributionSpec
    config: TrainConfig
    raw: Optional[RawAmaDocument] = None
    cor: Optional[CorNetDocument] = None
    iter: int = 0
    gamma: float = 0.0
    seed: int = 0


def parse_checkpoint(payload: dict) -> CheckpointDocument:
    """Validate a decoded checkpoint JSON object."""
    return CheckpointDocument.model_validate(payload)
