"""Training hyperparameters and mode enums.

Defaults follow the published experimental setup: 32,000 iterations, batch
2,048, softmax temperature 500, IR-regret target 0.001, penalty step 0.01
capped at 20. gamma0, the menu size and the batch size vary with the auction
shape (`for_shape`); large menus train on batches of 1,024.
"""
from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator


class MechanismMode(str, Enum):
    CAAMA = "CAAMA"
    AMA_ONLY = "AmaOnly"
    VCG = "VCG"


class Stage(str, Enum):
    MUTUAL = "mutual"
    POST = "post"
    BASELINE = "baseline"


# (n, m) -> (gamma0, menu size, batch size)
SHAPE_HYPERPARAMS: dict[tuple[int, int], tuple[float, int, int]] = {
    (2, 2): (3.0, 32, 2048),
    (5, 2): (6.0, 64, 2048),
    (8, 2): (6.0, 128, 2048),
    (10, 2): (8.0, 256, 2048),
    (2, 3): (5.0, 64, 2048),
    (5, 3): (6.0, 1024, 1024),
    (8, 3): (8.0, 2048, 1024),
    (10, 3): (8.0, 2048, 1024),
    (2, 5): (3.0, 256, 2048),
    (5, 5): (10.0, 2048, 1024),
}
FALLBACK_HYPERPARAMS = (5.0, 32, 2048)


class TrainConfig(BaseModel):
    """Hyperparameters of one two-stage training run.

    Attributes:
        total_iters: Iterations over both stages.
        mutual_fraction: Share of iterations spent in mutual training.
        batch_size: Fresh profiles drawn per iteration.
        T: Softmax temperature of the relaxed argmax.
        R_target: Target IR regret steering the penalty strength.
        gamma0, gamma_delta, gamma_min, gamma_max: Penalty schedule.
        regret_smoothing: Decay of the moving average of batch IR regret that
            drives the penalty schedule; 0 feeds the raw batch regret.
        step_size: Adam step size.
        menu_size: Number S of candidate allocations.
        temperature_feas: Sharpness of the per-item feasibility softmax.
        cor_widths: Hidden widths (h1, h2) of the payment networks.
        cor_use_bias: Whether the payment networks carry bias terms.
        eval_every: Metric-log cadence in iterations.
        test_size: Held-out profiles used for the final exact metrics.
        seed: Seed of parameter initialization.
    """
    model_config = ConfigDict(frozen=True)

    total_iters: int = Field(default=32000, gt=0)
    mutual_fraction: float = Field(default=0.75, gt=0.0, lt=1.0)
    batch_size: int = Field(default=2048, gt=0)
    T: float = Field(default=500.0, gt=0.0)
    R_target: float = Field(default=0.001, gt=0.0)
    gamma0: float = Field(default=5.0, gt=0.0)
    gamma_delta: float = Field(default=0.01, gt=0.0)
    gamma_max: float = Field(default=20.0, gt=0.0)
    gamma_min: float = Field(default=1.0, gt=0.0)
    regret_smoothing: float = Field(default=0.98, ge=0.0, lt=1.0)
    step_size: float = Field(default=3e-4, gt=0.0)
    menu_size: int = Field(default=32, gt=0)
    temperature_feas: float = Field(default=1.0, gt=0.0)
    cor_widths: tuple[int, int] = (64, 64)
    cor_use_bias: bool = True
    eval_every: int = Field(default=500, gt=0)
    test_size: int = Field(default=20000, gt=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_gamma_range(self) -> "TrainConfig":
        if not self.gamma_min <= self.gamma0 <= self.gamma_max:
            raise ValueError("Require gamma_min <= gamma0 <= gamma_max")
        if min(self.cor_widths) < 1:
            raise ValueError("cor_widths must be >= 1")
        return self

    @property
    def mutual_iters(self) -> int:
        """Iteration at which training switches to the post stage."""
        return int(round(self.mutual_fraction * self.total_iters))

    @classmethod
    def full_preset(cls, **overrides: Any) -> "TrainConfig":
        return cls(**{"total_iters": 32000, "batch_size": 2048, **overrides})

    @classmethod
    def desk_preset(cls, **overrides: Any) -> "TrainConfig":
        return cls(**{"total_iters": 16000, "batch_size": 512, **overrides})

    @classmethod
    def for_shape(cls, n: int, m: int, **overrides: Any) -> "TrainConfig":
        """Config with the per-shape gamma0, menu size and batch size."""
        gamma0, menu_size, batch_size = SHAPE_HYPERPARAMS.get((n, m), FALLBACK_HYPERPARAMS)
        return cls(**{"gamma0": gamma0, "menu_size": menu_size, "batch_size": batch_size, **overrides})
