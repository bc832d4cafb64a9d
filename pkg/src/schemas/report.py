"""Verification reports, search grids and summary rows."""
import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class VerificationReport(BaseModel):
    """Empirical DSIC / IR / revenue statistics of one mechanism on one dataset.

    Attributes:
        mechanism: Label of the evaluated mechanism.
        dsic_regret_max: Largest gain from a probed misreport, floored at 0.
        ir_regret_mean: Mean per-profile sum_i max(0, -u_i).
        ir_regret_max: Max per-profile IR regret.
        revenue_mean: Mean revenue before opt-out.
        revenue_post_processed: Mean revenue after opt-out.
        min_utility: Smallest utility of the evaluated mechanism.
        pay_ama_mean: Mean total AMA payment per profile.
        pay_cor_mean: Mean total correlation payment per profile.
        sample_count: Number of profiles.
    """
    mechanism: str = ""
    dsic_regret_max: float = Field(ge=0.0)
    ir_regret_mean: float = Field(ge=0.0)
    ir_regret_max: float = Field(ge=0.0)
    revenue_mean: float
    revenue_post_processed: float
    min_utility: float
    pay_ama_mean: float = 0.0
    pay_cor_mean: float = 0.0
    sample_count: int = Field(ge=1)


class IrStats(BaseModel):
    ir_regret_mean: float = Field(ge=0.0)
    ir_regret_max: float = Field(ge=0.0)
    min_utility: float


class DsicGrid(BaseModel):
    """Misreport probes: a per-item grid for few items, random probes otherwise."""
    model_config = ConfigDict(frozen=True)

    points_per_item: int = Field(default=21, ge=2)
    random_probes: int = Field(default=256, ge=1)
    max_grid_items: int = Field(default=2, ge=1)
    seed: int = Field(default=0, ge=0)


class DamaGrid(BaseModel):
    """Grid over deterministic single-item AMA parameters (w_1 fixed at 1)."""
    model_config = ConfigDict(frozen=True)

    weight_points: int = Field(default=33, ge=1)
    weight_low: float = Field(default=0.1, gt=0.0)
    weight_high: float = Field(default=10.0, gt=0.0)
    boost_points: int = Field(default=41, ge=1)
    boost_low: float = -1.0
    boost_high: float = 1.0
    samples: int = Field(default=100_000, ge=1)
    max_cells: int = Field(default=10**7, ge=1)

    def cell_count(self, n: int) -> int:
        return self.weight_points ** (n - 1) * self.boost_points ** (n + 1)


class GenBoundInputs(BaseModel):
    """Inputs of the uniform generalization bound for three-layer payment networks.

    Attributes:
        M1, M2, M3: Spectral-norm bounds of the three weight matrices.
        h1, h2: Hidden widths.
        n, m: Auction shape.
        K: Training-set size.
        delta: Failure probability.
    """
    M1: float = Field(gt=0.0)
    M2: float = Field(gt=0.0)
    M3: float = Field(gt=0.0)
    h1: int = Field(ge=1)
    h2: int = Field(ge=1)
    n: int = Field(ge=2)
    m: int = Field(ge=1)
    K: int = Field(ge=1)
    delta: float = Field(default=0.05, gt=0.0, lt=1.0)

    @property
    def input_bound(self) -> float:
        return math.sqrt((self.n - 1) * self.m)

    @property
    def payment_bound(self) -> float:
        return self.input_bound * self.M1 * self.M2 * self.M3

    @property
    def width(self) -> int:
        return max((self.n - 1) * self.m, self.h1, self.h2, 1)


class GapRow(BaseModel):
    K: int
    seed: int
    train_regret: float
    test_regret: float
    gap: float
    bound: float


class SummaryRow(BaseModel):
    """One row of the per-mode training summary."""
    mode: str
    revenue: float
    revenue_postproc: float
    regret_ir_mean: float
    regret_ir_max: float
    pay_cor_share: float
    wallclock_s: float

    @model_validator(mode="after")
    def _check_finite(self) -> "SummaryRow":
        for name in ("revenue", "revenue_postproc", "regret_ir_mean", "regret_ir_max"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        return self


SUMMARY_COLUMNS = list(SummaryRow.model_fields)
REPORT_COLUMNS = list(VerificationReport.model_fields)


class SweepRow(BaseModel):
    target: Optional[float]
    mode: str
    revenue: float
    regret_ir_mean: float
    seed: int


class SummaryTable(BaseModel):
    experiment: str
    rows: list[SummaryRow]


class SurplusCeilingReport(BaseModel):
    """Deterministic-AMA ceiling versus the full-surplus CA-AMA on the equal revenue construction."""
    epsilon: float
    slope: float
    dama_best_revenue: float
    dama_bound: float
    dama_best_weights: list[float]
    dama_best_boosts: list[float]
    cells_evaluated: int
    optimal_full_surplus: float
    full_surplus_mc: float
    handset: VerificationReport
