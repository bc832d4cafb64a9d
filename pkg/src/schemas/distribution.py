"""Validated description of a valuation distribution.

A `DistributionSpec` is the unit a dataset, a training run and a checkpoint
all refer back to, so it is a pydantic model: it round-trips through the
JSON dataset manifest and the experiment config file unchanged.
"""
from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.errors import UnsupportedDistributionError


class DistributionKind(str, Enum):
    """Supported valuation families (values double as cli flag values)."""
    UNIFORM_IID = "uniform-iid"
    DIRICHLET_VALUE_SHARE = "dirichlet"
    LINEAR_MIXTURE_SYM = "linear-mixture-sym"
    LINEAR_MIXTURE_ASYM = "linear-mixture-asym"
    EQUAL_REVENUE_CORRELATED = "equal-revenue"
    PERFECT_NEGATIVE_LINEAR = "perfect-negative"


TWO_BIDDER_KINDS = {
    DistributionKind.LINEAR_MIXTURE_SYM,
    DistributionKind.LINEAR_MIXTURE_ASYM,
    DistributionKind.PERFECT_NEGATIVE_LINEAR,
}

MIXTURE_KINDS = {
    DistributionKind.LINEAR_MIXTURE_SYM,
    DistributionKind.LINEAR_MIXTURE_ASYM,
}


class DistributionSpec(BaseModel):
    """Valuation distribution of an n x m additive auction.

    Attributes:
        kind: Distribution family.
        n: Number of bidders.
        m: Number of items.
        alpha: Dirichlet concentration, or the correlated-branch probability of a mixture.
        epsilon: Lower support bound of the equal revenue distribution.
        epsilon1: Slope of the other bidders' values in the n-bidder equal revenue construction.
        equal_revenue_mode: "n-bidder" (v_i = epsilon1 (1 - v_1) for all i >= 2) or
            "two-bidder" (v_2 = epsilon / (1 - epsilon) (1 - v_1)).
        seed: 64-bit master seed.
    """
    model_config = ConfigDict(frozen=True, use_enum_values=False)

    kind: DistributionKind
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    alpha: float = 0.5
    epsilon: float = 0.1
    epsilon1: float = 0.05
    equal_revenue_mode: Literal["n-bidder", "two-bidder"] = "n-bidder"
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_supported(self) -> "DistributionSpec":
        check_supported(self)
        return self

    @property
    def equal_revenue_slope(self) -> float:
        """Slope s of v_i = s (1 - v_1) for the equal revenue construction."""
        if self.equal_revenue_mode == "two-bidder":
            return self.epsilon / (1.0 - self.epsilon)
        return self.epsilon1


def check_supported(spec: DistributionSpec) -> None:
    """Raise `UnsupportedDistributionError` for invalid (kind, n, m, parameter) combinations."""
    kind = spec.kind

    if kind == DistributionKind.DIRICHLET_VALUE_SHARE and not spec.alpha > 0:
        raise UnsupportedDistributionError("Dirichlet concentration alpha must be > 0")

    if kind in MIXTURE_KINDS and not 0.0 <= spec.alpha <= 1.0:
        raise UnsupportedDistributionError("Mixture probability alpha must lie in [0, 1]")

    if kind in TWO_BIDDER_KINDS and spec.n != 2:
        raise UnsupportedDistributionError(f"{kind.value} is defined for exactly 2 bidders, got n={spec.n}")

    if kind == DistributionKind.EQUAL_REVENUE_CORRELATED:
        if spec.m != 1 or spec.n < 2:
            raise UnsupportedDistributionError("equal-revenue is a single-item auction with n >= 2 bidders")
        if not 0.0 < spec.epsilon < 1.0:
            raise UnsupportedDistributionError("epsilon must lie in (0, 1)")
        if spec.equal_revenue_mode == "n-bidder" and not 0.0 < spec.epsilon1 < spec.epsilon:
            raise UnsupportedDistributionError("n-bidder mode requires 0 < epsilon1 < epsilon < 1")
        if spec.equal_revenue_mode == "two-bidder" and spec.n != 2:
            raise UnsupportedDistributionError("two-bidder mode of equal-revenue is a 2-bidder construction")


class AnalyticMoments(BaseModel):
    """Closed-form revenue benchmarks of a distribution."""
    optimal_full_surplus: float
    vcg_revenue: Optional[float] = None


class DatasetManifest(BaseModel):
    """Provenance record written next to a dataset CSV."""
    spec: DistributionSpec
    seed: int
    count: int = Field(ge=1)
    stream: int = 0
    created_with: str = ""
