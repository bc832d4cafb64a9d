"""ORM model for one summary row of a training experiment.

A `RunSummary` mirrors the summary CSV written by `cmd_train`: one row
per trained (or evaluated) mechanism mode.
"""

from sqlalchemy import Column, DateTime, Float, Integer, String, func

from src.models.base import Base


class RunSummary(Base):
    """Exact held-out metrics of one mechanism mode.

    Attributes:
        id: Primary key.
        experiment: Output directory name of the experiment.
        mode: Mechanism mode (CAAMA, AmaOnly, VCG).
        revenue: Mean exact revenue.
        revenue_postproc: Mean revenue after bidder opt-out.
        regret_ir_mean: Mean IR regret.
        regret_ir_max: Max IR regret.
        pay_cor_share: Share of revenue collected by correlation payments.
        wallclock_s: Training plus evaluation time.
        seed: Seed of the run.
        created_at: Record creation timestamp.
    """

    __tablename__ = "run_summaries"

    id = Column(Integer, primary_key=True, index=True)

    experiment = Column(String, nullable=False, index=True)
    mode = Column(String, nullable=False, index=True)
    revenue = Column(Float, nullable=False)
    revenue_postproc = Column(Float, nullable=False)
    regret_ir_mean = Column(Float, nullable=False)
    regret_ir_max = Column(Float, nullable=False)
    pay_cor_share = Column(Float, nullable=False)
    wallclock_s = Column(Float, nullable=False)
    seed = Column(Integer, nullable=False)

    created_at = Column(DateTime(timezone=True), server_default=func.now())
