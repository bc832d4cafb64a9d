"""ORM model for a stored `VerificationReport`."""

from sqlalchemy import Column, DateTime, Float, Integer, String, func

from src.models.base import Base


class VerificationRecord(Base):
    __tablename__ = "verification_reports"

    id = Column(Integer, primary_key=True, index=True)

    mechanism = Column(String, nullable=False, index=True)
    dsic_regret_max = Column(Float, nullable=False)
    ir_regret_mean = Column(Float, nullable=False)
    ir_regret_max = Column(Float, nullable=False)
    revenue_mean = Column(Float, nullable=False)
    revenue_post_processed = Column(Float, nullable=False)
    min_utility = Column(Float, nullable=False)
    pay_ama_mean = Column(Float, nullable=False)
    pay_cor_mean = Column(Float, nullable=False)
    sample_count = Column(Integer, nullable=False)

    created_at = Column(DateTime(timezone=True), server_default=func.now())
