"""Unit tests for the result-database repositories.

The repositories run against a fresh in-memory SQLite database per test.
"""
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from src.models.base import Base
from src.models.run_summary import RunSummary
from src.models.verification_record import VerificationRecord
from src.repositories.report_repo import VerificationReportRepository
from src.repositories.run_repo import RunSummaryRepository
from src.schemas.report import SummaryRow, VerificationReport


@pytest.fixture
def db():
    engine = create_engine("sqlite:///:memory:")
    Base.metadata.create_all(bind=engine)
    session = sessionmaker(bind=engine)()
    yield session
    session.close()
    engine.dispose()


def summary(mode: str, revenue: float) -> SummaryRow:
    return SummaryRow(
        mode=mode, revenue=revenue, revenue_postproc=revenue, regret_ir_mean=0.0,
        regret_ir_max=0.0, pay_cor_share=0.0, wallclock_s=0.1,
    )


@pytest.fixture
def report():
    return VerificationReport(
        mechanism="CAAMA", dsic_regret_max=0.0, ir_regret_mean=1e-4, ir_regret_max=0.01,
        revenue_mean=0.7, revenue_post_processed=0.69, min_utility=-0.01,
        pay_ama_mean=0.5, pay_cor_mean=0.2, sample_count=1000,
    )


class TestRunSummaryRepository:

    def test_save_rows(self, db):
        repo = RunSummaryRepository(db)
        records = repo.save_rows("exp-a", [summary("CAAMA", 0.6), summary("VCG", 0.4)], seed=3)
        assert len(records) == 2
        assert all(r.id is not None for r in records)
        assert db.query(RunSummary).count() == 2

    def test_empty_rows_write_nothing(self, db):
        assert RunSummaryRepository(db).save_rows("exp-a", [], seed=0) == []
        assert db.query(RunSummary).count() == 0

    def test_rows_keep_experiment_and_seed(self, db):
        repo = RunSummaryRepository(db)
        repo.save_rows("exp-a", [summary("CAAMA", 0.6)], seed=0)
        repo.save_rows("exp-b", [summary("AmaOnly", 0.5), summary("VCG", 0.4)], seed=1)
        rows = db.query(RunSummary).filter(RunSummary.experiment == "exp-b").order_by(RunSummary.id).all()
        assert [r.mode for r in rows] == ["AmaOnly", "VCG"]
        assert [r.seed for r in rows] == [1, 1]
        assert rows[1].revenue == pytest.approx(0.4)


class TestVerificationReportRepository:

    def test_save_stores_every_field(self, db, report):
        record = VerificationReportRepository(db).save(report)
        assert record.id is not None
        stored = db.query(VerificationRecord).filter(VerificationRecord.id == record.id).one()
        assert VerificationReport(**{name: getattr(stored, name) for name in VerificationReport.model_fields}) == report

    def test_one_row_per_report(self, db, report):
        repo = VerificationReportRepository(db)
        repo.save(report)
        repo.save(report.model_copy(update={"mechanism": "AMA"}))
        assert sorted(r.mechanism for r in db.query(VerificationRecord).all()) == ["AMA", "CAAMA"]
