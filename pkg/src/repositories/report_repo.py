"""Repository for `VerificationRecord` rows."""

import logging
from src.models.verification_record import VerificationRecord
from src.repositories.base import BaseRepository
from src.schemas.report import VerificationReport

logger = logging.getLogger(__name__)


class VerificationReportRepository(BaseRepository):

    def save(self, report: VerificationReport) -> VerificationRecord:
        """Persist one report and commit."""
        record = VerificationRecord(**report.model_dump())
        self.db.add(record)
        self.db.commit()
        logger.info("Saved verification report: %s", report.mechanism)
        return record
