"""Repository for storing and querying `RunSummary` records.

`cmd_train` and the sweeps persist their summary rows here when
`settings.PERSIST_RESULTS` is enabled.
"""

import logging
from typing import List

from src.models.run_summary import RunSummary
from src.repositories.base import BaseRepository
from src.schemas.report import SummaryRow

logger = logging.getLogger(__name__)


class RunSummaryRepository(BaseRepository):
    """Repository providing persistence helpers for `RunSummary`.

    Methods:
        save_rows(experiment, rows, seed): Insert one record per summary row.
    """

    def save_rows(self, experiment: str, rows: List[SummaryRow], seed: int) -> List[RunSummary]:
        """Bulk insert summary rows of one experiment.

        If `rows` is empty the method returns immediately.
        """
        if not rows:
            return []
        records = [RunSummary(experiment=experiment, seed=seed, **row.model_dump()) for row in rows]
        self.db.add_all(records)
        self.db.commit()
        logger.info("Saved %d summary rows for %s", len(records), experiment)
        return records
