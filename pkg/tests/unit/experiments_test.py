"""Unit tests for `ExperimentService`.

Runs use tiny training configs so every command finishes quickly; the
repositories are replaced by mocks to check what gets persisted.
"""
import json

import pytest

from src.core.errors import InvalidMechanismError
from src.schemas.distribution import DistributionKind, DistributionSpec
from src.schemas.experiment import ExperimentConfig
from src.schemas.report import DamaGrid, DsicGrid, SUMMARY_COLUMNS
from src.schemas.training import MechanismMode, TrainConfig
from src.services.distributions import held_out, sample
from src.services.experiments import ExperimentService
from src.storage.datasets import write_dataset
from src.storage.tables import read_table

TINY = TrainConfig(
    total_iters=4, mutual_fraction=0.5, batch_size=16, menu_size=4, cor_widths=(4, 4),
    eval_every=2, test_size=64, step_size=1e-2,
)


@pytest.fixture
def config(tmp_path):
    return ExperimentConfig(
        distribution=DistributionSpec(kind=DistributionKind.PERFECT_NEGATIVE_LINEAR, n=2, m=1, seed=1),
        train=TINY,
        modes=[MechanismMode.CAAMA, MechanismMode.AMA_ONLY, MechanismMode.VCG],
        output_dir=str(tmp_path / "run"),
    )


@pytest.fixture
def service(mocker):
    """Service with mocked repositories standing in for a database session."""
    service = ExperimentService()
    service.run_repo = mocker.MagicMock()
    service.report_repo = mocker.MagicMock()
    return service


class TestTrain:

    def test_writes_checkpoints_metrics_and_summary(self, service, config):
        rows = service.train(config)
        out = config.output_path

        assert [r.mode for r in rows] == ["CAAMA", "AmaOnly", "VCG"]
        for mode in ("CAAMA", "AmaOnly"):
            assert (out / mode / "checkpoint.json").exists()
            assert len(read_table(out / mode / "metrics.csv")) == 2
        assert not (out / "VCG").exists()

        summary = read_table(out / "summary.csv")
        assert list(summary.columns) == SUMMARY_COLUMNS
        assert json.loads((out / "summary.json").read_text())["experiment"] == "run"
        service.run_repo.save_rows.assert_called_once_with("run", rows, TINY.seed)

    def test_vcg_only_needs_no_training(self, service, config, mocker):
        spy = mocker.patch("src.services.experiments.train")
        rows = service.train(config.model_copy(update={"modes": [MechanismMode.VCG]}))
        spy.assert_not_called()
        # perfect negative single item: VCG charges min(v, 1 - v)
        test = held_out(config.distribution, TINY.test_size).profiles
        assert rows[0].revenue == pytest.approx(test.min(axis=1).mean())
        assert rows[0].regret_ir_mean == 0.0

    def test_report_formats(self, service, config):
        service.train(config.model_copy(update={"modes": [MechanismMode.VCG], "report_formats": ["json"]}))
        assert (config.output_path / "summary.json").exists()
        assert not (config.output_path / "summary.csv").exists()

    def test_without_database(self, config):
        rows = ExperimentService().train(config.model_copy(update={"modes": [MechanismMode.VCG]}))
        assert len(rows) == 1


class TestEvaluate:

    def test_reports_with_and_without_opt_out(self, service, config, tmp_path):
        service.train(config.model_copy(update={"modes": [MechanismMode.CAAMA]}))
        csv_path, _ = write_dataset(sample(config.distribution, 50), tmp_path / "data.csv")

        out = tmp_path / "eval"
        reports = service.evaluate(
            config.output_path / "CAAMA" / "checkpoint.json", csv_path, out, DsicGrid(points_per_item=11)
        )
        assert len(reports) == 2
        assert reports[1].min_utility >= 0.0
        assert reports[0].dsic_regret_max <= 1e-9
        assert (out / "report.json").exists() and (out / "report_postproc.json").exists()
        assert len(read_table(out / "report.csv")) == 2
        assert service.report_repo.save.call_count == 2

    def test_shape_mismatch(self, service, config, tmp_path):
        service.train(config.model_copy(update={"modes": [MechanismMode.AMA_ONLY]}))
        other = DistributionSpec(kind=DistributionKind.UNIFORM_IID, n=3, m=1)
        csv_path, _ = write_dataset(sample(other, 10), tmp_path / "data.csv")
        with pytest.raises(InvalidMechanismError):
            service.evaluate(config.output_path / "AmaOnly" / "checkpoint.json", csv_path, tmp_path / "eval")


class TestSweep:

    def test_rows_per_target(self, service, config):
        rows = service.sweep_rtarget(config, targets=[0.01, 0.001])
        assert [(r.mode, r.target) for r in rows] == [
            ("VCG", None), ("AmaOnly", None), ("CAAMA", 0.01), ("CAAMA", 0.001),
        ]
        assert (config.output_path / "sweep.csv").exists()
        assert (config.output_path / "sweep.dat").exists()

    @pytest.mark.parametrize("targets", [[0.001, 0.01], [0.01, 0.01], [0.01, -0.001]])
    def test_targets_must_descend(self, service, config, targets):
        with pytest.raises(ValueError):
            service.sweep_rtarget(config, targets=targets)

    @pytest.mark.slow
    def test_regret_tracks_target(self, service, tmp_path):
        targets = [0.01, 0.003, 0.001]
        config = ExperimentConfig(
            distribution=DistributionSpec(kind=DistributionKind.DIRICHLET_VALUE_SHARE, n=2, m=2, alpha=0.5, seed=1),
            train=TrainConfig.for_shape(2, 2, total_iters=8000, batch_size=512, test_size=20000),
            modes=[MechanismMode.CAAMA],
            output_dir=str(tmp_path / "sweep"),
        )
        rows = service.sweep_rtarget(config, targets=targets)
        ama_only = next(r for r in rows if r.mode == "AmaOnly")
        caama = [r for r in rows if r.mode == "CAAMA"]

        assert [r.target for r in caama] == targets
        for row in caama:
            assert row.target / 3.0 <= row.regret_ir_mean <= 3.0 * row.target
            assert row.revenue > ama_only.revenue
        revenues = [r.revenue for r in caama]
        assert all(tighter <= looser + 0.01 for looser, tighter in zip(revenues, revenues[1:]))


class TestFigureEqualRevenue:

    def test_reference_lines(self, service, config):
        references = service.figure_equal_revenue(config, [0.1])
        assert references["full_surplus"].iloc[0] == pytest.approx(0.25584, abs=1e-5)
        assert references["vcg_revenue"].iloc[0] == pytest.approx(0.08268, abs=1e-5)

        out = config.output_path
        curves = read_table(out / "equal_revenue_curves.csv")
        assert set(curves["mode"]) == {"CAAMA", "AmaOnly"}
        assert (out / "equal_revenue_eps0.1.dat").exists()


class TestFigureRevenueSurface:

    def test_surface_on_grid(self, service, config):
        surface = service.figure_revenue_surface(config, grid_points=5)
        assert len(surface) == 25
        assert list(surface.columns) == ["v11", "v12", "caama", "ama_only", "caama_postproc", "optimal"]

        corner = surface[(surface["v11"] == 0.0) & (surface["v12"] == 0.0)]
        centre = surface[(surface["v11"] == 0.5) & (surface["v12"] == 0.5)]
        assert corner["optimal"].iloc[0] == pytest.approx(2.0)
        assert centre["optimal"].iloc[0] == pytest.approx(1.0)
        assert (surface["ama_only"] <= surface["optimal"] + 1e-12).all()
        assert (surface["caama_postproc"] <= surface["caama"] + 1e-12).all()

        out = config.output_path
        assert len(read_table(out / "revenue_surface.csv")) == 25
        header = (out / "revenue_surface.dat").read_text().splitlines()[0]
        assert header == "# v11 v12 caama ama_only optimal"

    def test_needs_two_grid_points(self, service, config):
        with pytest.raises(ValueError):
            service.figure_revenue_surface(config, grid_points=1)


class TestVerifySurplusCeiling:

    def test_ceiling_and_full_surplus(self, service, tmp_path):
        spec = DistributionSpec(
            kind=DistributionKind.EQUAL_REVENUE_CORRELATED, n=2, m=1, epsilon=0.1, epsilon1=0.05, seed=3
        )
        grid = DamaGrid(weight_points=3, boost_points=5, samples=500)
        report = service.verify_surplus_ceiling(spec, tmp_path, grid)

        assert report.dama_bound == pytest.approx(0.1 / 0.9 + 0.05)
        assert report.cells_evaluated == 375
        assert report.dama_best_revenue <= report.full_surplus_mc
        assert report.handset.revenue_mean == pytest.approx(report.full_surplus_mc, abs=1e-9)
        assert report.handset.dsic_regret_max <= 1e-9
        assert (tmp_path / "surplus_ceiling.json").exists()
        service.report_repo.save.assert_called_once_with(report.handset)
