import logging
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sqlalchemy.orm import Session

from src.core.errors import InvalidMechanismError
from src.repositories.report_repo import VerificationReportRepository
from src.repositories.run_repo import RunSummaryRepository
from src.schemas.distribution import DistributionKind, DistributionSpec
from src.schemas.experiment import ExperimentConfig
from src.schemas.report import (
    SUMMARY_COLUMNS,
    SurplusCeilingReport,
    DamaGrid,
    DsicGrid,
    SummaryRow,
    SummaryTable,
    SweepRow,
    VerificationReport,
)
from src.schemas.training import MechanismMode, TrainConfig
from src.services.distributions import Dataset, analytic_moments, held_out, sample
from src.services.mechanism import post_process_ir, vcg_outcome_batch
from src.services.relaxation import realize
from src.services.trainer import TrainResult, train
from src.services.verify import (
    MechanismHandle,
    full_surplus_mechanism,
    dama_brute_search,
    evaluate,
    full_surplus,
)
from src.storage.checkpoints import checkpoint_from_state, load_checkpoint, restore, save_checkpoint
from src.storage.datasets import read_dataset, write_dataset
from src.storage.tables import write_json, write_plot_data, write_rows, write_table

logger = logging.getLogger(__name__)

DEFAULT_SWEEP_TARGETS = (0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 0.0005, 0.0001)


class ExperimentService:
    """
    Runs the batch experiments behind the cli subcommands.

    Every command writes its files under an output directory; summary rows
    and verification reports also go to the result database when a session
    is given.

    Workflow of `train`:
    1. Draw the held-out test set shared by all modes
    2. Per mode: train (CAAMA / AmaOnly) or evaluate VCG directly
    3. Write checkpoint JSON and metric CSV per trained mode
    4. Write the summary table and persist its rows
    """

    def __init__(self, db: Optional[Session] = None):
        """Initialize the service.

        Args:
            db: SQLAlchemy Session of the result database, or None to skip persistence.
        """
        self.db = db
        self.run_repo = RunSummaryRepository(db) if db is not None else None
        self.report_repo = VerificationReportRepository(db) if db is not None else None

    # ------------------------------------------------------------------ sample

    def sample(self, spec: DistributionSpec, count: int, path: Path) -> tuple[Path, Path]:
        """Draw `count` profiles and write the dataset CSV plus manifest."""
        return write_dataset(sample(spec, count), path)

    # ------------------------------------------------------------------- train

    def _summary_from_result(self, mode: MechanismMode, result: TrainResult) -> SummaryRow:
        final = result.final
        return SummaryRow(
            mode=mode.value,
            revenue=final.revenue,
            revenue_postproc=final.revenue_postproc,
            regret_ir_mean=final.regret_ir_mean,
            regret_ir_max=final.regret_ir_max,
            pay_cor_share=final.pay_cor_share,
            wallclock_s=result.wallclock_s,
        )

    def _vcg_summary(self, test: Dataset) -> SummaryRow:
        started = time.perf_counter()
        out = vcg_outcome_batch(test.profiles)
        revenue = float(out.revenue().mean())
        return SummaryRow(
            mode=MechanismMode.VCG.value,
            revenue=revenue,
            revenue_postproc=revenue,
            regret_ir_mean=0.0,
            regret_ir_max=0.0,
            pay_cor_share=0.0,
            wallclock_s=time.perf_counter() - started,
        )

    def _write_run(self, out_dir: Path, result: TrainResult, cfg: TrainConfig, spec: DistributionSpec) -> None:
        mode_dir = out_dir / result.state.mode.value
        save_checkpoint(checkpoint_from_state(result.state, cfg, spec), mode_dir / "checkpoint.json")
        metrics = pd.DataFrame([asdict(row) for row in result.state.log])
        write_table(metrics, mode_dir / "metrics.csv", cfg.seed)

    def train(self, config: ExperimentConfig) -> list[SummaryRow]:
        """Train every requested mode and write checkpoints, metric logs and the summary table."""
        out_dir = config.output_path
        out_dir.mkdir(parents=True, exist_ok=True)
        spec, cfg = config.distribution, config.train
        test = held_out(spec, cfg.test_size)

        rows = []
        for mode in config.modes:
            if mode == MechanismMode.VCG:
                rows.append(self._vcg_summary(test))
                continue
            result = train(cfg, spec, mode, test=test)
            self._write_run(out_dir, result, cfg, spec)
            rows.append(self._summary_from_result(mode, result))

        if "csv" in config.report_formats:
            write_rows(rows, out_dir / "summary.csv", cfg.seed, columns=SUMMARY_COLUMNS)
        if "json" in config.report_formats:
            write_json(SummaryTable(experiment=out_dir.name, rows=rows), out_dir / "summary.json")
        if self.run_repo is not None:
            self.run_repo.save_rows(out_dir.name, rows, cfg.seed)
        return rows

    # -------------------------------------------------------------------- eval

    def mechanism_from_checkpoint(self, checkpoint_path: Path) -> tuple[MechanismHandle, DistributionSpec]:
        doc = load_checkpoint(checkpoint_path)
        raw, cor = restore(doc)
        if raw is None:
            raise InvalidMechanismError(f"Checkpoint {checkpoint_path} holds no AMA parameters")
        handle = MechanismHandle(params=realize(raw), cor=cor, label=doc.mode.value)
        return handle, doc.distribution

    def evaluate(
        self,
        checkpoint_path: Path,
        dataset_path: Path,
        out_dir: Path,
        grid: Optional[DsicGrid] = None,
        formats: Sequence[str] = ("csv", "json"),
    ) -> list[VerificationReport]:
        """Verify a checkpoint on a dataset, with and without bidder opt-out."""
        mech, spec = self.mechanism_from_checkpoint(checkpoint_path)
        dataset = read_dataset(dataset_path)
        if (dataset.spec.n, dataset.spec.m) != (spec.n, spec.m):
            raise InvalidMechanismError(
                f"Checkpoint is {spec.n}x{spec.m}, dataset is {dataset.spec.n}x{dataset.spec.m}"
            )

        reports = [evaluate(mech, dataset, grid), evaluate(mech.with_opt_out(), dataset, grid)]
        out_dir.mkdir(parents=True, exist_ok=True)
        if "json" in formats:
            for report, name in zip(reports, ("report", "report_postproc")):
                write_json(report, out_dir / f"{name}.json")
        if "csv" in formats:
            write_rows(reports, out_dir / "report.csv", dataset.manifest.seed)
        if self.report_repo is not None:
            for report in reports:
                self.report_repo.save(report)
        return reports

    # ------------------------------------------------------------------- sweep

    def sweep_rtarget(
        self,
        config: ExperimentConfig,
        targets: Sequence[float] = DEFAULT_SWEEP_TARGETS,
        seeds: Sequence[int] = (0,),
    ) -> list[SweepRow]:
        """One CAAMA run per (target, seed) plus AmaOnly and VCG reference rows."""
        if any(t <= 0 for t in targets) or any(b >= a for a, b in zip(targets, targets[1:])):
            raise ValueError("targets must be positive and strictly descending")
        out_dir = config.output_path
        spec = config.distribution
        test = held_out(spec, config.train.test_size)

        rows = [SweepRow(target=None, mode=MechanismMode.VCG.value,
                         revenue=self._vcg_summary(test).revenue, regret_ir_mean=0.0, seed=0)]
        for seed in seeds:
            cfg = config.train.model_copy(update={"seed": seed})
            baseline = train(cfg, spec, MechanismMode.AMA_ONLY, test=test)
            rows.append(SweepRow(target=None, mode=MechanismMode.AMA_ONLY.value,
                                 revenue=baseline.final.revenue, regret_ir_mean=0.0, seed=seed))
            for target in targets:
                result = train(cfg.model_copy(update={"R_target": target}), spec, MechanismMode.CAAMA, test=test)
                rows.append(SweepRow(target=target, mode=MechanismMode.CAAMA.value,
                                     revenue=result.final.revenue,
                                     regret_ir_mean=result.final.regret_ir_mean, seed=seed))
                logger.info("R_target=%g seed=%d: revenue=%.5f regret=%.2e",
                            target, seed, result.final.revenue, result.final.regret_ir_mean)

        write_rows(rows, out_dir / "sweep.csv", config.train.seed)
        caama = [r for r in rows if r.mode == MechanismMode.CAAMA.value]
        write_plot_data(
            out_dir / "sweep.dat",
            {"regret_ir": [r.regret_ir_mean for r in caama], "revenue": [r.revenue for r in caama]},
            config.train.seed,
        )
        return rows

    # ------------------------------------------------------------------ figure

    def figure_equal_revenue(self, config: ExperimentConfig, epsilons: Sequence[float]) -> pd.DataFrame:
        """Training curves of CAAMA and AmaOnly on two-bidder equal revenue distributions.

        Returns the reference-line table (one row per epsilon).
        """
        out_dir = config.output_path
        curves, references = [], []
        for eps in epsilons:
            spec = DistributionSpec(
                kind=DistributionKind.EQUAL_REVENUE_CORRELATED, n=2, m=1, epsilon=eps,
                equal_revenue_mode="two-bidder", seed=config.distribution.seed,
            )
            test = held_out(spec, config.train.test_size)
            for mode in (MechanismMode.CAAMA, MechanismMode.AMA_ONLY):
                result = train(config.train, spec, mode, test=test)
                for row in result.state.log:
                    total = row.revenue_exact if row.revenue_exact != 0 else 1.0
                    curves.append({
                        "epsilon": eps, "mode": mode.value, "iter": row.iter,
                        "revenue_exact": row.revenue_exact,
                        "pay_ama_share": row.pay_ama_exact / total,
                        "pay_cor_share": row.pay_cor_exact / total,
                    })
            moments = analytic_moments(spec)
            references.append({
                "epsilon": eps,
                "full_surplus": moments.optimal_full_surplus,
                "full_surplus_mc": full_surplus(test),
                "vcg_revenue": moments.vcg_revenue,
            })

        seed = config.train.seed
        write_table(pd.DataFrame(curves), out_dir / "equal_revenue_curves.csv", seed)
        reference_frame = pd.DataFrame(references)
        write_table(reference_frame, out_dir / "equal_revenue_references.csv", seed)
        for eps in epsilons:
            mine = [c for c in curves if c["epsilon"] == eps and c["mode"] == MechanismMode.CAAMA.value]
            write_plot_data(
                out_dir / f"equal_revenue_eps{eps:g}.dat",
                {"iter": [c["iter"] for c in mine], "revenue_exact": [c["revenue_exact"] for c in mine]},
                seed,
            )
        return reference_frame

    def figure_revenue_surface(self, config: ExperimentConfig, grid_points: int = 41) -> pd.DataFrame:
        """Exact revenue of CAAMA and AmaOnly over (v11, v12) on the perfect negative 2x2 distribution.

        Bidder 2 bids 1 - v1j on every item, so a profile is fixed by bidder 1's
        two values. The optimal column is the full surplus sum_j max(v1j, 1 - v1j).
        """
        if grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        out_dir = config.output_path
        spec = DistributionSpec(
            kind=DistributionKind.PERFECT_NEGATIVE_LINEAR, n=2, m=2, seed=config.distribution.seed,
        )
        test = held_out(spec, config.train.test_size)

        axis = np.linspace(0.0, 1.0, grid_points)
        v11, v12 = (a.ravel() for a in np.meshgrid(axis, axis, indexing="ij"))
        first = np.stack([v11, v12], axis=1)
        profiles = np.stack([first, 1.0 - first], axis=1)

        surface = {"v11": v11, "v12": v12}
        for mode, column in ((MechanismMode.CAAMA, "caama"), (MechanismMode.AMA_ONLY, "ama_only")):
            result = train(config.train, spec, mode, test=test)
            mech = MechanismHandle(params=realize(result.state.raw), cor=result.state.cor, label=mode.value)
            outcomes = mech.base_outcomes(profiles)
            surface[column] = outcomes.revenue()
            if mode == MechanismMode.CAAMA:
                surface["caama_postproc"] = post_process_ir(outcomes).revenue()
        surface["optimal"] = np.maximum(first, 1.0 - first).sum(axis=1)

        frame = pd.DataFrame(surface)
        seed = config.train.seed
        write_table(frame, out_dir / "revenue_surface.csv", seed)
        write_plot_data(
            out_dir / "revenue_surface.dat",
            {name: frame[name].tolist() for name in ("v11", "v12", "caama", "ama_only", "optimal")},
            seed,
        )
        logger.info(
            "Revenue surface on %d points: CAAMA %.4f, AmaOnly %.4f, optimal %.4f (grid means)",
            len(frame), frame["caama"].mean(), frame["ama_only"].mean(), frame["optimal"].mean(),
        )
        return frame

    # ------------------------------------------------------- surplus ceiling

    def verify_surplus_ceiling(
        self,
        spec: DistributionSpec,
        out_dir: Path,
        grid: Optional[DamaGrid] = None,
    ) -> SurplusCeilingReport:
        """Best deterministic AMA versus the full-surplus CA-AMA on one shared dataset."""
        grid = grid or DamaGrid()
        dataset = sample(spec, grid.samples)
        search = dama_brute_search(spec, grid, dataset)
        handset = evaluate(full_surplus_mechanism(spec), dataset)
        eps = spec.epsilon

        report = SurplusCeilingReport(
            epsilon=eps,
            slope=spec.equal_revenue_slope,
            dama_best_revenue=search.best_revenue,
            dama_bound=eps / (1.0 - eps) + spec.equal_revenue_slope,
            dama_best_weights=search.best_params.weights.tolist(),
            dama_best_boosts=search.best_params.boosts.tolist(),
            cells_evaluated=search.cells_evaluated,
            optimal_full_surplus=analytic_moments(spec).optimal_full_surplus,
            full_surplus_mc=full_surplus(dataset),
            handset=handset,
        )
        write_json(report, out_dir / "surplus_ceiling.json")
        if self.report_repo is not None:
            self.report_repo.save(handset)
        logger.info(
            "Deterministic AMA best %.5f (bound %.5f) vs full surplus %.5f; hand-set CA-AMA %.5f",
            report.dama_best_revenue, report.dama_bound, report.optimal_full_surplus, handset.revenue_mean,
        )
        return report
