"""Unit tests for the command line entry point and its exit codes."""
import json

import pytest

from src.core.config import settings
from src.core.errors import TrainingAbortedError
from src.main import EXIT_ABORTED, EXIT_INVALID, EXIT_OK, build_parser, main
from src.storage.datasets import read_dataset


@pytest.fixture(autouse=True)
def no_database(mocker):
    """Keep cli runs off the result database."""
    mocker.patch.object(settings, "PERSIST_RESULTS", False)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({
        "schema_version": 1,
        "distribution": {"kind": "perfect-negative", "n": 2, "m": 1, "seed": 2},
        "train": {"total_iters": 4, "mutual_fraction": 0.5, "batch_size": 8, "menu_size": 4,
                  "cor_widths": [3, 3], "eval_every": 2, "test_size": 32},
        "modes": ["VCG"],
        "output_dir": str(tmp_path / "run"),
    }))
    return path


class TestSample:

    def test_writes_dataset(self, tmp_path, capsys):
        out = tmp_path / "d.csv"
        code = main(["sample", "--kind", "dirichlet", "--alpha", "0.5", "--n", "2", "--m", "2",
                     "--count", "100", "--seed", "7", "--out", str(out)])
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip() == str(out)
        assert read_dataset(out).profiles.shape == (100, 2, 2)

    def test_rerun_is_byte_identical(self, tmp_path):
        args = ["sample", "--kind", "uniform-iid", "--n", "2", "--m", "1", "--count", "20"]
        main(args + ["--out", str(tmp_path / "a.csv")])
        main(args + ["--out", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_mixture_needs_two_bidders(self, tmp_path):
        code = main(["sample", "--kind", "linear-mixture-sym", "--n", "3", "--m", "1",
                     "--count", "10", "--out", str(tmp_path / "x.csv")])
        assert code == EXIT_INVALID
        assert not (tmp_path / "x.csv").exists()

    def test_unknown_kind_is_a_usage_error(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["sample", "--kind", "lognormal", "--n", "2", "--m", "1", "--count", "1"])


class TestTrain:

    def test_vcg_summary(self, config_file, tmp_path, capsys):
        assert main(["train", str(config_file)]) == EXIT_OK
        row = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert row["mode"] == "VCG"
        assert (tmp_path / "run" / "summary.csv").exists()

    def test_output_dir_override(self, config_file, tmp_path):
        assert main(["train", str(config_file), "--output-dir", str(tmp_path / "other")]) == EXIT_OK
        assert (tmp_path / "other" / "summary.csv").exists()

    def test_missing_config(self, tmp_path):
        assert main(["train", str(tmp_path / "absent.json")]) == EXIT_INVALID

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"schema_version": 1, "modes": ["VCG"]}))
        assert main(["train", str(path)]) == EXIT_INVALID

    def test_non_finite_loss_exit_code(self, config_file, mocker):
        mocker.patch(
            "src.main.ExperimentService.train",
            side_effect=TrainingAbortedError(3, "mutual", "non-finite loss nan"),
        )
        assert main(["train", str(config_file)]) == EXIT_ABORTED


class TestSweep:

    def test_rejects_ascending_targets(self, config_file):
        assert main(["sweep-rtarget", str(config_file), "--targets", "0.001", "0.01"]) == EXIT_INVALID


class TestFigureRevenueSurface:

    def test_writes_surface(self, config_file, tmp_path, capsys):
        code = main(["figure-revenue-surface", str(config_file), "--grid-points", "3"])
        assert code == EXIT_OK
        assert "optimal" in capsys.readouterr().out
        assert (tmp_path / "run" / "revenue_surface.csv").exists()
        assert (tmp_path / "run" / "revenue_surface.dat").exists()

    def test_too_few_grid_points(self, config_file):
        assert main(["figure-revenue-surface", str(config_file), "--grid-points", "1"]) == EXIT_INVALID
