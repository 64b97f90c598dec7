"""Command-line pipeline: every subcommand plus error behaviour."""

import json

import numpy as np
import pytest

from fimreg.cli import main
from fimreg.harness import run_config_to_dict
from tests.test_harness import tiny_config


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Run the whole pipeline once; subcommand tests inspect the outputs."""
    root = tmp_path_factory.mktemp("cli")
    config = tiny_config(penalty_kind="fim", lam=10.0)
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(run_config_to_dict(config)))
    sweep_path = root / "sweep.json"
    sweep_path.write_text(json.dumps({
        "learning_rates": [1e-2, 1e-3],
        "lambdas": [1.0, 10.0],
        "num_samples": 3,
        "replicates": 2,
        "master_seed": 5,
    }))
    assert main(["pretrain", "--config", str(cfg_path),
                 "--out", str(root / "params.fim")]) == 0
    assert main(["fim", "--config", str(cfg_path),
                 "--params", str(root / "params.fim"),
                 "--out", str(root / "fisher.fim"),
                 "--stats", str(root / "stats.json")]) == 0
    assert main(["finetune", "--config", str(cfg_path),
                 "--params", str(root / "params.fim"),
                 "--fim", str(root / "fisher.fim"),
                 "--out", str(root / "trial.json")]) == 0
    assert main(["sweep", "--config", str(cfg_path),
                 "--sweep", str(sweep_path),
                 "--params", str(root / "params.fim"),
                 "--fim", str(root / "fisher.fim"),
                 "--out-csv", str(root / "results.csv"),
                 "--out-selection", str(root / "selection.json")]) == 0
    assert main(["pareto", "--in-csv", str(root / "results.csv"),
                 "--out-csv", str(root / "front.csv")]) == 0
    assert main(["fim-stats", "--artifact", str(root / "fisher.fim"),
                 "--out", str(root / "stats2.json")]) == 0
    return root


class TestPipeline:
    def test_artifacts_exist_and_load(self, workdir):
        from fimreg.artifact import load_fim, load_params

        params = load_params(workdir / "params.fim")
        fisher = load_fim(workdir / "fisher.fim")
        assert params.layout == fisher.layout
        assert np.all(fisher.values >= 0)

    def test_stats_counts_sum_to_parameter_count(self, workdir):
        from fimreg.artifact import load_params

        stats = json.loads((workdir / "stats.json").read_text())
        params = load_params(workdir / "params.fim")
        total = 0
        for layer in stats["layers"].values():
            total += layer["zero_count"] + sum(layer["log10_hist"])
        assert total == params.size

    def test_trial_json_schema(self, workdir):
        trial = json.loads((workdir / "trial.json").read_text())
        assert trial["penalty_kind"] == "fim"
        assert trial["lambda"] == 10.0
        assert trial["alpha"] is None
        for key in ("val_top1", "test_top1", "test_wga", "reverse_top1"):
            assert 0.0 <= trial[key] <= 1.0

    def test_erm_trial_emits_null_penalty_fields(self, workdir, tmp_path):
        config = tiny_config(penalty_kind="erm")
        cfg_path = tmp_path / "erm.json"
        cfg_path.write_text(json.dumps(run_config_to_dict(config)))
        out = tmp_path / "trial_erm.json"
        assert main(["finetune", "--config", str(cfg_path),
                     "--params", str(workdir / "params.fim"),
                     "--fim", str(workdir / "fisher.fim"),
                     "--out", str(out)]) == 0
        trial = json.loads(out.read_text())
        assert trial["lambda"] is None
        assert trial["alpha"] is None

    def test_sweep_outputs(self, workdir):
        lines = (workdir / "results.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 3 * 2  # header + num_samples * replicates
        selection = json.loads((workdir / "selection.json").read_text())
        assert set(selection) == {"selected_config_id", "val_top1_mean",
                                  "test_wga_mean", "test_wga_std"}

    def test_pareto_front_sorted_ascending(self, workdir):
        lines = (workdir / "front.csv").read_text().strip().split("\n")
        assert lines[0] == "mode,config_id,seed,test_top1,reverse_top1"
        by_mode = {}
        for line in lines[1:]:
            parts = line.split(",")
            by_mode.setdefault(parts[0], []).append(float(parts[3]))
        for mode, xs in by_mode.items():
            assert xs == sorted(xs)
        assert set(by_mode) == {"nondominated", "convex_hull"}


class TestErrors:
    def test_unknown_subcommand_exits_nonzero(self, capsys):
        with pytest.raises(SystemExit):
            main(["frobnicate"])

    def test_missing_config_yields_json_error(self, capsys, tmp_path):
        rc = main(["pretrain", "--config", str(tmp_path / "absent.json"),
                   "--out", str(tmp_path / "x.fim")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "FileNotFoundError"

    def test_corrupt_artifact_reports_error_kind(self, capsys, workdir, tmp_path):
        raw = bytearray((workdir / "fisher.fim").read_bytes())
        raw[-10] ^= 0xFF
        bad = tmp_path / "bad.fim"
        bad.write_bytes(bytes(raw))
        rc = main(["fim-stats", "--artifact", str(bad), "--out", str(tmp_path / "s.json")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ChecksumError"
