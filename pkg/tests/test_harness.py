"""Harness: task building, trials, sweeps, selection, aggregation, configs."""

import dataclasses

import numpy as np
import pytest

import fimreg.harness as harness
from fimreg.harness import (
    Artifacts,
    FimConfig,
    PenaltyConfig,
    PretrainConfig,
    RunConfig,
    SweepSpec,
    TaskConfig,
    TrialResult,
    ValidationRecord,
    aggregate,
    build_tasks,
    prepare_artifacts,
    random_sweep,
    run_config_from_dict,
    run_config_to_dict,
    run_trial,
    select_by_validation,
    selection_summary,
    sweep_spec_from_dict,
    validation_records,
    write_results_csv,
)
from fimreg.nn import MlpSpec, OptimizerConfig


def tiny_config(penalty_kind="erm", lam=0.0, seed=0):
    return RunConfig(
        model=MlpSpec(8, (6,), 2, activation="relu", backbone_depth=1),
        task=TaskConfig(
            kind="spurious_pair", n_pretrain=600, n_finetune=800,
            d_core=4, d_spurious=4, rho=0.9, noise_std=0.5, data_seed=1,
        ),
        pretrain=PretrainConfig(
            style="supervised",
            optimizer=OptimizerConfig("adamw", 1e-2, schedule="cosine"),
            epochs=8, batch_size=64, seed=1,
        ),
        fim=FimConfig(mode="exact", n_samples=400),
        penalty=PenaltyConfig(kind=penalty_kind, lam=lam,
                              alpha=1e-3 if penalty_kind == "adjusted_fim" else None),
        optimizer=OptimizerConfig("adamw", 1e-2, schedule="cosine"),
        epochs=6, batch_size=64, seed=seed,
    )


@pytest.fixture(scope="module")
def tiny_setup():
    config = tiny_config()
    tasks = build_tasks(config.task)
    artifacts = prepare_artifacts(config, tasks)
    return config, tasks, artifacts


class TestBuildTasks:
    def test_spurious_pair_shapes(self):
        cfg = tiny_config().task
        tasks = build_tasks(cfg)
        assert tasks.pretrain_train.dim == tasks.finetune_train.dim == 8
        assert tasks.finetune_test.groups is not None
        total = (tasks.finetune_train.n + tasks.finetune_val.n + tasks.finetune_test.n)
        assert total == cfg.n_finetune

    def test_recovery_kind_builds_binary_task(self):
        cfg = TaskConfig(kind="recovery", n_pretrain=400, n_finetune=400,
                         d_core=4, d_spurious=4, k_pretrain=3, data_seed=2)
        tasks = build_tasks(cfg)
        assert tasks.pretrain_train.num_classes == 3
        assert tasks.finetune_train.num_classes == 2

    def test_cluster_pair_kind(self):
        cfg = TaskConfig(kind="cluster_pair", n_pretrain=400, n_finetune=400,
                         d_core=4, d_spurious=4, k_pretrain=3, data_seed=2)
        tasks = build_tasks(cfg)
        assert tasks.pretrain_train.num_classes == 3
        assert tasks.finetune_train.groups is not None  # biased fine-tune task

    def test_deterministic(self):
        cfg = tiny_config().task
        a, b = build_tasks(cfg), build_tasks(cfg)
        assert np.array_equal(a.finetune_test.features, b.finetune_test.features)


class TestArtifactPreparation:
    def test_dino_pretraining_path_produces_bound_artifacts(self):
        config = dataclasses.replace(
            tiny_config(),
            pretrain=PretrainConfig(
                style="dino",
                optimizer=OptimizerConfig("adamw", 5e-3),
                batch_size=64, dino_steps=40, seed=1),
        )
        tasks = build_tasks(config.task)
        artifacts = prepare_artifacts(config, tasks)
        layout = config.pretrain_spec().param_layout()
        assert artifacts.theta_ssl.layout == layout
        assert artifacts.fisher.layout == layout
        assert np.all(artifacts.fisher.values >= 0)
        result = run_trial(config, artifacts, tasks)
        assert 0.0 <= result.test_top1 <= 1.0

    def test_fim_modes_through_config(self, tiny_setup):
        config, tasks, _ = tiny_setup
        for mode in ("empirical_sampled", "empirical_labels"):
            cfg = dataclasses.replace(config, fim=FimConfig(mode=mode, n_samples=200, seed=3))
            arts = prepare_artifacts(cfg, tasks)
            assert arts.fisher.mode == mode
            assert arts.fisher.n_samples == 200


class TestRunTrial:
    def test_deterministic_metrics(self, tiny_setup):
        config, tasks, artifacts = tiny_setup
        a = run_trial(config, artifacts, tasks)
        b = run_trial(config, artifacts, tasks)
        assert a.metrics_equal(b)

    def test_lambda_zero_equivalence_across_kinds(self, tiny_setup):
        config, tasks, artifacts = tiny_setup
        results = [
            run_trial(dataclasses.replace(config, penalty=PenaltyConfig(kind=k, lam=0.0,
                      alpha=1e-3 if k == "adjusted_fim" else None)), artifacts, tasks)
            for k in ("erm", "l2", "fim", "adjusted_fim")
        ]
        for other in results[1:]:
            assert results[0].metrics_equal(other)

    def test_zero_epochs_reports_initial_model(self, tiny_setup):
        from fimreg.evaluate import top1_accuracy
        from fimreg.harness import finetune_model

        config, tasks, artifacts = tiny_setup
        cfg = dataclasses.replace(config, epochs=0)
        result = run_trial(cfg, artifacts, tasks)
        initial = finetune_model(cfg, artifacts, tasks)  # zero epochs: untouched
        assert result.test_top1 == top1_accuracy(initial, tasks.finetune_test)
        assert result.val_top1 == top1_accuracy(initial, tasks.finetune_val)

    def test_layout_binding_failure(self, tiny_setup):
        config, tasks, artifacts = tiny_setup
        wrong = dataclasses.replace(config, model=MlpSpec(8, (7,), 2, backbone_depth=1),
                                    penalty=PenaltyConfig(kind="fim", lam=1.0))
        from fimreg.nn import LayoutMismatchError
        with pytest.raises(LayoutMismatchError):
            run_trial(wrong, artifacts, tasks)


class TestSweep:
    def test_exhaustive_when_num_samples_is_grid(self):
        spec = SweepSpec(learning_rates=(1e-3, 1e-2), lambdas=(1.0, 2.0),
                         num_samples=4, replicates=1, master_seed=0)
        combos = spec.sample_combinations()
        assert len(combos) == 4
        assert len({(c["lr"], c["lam"]) for c in combos}) == 4

    def test_sampling_without_replacement_deterministic(self):
        spec = SweepSpec(learning_rates=(1, 2, 3), lambdas=(1, 2, 3),
                         num_samples=5, replicates=1, master_seed=42)
        a = spec.sample_combinations()
        b = spec.sample_combinations()
        assert a == b
        assert len({(c["lr"], c["lam"]) for c in a}) == 5

    def test_num_samples_exceeding_grid_rejected(self):
        with pytest.raises(ValueError):
            SweepSpec(learning_rates=(1.0,), lambdas=(1.0,), num_samples=2)

    def test_counts_and_config_ids(self, tiny_setup):
        config, tasks, artifacts = tiny_setup
        spec = SweepSpec(learning_rates=(1e-2, 1e-3), lambdas=(0.0,),
                         replicates=2, master_seed=7)
        sweep = random_sweep(spec, config, artifacts, tasks)
        assert len(sweep.trials) == 4
        assert sorted({t.config_id for t in sweep.trials}) == [0, 1]
        seeds = sorted({t.seed for t in sweep.trials})
        assert seeds == [7, 8]  # master_seed + replicate index

    def test_replicate_rerun_bit_exact(self, tiny_setup):
        config, tasks, artifacts = tiny_setup
        spec = SweepSpec(learning_rates=(1e-2,), lambdas=(0.0,), replicates=2,
                         master_seed=3)
        sweep = random_sweep(spec, config, artifacts, tasks)
        target = sweep.trials[1]
        rerun = run_trial(dataclasses.replace(sweep.configs[0], seed=target.seed),
                          artifacts, tasks)
        assert rerun.metrics_equal(target)

    def test_eighteen_combinations_five_replicates(self, tiny_setup):
        # the canonical sweep shape: 18 of the grid sampled without
        # replacement, five runs each -> 90 rows, 18 distinct config ids
        config, tasks, artifacts = tiny_setup
        quick = dataclasses.replace(config, epochs=1)
        spec = SweepSpec(learning_rates=(1e-3, 3e-3, 1e-2),
                         lambdas=(0.0, 1.0, 10.0), batch_sizes=(64, 128),
                         num_samples=18, replicates=5, master_seed=9)
        sweep = random_sweep(spec, quick, artifacts, tasks)
        assert len(sweep.trials) == 90
        assert len({t.config_id for t in sweep.trials}) == 18
        combos = {(c["lr"], c["lam"], c["batch_size"]) for c in sweep.combos}
        assert len(combos) == 18


class TestSelection:
    def test_single_config(self):
        recs = [ValidationRecord(0, 0, 0.9)]
        assert select_by_validation(recs) == 0

    def test_highest_mean_wins_even_if_wga_lower(self):
        recs = [ValidationRecord(0, s, 0.91) for s in range(3)]
        recs += [ValidationRecord(1, s, 0.93) for s in range(3)]
        assert select_by_validation(recs) == 1

    def test_exact_tie_breaks_to_lowest_id(self):
        recs = [ValidationRecord(5, 0, 0.9), ValidationRecord(2, 0, 0.9)]
        assert select_by_validation(recs) == 2

    def test_record_type_carries_no_group_fields(self):
        assert set(ValidationRecord._fields) == {"config_id", "seed", "val_top1"}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_by_validation([])


class TestAggregate:
    def _trial(self, cid, seed, val=0.5, test=0.5, wga=0.5, rev=0.5):
        return TrialResult(cid, seed, val, test, wga, rev, 0.0)

    def test_constant_replicates(self):
        trials = [self._trial(0, s, wga=0.7) for s in range(3)]
        mean, std = aggregate(trials)["test_wga"]
        assert mean == pytest.approx(0.7)
        assert std == 0.0

    def test_hand_values_two_replicates(self):
        trials = [self._trial(0, 0, wga=0.6), self._trial(0, 1, wga=0.8)]
        mean, std = aggregate(trials)["test_wga"]
        assert mean == pytest.approx(0.7, abs=1e-12)
        assert std == pytest.approx(np.sqrt(((0.6 - 0.7) ** 2 + (0.8 - 0.7) ** 2) / 1), abs=1e-12)
        assert std == pytest.approx(0.1414, abs=5e-5)

    def test_single_replicate_std_zero(self):
        mean, std = aggregate([self._trial(0, 0, wga=0.9)])["test_wga"]
        assert (mean, std) == (0.9, 0.0)

    def test_missing_wga_aggregates_to_nan(self):
        trials = [TrialResult(0, 0, 0.5, 0.5, None, 0.5, 0.0)]
        mean, std = aggregate(trials)["test_wga"]
        assert np.isnan(mean) and np.isnan(std)


class TestOutputs:
    def test_results_csv_is_deterministic_and_schema_correct(self, tiny_setup, tmp_path):
        config, tasks, artifacts = tiny_setup
        spec = SweepSpec(learning_rates=(1e-2,), lambdas=(0.0,), replicates=2,
                         master_seed=1)
        sweep = random_sweep(spec, config, artifacts, tasks)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_results_csv(sweep, p1)
        write_results_csv(sweep, p2)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().split("\n")[0]
        assert header == ("config_id,seed,lr,lambda,alpha,penalty_kind,"
                          "val_top1,test_top1,test_wga,reverse_top1")
        first_row = p1.read_text().split("\n")[1].split(",")
        assert first_row[3] == ""  # erm -> lambda empty
        assert first_row[5] == "erm"

    def test_selection_summary_schema(self, tiny_setup):
        config, tasks, artifacts = tiny_setup
        spec = SweepSpec(learning_rates=(1e-2, 1e-3), lambdas=(0.0,), replicates=2,
                         master_seed=1)
        sweep = random_sweep(spec, config, artifacts, tasks)
        summary = selection_summary(sweep)
        assert set(summary) == {"selected_config_id", "val_top1_mean",
                                "test_wga_mean", "test_wga_std"}
        assert summary["selected_config_id"] in {0, 1}

    def test_validation_records_strip_groupwise_metrics(self, tiny_setup):
        config, tasks, artifacts = tiny_setup
        trial = run_trial(config, artifacts, tasks)
        recs = validation_records([trial])
        assert recs[0].val_top1 == trial.val_top1
        assert not hasattr(recs[0], "test_wga")


class TestConfigJson:
    def test_roundtrip(self):
        config = tiny_config(penalty_kind="adjusted_fim", lam=2.5)
        d = run_config_to_dict(config)
        back = run_config_from_dict(d)
        assert back == config

    def test_sweep_spec_defaults(self):
        spec = sweep_spec_from_dict({"learning_rates": [1e-3, 1e-2]})
        assert spec.replicates == 5
        assert spec.lambdas == (0.0,)
