"""Engineered zero-Fisher construction: deadness, isolation, bookkeeping."""

import numpy as np
import pytest

from fimreg import nn
from fimreg.data import ClusterSpec, cluster_centers
from fimreg.recovery import (
    RecoveryConfig,
    build_recovery_setup,
    orthogonal_direction,
)


@pytest.fixture(scope="module")
def setup():
    cfg = RecoveryConfig(seed=0, n_pretrain=1500, n_finetune=1500,
                         pretrain_epochs=15, finetune_epochs=10)
    return cfg, build_recovery_setup(cfg)


class TestOrthogonalDirection:
    def test_orthogonal_to_every_center(self):
        centers = cluster_centers(ClusterSpec(n=10, d=10, k=4, seed=3))
        v = orthogonal_direction(centers, 7)
        assert np.abs(centers @ v).max() < 1e-9
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12


class TestRecoverySetup:
    def test_dead_fraction_counts_engineered_units(self, setup):
        cfg, s = setup
        # silenced units own their input row, bias, and head column
        d, h, k = cfg.d, cfg.hidden, cfg.k
        expected = cfg.n_silenced * (d + 1 + k)
        total = s.pretrained.params.size
        assert s.dead_fraction >= expected / total - 1e-12
        assert s.dead_fraction >= 0.05

    def test_zero_entries_exactly_where_engineered(self, setup):
        cfg, s = setup
        F = s.fisher
        w0 = F.segment("linear0.weight").reshape(cfg.d, cfg.hidden)
        b0 = F.segment("linear0.bias")
        w1 = F.segment("linear1.weight").reshape(cfg.hidden, cfg.k)
        for j in s.silenced_units:
            assert np.all(w0[:, j] == 0.0)
            assert b0[j] == 0.0
            assert np.all(w1[j] == 0.0)
        live = [j for j in range(cfg.hidden) if j not in s.silenced_units]
        assert np.all(F.segment("linear0.bias")[live] > 0.0)

    def test_silenced_units_inactive_on_fim_inputs(self, setup):
        cfg, s = setup
        x = s.tasks.pretrain_train.features
        z = x @ s.pretrained.weights(0) + s.pretrained.biases(0)
        for j in s.silenced_units:
            assert z[:, j].max() < 0.0

    def test_task_b_labels_follow_direction(self, setup):
        cfg, s = setup
        ds = s.tasks.finetune_train
        np.testing.assert_array_equal(
            ds.labels, (ds.features @ s.direction > 0).astype(np.int64))

    def test_pretrained_accuracy_recorded(self, setup):
        cfg, s = setup
        from fimreg.evaluate import top1_accuracy

        assert s.pretrained_accuracy == top1_accuracy(s.pretrained, s.tasks.pretrain_test)
        assert s.pretrained_accuracy > 0.7

    def test_live_units_blind_to_direction(self, setup):
        cfg, s = setup
        w0 = s.pretrained.weights(0)
        live = [j for j in range(cfg.hidden) if j not in s.silenced_units]
        assert np.abs(s.direction @ w0[:, live]).max() < 1e-9

    def test_strictly_positive_fisher_recovers_pretrained_accuracy(self, setup):
        # with every Fisher entry lifted above zero, a huge lambda pins the
        # whole backbone and reverse transfer returns the pretrained accuracy
        from fimreg.evaluate import reverse_transfer_eval
        from fimreg.penalty import PenaltyKind
        from fimreg.recovery import finetune_recovery

        cfg, s = setup
        kind = PenaltyKind.adjusted_fisher(s.fisher, 1e12, 1e-3, scope=s.scope)
        assert kind.fim.values.min() > 0.0
        model = finetune_recovery(s, kind, cfg)
        reverse = reverse_transfer_eval(model, s.pretrained, s.tasks.pretrain_test)
        assert abs(reverse - s.pretrained_accuracy) <= 0.02
