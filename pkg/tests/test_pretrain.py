"""Self-distillation pretraining: augmentation, teacher, EMA, the loop."""

import numpy as np
import pytest

from fimreg import nn
from fimreg.data import ClusterSpec, gen_cluster_dataset
from fimreg.nn import MlpSpec, ModelState, OptimizerConfig, init_model, predict_proba
from fimreg.pretrain import (
    AugmentationSpec,
    DinoConfig,
    SupervisedPretrainConfig,
    TeacherState,
    augment,
    dino_pretrain,
    ema_update,
    supervised_pretrain,
    teacher_forward,
    update_center,
)


class TestAugment:
    def test_identity_when_disabled(self):
        x = np.random.default_rng(0).standard_normal((4, 6))
        out = augment(x, AugmentationSpec(0.0, 0.0, seed=1), draw_index=3)
        np.testing.assert_array_equal(out, x)

    def test_deterministic_per_draw(self):
        x = np.ones((3, 5))
        spec = AugmentationSpec(0.3, 0.2, seed=2)
        a = augment(x, spec, draw_index=7)
        b = augment(x, spec, draw_index=7)
        c = augment(x, spec, draw_index=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_high_mask_prob_zeroes_most_coordinates(self):
        d = 4000
        x = np.ones((1, d))
        out = augment(x, AugmentationSpec(0.0, 0.9, seed=3), draw_index=0)
        nonzero = np.count_nonzero(out)
        # Binomial(d, 0.1): allow 4 standard deviations
        assert abs(nonzero - 0.1 * d) <= 4 * np.sqrt(d * 0.1 * 0.9)

    def test_mask_prob_validation(self):
        with pytest.raises(ValueError):
            AugmentationSpec(0.1, 1.0)


class TestTeacherForward:
    def _setup(self, spec_seed=0):
        spec = MlpSpec(4, (5, 3), 6, activation="tanh", backbone_depth=2)
        model = init_model(spec, spec_seed)
        return spec, model

    def test_zero_center_matches_student_at_equal_temperature(self):
        spec, model = self._setup()
        teacher = TeacherState(model.params, np.zeros(3), 0.99, 0.9)
        x = np.random.default_rng(1).standard_normal(4)
        for tau in (1.0, 0.1):
            np.testing.assert_allclose(
                teacher_forward(teacher, spec, x, temperature=tau),
                predict_proba(model, x, temperature=tau),
                rtol=1e-12,
            )

    def test_full_cancellation_leaves_head_bias(self):
        spec, model = self._setup()
        x = np.random.default_rng(2).standard_normal(4)
        rep = nn.forward_backbone(model, x)
        teacher = TeacherState(model.params, rep, 0.99, 0.9)
        got = teacher_forward(teacher, spec, x, temperature=0.5)
        expected = nn.softmax(nn.head_logits(model, np.zeros(3)) / 0.5)
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_hand_computed_center_shift_on_linear_head(self):
        # no hidden layers, backbone_depth 0: the "backbone" is the identity,
        # so centering subtracts directly from the input of the linear head
        spec = MlpSpec(2, (), 2, backbone_depth=0)
        model = init_model(spec, 3)
        w = np.array([[1.0, -2.0], [0.5, 1.5]])
        b = np.array([0.2, -0.1])
        model = ModelState(spec, model.params.with_segments(
            {"linear0.weight": w.ravel(), "linear0.bias": b}))
        center = np.array([0.3, -0.4])
        x = np.array([1.0, 2.0])
        teacher = TeacherState(model.params, center, 0.99, 0.9)
        got = teacher_forward(teacher, spec, x, temperature=1.0)
        np.testing.assert_allclose(got, nn.softmax((x - center) @ w + b), rtol=1e-12)

    def test_outputs_normalized(self):
        spec, model = self._setup()
        teacher = TeacherState(model.params, np.ones(3) * 0.2, 0.99, 0.9)
        x = np.random.default_rng(4).standard_normal((50, 4))
        probs = teacher_forward(teacher, spec, x, temperature=0.04)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


class TestCenterAndEma:
    def test_center_momentum_extremes(self):
        center = np.array([1.0, -1.0])
        batch = np.array([[3.0, 1.0], [1.0, 3.0]])
        np.testing.assert_array_equal(update_center(center, batch, 1.0), center)
        np.testing.assert_array_equal(update_center(center, batch, 0.0), [2.0, 2.0])
        np.testing.assert_allclose(update_center(np.zeros(1), np.array([[2.0]]), 0.5), [1.0])

    def test_ema_extremes_and_midpoint(self):
        layout = (nn.Segment("w", 0, 2),)
        t = nn.ParamVector(np.array([0.0, 2.0]), layout)
        s = nn.ParamVector(np.array([2.0, 0.0]), layout)
        assert np.array_equal(ema_update(t, s, 1.0).values, t.values)
        assert np.array_equal(ema_update(t, s, 0.0).values, s.values)
        np.testing.assert_allclose(ema_update(t, s, 0.5).values, [1.0, 1.0])

    def test_ema_convexity_random(self):
        rng = np.random.default_rng(5)
        layout = (nn.Segment("w", 0, 20),)
        t = nn.ParamVector(rng.standard_normal(20), layout)
        s = nn.ParamVector(rng.standard_normal(20), layout)
        for m in (0.1, 0.5, 0.99):
            upd = ema_update(t, s, m).values
            lo = np.minimum(t.values, s.values)
            hi = np.maximum(t.values, s.values)
            assert np.all(upd >= lo - 1e-15) and np.all(upd <= hi + 1e-15)


def small_dino_config(steps=30, seed=0):
    return DinoConfig(
        steps=steps,
        batch_size=32,
        optimizer=OptimizerConfig("adamw", 5e-3),
        augmentation=AugmentationSpec(0.2, 0.1, seed=seed + 50),
        seed=seed,
    )


class TestDinoPretrain:
    def _inputs(self, n=256):
        return gen_cluster_dataset(ClusterSpec(n=n, d=8, k=3, seed=1)).features

    def _spec(self):
        return MlpSpec(8, (10, 3), 8, activation="tanh", backbone_depth=2)

    def test_zero_steps_returns_initialization(self):
        spec = self._spec()
        res = dino_pretrain(self._inputs(), spec, small_dino_config(steps=0))
        assert np.array_equal(res.theta_ssl.values, init_model(spec, 0).params.values)

    def test_pseudo_label_rows_normalized(self):
        res = dino_pretrain(self._inputs(), self._spec(), small_dino_config())
        sums = res.pseudo_labels.soft_labels.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_pseudo_labels_equal_final_teacher_bit_exactly(self):
        spec = self._spec()
        inputs = self._inputs()
        cfg = small_dino_config()
        res = dino_pretrain(inputs, spec, cfg)
        again = teacher_forward(res.teacher, spec, inputs, cfg.tau_teacher)
        assert np.array_equal(res.pseudo_labels.soft_labels, again)

    def test_deterministic(self):
        spec = self._spec()
        inputs = self._inputs()
        a = dino_pretrain(inputs, spec, small_dino_config())
        b = dino_pretrain(inputs, spec, small_dino_config())
        assert np.array_equal(a.theta_ssl.values, b.theta_ssl.values)
        assert a.loss_history == b.loss_history

    def test_teacher_changes_only_through_ema(self):
        # one step with ema momentum 1.0: the student moves, the teacher must
        # remain bit-identical to the initialization
        spec = self._spec()
        inputs = self._inputs()
        cfg = DinoConfig(
            steps=1,
            batch_size=32,
            optimizer=OptimizerConfig("adamw", 5e-3),
            augmentation=AugmentationSpec(0.2, 0.1, seed=9),
            ema_momentum=1.0,
            seed=0,
        )
        res = dino_pretrain(inputs, spec, cfg)
        init_params = init_model(spec, 0).params
        assert np.array_equal(res.teacher.params.values, init_params.values)
        assert not np.array_equal(res.theta_ssl.values, init_params.values)

    def test_loss_decreases_on_separable_data(self):
        cfg = DinoConfig(
            steps=200,
            batch_size=64,
            optimizer=OptimizerConfig("adamw", 1e-2, schedule="cosine", total_steps=200),
            augmentation=AugmentationSpec(0.2, 0.1, seed=7),
            seed=0,
        )
        res = dino_pretrain(self._inputs(1024), self._spec(), cfg)
        first = np.mean(res.loss_history[:10])
        last = np.mean(res.loss_history[-10:])
        assert last < first

    def test_invalid_temperatures(self):
        with pytest.raises(ValueError):
            DinoConfig(
                steps=1, batch_size=4,
                optimizer=OptimizerConfig("adamw", 1e-3),
                augmentation=AugmentationSpec(0.1, 0.0),
                tau_teacher=0.0,
            )


class TestSupervisedPretrain:
    def test_zero_learning_rate_leaves_params(self):
        ds = gen_cluster_dataset(ClusterSpec(n=128, d=6, k=3, seed=2))
        spec = MlpSpec(6, (5,), 3)
        cfg = SupervisedPretrainConfig(OptimizerConfig("adamw", 0.0), epochs=2,
                                       batch_size=32, seed=0)
        model = supervised_pretrain(ds, spec, cfg)
        assert np.array_equal(model.params.values, init_model(spec, 0).params.values)

    def test_reaches_high_accuracy_on_separable_clusters(self):
        from fimreg.data import split
        from fimreg.evaluate import top1_accuracy

        ds = gen_cluster_dataset(ClusterSpec(n=2000, d=8, k=3, seed=3))
        tr, te = split(ds, (0.8, 0.2), seed=0)
        spec = MlpSpec(8, (12,), 3)
        cfg = SupervisedPretrainConfig(
            OptimizerConfig("adamw", 1e-2, schedule="cosine"), epochs=30,
            batch_size=64, seed=0)
        model = supervised_pretrain(tr, spec, cfg)
        assert top1_accuracy(model, te) >= 0.9

    def test_deterministic(self):
        ds = gen_cluster_dataset(ClusterSpec(n=256, d=6, k=3, seed=4))
        spec = MlpSpec(6, (5,), 3)
        cfg = SupervisedPretrainConfig(OptimizerConfig("adamw", 1e-2), epochs=3,
                                       batch_size=32, seed=1)
        a = supervised_pretrain(ds, spec, cfg)
        b = supervised_pretrain(ds, spec, cfg)
        assert np.array_equal(a.params.values, b.params.values)
