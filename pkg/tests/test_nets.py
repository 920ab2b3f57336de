import math
from types import SimpleNamespace

import numpy as np
import pytest

from privadapt.nets import (
    CONNECTIONS,
    AdapterConfig,
    Classifier,
    EncoderConfig,
    TrainConfig,
    adapter_input,
    attach_adapters,
    backward,
    clone,
    count_trainable,
    cross_entropy,
    evaluate,
    forward,
    init_classifier,
    load_checkpoint,
    loss_and_grads,
    pack_params,
    parameter_counts,
    params_digest,
    save_checkpoint,
    softmax,
    train,
    trainable_names,
    unpack_params,
)


def _dataset(features, labels):
    return SimpleNamespace(features=np.asarray(features, dtype=float), labels=np.asarray(labels))


def _randomize(model, rng, scale=0.6):
    for name, arr in model.all_params().items():
        model.set_param(name, rng.normal(0.0, scale, size=arr.shape))
    return model


def _build(connection="none", num_layers=2, hidden=4, down=3, block="dense", seed=0, classes=3):
    enc = EncoderConfig(input_dim=3, hidden_dim=hidden, num_layers=num_layers, block=block)
    ad = AdapterConfig(down_dim=down, connection=connection)
    return init_classifier(enc, classes, ad, np.random.default_rng(seed))


class TestAdapterInput:
    def test_first_layer_ignores_connections(self):
        prev = np.array([1.0, 2.0])
        for conn in CONNECTIONS:
            np.testing.assert_array_equal(adapter_input(1, 4, conn, prev, []), prev)

    def test_neighboring_adds_previous_output(self):
        prev = np.array([1.0, 0.0])
        outs = [np.array([0.5, 0.5]), np.array([2.0, 2.0])]
        got = adapter_input(3, 4, "neighboring", prev, outs)
        np.testing.assert_array_equal(got, prev + outs[1])

    def test_unet_uses_mirrored_output(self):
        # 12 layers, layer 7: the mirror is layer 12 - 7 = 5.
        outs = [np.full(2, float(k)) for k in range(1, 7)]
        got = adapter_input(7, 12, "unet", np.zeros(2), outs)
        np.testing.assert_array_equal(got, outs[4])

    def test_unet_inactive_in_first_half(self):
        prev = np.array([3.0, 1.0])
        outs = [np.ones(2) * 9.0] * 5
        np.testing.assert_array_equal(adapter_input(6, 12, "unet", prev, outs), prev)

    def test_unet_final_layer_has_no_mirror(self):
        prev = np.array([1.0, 1.0])
        outs = [np.ones(2)] * 3
        np.testing.assert_array_equal(adapter_input(4, 4, "unet", prev, outs), prev)

    def test_densenet_sums_all_priors(self):
        prev = np.zeros(2)
        unit = np.ones(2)
        got = adapter_input(4, 6, "densenet", prev, [unit, unit, unit])
        np.testing.assert_array_equal(got, 3.0 * unit)

    def test_missing_prior_is_an_order_violation(self):
        with pytest.raises(RuntimeError):
            adapter_input(3, 4, "densenet", np.zeros(2), [np.zeros(2)])

    def test_bad_indices_rejected(self):
        with pytest.raises(ValueError):
            adapter_input(0, 4, "none", np.zeros(2), [])
        with pytest.raises(ValueError):
            adapter_input(5, 4, "none", np.zeros(2), [])
        with pytest.raises(ValueError):
            adapter_input(1, 4, "resnet", np.zeros(2), [])


class TestForward:
    def test_hand_computed_single_layer(self):
        enc = EncoderConfig(input_dim=2, hidden_dim=2, num_layers=1)
        model = init_classifier(enc, 2, AdapterConfig(down_dim=2), np.random.default_rng(0))
        eye = np.eye(2)
        model.set_param("embed.w", eye.copy())
        model.set_param("embed.b", np.zeros(2))
        model.set_param("enc0.w", eye.copy())
        model.set_param("enc0.b", np.zeros(2))
        model.set_param("ad0.down_w", eye.copy())
        model.set_param("ad0.down_b", np.zeros(2))
        model.set_param("ad0.up_w", 0.5 * eye)
        model.set_param("ad0.up_b", np.array([0.1, -0.2]))
        model.set_param("head.w", eye.copy())
        model.set_param("head.b", np.zeros(2))
        # x = (1, -2): block output relu(x) = (1, 0); adapter sees x, squashes
        # to relu(x) = (1, 0), scales by 0.5 and shifts: (0.6, -0.2).
        logits = model.forward(np.array([1.0, -2.0]))
        np.testing.assert_allclose(logits, [1.6, -0.2], atol=1e-15)

    @pytest.mark.parametrize("connection", CONNECTIONS)
    def test_zero_init_adapters_are_identity(self, connection):
        rng = np.random.default_rng(5)
        enc = EncoderConfig(input_dim=6, hidden_dim=8, num_layers=4)
        bare = init_classifier(enc, 4, None, np.random.default_rng(1))
        with_stack = attach_adapters(bare, AdapterConfig(3, connection), rng)
        x = np.random.default_rng(2).normal(size=(64, 6))
        plain = forward(bare.encoder, None, bare.head, x)
        adapted = forward(with_stack.encoder, with_stack.adapters, with_stack.head, x)
        assert plain.tobytes() == adapted.tobytes()

    def test_stack_none_matches_model_without_adapters(self):
        model = _build("densenet", seed=3)
        x = np.random.default_rng(4).normal(size=(5, 3))
        stripped = Classifier(model.encoder, None, model.head)
        np.testing.assert_array_equal(
            forward(model.encoder, None, model.head, x), stripped.forward(x)
        )

    def test_dimension_mismatch_raises(self):
        model = _build()
        with pytest.raises(ValueError):
            model.forward(np.zeros(7))

    def test_topology_reduction_single_layer(self):
        # With one layer no connection has anything to feed on, so all four
        # patterns compute the same function.
        x = np.random.default_rng(8).normal(size=(20, 3))
        outputs = []
        for conn in CONNECTIONS:
            model = _build(conn, num_layers=1, seed=7)
            _randomize(model, np.random.default_rng(9))
            outputs.append(model.forward(x))
        for other in outputs[1:]:
            np.testing.assert_array_equal(outputs[0], other)


def _finite_difference(model, x, y, mode, h=1e-4):
    grads_fd = {}
    for name in trainable_names(model, mode):
        base = model.all_params()[name]
        fd = np.zeros_like(base)
        for j in range(base.size):
            losses = []
            for sign in (1.0, -1.0):
                pert = base.copy()
                pert.ravel()[j] += sign * h
                trial = clone(model)
                trial.set_param(name, pert)
                losses.append(cross_entropy(trial.forward(x), y))
            fd.ravel()[j] = (losses[0] - losses[1]) / (2.0 * h)
        grads_fd[name] = fd
    return grads_fd


def _relative_error(a, b):
    denom = max(float(np.linalg.norm(a) + np.linalg.norm(b)), 1e-8)
    return float(np.linalg.norm(a - b)) / denom


class TestBackward:
    @pytest.mark.parametrize("connection", CONNECTIONS)
    @pytest.mark.parametrize("mode", ["full_finetune", "adapters", "linear_probe"])
    def test_gradients_match_finite_differences(self, connection, mode):
        model = _randomize(_build(connection), np.random.default_rng(11))
        rng = np.random.default_rng(12)
        x = rng.normal(size=(5, 3))
        y = rng.integers(0, 3, size=5)
        analytic = backward(model, x, y, mode)
        fd = _finite_difference(model, x, y, mode)
        assert set(analytic) == set(fd)
        for name in analytic:
            assert _relative_error(analytic[name], fd[name]) < 1e-4, name

    def test_gradients_match_finite_differences_attention(self):
        model = _randomize(_build("neighboring", block="attention"), np.random.default_rng(13))
        rng = np.random.default_rng(14)
        x = rng.normal(size=(4, 3))
        y = rng.integers(0, 3, size=4)
        analytic = backward(model, x, y, "full_finetune")
        fd = _finite_difference(model, x, y, "full_finetune")
        for name in analytic:
            assert _relative_error(analytic[name], fd[name]) < 1e-4, name

    def test_attention_query_key_gradients_are_zero(self):
        # A single token attends only to itself, so the score projections
        # cannot influence the loss.
        model = _randomize(_build(block="attention"), np.random.default_rng(15))
        x = np.random.default_rng(16).normal(size=(3, 3))
        grads = backward(model, x, np.array([0, 1, 2]), "full_finetune")
        assert np.all(grads["enc0.wq"] == 0.0)
        assert np.all(grads["enc1.wk"] == 0.0)

    def test_head_bias_gradient_is_softmax_minus_onehot(self):
        model = _randomize(_build(), np.random.default_rng(17))
        x = np.random.default_rng(18).normal(size=3)
        logits = model.forward(x)
        grads = backward(model, x, np.array([1]), "linear_probe")
        expected = softmax(logits)
        expected[1] -= 1.0
        np.testing.assert_allclose(grads["head.b"], expected, atol=1e-12)

    def test_gradients_vanish_at_saturation(self):
        model = _randomize(_build(), np.random.default_rng(19))
        bias = np.zeros(3)
        bias[0] = 500.0  # enormous margin for the true class
        model.set_param("head.b", bias)
        grads = backward(model, np.random.default_rng(20).normal(size=3), np.array([0]), "full_finetune")
        total = sum(float(np.abs(g).sum()) for g in grads.values())
        assert total < 1e-8

    def test_only_trainable_parameters_receive_gradients(self):
        model = _randomize(_build(), np.random.default_rng(21))
        x = np.random.default_rng(22).normal(size=(4, 3))
        y = np.array([0, 1, 2, 0])
        assert set(backward(model, x, y, "linear_probe")) == {"head.w", "head.b"}
        names = set(backward(model, x, y, "adapters"))
        assert "head.w" in names and "ad0.down_w" in names
        assert not any(n.startswith(("enc", "embed")) for n in names)


class TestParameterCounts:
    def test_linear_probe_formula(self):
        enc = EncoderConfig(input_dim=40, hidden_dim=192, num_layers=12)
        model = init_classifier(enc, 13, None, np.random.default_rng(0))
        assert count_trainable(model, "linear_probe") == 192 * 13 + 13 == 2509

    def test_adapter_count_at_reference_scale(self):
        enc = EncoderConfig(input_dim=40, hidden_dim=192, num_layers=12)
        model = init_classifier(enc, 13, AdapterConfig(24), np.random.default_rng(0))
        per_adapter = 192 * 24 + 24 + 24 * 192 + 192
        assert parameter_counts(model)["adapters"] == 12 * per_adapter == 113184
        assert count_trainable(model, "adapters") == 113184 + 2509

    def test_strictly_increasing_in_down_dim(self):
        counts = []
        for d in (1, 2, 4, 8, 24, 64):
            model = _build(down=d)
            counts.append(count_trainable(model, "adapters"))
        assert counts == sorted(counts) and len(set(counts)) == len(counts)

    def test_full_finetune_counts_everything(self):
        model = _build(down=5)
        assert count_trainable(model, "full_finetune") == parameter_counts(model)["total"]

    def test_per_layer_override(self):
        enc = EncoderConfig(input_dim=4, hidden_dim=6, num_layers=3)
        cfg = AdapterConfig(2, per_layer_dims=(1, 2, 4))
        model = init_classifier(enc, 2, cfg, np.random.default_rng(0))
        expected = sum(6 * d + d + d * 6 + 6 for d in (1, 2, 4))
        assert parameter_counts(model)["adapters"] == expected

    def test_adapters_mode_requires_stack(self):
        enc = EncoderConfig(input_dim=4, hidden_dim=6, num_layers=2)
        model = init_classifier(enc, 2, None, np.random.default_rng(0))
        with pytest.raises(ValueError):
            trainable_names(model, "adapters")


def _two_blob_data(n_per_class=60, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per_class, dim)) + np.array([3.0, 0.0, 0.0])
    b = rng.normal(size=(n_per_class, dim)) - np.array([3.0, 0.0, 0.0])
    feats = np.vstack([a, b])
    labels = np.array([0] * n_per_class + [1] * n_per_class)
    return _dataset(feats, labels)


class TestTraining:
    def test_zero_learning_rate_is_identity(self):
        model = _build()
        data = _two_blob_data()
        cfg = TrainConfig(epochs=3, learning_rate=0.0)
        trained, history = train(model, data, "full_finetune", cfg, np.random.default_rng(0))
        assert params_digest(trained) == params_digest(model)
        assert len(history["loss"]) == 3
        assert max(history["loss"]) - min(history["loss"]) < 1e-12

    def test_separable_task_reaches_high_accuracy(self):
        enc = EncoderConfig(input_dim=3, hidden_dim=8, num_layers=2)
        model = init_classifier(enc, 2, None, np.random.default_rng(1))
        data = _two_blob_data(seed=2)
        cfg = TrainConfig(epochs=50, learning_rate=3e-3)
        trained, _ = train(model, data, "full_finetune", cfg, np.random.default_rng(3))
        assert evaluate(trained, data) >= 99.0

    def test_training_is_deterministic(self):
        data = _two_blob_data(seed=4)
        cfg = TrainConfig(epochs=5, learning_rate=1e-3)
        runs = []
        for _ in range(2):
            model = _build(seed=5)
            trained, _ = train(model, data, "full_finetune", cfg, np.random.default_rng(6))
            runs.append(params_digest(trained))
        assert runs[0] == runs[1]

    @pytest.mark.parametrize("mode", ["linear_probe", "adapters"])
    def test_frozen_weights_survive_training(self, mode):
        model = _build("neighboring", seed=7)
        frozen_names = sorted(model.encoder.params)
        before = params_digest(model, frozen_names)
        data = _two_blob_data(seed=8)
        trained, _ = train(model, data, mode, TrainConfig(epochs=4), np.random.default_rng(9))
        assert params_digest(trained, frozen_names) == before
        assert params_digest(model, frozen_names) == before

    def test_sgd_optimizer_supported(self):
        model = _build(seed=10)
        data = _two_blob_data(seed=11)
        cfg = TrainConfig(epochs=2, learning_rate=1e-2, optimizer="sgd")
        trained, _ = train(model, data, "linear_probe", cfg, np.random.default_rng(12))
        assert params_digest(trained) != params_digest(model)

    def test_empty_dataset_rejected(self):
        model = _build()
        with pytest.raises(ValueError):
            train(model, _dataset(np.zeros((0, 3)), np.zeros(0, dtype=int)),
                  "full_finetune", TrainConfig(epochs=1), np.random.default_rng(0))


class TestPackUnpack:
    def test_roundtrip(self):
        model = _randomize(_build("unet"), np.random.default_rng(23))
        names = trainable_names(model, "adapters")
        merged = model.all_params()
        vec = pack_params(merged, names)
        restored = unpack_params(vec, merged, names)
        for name in names:
            np.testing.assert_array_equal(restored[name], merged[name])

    def test_size_mismatch_rejected(self):
        model = _build()
        names = trainable_names(model, "linear_probe")
        merged = model.all_params()
        with pytest.raises(ValueError):
            unpack_params(np.zeros(3), merged, names)


class TestCheckpoints:
    @pytest.mark.parametrize("connection", ["none", "densenet"])
    def test_roundtrip_preserves_function(self, tmp_path, connection):
        model = _randomize(_build(connection, num_layers=3), np.random.default_rng(31))
        path = tmp_path / "model.bin"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
        x = np.random.default_rng(32).normal(size=(8, 3))
        np.testing.assert_allclose(restored.forward(x), model.forward(x), atol=1e-4)
        assert restored.adapters.connection == connection if connection != "none" else True

    def test_roundtrip_attention_and_per_layer_dims(self, tmp_path):
        enc = EncoderConfig(input_dim=3, hidden_dim=4, num_layers=2, block="attention")
        cfg = AdapterConfig(2, "unet", per_layer_dims=(1, 3))
        model = init_classifier(enc, 3, cfg, np.random.default_rng(33))
        _randomize(model, np.random.default_rng(34))
        path = tmp_path / "model.bin"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
        assert restored.encoder.cfg.block == "attention"
        assert restored.adapters.cfg.layer_dims(2) == (1, 3)
        x = np.random.default_rng(35).normal(size=(4, 3))
        np.testing.assert_allclose(restored.forward(x), model.forward(x), atol=1e-4)

    def test_no_adapter_roundtrip(self, tmp_path):
        enc = EncoderConfig(input_dim=5, hidden_dim=6, num_layers=2)
        model = init_classifier(enc, 4, None, np.random.default_rng(36))
        path = tmp_path / "bare.bin"
        save_checkpoint(model, path)
        assert load_checkpoint(path).adapters is None

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_checkpoint(path)
