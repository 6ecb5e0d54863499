import math
import struct

import numpy as np
import pytest

from mwad import training
from mwad.dataset import NormalizationState
from mwad.errors import (
    ContractError,
    DimensionError,
    DivergenceError,
    FormatError,
    IncompatibleVersionError,
    InsufficientLengthError,
)
from mwad.numeric import check_function, grad_check
from mwad.scoring import score
from mwad.synth import sine_fixture
from mwad.training import SGD, Adam, Detector, TrainConfig

from conftest import toy_detector


def _params_equal(a, b):
    na, nb = a.named(), b.named()
    return na.keys() == nb.keys() and all(np.array_equal(na[k], nb[k]) for k in na)


class TestTrainConfig:
    @pytest.mark.parametrize("kwargs", [dict(learning_rate=-1e-3), dict(epochs=0), dict(batch_size=0),
                                        dict(optimizer="rmsprop"), dict(gradient_clip=0.0)])
    def test_rejects(self, kwargs):
        with pytest.raises(ContractError):
            TrainConfig(**kwargs)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.epochs, cfg.optimizer, cfg.gradient_clip) == (1e-2, 10, "adam", 5.0)


class TestOptimizers:
    def test_sgd_closed_form(self):
        w = np.array([0.75])
        SGD(0.1).step({"w": w}, {"w": np.array([2.5])})
        assert w[0] == 0.75 - 0.1 * 2.5

    def test_adam_first_step_is_lr_times_sign(self):
        # with bias correction the first step is lr * g / (|g| + eps)
        w = np.array([1.0, -1.0])
        g = np.array([3.0, -0.5])
        Adam(0.01).step({"w": w}, {"w": g})
        np.testing.assert_allclose(w, [1.0 - 0.01, -1.0 + 0.01], rtol=1e-9)

    def test_clip_scales_to_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        before = training.clip_gradients(grads, 1.0)
        assert before == 5.0
        assert training.global_norm(grads) == pytest.approx(1.0, abs=1e-15)

    def test_clip_leaves_small_gradients(self):
        grads = {"a": np.array([0.3, 0.4])}
        training.clip_gradients(grads, 5.0)
        np.testing.assert_array_equal(grads["a"], [0.3, 0.4])


class TestTrain:
    def test_constant_series(self):
        # an L1 objective at a fixed step size only hovers around its minimum,
        # so convergence is reached by warm-restarting at smaller rates
        det = Detector.init(3, "adaptive", w1=3, w2=3, hidden=8, seed=0)
        series = np.full((200, 3), 0.6)
        for lr in (1e-2, 1e-3, 1e-4):
            det, rep = training.train(series, det, TrainConfig(learning_rate=lr, epochs=30))
        assert rep.final_loss < 1e-3

    def test_sine_fixture_halves_loss(self):
        x = sine_fixture().features
        x = (x - x.min(axis=0)) / (x.max(axis=0) - x.min(axis=0))
        det = Detector.init(4, "adaptive", w1=15, w2=11, hidden=32, seed=0)
        _, rep = training.train(x, det, TrainConfig())
        assert len(rep.epoch_losses) == 10
        assert all(math.isfinite(v) and v >= 0 for v in rep.epoch_losses)
        assert rep.epoch_losses[-1] <= 0.5 * rep.epoch_losses[0]

    def test_zero_learning_rate_bit_identical(self, rng):
        det = toy_detector(seed=1)
        trained, _ = training.train(rng.uniform(size=(30, 4)), det, TrainConfig(learning_rate=0.0, epochs=2))
        assert _params_equal(det, trained)

    def test_input_detector_untouched(self, rng):
        det = toy_detector(seed=2)
        snapshot = det.copy()
        training.train(rng.uniform(size=(30, 4)), det, TrainConfig(epochs=1))
        assert _params_equal(det, snapshot)

    @pytest.mark.parametrize("mode", ["adaptive", "manual", "none"])
    def test_deterministic(self, mode, rng):
        x = rng.uniform(size=(40, 4))
        det = toy_detector(seed=3, mode=mode)
        cfg = TrainConfig(epochs=2, batch_size=8, shuffle=True, seed=5)
        a, ra = training.train(x, det, cfg)
        b, rb = training.train(x, det, cfg)
        assert training.checkpoint_bytes(a) == training.checkpoint_bytes(b)
        assert ra.epoch_losses == rb.epoch_losses

    def test_sgd_update_norm_bounded_by_lr_times_clip(self, rng):
        x = rng.uniform(size=(40, 4)) * 50.0
        det = toy_detector(seed=4, scale=3.0)
        params = det.named()
        opt = SGD(0.1)
        for start in range(0, 30, 6):
            _, grads = training.loss_and_grads(x, np.arange(2 + start, 8 + start), det)
            training.clip_gradients(grads, 0.5)
            before = {k: v.copy() for k, v in params.items()}
            opt.step(params, grads)
            moved = math.sqrt(sum(float(((params[k] - before[k]) ** 2).sum()) for k in params))
            assert moved <= 0.1 * 0.5 * (1 + 1e-12)

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_carries_step(self, rng):
        det = toy_detector(seed=0, mode="none")
        with pytest.raises(DivergenceError) as info:
            training.train(rng.uniform(size=(30, 4)), det,
                           TrainConfig(learning_rate=1e308, gradient_clip=None, optimizer="sgd", epochs=3))
        assert info.value.step >= 0

    def test_too_short(self):
        with pytest.raises(InsufficientLengthError):
            training.train(np.zeros((4, 4)), toy_detector(), TrainConfig(epochs=1))

    def test_wrong_width(self):
        with pytest.raises(DimensionError):
            training.train(np.zeros((30, 3)), toy_detector(), TrainConfig(epochs=1))

    def test_non_finite_input(self):
        x = np.zeros((30, 4))
        x[3, 1] = np.nan
        with pytest.raises(ContractError):
            training.train(x, toy_detector(), TrainConfig(epochs=1))


class TestLossGradients:
    def test_fused_matches_graph_loss(self, rng):
        raw = rng.uniform(size=(9, 4))
        det = toy_detector(seed=6)
        ks = np.arange(2, 2 + training.n_windows(9, det))
        fused, grads = training.loss_and_grads(raw, ks, det)
        g = training.reference_loss_graph(raw, det)
        assert g.forward() == pytest.approx(fused, rel=1e-13)
        ref = g.backward()
        for name, v in grads.items():
            np.testing.assert_allclose(v, ref[name].reshape(v.shape), rtol=1e-10, atol=1e-14)

    @pytest.mark.parametrize("raw_target", [False, True])
    def test_fused_end_to_end_gradcheck(self, raw_target):
        det = Detector.init(4, "adaptive", w1=3, w2=2, hidden=2, seed=0, raw_target=raw_target)
        raw = np.random.default_rng(0).uniform(0, 1, (8, 4))
        ks = np.arange(2, 6)
        _, grads = training.loss_and_grads(raw, ks, det)
        rep = check_function(lambda: training.loss_and_grads(raw, ks, det, need_grad=False)[0],
                             grads, det.named())
        assert rep.passed, str(rep)

    def test_graph_gradcheck_manual_mode(self):
        det = Detector.init(4, "manual", w1=3, w2=2, hidden=2, seed=0)
        raw = np.random.default_rng(0).uniform(0, 1, (8, 4))
        assert grad_check(training.reference_loss_graph(raw, det)).passed


class TestCheckpoint:
    def _trained(self):
        det = toy_detector(seed=9)
        det.normalization = NormalizationState(np.array([0.0, 1.0, 2.0, 3.0]), np.array([1.0, 2.0, 5.0, 3.0]))
        det.columns = ("a", "b", "c", "d")
        det.config = {"seed": 9, "w1": 3}
        return det

    @pytest.mark.parametrize("mode", ["adaptive", "manual", "none"])
    def test_round_trip_bit_equal(self, mode, tmp_path):
        det = toy_detector(seed=9, mode=mode)
        path = tmp_path / "m.ckpt"
        training.save_checkpoint(det, path)
        back = training.load_checkpoint(path)
        assert _params_equal(det, back)
        assert (back.mode, back.w1, back.lae.w2, back.lae.hidden, back.seed) == (mode, 3, 2, 2, 9)

    def test_metadata_and_normalization(self, tmp_path):
        det = self._trained()
        path = tmp_path / "m.ckpt"
        training.save_checkpoint(det, path)
        back = training.load_checkpoint(path)
        assert back.columns == det.columns and back.config == det.config
        np.testing.assert_array_equal(back.normalization.minimum, det.normalization.minimum)
        np.testing.assert_array_equal(back.normalization.maximum, det.normalization.maximum)
        assert training.checkpoint_bytes(back) == path.read_bytes()

    def test_layout(self):
        blob = training.checkpoint_bytes(self._trained())
        assert blob[:4] == b"MWCK" and blob[4] == training.CHECKPOINT_VERSION
        (hlen,) = struct.unpack("<I", blob[5:9])
        assert blob[9:9 + hlen].startswith(b"{")

    def test_bumped_version(self):
        blob = bytearray(training.checkpoint_bytes(self._trained()))
        blob[4] += 1
        with pytest.raises(IncompatibleVersionError):
            training.checkpoint_from_bytes(bytes(blob))

    @pytest.mark.parametrize("cut", [3, 8, 40, -1, -20])
    def test_truncated(self, cut):
        blob = training.checkpoint_bytes(self._trained())
        with pytest.raises(FormatError):
            training.checkpoint_from_bytes(blob[:cut])

    def test_corrupted_body(self):
        blob = bytearray(training.checkpoint_bytes(self._trained()))
        blob[-12] ^= 0xFF
        with pytest.raises(FormatError, match="checksum"):
            training.checkpoint_from_bytes(bytes(blob))

    def test_feature_count_mismatch_at_use(self, tmp_path, rng):
        det = Detector.init(48, "manual", w1=3, w2=2, hidden=4, seed=0)
        path = tmp_path / "m.ckpt"
        training.save_checkpoint(det, path)
        back = training.load_checkpoint(path)
        with pytest.raises(DimensionError):
            score(rng.uniform(size=(20, 47)), back)
