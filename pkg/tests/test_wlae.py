import math

import numpy as np
import pytest

from mwad import wlae
from mwad.errors import ContractError, DimensionError, InsufficientLengthError
from mwad.numeric import check_function
from mwad.wlae import LaeModel, LstmCellParams


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def cell_oracle(x, h, c, w_ih, w_hh, bias):
    """One LSTM step with scalar loops; gate blocks in input, forget, candidate, output order."""
    H = len(h)
    pre = [bias[r] + sum(w_ih[r][m] * x[m] for m in range(len(x))) + sum(w_hh[r][m] * h[m] for m in range(H))
           for r in range(4 * H)]
    i = [_sig(pre[k]) for k in range(H)]
    f = [_sig(pre[H + k]) for k in range(H)]
    g = [math.tanh(pre[2 * H + k]) for k in range(H)]
    o = [_sig(pre[3 * H + k]) for k in range(H)]
    c_new = [f[k] * c[k] + i[k] * g[k] for k in range(H)]
    h_new = [o[k] * math.tanh(c_new[k]) for k in range(H)]
    return h_new, c_new


def model_oracle(window, model):
    enc, dec = model.encoder, model.decoder
    H = model.hidden
    h, c = [0.0] * H, [0.0] * H
    for row in window:
        h, c = cell_oracle(list(row), h, c, enc.w_ih.tolist(), enc.w_hh.tolist(), enc.bias.tolist())
    z = h
    hd, _ = cell_oracle(z, [0.0] * H, [0.0] * H, dec.w_ih.tolist(), dec.w_hh.tolist(), dec.bias.tolist())
    out = [model.proj_b[k] + sum(model.proj_w[k][m] * hd[m] for m in range(H)) for k in range(model.n)]
    return z, out


def random_model(seed, n=3, h=2, w2=2, scale=0.8):
    r = np.random.default_rng(seed)

    def cell(n_in):
        return LstmCellParams(r.uniform(-scale, scale, (4 * h, n_in)), r.uniform(-scale, scale, (4 * h, h)),
                              r.uniform(-scale, scale, 4 * h))

    return LaeModel(cell(n), cell(h), r.uniform(-scale, scale, (n, h)), r.uniform(-scale, scale, n), w2), r


def zero_model(n, h, w2):
    z = LstmCellParams(np.zeros((4 * h, n)), np.zeros((4 * h, h)), np.zeros(4 * h))
    zd = LstmCellParams(np.zeros((4 * h, h)), np.zeros((4 * h, h)), np.zeros(4 * h))
    return LaeModel(z, zd, np.zeros((n, h)), np.zeros(n), w2)


class TestPredictionWindows:
    def test_five_rows_window_two(self):
        ws = wlae.prediction_windows(np.arange(5.0)[:, None], 2)
        assert [w.target_index for w in ws] == [2, 3, 4]
        np.testing.assert_array_equal(ws[0].rows[:, 0], [0, 1])
        assert ws[0].target[0] == 2.0

    def test_no_target(self):
        with pytest.raises(InsufficientLengthError):
            wlae.prediction_windows(np.zeros((3, 1)), 3)

    def test_slammer_count(self):
        assert len(wlae.prediction_windows(np.zeros((7186, 1)), 11)) == 7175

    def test_batch_matches_windows(self, rng):
        x = rng.normal(size=(9, 2))
        inputs, targets = wlae.window_batch(x, 3)
        for k, w in enumerate(wlae.prediction_windows(x, 3)):
            np.testing.assert_array_equal(inputs[k], w.rows)
            np.testing.assert_array_equal(targets[k], w.target)


class TestEncode:
    def test_all_zero(self):
        z = wlae.encode(np.zeros((4, 3)), zero_model(3, 5, 4))
        assert np.array_equal(z, np.zeros(5))

    def test_single_step(self):
        model, r = random_model(2, w2=1)
        x = r.normal(size=(1, 3))
        h, _ = cell_oracle(x[0].tolist(), [0.0, 0.0], [0.0, 0.0], model.encoder.w_ih.tolist(),
                           model.encoder.w_hh.tolist(), model.encoder.bias.tolist())
        np.testing.assert_allclose(wlae.encode(x, model), h, rtol=0, atol=1e-12)

    def test_seed11_oracle(self):
        model, r = random_model(11)
        window = r.normal(size=(2, 3))
        z_ref, out_ref = model_oracle(window, model)
        np.testing.assert_allclose(wlae.encode(window, model), z_ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(wlae.decode(wlae.encode(window, model), model), out_ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(wlae.forward(window, model), out_ref, rtol=0, atol=1e-12)

    def test_batch_equals_single(self):
        model, r = random_model(4, w2=3)
        batch = r.normal(size=(5, 3, 3))
        zb = wlae.encode(batch, model)
        for k in range(5):
            np.testing.assert_allclose(zb[k], wlae.encode(batch[k], model), rtol=0, atol=1e-15)

    def test_wrong_length(self):
        model, _ = random_model(1, w2=2)
        with pytest.raises(ContractError):
            wlae.encode(np.zeros((3, 3)), model)

    def test_wrong_features(self):
        model, _ = random_model(1)
        with pytest.raises(DimensionError):
            wlae.encode(np.zeros((2, 4)), model)


class TestDecode:
    def test_zero_decoder_gives_bias(self, rng):
        model = zero_model(3, 2, 2)
        model.proj_b[:] = [0.5, -1.0, 2.0]
        np.testing.assert_array_equal(wlae.decode(rng.normal(size=2), model), [0.5, -1.0, 2.0])

    def test_zero_latent_closed_form(self):
        model = zero_model(2, 2, 1)
        model.decoder.bias[:] = [0.3, -0.2, 1.0, 0.1, 0.5, 0.4, -1.0, 2.0]
        model.proj_w[:] = [[1.0, 2.0], [-1.0, 0.5]]
        model.proj_b[:] = [0.1, 0.2]
        b = model.decoder.bias
        c = [_sig(b[k]) * math.tanh(b[4 + k]) for k in range(2)]
        h = [_sig(b[6 + k]) * math.tanh(c[k]) for k in range(2)]
        expected = [h[0] + 2.0 * h[1] + 0.1, -h[0] + 0.5 * h[1] + 0.2]
        np.testing.assert_allclose(wlae.decode(np.zeros(2), model), expected, rtol=0, atol=1e-15)

    def test_latent_size_mismatch(self):
        with pytest.raises(DimensionError):
            wlae.decode(np.zeros(3), zero_model(2, 2, 1))

    def test_output_dimension(self):
        model = LaeModel.init(6, hidden=4, w2=5, seed=0)
        assert wlae.forward(np.zeros((5, 6)), model).shape == (6,)


class TestMae:
    def test_identical(self):
        assert wlae.mae(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_uniform_offset(self):
        assert wlae.mae(np.full(4, 1.5), np.full(4, 1.0)) == 0.5

    def test_arithmetic(self):
        assert wlae.mae(np.array([1.0, 1.0]), np.array([0.0, 1.0])) == 0.5

    def test_symmetric(self, rng):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        np.testing.assert_array_equal(wlae.mae(a, b), wlae.mae(b, a))

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            wlae.mae(np.zeros(2), np.zeros(3))


class TestSeriesProperties:
    def test_causality(self, rng):
        model = LaeModel.init(3, hidden=4, w2=3, seed=1)
        x = rng.normal(size=(10, 3))
        before = wlae.predict_series(x, model)
        y = x.copy()
        y[6] += 100.0
        after = wlae.predict_series(y, model)
        # target index 6 is prediction row 3: its inputs are rows 3..5
        np.testing.assert_array_equal(before[3], after[3])
        np.testing.assert_array_equal(before[:4], after[:4])

    def test_shift_equivariance(self, rng):
        model = LaeModel.init(2, hidden=3, w2=4, seed=2)
        x = rng.normal(size=(12, 2))
        k = 5
        longer = np.concatenate([rng.normal(size=(k, 2)), x])
        np.testing.assert_allclose(wlae.predict_series(longer, model)[k:], wlae.predict_series(x, model),
                                   rtol=0, atol=1e-15)


class TestGradients:
    def test_cell_seed42(self):
        r = np.random.default_rng(42)
        cell = LstmCellParams(r.normal(size=(12, 4)) * 0.1, r.normal(size=(12, 3)) * 0.1, r.normal(size=12) * 0.1)
        xs = r.normal(size=(2, 5, 4))
        weights = r.normal(size=(2, 3))

        def loss():
            return float((cell.run(xs)[0] * weights).sum())

        _, cache = cell.run(xs)
        _, grads = LstmCellParams.backward(weights, cache)
        rep = check_function(loss, grads, {"w_ih": cell.w_ih, "w_hh": cell.w_hh, "bias": cell.bias})
        assert rep.passed, str(rep)

    def test_input_gradient(self):
        model, r = random_model(5, n=3, h=3, w2=3)
        inputs = r.normal(size=(4, 3, 3))
        weights = r.normal(size=(4, 3))

        def loss():
            return float((wlae.predict_batch(inputs, model)[0] * weights).sum())

        _, cache = wlae.predict_batch(inputs, model)
        dinputs, grads = wlae.backward_batch(weights, cache, model)
        rep = check_function(loss, {"inputs": dinputs, **grads}, {"inputs": inputs, **model.named()})
        assert rep.passed, str(rep)


class TestInit:
    def test_bounds_and_zero_biases(self):
        model = LaeModel.init(5, hidden=16, w2=3, seed=0)
        lim = 1.0 / 4.0
        for name, v in model.named().items():
            if "bias" in name:
                assert not v.any()
            else:
                assert np.abs(v).max() <= lim

    def test_deterministic(self):
        a, b = LaeModel.init(3, seed=9), LaeModel.init(3, seed=9)
        for k, v in a.named().items():
            assert np.array_equal(v, b.named()[k])

    def test_inconsistent_shapes(self):
        enc = LstmCellParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        dec = LstmCellParams(np.zeros((12, 3)), np.zeros((12, 3)), np.zeros(12))
        with pytest.raises(DimensionError):
            LaeModel(enc, dec, np.zeros((3, 2)), np.zeros(3))
        with pytest.raises(DimensionError):
            LstmCellParams(np.zeros((8, 3)), np.zeros((8, 3)), np.zeros(8))
