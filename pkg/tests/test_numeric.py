import importlib

import numpy as np
import pytest

from mwad.errors import ContractError, GraphError, StateError
from mwad.numeric import Graph, _kernels_py, check_function, grad_check
from mwad.numeric.gradcheck import relative_error

try:
    _kernels_c = importlib.import_module("mwad.numeric._kernels")
except ImportError:  # pragma: no cover - depends on the build
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")


def _scalar_loss(g, node):
    """Reduce any node to a scalar through a fixed random projection, so the
    check exercises every output entry with a distinct weight."""
    w = np.random.default_rng(99).normal(size=node.shape)
    return g.mean_abs(g.add(g.mul(node, g.const(w)), g.const(np.full(node.shape, 3.0))))


class TestPrimitiveGradients:
    @pytest.mark.parametrize("op", ["sigmoid", "tanh", "identity", "softmax", "transpose"])
    def test_unary(self, op, rng):
        g = Graph()
        x = g.param("x", rng.normal(size=(3, 4)))
        _scalar_loss(g, getattr(g, op)(x))
        assert grad_check(g).passed

    def test_leaky_relu_away_from_kink(self, rng):
        v = rng.uniform(0.1, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        g = Graph()
        _scalar_loss(g, g.leaky_relu(g.param("x", v), 0.2))
        assert grad_check(g).passed

    @pytest.mark.parametrize("op", ["add", "sub", "mul"])
    def test_binary(self, op, rng):
        g = Graph()
        a = g.param("a", rng.normal(size=(3, 4)))
        b = g.param("b", rng.normal(size=(3, 4)))
        _scalar_loss(g, getattr(g, op)(a, b))
        assert grad_check(g).passed

    def test_add_row_broadcast(self, rng):
        g = Graph()
        a = g.param("a", rng.normal(size=(5, 3)))
        b = g.param("b", rng.normal(size=(1, 3)))
        _scalar_loss(g, g.add(a, b))
        assert grad_check(g).passed

    def test_matmul_concat_slices(self, rng):
        g = Graph()
        a = g.param("a", rng.normal(size=(4, 3)))
        b = g.param("b", rng.normal(size=(3, 5)))
        m = g.matmul(a, b)
        parts = g.concat([g.slice_rows(m, 0, 2), g.slice_rows(m, 3, 4)], axis=0)
        out = g.concat([g.slice_cols(parts, 1, 3), g.scale(g.slice_cols(parts, 0, 1), -2.5)], axis=1)
        _scalar_loss(g, out)
        assert grad_check(g).passed

    def test_input_gradients_returned(self, rng):
        g = Graph()
        x = g.input("x", (2, 3))
        w = g.param("w", rng.normal(size=(3, 1)))
        g.mean_abs(g.matmul(x, w))
        v = rng.uniform(0.5, 1.0, size=(2, 3))
        g.forward({"x": v})
        grads = g.backward()
        wv = g.params["w"]
        expected = np.sign(v @ wv) * wv.T / 2.0
        np.testing.assert_allclose(grads["x"], expected, rtol=1e-15)
        assert "w" in grads and grads["w"].shape == (3, 1)


class TestGraphContracts:
    def test_shape_mismatch_at_declaration(self):
        g = Graph()
        with pytest.raises(GraphError):
            g.matmul(g.const(np.ones((2, 3))), g.const(np.ones((2, 3))))

    def test_value_before_forward(self):
        g = Graph()
        n = g.const(np.ones((1, 1)))
        with pytest.raises(StateError):
            g.value(n)
        with pytest.raises(StateError):
            g.backward(n)

    def test_non_scalar_backward_needs_cotangent(self, rng):
        g = Graph()
        x = g.param("x", rng.normal(size=(2, 2)))
        y = g.tanh(x)
        g.forward()
        with pytest.raises(ContractError):
            g.backward(y)
        grads = g.backward(y, np.ones((2, 2)))
        np.testing.assert_allclose(grads["x"], 1.0 - np.tanh(g.params["x"]) ** 2)

    def test_missing_input(self):
        g = Graph()
        g.input("x", (1, 2))
        with pytest.raises(GraphError):
            g.forward()

    def test_wrong_input_shape(self):
        g = Graph()
        g.input("x", (1, 2))
        with pytest.raises(GraphError):
            g.forward({"x": np.ones((2, 1))})

    def test_param_is_copied(self):
        v = np.ones((1, 1))
        g = Graph()
        g.param("p", v)
        v[0, 0] = 5.0
        assert g.params["p"][0, 0] == 1.0


class TestSoftmax:
    def test_large_logits_stable(self):
        g = Graph()
        s = g.softmax(g.const(np.array([[1000.0, 1000.0, 999.0], [-1e4, 0.0, 1e4]])))
        out = g.forward(outputs=s)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-15)

    def test_equal_logits_exactly_uniform(self):
        g = Graph()
        s = g.softmax(g.const(np.full((1, 5), 3.7)))
        assert (g.forward(outputs=s) == 0.2).all()


class TestGradCheck:
    def test_detects_wrong_gradient(self):
        x = np.array([1.0, 2.0])
        rep = check_function(lambda: (x ** 2).sum(), {"x": 2 * x + 0.01}, {"x": x})
        assert not rep.passed
        assert rep.offending[0] == "x"

    def test_correct_gradient(self):
        x = np.array([1.0, -2.0, 0.5])
        rep = check_function(lambda: (x ** 3).sum(), {"x": 3 * x ** 2}, {"x": x})
        assert rep.passed and rep.n_checked == 3
        np.testing.assert_array_equal(x, [1.0, -2.0, 0.5])

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1e-9, 0.0) == pytest.approx(0.1)

    def test_shape_mismatch(self):
        x = np.ones(3)
        with pytest.raises(ContractError):
            check_function(lambda: x.sum(), {"x": np.ones(2)}, {"x": x})


class TestDeterminism:
    def test_repeated_forward_backward_identical(self, rng):
        g = Graph()
        a = g.param("a", rng.normal(size=(4, 4)))
        _scalar_loss(g, g.softmax(g.matmul(a, g.tanh(a))))
        g.forward()
        first = {k: v.copy() for k, v in g.backward().items()}
        g.forward()
        second = g.backward()
        for k in first:
            assert np.array_equal(first[k], second[k])


def _gat_case(seed, T=12, n=5, w1=4):
    r = np.random.default_rng(seed)
    return r.uniform(0, 1, (T, n)), r.normal(size=(n, n)), r.normal(size=2 * n), w1


def _lstm_case(seed, B=3, L=4, nin=5, h=3):
    r = np.random.default_rng(seed)
    return (r.normal(size=(B, L, nin)), r.normal(size=(nin, 4 * h)) * 0.5,
            r.normal(size=(h, 4 * h)) * 0.5, r.normal(size=4 * h) * 0.1, r.normal(size=(B, h)))


@needs_ext
class TestBackendEquivalence:
    @pytest.mark.parametrize("use_sigmoid", [True, False])
    def test_gat(self, use_sigmoid):
        X, W, a, w1 = _gat_case(3)
        py = _kernels_py.gat_forward(X, W, a, w1, 0.2, use_sigmoid)
        cy = _kernels_c.gat_forward(X, W, a, w1, 0.2, use_sigmoid)
        for p, c in zip(py, cy):
            np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-13)
        dY = np.random.default_rng(4).normal(size=py[0].shape)
        gp = _kernels_py.gat_backward(dY, X, W, a, *py[1:3], py[3], py[0], w1, 0.2, use_sigmoid)
        gc = _kernels_c.gat_backward(dY, X, W, a, *py[1:3], py[3], py[0], w1, 0.2, use_sigmoid)
        for p, c in zip(gp, gc):
            np.testing.assert_allclose(c, p, rtol=1e-11, atol=1e-12)

    def test_lstm(self):
        xs, wx, wh, b, dh = _lstm_case(5)
        py = _kernels_py.lstm_forward(xs, wx, wh, b)
        cy = _kernels_c.lstm_forward(xs, wx, wh, b)
        for p, c in zip(py, cy):
            np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-14)
        gp = _kernels_py.lstm_backward(dh, xs, wx, wh, *py)
        gc = _kernels_c.lstm_backward(dh, xs, wx, wh, *py)
        for p, c in zip(gp, gc):
            np.testing.assert_allclose(c, p, rtol=1e-11, atol=1e-13)

    def test_read_only_inputs(self):
        X, W, a, w1 = _gat_case(6)
        for arr in (X, W, a):
            arr.setflags(write=False)
        Y = _kernels_c.gat_forward(X, W, a, w1, 0.2, True)[0]
        np.testing.assert_allclose(Y, _kernels_py.gat_forward(X, W, a, w1, 0.2, True)[0], rtol=1e-12)


class TestFallbackSelection:
    def test_env_forces_python(self, monkeypatch):
        import mwad.numeric as numeric

        monkeypatch.setenv("MWAD_KERNELS", "python")
        assert numeric._select() is _kernels_py
