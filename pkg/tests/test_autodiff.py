import numpy as np
import pytest

from descentrl import autodiff as ad
from descentrl.autodiff import Tensor

from _oracles import assert_grads_close, finite_diff_grads


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=float), requires_grad=True)


class TestBasicOps:
    def test_add_mul_chain(self):
        a = leaf([2.0])
        b = leaf([3.0])
        out = (a * b + a).sum()
        out.backward()
        assert a.grad[0] == pytest.approx(4.0)
        assert b.grad[0] == pytest.approx(2.0)

    def test_constant_subgraphs_are_pruned(self):
        c = Tensor(np.ones(4))
        out = c * 2.0 + 1.0
        assert not out.requires_grad and out._parents == ()

    def test_bias_broadcast_unbroadcasts(self):
        w = leaf(np.ones((3, 2)))
        b = leaf(np.zeros(2))
        out = (w + b).sum()
        out.backward()
        assert b.grad.shape == (2,)
        assert np.allclose(b.grad, 3.0)

    def test_matmul_grads(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 2))

        def loss(params):
            t = Tensor(a) @ Tensor(params["w"], requires_grad=True)
            return float((t * t).sum().data)

        wt = leaf(w)
        out = (Tensor(a) @ wt) * (Tensor(a) @ wt)
        out.sum().backward()
        fd = finite_diff_grads(loss, {"w": w.copy()})
        assert_grads_close({"w": wt.grad}, fd)

    def test_reflected_ops_with_ndarray_left(self):
        w = leaf(np.full((2, 2), 2.0))
        x = np.ones((2, 2))
        out = x @ w  # ndarray @ Tensor must defer to Tensor
        assert isinstance(out, Tensor)
        out2 = x + w
        assert isinstance(out2, Tensor)
        out3 = 1.0 - w
        assert isinstance(out3, Tensor)
        assert np.allclose(out3.data, -1.0)

    def test_division_and_pow(self):
        a = leaf([4.0])
        out = (1.0 / a + a / 2.0 + a**2).sum()
        out.backward()
        assert a.grad[0] == pytest.approx(-1 / 16 + 0.5 + 8.0)


class TestNonlinear:
    @pytest.mark.parametrize("fn", ["tanh", "sigmoid", "exp"])
    def test_elementwise_fd(self, fn):
        rng = np.random.default_rng(1)
        x0 = rng.normal(size=(5,))

        def loss(params):
            t = getattr(ad, fn)(Tensor(params["x"], requires_grad=True))
            return float((t * t).sum().data)

        xt = leaf(x0)
        y = getattr(ad, fn)(xt)
        (y * y).sum().backward()
        fd = finite_diff_grads(loss, {"x": x0.copy()})
        assert_grads_close({"x": xt.grad}, fd)

    def test_sigmoid_stable_at_extremes(self):
        x = Tensor(np.array([-800.0, 0.0, 800.0]))
        y = ad.sigmoid(x)
        assert np.all(np.isfinite(y.data))
        assert y.data[0] == pytest.approx(0.0, abs=1e-300)
        assert y.data[2] == pytest.approx(1.0)

    def test_minimum_routes_gradient(self):
        a = leaf([1.0, 5.0])
        b = leaf([2.0, 3.0])
        ad.minimum(a, b).sum().backward()
        assert np.allclose(a.grad, [1.0, 0.0])
        assert np.allclose(b.grad, [0.0, 1.0])

    def test_clip_zero_gradient_outside(self):
        x = leaf([-2.0, 0.5, 2.0])
        ad.clip(x, -1.0, 1.0).sum().backward()
        assert np.allclose(x.grad, [0.0, 1.0, 0.0])


class TestStructural:
    def test_take_rows_backward_scatter(self):
        x = leaf(np.arange(12.0).reshape(4, 3))
        idx = np.array([2, 0])
        y = ad.take_rows(x, idx)
        (y * np.array([[1.0, 2, 3], [4, 5, 6]])).sum().backward()
        expect = np.zeros((4, 3))
        expect[2] = [1, 2, 3]
        expect[0] = [4, 5, 6]
        assert np.allclose(x.grad, expect)

    def test_concat_rows_backward_slices(self):
        a = leaf(np.ones((2, 2)))
        b = leaf(np.ones((3, 2)))
        out = ad.concat_rows([a, b])
        assert out.shape == (5, 2)
        (out * np.arange(10.0).reshape(5, 2)).sum().backward()
        assert np.allclose(a.grad, [[0, 1], [2, 3]])
        assert np.allclose(b.grad, [[4, 5], [6, 7], [8, 9]])

    def test_sum_axis_and_reshape(self):
        x = leaf(np.arange(6.0).reshape(2, 3))
        y = x.sum(axis=1)
        assert y.shape == (2,)
        (y * np.array([1.0, 10.0])).sum().backward()
        assert np.allclose(x.grad, [[1, 1, 1], [10, 10, 10]])
        x2 = leaf(np.arange(6.0))
        x2.reshape((2, 3)).sum().backward()
        assert np.allclose(x2.grad, np.ones(6))

    def test_grad_accumulates_across_paths(self):
        x = leaf([3.0])
        y = x * x + x * 2.0
        y.sum().backward()
        assert x.grad[0] == pytest.approx(8.0)

    def test_backward_requires_scalar(self):
        x = leaf(np.ones(3))
        with pytest.raises(ValueError):
            (x * 2).backward()

    def test_dispatch_on_ndarray_passthrough(self):
        x = np.array([0.3, -0.2])
        assert isinstance(ad.tanh(x), np.ndarray)
        assert np.allclose(ad.tanh(x), np.tanh(x))
        assert isinstance(ad.take_rows(x.reshape(2, 1), np.array([1, 0])), np.ndarray)
        assert isinstance(ad.minimum(x, x + 1), np.ndarray)


class TestRandomProgramsFD:
    def test_mlp_like_program(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 4))
        p0 = {
            "w1": rng.normal(size=(4, 5)) * 0.5,
            "b1": rng.normal(size=5) * 0.1,
            "w2": rng.normal(size=(5, 1)) * 0.5,
        }

        def run(params, as_tensor):
            if as_tensor:
                p = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            else:
                p = params
            h = ad.tanh(x @ p["w1"] + p["b1"])
            out = ad.sigmoid(h @ p["w2"])
            loss = (out * out).sum()
            return (loss, p) if as_tensor else float(ad.value_of(loss))

        loss, pt = run(p0, True)
        loss.backward()
        fd = finite_diff_grads(lambda q: run(q, False), p0)
        assert_grads_close({k: t.grad for k, t in pt.items()}, fd)
