import numpy as np
import pytest

from conftest import check_op
from gna import tensor as T
from gna.tensor import Tensor

rng = np.random.default_rng(1234)


def rand(*shape):
    return rng.normal(size=shape)


def positive(*shape):
    return rng.uniform(0.2, 2.0, size=shape)


def away_from_zero(*shape):
    x = rand(*shape)
    return np.where(np.abs(x) < 0.05, 0.3, x)


MASK = rng.random((2, 4, 4)) > 0.3
MASK[:, 0, :] = True

PRIMITIVES = {
    "add": (lambda a, b: T.add(a, b), [rand(3, 4), rand(4)]),
    "sub": (lambda a, b: T.sub(a, b), [rand(2, 3, 4), rand(3, 1)]),
    "mul": (lambda a, b: T.mul(a, b), [rand(3, 4), rand(3, 4)]),
    "scale": (lambda a: T.scale(a, -2.5), [rand(5)]),
    "relu": (lambda a: T.relu(a), [away_from_zero(4, 5)]),
    "sigmoid": (lambda a: T.sigmoid(a), [rand(4, 5) * 3]),
    "exp": (lambda a: T.exp(a), [rand(3, 3)]),
    "log": (lambda a: T.log(a), [positive(3, 3)]),
    "square": (lambda a: T.square(a), [rand(6)]),
    "matmul": (lambda a, b: T.matmul(a, b), [rand(3, 4), rand(4, 2)]),
    "matmul_batched": (lambda a, b: T.matmul(a, b), [rand(2, 3, 4), rand(4, 5)]),
    "matmul_bb": (lambda a, b: T.matmul(a, b), [rand(2, 3, 4), rand(2, 4, 3)]),
    "transpose": (lambda a: T.transpose(a), [rand(2, 3, 4)]),
    "reshape": (lambda a: T.reshape(a, (6, 2)), [rand(3, 4)]),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [rand(2, 3), rand(2, 5)]),
    "einsum2": (lambda a, b: T.einsum("c,cij->ij", a, b), [rand(3), rand(3, 4, 4)]),
    "einsum3": (lambda a, b, c: T.einsum("bi,kij,bj->bk", a, b, c), [rand(2, 3), rand(4, 3, 3), rand(2, 3)]),
    "einsum_reduce": (lambda a: T.einsum("ij->i", a), [rand(3, 4)]),
    "sum_all": (lambda a: T.sum(a), [rand(3, 4)]),
    "sum_axis": (lambda a: T.sum(a, axis=(1, 2)), [rand(2, 3, 4)]),
    "sum_keep": (lambda a: T.sum(a, axis=1, keepdims=True), [rand(2, 3, 4)]),
    "mean_rows": (lambda a: T.mean_rows(a), [rand(5, 3)]),
    "pad_rows": (lambda a, f: T.pad_rows(a, f, 5), [rand(2, 3), rand(3)]),
    "row_normalize": (lambda a: T.row_normalize(a), [positive(3, 4)]),
    "col_normalize": (lambda a: T.col_normalize(a), [positive(2, 3, 4)]),
    "logsumexp": (lambda a: T.logsumexp(a, axis=-1), [rand(3, 4) * 4]),
    "logsumexp_masked": (lambda a: T.logsumexp(a, axis=-2, mask=MASK), [rand(2, 4, 4) * 4]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_gradient_check(name):
    build, arrays = PRIMITIVES[name]
    assert check_op(build, *arrays) <= 1e-4


def test_relu_values():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])


def test_row_normalize_ones():
    out = T.row_normalize(Tensor(np.ones((3, 3))))
    np.testing.assert_allclose(out.data, 1 / 3)
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0)


def test_sigmoid_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_normalize_sums(seed):
    x = np.random.default_rng(seed).uniform(1e-3, 5.0, size=(6, 7))
    assert np.max(np.abs(T.row_normalize(Tensor(x)).data.sum(axis=-1) - 1)) <= 1e-12
    assert np.max(np.abs(T.col_normalize(Tensor(x)).data.sum(axis=-2) - 1)) <= 1e-12


def test_normalize_floor():
    out = T.row_normalize(Tensor(np.zeros((2, 3))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_shape_errors_name_op():
    with pytest.raises(T.ShapeError, match="matmul.*\\(2, 3\\).*\\(2, 3\\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(T.ShapeError, match="add"):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_non_finite_trips():
    with pytest.raises(T.NonFiniteError, match="exp"):
        T.exp(Tensor([1000.0]))
    with pytest.raises(T.NonFiniteError):
        T.log(Tensor([0.0]))


def test_linear_loss_gradient():
    w = Tensor(rand(3, 4), requires_grad=True)
    x = rand(4, 1)
    T.sum(T.matmul(w, x)).backward()
    np.testing.assert_allclose(w.grad, np.broadcast_to(x.T, (3, 4)))


def test_unused_parameter_gets_zero_grad():
    w = Tensor(rand(3), requires_grad=True)
    unused = Tensor(rand(3), requires_grad=True)
    opt = T.Adam({"w": w, "u": unused})
    opt.zero_grad()
    T.sum(T.square(w)).backward()
    np.testing.assert_array_equal(unused.grad, 0.0)


def test_backward_needs_scalar():
    w = Tensor(rand(3), requires_grad=True)
    with pytest.raises(T.ShapeError):
        T.square(w).backward()


def test_backward_linear_in_loss():
    w = Tensor(rand(3, 3), requires_grad=True)
    x = rand(3, 3)

    def losses():
        l1 = T.sum(T.sigmoid(T.matmul(w, x)))
        l2 = T.sum(T.square(T.relu(w)))
        return l1, l2

    l1, l2 = losses()
    w.zero_grad(); l1.backward(); g1 = w.grad.copy()
    w.zero_grad(); l2.backward(); g2 = w.grad.copy()
    l1, l2 = losses()
    w.zero_grad()
    T.add(T.scale(l1, 2.0), T.scale(l2, -3.0)).backward()
    np.testing.assert_allclose(w.grad, 2.0 * g1 - 3.0 * g2, rtol=1e-12, atol=1e-12)


def test_shared_subexpression_accumulates():
    w = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = T.mul(w, w)
    T.sum(T.add(y, y)).backward()
    np.testing.assert_allclose(w.grad, 4 * w.data)


def test_no_grad_skips_graph():
    w = Tensor(rand(2), requires_grad=True)
    with T.no_grad():
        y = T.square(w)
    assert not y.requires_grad and y._parents == ()


class TestAdam:
    def test_zero_grads_no_decay(self):
        w = Tensor(rand(4), requires_grad=True)
        before = w.data.copy()
        opt = T.Adam({"w": w}, weight_decay=0.0)
        for _ in range(5):
            opt.zero_grad()
            opt.step()
        np.testing.assert_array_equal(w.data, before)

    def test_descent_direction(self):
        w = Tensor(np.zeros(2), requires_grad=True)
        opt = T.Adam({"w": w}, lr=0.01, weight_decay=0.0)
        for _ in range(50):
            w.grad = np.array([0.7, -0.2])
            opt.step()
        assert w.data[0] < 0 < w.data[1]

    def test_first_step_size(self):
        # bias-corrected Adam moves every coordinate by lr on the first step
        w = Tensor(np.array([1.0, 1.0]), requires_grad=True)
        opt = T.Adam({"w": w}, lr=0.1, weight_decay=0.0)
        w.grad = np.array([3.0, -1e-3])
        opt.step()
        np.testing.assert_allclose(w.data, [0.9, 1.1], rtol=1e-6)

    def test_decoupled_weight_decay(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        opt = T.Adam({"w": w}, lr=0.1, weight_decay=0.5)
        w.grad = np.zeros(1)
        opt.step()
        np.testing.assert_allclose(w.data, [2.0 - 0.1 * 0.5 * 2.0])

    def test_missing_grad(self):
        w = Tensor(rand(2), requires_grad=True)
        with pytest.raises(RuntimeError):
            T.Adam({"w": w}).step()

    def test_deterministic(self):
        def run():
            r = np.random.default_rng(3)
            w = Tensor(r.normal(size=(3, 3)), requires_grad=True)
            opt = T.Adam({"w": w})
            for _ in range(20):
                opt.zero_grad()
                T.sum(T.sigmoid(T.matmul(w, r.normal(size=(3, 2))))).backward()
                opt.step()
            return w.data

        assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    params = {"a": Tensor(rand(3, 4) * 1e-7), "b": Tensor(np.array([np.pi, -1 / 3])), "c": Tensor(rand(2, 2, 2))}
    path = tmp_path / "ckpt.json"
    T.save_params(path, params, {"note": "x"})
    loaded, meta = T.load_params(path)
    assert meta == {"note": "x"}
    for k, v in params.items():
        assert loaded[k].shape == v.shape
        assert np.array_equal(loaded[k].data, v.data)


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        T.load_params(path)
