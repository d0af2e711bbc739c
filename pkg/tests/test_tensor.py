import numpy as np
import pytest

from models import tensor as T
from models.tensor import Graph, Tensor, grad_check, no_grad
from utils.error_handler import NumericalError, ShapeError


def _conv_oracle(x, w, b, stride, padding):
    (pt0, pt1), (pf0, pf1) = padding
    xp = np.pad(x, ((0, 0), (pt0, pt1), (pf0, pf1)))
    out_c, _, kh, kw = w.shape
    ho = (xp.shape[1] - kh) // stride[0] + 1
    wo = (xp.shape[2] - kw) // stride[1] + 1
    out = np.zeros((out_c, ho, wo))
    for o in range(out_c):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride[0]:i * stride[0] + kh, j * stride[1]:j * stride[1] + kw]
                out[o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def test_elementwise_add_and_softmax():
    out = Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])
    np.testing.assert_allclose(out.data, [4.0, 6.0])

    probs = T.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(probs.data, [1 / 3, 1 / 3, 1 / 3])


def test_mismatched_shapes_raise():
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.zeros(3)) + Tensor(np.zeros(4))


def test_scalar_operand_broadcasts():
    out = Tensor(np.ones((2, 3))) * 2.0
    np.testing.assert_allclose(out.data, 2.0 * np.ones((2, 3)))


@pytest.mark.parametrize("stride,padding", [
    ((1, 1), ((0, 0), (0, 0))),
    ((1, 2), ((1, 1), (2, 2))),
    ((2, 1), ((2, 0), (0, 1))),
])
def test_conv2d_matches_loop_oracle(stride, padding):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 7))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, _conv_oracle(x, w, b, stride, padding), atol=1e-12)


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    err = grad_check(lambda v: (v * v).sum(), Tensor([1.0, 2.0, 3.0]))
    assert err < 1e-7


def test_gradient_accumulates_over_reuse():
    x = Tensor([0.5, -1.5], requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)


_RNG = np.random.default_rng(7)
_W = Tensor(_RNG.normal(size=(4, 3)))
_K = Tensor(_RNG.normal(size=(2, 3, 3, 3)))
_KB = Tensor(_RNG.normal(size=2))
_C = Tensor(np.arange(12.0).reshape(3, 4))
_CT = Tensor(np.arange(12.0).reshape(4, 3))
_OFFSET = Tensor(_RNG.normal(size=(3, 4)))

PRIMITIVES = [
    ("add_sub", lambda v: ((v + _OFFSET) * (v - _C)).sum(), (3, 4)),
    ("matmul", lambda v: (v @ _W).tanh().sum(), (2, 4)),
    ("sigmoid", lambda v: v.sigmoid().sum(), (3, 4)),
    ("tanh", lambda v: (v.tanh() * _C).sum(), (3, 4)),
    ("relu", lambda v: (v.relu() * v * _C).sum(), (3, 4)),
    ("elu", lambda v: (v.elu() * v).sum(), (3, 4)),
    ("log_softmax", lambda v: (T.log_softmax(v, axis=-1) * _C).sum(), (3, 4)),
    ("softmax", lambda v: (T.softmax(v, axis=0) * _C).sum(), (3, 4)),
    ("concat_slice", lambda v: (T.concat([v, v * 2.0], axis=1)[:, 1:5] ** 2).sum(), (3, 4)),
    ("reshape", lambda v: (v.reshape(4, 3) * _CT).tanh().sum(), (3, 4)),
    ("transpose", lambda v: (v.transpose() * _CT).tanh().sum(), (3, 4)),
    ("pad", lambda v: T.pad(v, ((1, 0), (0, 2))).tanh().sum() + (T.pad(v, ((0, 0), (1, 1))) ** 2).sum(), (3, 4)),
    ("sum", lambda v: (v.sum(axis=1) ** 2).sum(), (3, 4)),
    ("mean", lambda v: (v.mean(axis=0) ** 2).mean(), (3, 4)),
    ("conv2d", lambda v: T.conv2d(v, _K, _KB, stride=(1, 2), padding=((1, 1), (1, 1))).tanh().sum(), (3, 5, 6)),
    ("pixel_shuffle", lambda v: (T.pixel_shuffle_freq(v, 2) * Tensor(np.arange(24.0).reshape(2, 2, 6))).sum(), (4, 2, 3)),
    ("overlap_add", lambda v: (T.overlap_add(T.frame_signal(v, 4, 2), 2, 10) ** 2).sum(), (10,)),
    ("expand", lambda v: (T.expand(v, (3, 4)) * _C).sum(), (1, 4)),
    ("exp_log", lambda v: (v.exp() + 1.0).log().sum(), (3, 4)),
]


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("name,fn,shape", PRIMITIVES, ids=[p[0] for p in PRIMITIVES])
def test_primitive_gradients(name, fn, shape, seed):
    x = Tensor(np.random.default_rng(seed).normal(size=shape))
    assert grad_check(fn, x, eps=1e-5) < 1e-4, name


@pytest.mark.parametrize("name,fn,shape", PRIMITIVES, ids=[p[0] for p in PRIMITIVES])
def test_forward_is_bit_identical(name, fn, shape):
    x = np.random.default_rng(11).normal(size=shape)
    first = fn(Tensor(x.copy())).data
    second = fn(Tensor(x.copy())).data
    assert first.tobytes() == second.tobytes(), name


@pytest.mark.parametrize("seed", range(10))
def test_lstm_cell_gradient(seed):
    rng = np.random.default_rng(seed)
    h = Tensor(rng.normal(size=(2, 3)))
    c = Tensor(rng.normal(size=(2, 3)))
    wh = Tensor(rng.normal(size=(3, 12)))

    def loss(gx):
        h_new, c_new = T.lstm_cell(gx, h, c, wh)
        return (h_new * h_new).sum() + c_new.sum()

    assert grad_check(loss, Tensor(rng.normal(size=(2, 12)))) < 1e-4


def test_pixel_shuffle_interleaves_channel_pairs():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    x = Tensor(np.array([[[a, b]], [[c, d]]]))
    out = T.pixel_shuffle_freq(x, 2)
    np.testing.assert_allclose(out.data, [[[a, c, b, d]]])
    np.testing.assert_allclose(T.pixel_unshuffle_freq(out, 2).data, x.data)


def test_graph_order_and_reverse_backward():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * 3.0
    z = y.tanh()
    out = z.sum()
    graph = Graph.trace(out)
    assert [node.name for node in graph.nodes] == ["mul", "tanh", "sum"]
    assert [n.sequence for n in graph.nodes] == sorted(n.sequence for n in graph.nodes)


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y.node is None
    assert T.is_grad_enabled()


def test_item_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_grad_check_rejects_non_finite():
    with pytest.raises(NumericalError):
        grad_check(lambda v: v.log().sum(), Tensor([-1.0, 1.0]))
