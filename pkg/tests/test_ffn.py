import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnn_spde.exceptions import DimensionMismatch
from bnn_spde.ffn import FfnArch, FourierFeatureNet, MultiHeadNet
from bnn_spde.numerics import Rng


def tiny_sine_net(B, w_cos, w_sin, c=1e-6):
    """Net whose output is (1/c) sin(c (w_cos cos Bx + w_sin sin Bx)) ~ w_cos cos Bx + w_sin sin Bx."""
    net = FourierFeatureNet(FfnArch(1, 1, (1.0,), (1,)), B=[[[B]]])
    theta = net.pack([(np.array([[c * w_cos, c * w_sin]]), np.zeros(1)), (np.array([[1.0 / c]]), np.zeros(1))])
    return net, theta


def test_embed_examples():
    net = FourierFeatureNet(FfnArch(1, 4, (1.0, 5.0), (3,)), Rng(0))
    np.testing.assert_array_equal(net.embed(1, [0.0]), [1, 1, 1, 1, 0, 0, 0, 0])
    pinet = FourierFeatureNet(FfnArch(1, 1, (1.0,), (2,)), B=[[[np.pi]]])
    np.testing.assert_allclose(pinet.embed(0, [0.5]), [0.0, 1.0], atol=1e-16)
    assert net.embed(0, [0.37]).shape == (8,)
    with pytest.raises(IndexError):
        net.embed(2, [0.0])


def test_constant_head():
    net = FourierFeatureNet(FfnArch(2, 3, (1.0, 2.0), (5, 4)), Rng(1))
    theta = Rng(2).standard_normal(net.n_params)
    theta[net.output_slice()] = 0.0
    theta[-1] = 2.5
    X = Rng(3).uniform(-1, 1, (7, 2))
    np.testing.assert_array_equal(net.forward(theta, X), 2.5)
    b = net.eval_bundle(theta, X)
    np.testing.assert_array_equal(b.grad_x, 0.0)
    np.testing.assert_array_equal(b.hess_diag, 0.0)


def test_hand_evaluated_forward():
    net = FourierFeatureNet(FfnArch(1, 1, (1.0,), (1,)), B=[[[1.3]]])
    W0, b0, WT, bT = np.array([[0.4, -0.7]]), np.array([0.2]), np.array([[1.5]]), np.array([-0.3])
    theta = net.pack([(W0, b0), (WT, bT)])
    x = 0.37
    expected = 1.5 * np.sin(0.4 * np.cos(1.3 * x) - 0.7 * np.sin(1.3 * x) + 0.2) - 0.3
    assert net.forward(theta, [x])[0] == pytest.approx(expected, abs=1e-12)


def test_sin_cos_net_second_derivative():
    net, theta = tiny_sine_net(1.0, 0.8, -0.6)
    x = np.linspace(-1, 1, 9)
    b = net.eval_bundle(theta, x)
    np.testing.assert_allclose(b.hess_diag[:, 0], -b.value, atol=1e-10)
    np.testing.assert_allclose(b.value, 0.8 * np.cos(x) - 0.6 * np.sin(x), atol=1e-10)


def test_multiscale_single_embedding_matches_plain_network():
    net = FourierFeatureNet(FfnArch(1, 4, (2.0,), (6, 5)), Rng(4))
    theta = Rng(5).standard_normal(net.n_params)
    X = np.linspace(-1, 1, 11)[:, None]
    (W0, b0), (W1, b1), (WT, bT) = net.unpack(theta)
    z = X @ net.B[0].T
    h = np.sin(np.sin(np.hstack([np.cos(z), np.sin(z)]) @ W0.T + b0) @ W1.T + b1)
    np.testing.assert_allclose(net.forward(theta, X), (h @ WT.T + bT)[:, 0], rtol=1e-13, atol=1e-13)


def test_two_heads_are_independent():
    m = MultiHeadNet.build({"u": FfnArch(1, 3, (1.0, 5.0), (4,)), "k": FfnArch(1, 3, (1.0, 5.0), (4,))}, Rng(0))
    theta = m.init_theta(Rng(1))
    X = np.linspace(-1, 1, 5)
    u0 = m.forward(theta, X, "u")
    theta[m.slices["k"]] += 1.0
    np.testing.assert_array_equal(m.forward(theta, X, "u"), u0)


def test_bundle_value_equals_forward_bitwise():
    net = FourierFeatureNet(FfnArch(2, 5, (1.0, 5.0), (7,)), Rng(6))
    theta = Rng(7).standard_normal(net.n_params)
    X = Rng(8).uniform(-1, 1, (13, 2))
    np.testing.assert_array_equal(net.eval_bundle(theta, X).value, net.forward(theta, X))


def test_embedding_frozen():
    net = FourierFeatureNet(FfnArch(1, 4, (1.0, 5.0), (3,)), Rng(0))
    digest = hashlib.sha256(b"".join(b.tobytes() for b in net.B)).hexdigest()
    theta = Rng(1).standard_normal(net.n_params)
    for _ in range(3):
        net.eval_bundle(theta, np.linspace(-1, 1, 4))
    assert hashlib.sha256(b"".join(b.tobytes() for b in net.B)).hexdigest() == digest
    with pytest.raises(ValueError):
        net.B[0][0, 0] = 1.0


def test_embedding_scale():
    net = FourierFeatureNet(FfnArch(1, 4000, (1.0, 5.0), (1,)), Rng(0))
    assert net.B[0].std() == pytest.approx(1.0, rel=0.05)
    assert net.B[1].std() == pytest.approx(5.0, rel=0.05)


def test_dimension_errors():
    net = FourierFeatureNet(FfnArch(1, 2, (1.0,), (3,)), Rng(0))
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros(net.n_params + 1), [0.0])
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros(net.n_params), np.zeros((2, 2)))


def test_pack_unpack_bijection():
    net = FourierFeatureNet(FfnArch(2, 3, (1.0, 2.0, 3.0), (4, 5)), Rng(0))
    theta = np.arange(net.n_params, dtype=float)
    np.testing.assert_array_equal(net.pack(net.unpack(theta)), theta)
    assert net.n_params == (6 * 4 + 4) + (4 * 5 + 5) + (3 * 5 + 1)


def _fd_bundle(net, theta, X, h1=1e-4, h2=1e-3):
    n = X.shape[1]
    g = np.empty((len(X), n))
    hs = np.empty((len(X), n))
    f0 = net.forward(theta, X)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        g[:, j] = (net.forward(theta, X + h1 * e) - net.forward(theta, X - h1 * e)) / (2 * h1)
        hs[:, j] = (net.forward(theta, X + h2 * e) - 2 * f0 + net.forward(theta, X - h2 * e)) / h2**2
    return g, hs


@settings(max_examples=200, deadline=None)
@given(dim=st.integers(1, 2), nf=st.integers(1, 4), n_emb=st.integers(1, 3), widths=st.lists(st.integers(1, 5), min_size=1,
       max_size=2), seed=st.integers(0, 10**6))
def test_input_derivatives_match_finite_differences(dim, nf, n_emb, widths, seed):
    rng = Rng(seed)
    net = FourierFeatureNet(FfnArch(dim, nf, tuple(1.0 + i for i in range(n_emb)), tuple(widths)), rng.split("net"))
    theta = 0.5 * rng.split("theta").standard_normal(net.n_params)
    X = rng.split("x").uniform(-1, 1, (3, dim))
    b = net.eval_bundle(theta, X)
    g, hs = _fd_bundle(net, theta, X)
    scale_g = max(1.0, np.abs(b.grad_x).max())
    scale_h = max(1.0, np.abs(b.hess_diag).max())
    assert np.abs(g - b.grad_x).max() / scale_g < 1e-5
    assert np.abs(hs - b.hess_diag).max() / scale_h < 1e-4


def test_backprop_output_layer_identity():
    net = FourierFeatureNet(FfnArch(1, 3, (1.0, 4.0), (5,)), Rng(0))
    theta = Rng(1).standard_normal(net.n_params)
    x0 = np.array([[0.3]])
    _, tape = net.eval_bundle(theta, x0, tape=True)
    grad = net.backprop(theta, tape, adj_value=[1.0])
    (W0, b0), (WT, bT) = net.unpack(theta)
    hidden = [np.sin(net.embed(i, x0[0]) @ W0.T + b0) for i in range(2)]
    gl = net.unpack(grad)
    np.testing.assert_allclose(gl[-1][1], [1.0])
    np.testing.assert_allclose(gl[-1][0][0], np.concatenate(hidden), rtol=1e-13)


def test_backprop_zero_adjoint():
    net = FourierFeatureNet(FfnArch(1, 3, (1.0,), (4,)), Rng(0))
    theta = Rng(1).standard_normal(net.n_params)
    _, tape = net.eval_bundle(theta, [[0.1]], tape=True)
    np.testing.assert_array_equal(net.backprop(theta, tape, adj_value=[0.0]), 0.0)


@pytest.mark.parametrize("dim, widths", [(1, (4,)), (2, (3, 4)), (1, (5, 3, 2))])
def test_backprop_matches_finite_differences(dim, widths):
    rng = Rng(dim + len(widths))
    net = FourierFeatureNet(FfnArch(dim, 3, (1.0, 3.0), widths), rng.split("net"))
    theta = 0.7 * rng.split("theta").standard_normal(net.n_params)
    X = rng.split("x").uniform(-1, 1, (3, dim))
    av = rng.split("av").standard_normal(3)
    ag = rng.split("ag").standard_normal((3, dim))
    ah = rng.split("ah").standard_normal((3, dim))

    def loss(t):
        b = net.eval_bundle(t, X)
        return av @ b.value + np.sum(ag * b.grad_x) + np.sum(ah * b.hess_diag)

    _, tape = net.eval_bundle(theta, X, tape=True)
    grad = net.backprop(theta, tape, av, ag, ah)
    h = 1e-5
    fd = np.array([(loss(theta + h * e) - loss(theta - h * e)) / (2 * h) for e in np.eye(net.n_params)])
    assert np.linalg.norm(fd - grad) / np.linalg.norm(grad) < 1e-5
    # hess-only adjoint
    _, tape = net.eval_bundle(theta, X, tape=True)
    g2 = net.backprop(theta, tape, adj_hess=np.ones((3, dim)))
    lh = lambda t: net.eval_bundle(t, X).hess_diag.sum()  # noqa: E731
    fd2 = np.array([(lh(theta + h * e) - lh(theta - h * e)) / (2 * h) for e in np.eye(net.n_params)])
    assert np.linalg.norm(fd2 - g2) / np.linalg.norm(g2) < 1e-5


def test_serialization_round_trip():
    m = MultiHeadNet.build({"u": FfnArch(1, 3, (1.0, 5.0), (4,)), "k": FfnArch(1, 2, (1.0,), (3,))}, Rng(0))
    back = MultiHeadNet.from_dict(m.to_dict())
    theta = m.init_theta(Rng(1))
    X = np.linspace(-1, 1, 4)
    for h in ("u", "k"):
        np.testing.assert_array_equal(back.forward(theta, X, h), m.forward(theta, X, h))
