import numpy as np
import pytest

from bnn_spde.estimator import FieldSamples, cov_kernel, field_samples, kernel_eigenvalues, mean_std, rel_error
from bnn_spde.exceptions import ZeroReference
from bnn_spde.ffn import FfnArch, FourierFeatureNet, MultiHeadNet
from bnn_spde.gp import GpSpec, Kernel, MeanFn
from bnn_spde.numerics import Rng
from bnn_spde.problem import ProblemSpec


def test_single_sample_is_forward_pass():
    m = MultiHeadNet.build({"u": FfnArch(1, 3, (1.0,), (4,))}, Rng(0))
    spec = ProblemSpec("identity", [[-1, 1]], GpSpec(MeanFn("zero"), Kernel()))
    theta = m.init_theta(Rng(1))
    grid = np.linspace(-1, 1, 7)[:, None]
    fs = field_samples(theta, m, spec, grid)
    assert fs.values.shape == (1, 7)
    np.testing.assert_array_equal(fs.values[0], m.forward(theta, grid))
    assert field_samples(np.stack([theta] * 3), m, spec, grid[:1]).values.shape == (3, 1)


def test_source_field_of_closed_form_network():
    c = 1e-6
    net = FourierFeatureNet(FfnArch(1, 1, (1.0,), (1,)), B=[[[np.pi]]])
    theta = net.pack([(np.array([[0.0, c]]), np.zeros(1)), (np.array([[1.0 / c]]), np.zeros(1))])
    spec = ProblemSpec("neg_laplace_1d", [[-1, 1]], GpSpec(MeanFn("zero"), Kernel()))
    grid = np.linspace(-1, 1, 9)[:, None]
    fs = field_samples(theta, MultiHeadNet({"u": net}), spec, grid, "f")
    np.testing.assert_allclose(fs.values[0], np.pi**2 * np.sin(np.pi * grid[:, 0]), atol=1e-10)


def test_mean_std_examples():
    m, s = mean_std(np.full((5, 3), 2.5))
    np.testing.assert_array_equal(m, 2.5)
    np.testing.assert_array_equal(s, 0.0)
    m, s = mean_std(np.array([[0.0], [2.0]]))
    assert m[0] == 1.0 and s[0] == 1.0
    _, s = mean_std(Rng(0).standard_normal((10_000, 4)))
    assert np.all(np.abs(s - 1) < 0.02)


def test_cov_kernel_examples():
    grid = np.linspace(-1, 1, 20)
    phi = np.sin(np.pi * grid) + 0.5
    a = Rng(1).standard_normal(4000)
    ev = kernel_eigenvalues(cov_kernel(a[:, None] * phi[None, :]))
    assert np.all(ev[1:] < 0.05 * ev[0])
    np.testing.assert_array_equal(cov_kernel(np.ones((10, 4))), 0.0)
    n = 5000
    c = cov_kernel(Rng(2).standard_normal((n, 6)))
    off = c[~np.eye(6, dtype=bool)]
    assert np.abs(off).max() < 5 / np.sqrt(n)


def test_rel_error_examples():
    ref = np.array([3.0, 4.0])
    assert rel_error(ref, ref) == 0.0
    assert rel_error(2 * ref, ref) == 1.0
    assert rel_error([3.0, 5.0], ref) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ZeroReference):
        rel_error([1.0], [0.0])


def test_cov_diagonal_matches_std():
    v = Rng(3).standard_normal((200, 8)) * np.arange(1, 9)
    _, s = mean_std(v)
    np.testing.assert_allclose(np.diag(cov_kernel(v)), s**2, rtol=1e-12, atol=1e-12)


def test_permutation_invariance():
    v = Rng(4).standard_normal((300, 5))
    w = v[Rng(5).generator.permutation(300)]
    for a, b in zip(mean_std(v), mean_std(w)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(cov_kernel(v), cov_kernel(w), rtol=1e-12, atol=1e-12)


def test_field_samples_wrapper():
    fs = FieldSamples(np.zeros(1), [1.0, 2.0])
    assert fs.values.shape == (1, 2)
