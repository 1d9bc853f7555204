import numpy as np
import pytest
from scipy.integrate import quad

from bnn_spde import hmc
from bnn_spde.checks import leapfrog_checks, reduced_posterior
from bnn_spde.config import preset_config
from bnn_spde.exceptions import EmptyChain, NonFiniteState, ValidationError
from bnn_spde.numerics import Rng


def gaussian_potential(prec):
    prec = np.atleast_2d(prec)
    return lambda z: (0.5 * float(z @ prec @ z), prec @ z)


def test_leapfrog_hand_example():
    z, r = hmc.leapfrog(lambda z: z, [1.0], [0.0], 1, 0.1)
    assert z[0] == pytest.approx(0.995, abs=1e-15)
    assert r[0] == pytest.approx(-0.09975, abs=1e-15)


def test_leapfrog_zero_steps():
    z, r = hmc.leapfrog(lambda z: z, [0.3, -1.0], [2.0, 0.5], 0, 0.1)
    np.testing.assert_array_equal(z, [0.3, -1.0])
    np.testing.assert_array_equal(r, [2.0, 0.5])


def test_leapfrog_reversibility_harmonic():
    rev, _ = leapfrog_checks()
    assert rev < 1e-10


def test_leapfrog_reversibility_network_posterior():
    post = reduced_posterior(preset_config("poisson32", "desk"), max_params=200)
    rng = Rng(0)
    z0 = 0.3 * rng.standard_normal(post.dim)
    r0 = rng.standard_normal(post.dim)
    grad = lambda z: post.potential(z)[1]  # noqa: E731
    z1, r1 = hmc.leapfrog(grad, z0, r0, 10, 1e-5)
    z2, r2 = hmc.leapfrog(grad, z1, -r1, 10, 1e-5)
    assert np.max(np.abs(z2 - z0)) < 1e-10
    assert np.max(np.abs(-r2 - r0)) < 1e-10


def test_energy_error_scales_quadratically():
    _, ratio = leapfrog_checks()
    assert 2.5 <= ratio <= 6.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_leapfrog_non_finite():
    with pytest.raises(NonFiniteState):
        hmc.leapfrog(lambda z: z**5, [3.0], [0.0], 50, 1.0)


def test_zero_steps_accept_everything():
    chain = hmc.sample(gaussian_potential(np.eye(3)), hmc.HmcConfig(5, 50, 0, 0.1, 1), np.ones(3))
    assert chain.acceptance_rate == 1.0
    np.testing.assert_array_equal(chain.hamiltonian_errors, 0.0)
    np.testing.assert_array_equal(chain.samples, 1.0)


def test_standard_normal_target():
    chain = hmc.sample(gaussian_potential(np.eye(10)), hmc.HmcConfig(200, 5000, 20, 0.2, 0), np.zeros(10))
    assert chain.acceptance_rate > 0.6
    assert np.all(np.abs(chain.samples.mean(axis=0)) < 0.1)
    assert np.all(np.abs(chain.samples.var(axis=0) - 1) < 0.15)


def test_correlated_gaussian_target():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    chain = hmc.sample(gaussian_potential(np.linalg.inv(cov)), hmc.HmcConfig(200, 5000, 20, 0.1, 3), np.zeros(2))
    est = np.cov(chain.samples.T, bias=True)
    assert np.linalg.norm(est - cov) / np.linalg.norm(cov) < 0.1


def test_double_well_total_variation():
    V = lambda z: 2.0 * (z * z - 1.0) ** 2  # noqa: E731
    pot = lambda z: (float(V(z[0])), np.array([8.0 * z[0] * (z[0] ** 2 - 1.0)]))  # noqa: E731
    chain = hmc.sample(pot, hmc.HmcConfig(500, 100_000, 10, 0.15, 0), np.zeros(1))
    edges = np.linspace(-2.5, 2.5, 51)
    Z = quad(lambda x: np.exp(-V(x)), -np.inf, np.inf)[0]
    p = np.array([quad(lambda x: np.exp(-V(x)), a, b)[0] for a, b in zip(edges[:-1], edges[1:])]) / Z
    counts, _ = np.histogram(chain.samples[:, 0], edges)
    tv = 0.5 * (np.abs(counts / len(chain.samples) - p).sum() + (1 - p.sum()))
    assert tv < 0.05


def test_chain_determinism():
    cfg = hmc.HmcConfig(10, 40, 5, 0.3, 7)
    pot = gaussian_potential(np.diag([1.0, 4.0]))
    a = hmc.sample(pot, cfg, [0.5, 0.5])
    b = hmc.sample(pot, cfg, [0.5, 0.5])
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.accept_flags, b.accept_flags)


def test_rejected_proposals_repeat_state():
    chain = hmc.sample(gaussian_potential(np.eye(2)), hmc.HmcConfig(0, 300, 5, 1.9, 2), np.ones(2))
    rejected = np.flatnonzero(~chain.accept_flags[1:]) + 1
    assert rejected.size > 0
    np.testing.assert_array_equal(chain.samples[rejected], chain.samples[rejected - 1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_policy():
    pot = lambda z: (float(z[0] ** 6), np.array([6 * z[0] ** 5]))  # noqa: E731
    with pytest.raises(NonFiniteState) as err:
        hmc.sample(pot, hmc.HmcConfig(0, 20, 40, 2.0, 0), [2.0])
    assert err.value.iteration is not None
    chain = hmc.sample(pot, hmc.HmcConfig(0, 20, 40, 2.0, 0, on_divergence="reject"), [2.0])
    assert chain.acceptance_rate == 0.0


def test_config_invariants():
    for bad in ({"burn_in": -1}, {"n_samples": 0}, {"leapfrog_steps": -1}, {"step_size": 0.0}):
        with pytest.raises(ValidationError):
            hmc.HmcConfig(**bad)


def test_ess_of_iid_samples():
    x = Rng(0).standard_normal(2000)
    assert abs(hmc.effective_sample_size(x) - 2000) < 0.2 * 2000


def test_diagnostics():
    chain = hmc.sample(gaussian_potential(np.eye(2)), hmc.HmcConfig(0, 100, 0, 0.1, 0), np.zeros(2))
    rep = hmc.diagnostics(chain)
    assert rep["acceptance_rate"] == 1.0
    assert rep["low_ess"] and rep["ess_min"] <= 5.0
    empty = hmc.HmcChain(np.zeros((0, 2)), np.zeros(0, bool), np.zeros(0), np.zeros(0), np.zeros(0))
    with pytest.raises(EmptyChain):
        hmc.diagnostics(empty)


def test_chain_checkpoint_round_trip(tmp_path):
    chain = hmc.sample(gaussian_potential(np.eye(2)), hmc.HmcConfig(2, 10, 3, 0.2, 0), np.zeros(2))
    chain.save(tmp_path / "chain.npz")
    back = hmc.HmcChain.load(tmp_path / "chain.npz")
    np.testing.assert_array_equal(back.samples, chain.samples)
    assert back.config == chain.config
