"""Property suites: finite-difference gradients of the posterior and leapfrog behaviour."""

from __future__ import annotations

import numpy as np

from . import hmc
from .config import ExperimentConfig, PRESETS, preset_config
from .ffn import FfnArch, MultiHeadNet
from .gmm import GaussianMixture
from .numerics import Rng
from .posterior import Posterior
from .problem import synthesize_forward, synthesize_inverse

__all__ = ["reduced_posterior", "gradient_check", "leapfrog_checks", "gaussian_target_check",
           "EXPERIMENT_PRESETS"]

EXPERIMENT_PRESETS = [p for p in PRESETS if p != "custom"]


def _head_params(arch: FfnArch):
    n_in = 2 * arch.n_features * len(arch.scales)
    h = arch.hidden
    d = n_in * h[0] + h[0]
    for a, b in zip(h[:-1], h[1:]):
        d += a * b + b
    return d + len(arch.scales) * h[-1] + 1


def reduced_posterior(cfg: ExperimentConfig, max_params=2000, n_snapshots=300, max_width=20, seed=0):
    """Posterior of ``cfg`` with the hidden width shrunk until ``d <= max_params``.

    Sensors, embeddings, operator and mixture settings are kept; the dataset
    is a small synthetic one.
    """
    spec, layout = cfg.problem_spec(), cfg.layout()
    rng = Rng(seed)
    n_heads = len(spec.heads)
    width = max_width
    while True:
        arch = FfnArch(spec.dim, cfg.network.n_features, tuple(cfg.network.scales), (width,))
        if n_heads * _head_params(arch) <= max_params or width == 1:
            break
        width -= 1
    if spec.mode == "forward":
        ds = synthesize_forward(spec, layout, n_snapshots, rng.split("data"))
    else:
        ds = synthesize_inverse(spec, layout, n_snapshots, rng.split("data"), n_fine=cfg.data.n_fine)
    nc = min(cfg.gmm.n_components, 2)
    gmm = GaussianMixture(nc, reg=cfg.gmm.reg, random_state=rng.split("gmm")).fit(ds.rows)
    model = MultiHeadNet.build({h: arch for h in spec.heads}, rng.split("network"))
    return Posterior(gmm, spec, layout, model, cfg.hmc.prior_std)


def _fd_directional(f, theta, v, h):
    """Richardson-extrapolated central difference of ``f`` along ``v``."""
    d1 = (f(theta + h * v) - f(theta - h * v)) / (2 * h)
    d2 = (f(theta + 0.5 * h * v) - f(theta - 0.5 * h * v)) / h
    return (4 * d2 - d1) / 3


def gradient_check(post: Posterior, n_theta=20, n_dirs=3, n_coords=8, theta_std=0.5, h=1e-3, seed=0):
    """Worst relative error between the analytic gradient and finite differences.

    For each of ``n_theta`` random parameter vectors the gradient of the log
    posterior is compared with central differences along ``n_dirs`` random
    unit directions and ``n_coords`` random coordinate axes. The error of one
    comparison is ``|fd - analytic| / max(|analytic|, scale)`` where ``scale``
    is ``1e-3 * ||grad||`` so that near-zero components do not dominate.
    """
    rng = Rng(seed).generator
    d = post.model.n_params
    worst = 0.0
    for _ in range(n_theta):
        theta = theta_std * rng.standard_normal(d)
        val, g = post.value_and_grad(theta)
        scale = 1e-3 * np.linalg.norm(g)
        dirs = [v / np.linalg.norm(v) for v in rng.standard_normal((n_dirs, d))]
        for j in rng.choice(d, size=min(n_coords, d), replace=False):
            e = np.zeros(d)
            e[j] = 1.0
            dirs.append(e)
        for v in dirs:
            fd = _fd_directional(post.log_post, theta, v, h)
            an = float(g @ v)
            worst = max(worst, abs(fd - an) / max(abs(an), scale))
    return worst


def leapfrog_checks(dim=10, M=20, delta=0.2, seed=0):
    """Reversibility error and energy-error scaling on a standard-normal target.

    Returns ``(reversibility_error, ratio)`` where ``ratio`` is the mean
    ``|dH|`` at ``delta`` divided by that at ``delta / 2`` over the same
    random starting states.
    """
    rng = Rng(seed).generator
    grad = lambda z: z  # noqa: E731
    H = lambda z, r: 0.5 * (z @ z + r @ r)  # noqa: E731
    z0, r0 = rng.standard_normal(dim), rng.standard_normal(dim)
    z1, r1 = hmc.leapfrog(grad, z0, r0, M, delta)
    z2, r2 = hmc.leapfrog(grad, z1, -r1, M, delta)
    rev = float(max(np.max(np.abs(z2 - z0)), np.max(np.abs(-r2 - r0))))
    dh = {delta: [], delta / 2: []}
    for _ in range(200):
        z, r = rng.standard_normal(dim), rng.standard_normal(dim)
        for dt in dh:
            zz, rr = hmc.leapfrog(grad, z, r, int(round(M * delta / dt)), dt)
            dh[dt].append(abs(H(zz, rr) - H(z, r)))
    ratio = float(np.mean(dh[delta]) / np.mean(dh[delta / 2]))
    return rev, ratio


def gaussian_target_check(dim=10, M=20, delta=0.2, n_samples=5000, burn_in=200, seed=0):
    """Sample a standard normal with HMC; returns (acceptance, means, variances)."""
    pot = lambda z: (0.5 * float(z @ z), z)  # noqa: E731
    cfg = hmc.HmcConfig(burn_in, n_samples, M, delta, seed)
    chain = hmc.sample(pot, cfg, np.zeros(dim))
    return chain.acceptance_rate, chain.samples.mean(axis=0), chain.samples.var(axis=0)


def run_all(presets=None, n_theta=20, scale="desk", log=print):
    """Run every suite; returns a list of ``(name, passed, detail)``."""
    results = []
    rev, ratio = leapfrog_checks()
    results.append(("leapfrog reversibility", rev < 1e-10, f"error {rev:.2e}"))
    results.append(("energy error scaling", 2.5 <= ratio <= 6.0, f"ratio {ratio:.2f}"))
    for name in presets or EXPERIMENT_PRESETS:
        post = reduced_posterior(preset_config(name, scale))
        err = gradient_check(post, n_theta=n_theta)
        results.append((f"gradient {name}", err < 1e-5, f"d={post.model.n_params} max rel error {err:.2e}"))
    for name, ok, detail in results:
        log(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return results
