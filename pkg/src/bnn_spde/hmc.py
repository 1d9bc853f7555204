"""Hamiltonian Monte Carlo with a leapfrog integrator and standard-normal momentum."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyChain, NonFiniteState, ValidationError
from .numerics import as_rng

__all__ = ["HmcConfig", "HmcChain", "leapfrog", "sample", "diagnostics", "effective_sample_size"]


@dataclass(frozen=True)
class HmcConfig:
    burn_in: int = 1000
    n_samples: int = 4000
    leapfrog_steps: int = 100
    step_size: float = 1e-3
    seed: int = 0
    # "raise" propagates NonFiniteState; "reject" treats a divergent trajectory as a rejection
    on_divergence: str = "raise"

    def __post_init__(self):
        if self.burn_in < 0 or self.n_samples < 1 or self.leapfrog_steps < 0:
            raise ValidationError("need burn_in >= 0, n_samples >= 1, leapfrog_steps >= 0")
        if not self.step_size > 0:
            raise ValidationError("step_size must be positive")
        if self.on_divergence not in ("raise", "reject"):
            raise ValidationError("on_divergence must be 'raise' or 'reject'")


@dataclass
class HmcChain:
    """Post-burn-in samples plus per-proposal bookkeeping.

    ``accept_flags`` and ``hamiltonian_errors`` (``H(z, r) - H(z', r')``) cover
    the sampling phase only; burn-in acceptance is summarized separately.
    """

    samples: np.ndarray
    accept_flags: np.ndarray
    hamiltonian_errors: np.ndarray
    wall_time_per_sample: np.ndarray
    log_post: np.ndarray
    burn_in_accept_rate: float = float("nan")
    config: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accept_flags)) if len(self.accept_flags) else float("nan")

    def save(self, path):
        np.savez(path, samples=self.samples, accept_flags=self.accept_flags,
                 hamiltonian_errors=self.hamiltonian_errors,
                 wall_time_per_sample=self.wall_time_per_sample, log_post=self.log_post,
                 burn_in_accept_rate=self.burn_in_accept_rate,
                 config=np.array(json.dumps(self.config)))

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(z["samples"], z["accept_flags"], z["hamiltonian_errors"],
                       z["wall_time_per_sample"], z["log_post"], float(z["burn_in_accept_rate"]),
                       json.loads(str(z["config"])))


def _finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


def leapfrog(grad_V, z, r, M, delta, grad_z=None):
    """``M`` leapfrog steps for ``H = V(z) + |r|^2 / 2``.

    ``grad_V(z)`` returns the gradient of the potential. ``grad_z`` may carry
    the gradient already known at the starting point.

    Returns
    -------
    z, r : ndarray
        Final position and momentum.
    """
    z = np.array(z, dtype=float)
    r = np.array(r, dtype=float)
    if z.shape != r.shape:
        raise ValueError("z and r must have the same shape")
    g = grad_V(z) if (grad_z is None and M > 0) else grad_z
    for j in range(M):
        r = r - 0.5 * delta * g
        z = z + delta * r
        g = grad_V(z)
        r = r - 0.5 * delta * g
        if not _finite(z, r, g):
            raise NonFiniteState(f"non-finite state in leapfrog step {j}; step size {delta:g} too large?")
    return z, r


def _trajectory(potential, z, r, M, delta, V0, g0):
    """Leapfrog that also returns the potential and gradient at the end point."""
    V, g = V0, g0
    for j in range(M):
        r = r - 0.5 * delta * g
        z = z + delta * r
        V, g = potential(z)
        r = r - 0.5 * delta * g
        if not (np.isfinite(V) and _finite(z, r, g)):
            raise NonFiniteState(f"non-finite state in leapfrog step {j}; step size {delta:g} too large?")
    return z, r, V, g


def sample(potential, cfg: HmcConfig, theta0, callback=None):
    """Run ``burn_in + n_samples`` HMC transitions.

    Parameters
    ----------
    potential : callable
        ``potential(theta) -> (V, grad V)`` with ``V = -log target``.
    cfg : HmcConfig
    theta0 : array_like
        Initial state.
    callback : callable, optional
        Called as ``callback(iteration, theta, accepted)`` after every transition.

    Returns
    -------
    HmcChain
    """
    z = np.array(theta0, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValidationError("theta0 must be finite")
    rng = as_rng(cfg.seed).split("hmc-momentum")
    urng = as_rng(cfg.seed).split("hmc-accept")
    V, g = potential(z)
    if not (np.isfinite(V) and _finite(g)):
        raise NonFiniteState("non-finite potential at the initial state", iteration=0)
    total = cfg.burn_in + cfg.n_samples
    samples = np.empty((cfg.n_samples, z.size))
    flags = np.zeros(cfg.n_samples, dtype=bool)
    dH = np.zeros(cfg.n_samples)
    times = np.zeros(cfg.n_samples)
    logp = np.zeros(cfg.n_samples)
    burn_acc = 0
    for i in range(total):
        t0 = time.perf_counter()
        r = rng.standard_normal(z.size)
        H0 = V + 0.5 * (r @ r)
        try:
            z1, r1, V1, g1 = _trajectory(potential, z, r, cfg.leapfrog_steps, cfg.step_size, V, g)
            diff = H0 - (V1 + 0.5 * (r1 @ r1))
        except NonFiniteState as exc:
            if cfg.on_divergence == "raise":
                raise NonFiniteState(f"HMC iteration {i}: {exc}", iteration=i) from exc
            diff = -np.inf
        u = urng.uniform()
        accept = bool(np.isfinite(diff) and (diff >= 0 or np.log(u) < diff))
        if accept:
            z, V, g = z1, V1, g1
        if callback is not None:
            callback(i, z, accept)
        elapsed = time.perf_counter() - t0
        if i < cfg.burn_in:
            burn_acc += accept
        else:
            k = i - cfg.burn_in
            samples[k] = z
            flags[k] = accept
            dH[k] = diff
            times[k] = elapsed
            logp[k] = -V
    return HmcChain(samples, flags, dH, times, logp,
                    burn_acc / cfg.burn_in if cfg.burn_in else float("nan"),
                    {"burn_in": cfg.burn_in, "n_samples": cfg.n_samples,
                     "leapfrog_steps": cfg.leapfrog_steps, "step_size": cfg.step_size,
                     "seed": cfg.seed})


def effective_sample_size(x):
    """ESS of a 1D series by Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    var = xc @ xc / n
    if var <= 0:
        return 0.0
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]
    # sums of adjacent pairs, truncated at the first non-positive pair, made monotone
    pairs = rho[0:n - 1:2][: (n - 1) // 2] + rho[1:n:2][: (n - 1) // 2]
    total = 0.0
    prev = np.inf
    for p in pairs:
        if p <= 0:
            break
        p = min(p, prev)
        total += p
        prev = p
    tau = -1.0 + 2.0 * total
    return float(n / max(tau, 1.0 / n))


def diagnostics(chain: HmcChain, ess_floor=5.0, max_ess_coords=200):
    """Acceptance, energy-error, ESS and timing summary of a chain."""
    n = len(chain.samples)
    if n == 0:
        raise EmptyChain("chain has no samples")
    finite = np.isfinite(chain.hamiltonian_errors)
    abs_dh = np.abs(chain.hamiltonian_errors[finite])
    d = chain.samples.shape[1]
    idx = np.arange(d) if d <= max_ess_coords else np.linspace(0, d - 1, max_ess_coords).astype(int)
    ess = np.array([effective_sample_size(chain.samples[:, j]) for j in idx])
    t = chain.wall_time_per_sample
    return {
        "n_samples": n,
        "acceptance_rate": chain.acceptance_rate,
        "burn_in_acceptance_rate": chain.burn_in_accept_rate,
        "mean_abs_dH": float(abs_dh.mean()) if abs_dh.size else float("nan"),
        "max_abs_dH": float(abs_dh.max()) if abs_dh.size else float("nan"),
        "n_divergent": int((~finite).sum()),
        "ess_coords": idx.tolist(),
        "ess": ess.tolist(),
        "ess_min": float(ess.min()),
        "ess_median": float(np.median(ess)),
        "low_ess": bool(ess.min() <= ess_floor),
        "wall_time_per_sample_mean": float(t.mean()),
        "wall_time_per_sample_median": float(np.median(t)),
        "wall_time_total": float(t.sum()),
    }
