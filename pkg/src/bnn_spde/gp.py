"""Gaussian-process kernels, mean functions, sampling and Karhunen-Loeve truncation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .numerics import Rng, cholesky, eigvalsh

__all__ = [
    "Kernel",
    "MeanFn",
    "GpSpec",
    "kernel_eval",
    "gram",
    "sample_gp",
    "kl_dimension",
    "lognormal_moments",
]

KERNEL_KINDS = ("squared_exponential", "matern_unscaled", "matern52")
MEAN_KINDS = ("zero", "constant", "sin_pi", "sin_pi_2d")


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None]
    return pts


@dataclass(frozen=True)
class Kernel:
    """Stationary covariance kernel.

    ``matern_unscaled`` is the Matern-type form with exponent ``-r/l``;
    ``matern52`` is the textbook Matern-5/2 kernel with exponent ``-sqrt(5) r/l``.
    """

    kind: str = "squared_exponential"
    sigma: float = 1.0
    length: float = 0.1

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if not self.sigma > 0:
            raise ValueError("kernel sigma must be positive")
        if not self.length > 0:
            raise ValueError("kernel length must be positive")

    def of_distance(self, r):
        r = np.asarray(r, dtype=float)
        s2, l = self.sigma**2, self.length
        if self.kind == "squared_exponential":
            return s2 * np.exp(-(r**2) / (2.0 * l**2))
        poly = 1.0 + math.sqrt(5.0) * r / l + 5.0 * r**2 / (3.0 * l**2)
        if self.kind == "matern_unscaled":
            return s2 * poly * np.exp(-r / l)
        return s2 * poly * np.exp(-math.sqrt(5.0) * r / l)


@dataclass(frozen=True)
class MeanFn:
    kind: str = "zero"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in MEAN_KINDS:
            raise ValueError(f"unknown mean kind {self.kind!r}; expected one of {MEAN_KINDS}")

    def __call__(self, points) -> np.ndarray:
        pts = _as_points(points)
        if self.kind == "zero":
            return np.zeros(len(pts))
        if self.kind == "constant":
            return np.full(len(pts), float(self.value))
        if self.kind == "sin_pi":
            return self.value * np.sin(np.pi * pts[:, 0])
        return self.value * np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])


@dataclass(frozen=True)
class GpSpec:
    """A Gaussian process, optionally pushed through ``shift + exp(.)``.

    ``log_shift=None`` means the process is the GP itself; a float ``s`` means
    the process is ``s + exp(GP)``, i.e. ``log(process - s)`` is Gaussian.
    """

    mean: MeanFn
    kernel: Kernel
    log_shift: float | None = None

    def transform(self, z):
        if self.log_shift is None:
            return z
        return self.log_shift + np.exp(z)

    def inverse_transform(self, v):
        if self.log_shift is None:
            return v
        return np.log(np.asarray(v) - self.log_shift)


def kernel_eval(k: Kernel, x, x2) -> float:
    """Kernel value between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError("points must have the same dimension")
    return float(k.of_distance(np.linalg.norm(x - x2)))


def gram(k: Kernel, points, points2=None) -> np.ndarray:
    """Kernel matrix between point sets (symmetric when ``points2`` is omitted)."""
    a = _as_points(points)
    b = a if points2 is None else _as_points(points2)
    g = k.of_distance(cdist(a, b))
    if points2 is None:
        g = 0.5 * (g + g.T)
    return g


def sample_gp(spec: GpSpec, points, rng: Rng, n_draws: int, jitter_start: float = 0.0) -> np.ndarray:
    """Draw ``n_draws`` realizations of ``spec`` on ``points``.

    Returns an ``(n_draws, n_points)`` array whose rows are
    ``transform(mean + L @ xi)`` with ``L`` the (jittered) Cholesky factor of
    the Gram matrix.
    """
    pts = _as_points(points)
    g = gram(spec.kernel, pts)
    L, _ = cholesky(g, jitter_start=jitter_start)
    xi = rng.standard_normal((n_draws, len(pts)))
    z = spec.mean(pts)[None, :] + xi @ L.T
    return spec.transform(z)


def kl_dimension(k: Kernel, domain=(-1.0, 1.0), grid_n: int = 2048, energy: float = 0.99) -> int:
    """Number of leading Gram eigenvalues holding ``energy`` of the total.

    The Gram matrix is built on ``grid_n`` uniform points over the interval
    ``domain``; on a uniform grid its spectrum is proportional to that of the
    covariance operator, so the energy ratio is grid-weight independent.
    """
    if grid_n < 256:
        raise ValueError("grid_n must be at least 256")
    if not 0.0 < energy < 1.0:
        raise ValueError("energy must lie in (0, 1)")
    x = np.linspace(domain[0], domain[1], grid_n)
    lam = eigvalsh(gram(k, x))
    return energy_dimension(lam, energy)


def energy_dimension(eigenvalues, energy: float) -> int:
    lam = np.asarray(eigenvalues, dtype=float)
    c = np.cumsum(lam)
    return int(np.searchsorted(c, energy * c[-1] * (1 - 1e-12)) + 1)


def lognormal_moments(spec: GpSpec, points):
    """Pointwise mean, STD and covariance of ``spec`` evaluated in closed form.

    For ``log_shift=None`` these are the Gaussian moments; for ``s + exp(GP)``
    they follow from the lognormal identities
    ``E = s + exp(mu + v/2)`` and
    ``Cov(x, y) = exp(mu_x + mu_y + (v_x + v_y)/2) * (exp(C(x, y)) - 1)``.
    """
    pts = _as_points(points)
    mu = spec.mean(pts)
    c = gram(spec.kernel, pts)
    if spec.log_shift is None:
        return mu, np.sqrt(np.diag(c)), c
    v = np.diag(c)
    a = np.exp(mu + 0.5 * v)
    cov = np.outer(a, a) * np.expm1(c)
    return spec.log_shift + a, np.sqrt(np.diag(cov)), cov
