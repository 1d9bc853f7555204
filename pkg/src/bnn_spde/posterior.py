"""Unnormalized log-posterior of the network parameters and its gradient."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatch
from .residual import ResidualMap

__all__ = ["Posterior"]

_LOG_2PI = np.log(2.0 * np.pi)


class Posterior:
    """``log p(theta | D) = log p_mix(r(theta)) + log N(theta; 0, prior_std^2 I)``.

    The data enter only through the fitted mixture ``p_mix`` evaluated at the
    single residual vector ``r(theta)``. ``mixture=None`` gives the prior alone.
    Additive constants of both terms are kept.
    """

    def __init__(self, mixture, spec, layout, model, prior_std=1.0):
        if prior_std <= 0:
            raise ValueError("prior_std must be positive")
        self.mixture = mixture
        self.spec, self.layout, self.model = spec, layout, model
        self.prior_std = float(prior_std)
        self.dim = model.n_params
        self.residual = None
        if mixture is not None:
            self.residual = ResidualMap(spec, layout, model)
            if mixture.dim != self.residual.length:
                raise DimensionMismatch(
                    f"mixture dimension {mixture.dim} != residual length {self.residual.length}")

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({self.dim},)")
        return theta

    def _prior(self, theta):
        s2 = self.prior_std**2
        lp = -0.5 * (theta @ theta) / s2 - 0.5 * self.dim * (_LOG_2PI + np.log(s2))
        return lp, -theta / s2

    def log_post(self, theta) -> float:
        theta = self._check(theta)
        lp, _ = self._prior(theta)
        if self.mixture is None:
            return float(lp)
        with np.errstate(over="ignore", invalid="ignore"):
            r = self.residual(theta)
        if not np.all(np.isfinite(r)):
            return -np.inf
        return float(self.mixture.log_pdf(r) + lp)

    def value_and_grad(self, theta):
        """``(log_post, grad_log_post)`` sharing one forward/backward pass."""
        theta = self._check(theta)
        lp, gp = self._prior(theta)
        if self.mixture is None:
            return float(lp), gp
        with np.errstate(over="ignore", invalid="ignore"):
            r, cache = self.residual.evaluate(theta)
        if not np.all(np.isfinite(r)):
            return -np.inf, np.full(self.dim, np.nan)
        ll, score = self.mixture.log_pdf_and_grad(r)
        return float(ll + lp), self.residual.pullback(cache, score) + gp

    def grad_log_post(self, theta):
        return self.value_and_grad(theta)[1]

    def potential(self, theta):
        """``V = -log_post`` and its gradient, the form HMC consumes."""
        v, g = self.value_and_grad(theta)
        return -v, -g
