"""Full-covariance Gaussian mixture density estimation by expectation-maximization."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateComponent, DimensionMismatch, EmptyData
from .numerics import as_rng, cholesky

__all__ = ["GaussianMixture"]

_LOG_2PI = np.log(2.0 * np.pi)


class GaussianMixture(DensityMixin, BaseEstimator):
    """Gaussian mixture with full covariances fitted by EM.

    Each M-step covariance receives ``reg * I``. With ``reg=None`` the
    regularization is ``1e-6`` times the mean diagonal of the data covariance.

    Parameters
    ----------
    n_components : int
        Number of mixture components.
    reg : float or None
        Covariance regularization added in every M-step.
    max_iter : int
        Maximum number of EM iterations.
    tol : float
        Stop when the per-row objective improves by less than this.
    standardize : bool
        Fit on per-feature standardized data, then map the mixture back to
        raw coordinates. The fitted density is always expressed in raw units.
    random_state : int, Rng or None
        Seed for the k-means++ initialization.

    Attributes
    ----------
    weights_, means_, covariances_ : ndarray
        Mixture parameters in raw coordinates.
    cholesky_ : ndarray of shape (n_components, dim, dim)
        Lower Cholesky factors of ``covariances_``.
    log_dets_ : ndarray of shape (n_components,)
    objective_history_ : list of float
        Per-iteration mean of the regularized log-likelihood that EM ascends
        (see ``Notes``); non-decreasing up to round-off.
    log_likelihood_history_ : list of float
        Per-iteration mean log-likelihood of the data under the mixture.

    Notes
    -----
    Adding ``reg * I`` in the M-step is exact EM for the mixture of scaled
    component densities ``w_k N(x; m_k, S_k) exp(-reg/2 tr S_k^-1)``. The
    E-step uses those scaled densities so the recorded objective is provably
    monotone; the scale factors are ~1 for any sensible ``reg``.
    """

    def __init__(self, n_components=1, reg=None, max_iter=200, tol=1e-8,
                 standardize=False, random_state=None):
        self.n_components = n_components
        self.reg = reg
        self.max_iter = max_iter
        self.tol = tol
        self.standardize = standardize
        self.random_state = random_state

    # ------------------------------------------------------------------ fit
    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyData("GaussianMixture.fit needs a non-empty 2D array")
        X = check_array(X)
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        n, dim = X.shape
        if n < self.n_components:
            raise EmptyData(f"{n} rows cannot support {self.n_components} components")

        if self.standardize:
            shift = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0] = 1.0
            Z = (X - shift) / scale
        else:
            shift, scale, Z = np.zeros(dim), np.ones(dim), X

        reg = self.reg
        if reg is None:
            reg = 1e-6 * float(np.mean(np.var(Z, axis=0)))
            if reg == 0.0:
                reg = 1e-6
        if reg <= 0 and n <= dim:
            raise ValueError("reg must be positive when rows do not exceed the dimension")
        self.reg_ = float(reg)

        rng = as_rng(self.random_state)
        self.objective_history_ = []
        self.log_likelihood_history_ = []

        if self.n_components == 1:
            self._m_step(Z, None)
            obj, ll, _ = self._e_step(Z)
            self.objective_history_.append(obj)
            self.log_likelihood_history_.append(ll)
            self.n_iter_ = 1
            self.converged_ = True
        else:
            resp = self._init_responsibilities(Z, rng)
            self._m_step(Z, resp)
            prev = -np.inf
            self.converged_ = False
            for it in range(1, self.max_iter + 1):
                obj, ll, resp = self._e_step(Z)
                self.objective_history_.append(obj)
                self.log_likelihood_history_.append(ll)
                self.n_iter_ = it
                if obj - prev < self.tol:
                    self.converged_ = True
                    break
                prev = obj
                self._m_step(Z, resp)

        self._to_raw(shift, scale)
        self.dim_ = dim
        return self

    def _init_responsibilities(self, Z, rng):
        # k-means++ seeding, then hard assignment to the nearest center
        n = Z.shape[0]
        gen = rng.generator
        centers = [Z[gen.integers(n)]]
        d2 = np.sum((Z - centers[0]) ** 2, axis=1)
        for _ in range(1, self.n_components):
            total = d2.sum()
            if total <= 0:
                idx = gen.integers(n)
            else:
                idx = gen.choice(n, p=d2 / total)
            centers.append(Z[idx])
            d2 = np.minimum(d2, np.sum((Z - Z[idx]) ** 2, axis=1))
        C = np.asarray(centers)
        dist = np.sum(Z**2, axis=1)[:, None] - 2 * Z @ C.T + np.sum(C**2, axis=1)[None, :]
        labels = np.argmin(dist, axis=1)
        resp = np.zeros((n, self.n_components))
        resp[np.arange(n), labels] = 1.0
        # keep every component alive
        empty = resp.sum(axis=0) == 0
        if np.any(empty):
            resp[:, empty] = 1.0 / n
            resp /= resp.sum(axis=1, keepdims=True)
        return resp

    def _m_step(self, Z, resp):
        """M-step; ``resp=None`` is the single-component closed form (plain sample moments)."""
        n, dim = Z.shape
        if resp is None:
            nk, weights = np.array([float(n)]), np.ones(1)
            means = Z.mean(axis=0)[None, :]
        else:
            nk = resp.sum(axis=0)
            weights = nk / n
            if np.any(weights < 1e-12):
                raise DegenerateComponent(
                    f"component weight underflow (min weight {weights.min():.3g})")
            means = (resp.T @ Z) / nk[:, None]
        covs = np.empty((self.n_components, dim, dim))
        chol = np.empty_like(covs)
        log_dets = np.empty(self.n_components)
        eye = np.eye(dim)
        for k in range(self.n_components):
            D = Z - means[k]
            S = (D if resp is None else resp[:, k, None] * D).T @ D / nk[k] + self.reg_ * eye
            S = 0.5 * (S + S.T)
            covs[k] = S
            chol[k], _ = cholesky(S)
            log_dets[k] = 2.0 * np.sum(np.log(np.diag(chol[k])))
        self._set_params(weights, means, covs, chol, log_dets)

    def _set_params(self, weights, means, covs, chol, log_dets):
        self.weights_ = weights
        self.means_ = means
        self.covariances_ = covs
        self.cholesky_ = chol
        self.log_dets_ = log_dets

    def _component_log_dens(self, X):
        """``log w_k + log N(x; m_k, S_k)`` for every row and component."""
        n, dim = X.shape
        out = np.empty((n, len(self.weights_)))
        for k in range(len(self.weights_)):
            sol = solve_triangular(self.cholesky_[k], (X - self.means_[k]).T, lower=True)
            maha = np.sum(sol**2, axis=0)
            out[:, k] = np.log(self.weights_[k]) - 0.5 * (dim * _LOG_2PI + self.log_dets_[k] + maha)
        return out

    def _e_step(self, Z):
        lw = self._component_log_dens(Z)
        ll = float(np.mean(logsumexp(lw, axis=1)))
        penalty = np.array([
            0.5 * self.reg_ * np.sum(cho_solve((L, True), np.eye(L.shape[0])).diagonal())
            for L in self.cholesky_
        ]) if self.reg_ > 0 else np.zeros(len(self.weights_))
        lw_pen = lw - penalty[None, :]
        norm = logsumexp(lw_pen, axis=1)
        resp = np.exp(lw_pen - norm[:, None])
        return float(np.mean(norm)), ll, resp

    def _to_raw(self, shift, scale):
        if np.all(shift == 0) and np.all(scale == 1):
            return
        means = shift + self.means_ * scale
        covs = self.covariances_ * scale[None, :, None] * scale[None, None, :]
        chol = self.cholesky_ * scale[None, :, None]
        log_dets = self.log_dets_ + 2.0 * np.sum(np.log(scale))
        self._set_params(self.weights_, means, covs, chol, log_dets)

    # ----------------------------------------------------------- densities
    def _check_x(self, x):
        check_is_fitted(self, "weights_")
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.means_.shape[1]:
            raise DimensionMismatch(
                f"vector of length {x.shape[-1]} for a mixture of dimension {self.means_.shape[1]}")
        return x

    def score_samples(self, X):
        """Log-density of each row of ``X``."""
        X = self._check_x(np.atleast_2d(X))
        return logsumexp(self._component_log_dens(X), axis=1)

    def log_pdf(self, x) -> float:
        x = self._check_x(x)
        if x.ndim != 1:
            raise DimensionMismatch("log_pdf expects a single vector")
        return float(self.score_samples(x[None, :])[0])

    def log_pdf_and_grad(self, x):
        """Log-density and its gradient at a single vector ``x``."""
        x = self._check_x(x)
        if x.ndim != 1:
            raise DimensionMismatch("log_pdf_and_grad expects a single vector")
        dim = x.shape[0]
        nc = len(self.weights_)
        lw = np.empty(nc)
        scores = np.empty((nc, dim))
        for k in range(nc):
            L = self.cholesky_[k]
            d = x - self.means_[k]
            sol = solve_triangular(L, d, lower=True)
            lw[k] = np.log(self.weights_[k]) - 0.5 * (dim * _LOG_2PI + self.log_dets_[k] + sol @ sol)
            scores[k] = -solve_triangular(L, sol, lower=True, trans="T")
        lp = logsumexp(lw)
        r = np.exp(lw - lp)
        return float(lp), r @ scores

    def grad_log_pdf(self, x):
        return self.log_pdf_and_grad(x)[1]

    def responsibilities(self, X):
        X = self._check_x(np.atleast_2d(X))
        lw = self._component_log_dens(X)
        return np.exp(lw - logsumexp(lw, axis=1)[:, None])

    def sample(self, n_samples, random_state=None):
        check_is_fitted(self, "weights_")
        gen = as_rng(random_state).generator
        counts = gen.multinomial(n_samples, self.weights_)
        out = [self.means_[k] + gen.standard_normal((c, self.means_.shape[1])) @ self.cholesky_[k].T
               for k, c in enumerate(counts)]
        return np.concatenate(out, axis=0)

    @property
    def dim(self):
        check_is_fitted(self, "weights_")
        return self.means_.shape[1]

    @classmethod
    def from_params(cls, weights, means, covariances):
        """Build a fitted mixture directly from its parameters."""
        weights = np.asarray(weights, dtype=float)
        means = np.atleast_2d(np.asarray(means, dtype=float))
        covs = np.asarray(covariances, dtype=float).reshape(len(weights), means.shape[1], means.shape[1])
        g = cls(n_components=len(weights))
        chol = np.empty_like(covs)
        log_dets = np.empty(len(weights))
        for k in range(len(weights)):
            chol[k], _ = cholesky(covs[k])
            log_dets[k] = 2.0 * np.sum(np.log(np.diag(chol[k])))
        g._set_params(weights, means, covs, chol, log_dets)
        g.reg_ = 0.0
        g.dim_ = means.shape[1]
        return g

    # ------------------------------------------------------- serialization
    def save(self, path):
        """Write weights, means and covariance Cholesky factors to ``.npz``."""
        check_is_fitted(self, "weights_")
        np.savez(path, weights=self.weights_, means=self.means_, cholesky=self.cholesky_,
                 reg=self.reg_, n_components=self.n_components)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            chol = z["cholesky"]
            covs = chol @ np.transpose(chol, (0, 2, 1))
            g = cls(n_components=int(z["n_components"]), reg=float(z["reg"]))
            log_dets = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
            g._set_params(z["weights"], z["means"], covs, chol, log_dets)
            g.reg_ = float(z["reg"])
            g.dim_ = g.means_.shape[1]
        return g
