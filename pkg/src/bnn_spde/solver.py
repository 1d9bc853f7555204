"""scikit-learn style estimator wrapping the full Bayesian surrogate pipeline."""

from __future__ import annotations

import time

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import hmc
from .estimator import FieldSamples, field_samples, mean_std
from .exceptions import ValidationError
from .ffn import FfnArch, MultiHeadNet
from .gmm import GaussianMixture
from .numerics import as_rng
from .posterior import Posterior
from .problem import SnapshotDataset

__all__ = ["BayesianPdeSolver"]


class BayesianPdeSolver(BaseEstimator):
    """Bayesian network surrogate of a stochastic boundary-value problem.

    ``fit`` takes snapshot rows (or a :class:`SnapshotDataset`), estimates
    their joint density with a Gaussian mixture, and samples the network
    parameters with HMC from the posterior whose likelihood is that density
    evaluated at the surrogate's residual vector. ``predict`` returns
    pointwise statistics of a field over the parameter samples.

    Parameters
    ----------
    problem : ProblemSpec
    layout : SensorLayout
    n_features, scales, hidden : network architecture shared by every head
    n_components, reg, standardize : mixture settings
    prior_std : float
        Standard deviation of the isotropic Gaussian prior on ``theta``.
    burn_in, n_samples, leapfrog_steps, step_size : HMC schedule
    warm_start : {"map", "none"}
        ``"none"`` starts the chain at a prior draw; ``"map"`` first runs
        L-BFGS on the negative log-posterior from that draw with every output
        layer zeroed.
    map_maxiter : int
    on_divergence : {"raise", "reject"}
    random_state : int, Rng or None
        Root seed; every stage derives its own labeled stream from it.
    """

    def __init__(self, problem=None, layout=None, n_features=10, scales=(1.0, 5.0), hidden=(200,),
                 n_components=1, reg=None, standardize=False, prior_std=1.0, burn_in=1000,
                 n_samples=4000, leapfrog_steps=100, step_size=1e-3, warm_start="map",
                 map_maxiter=20000, on_divergence="raise", random_state=None):
        self.problem = problem
        self.layout = layout
        self.n_features = n_features
        self.scales = scales
        self.hidden = hidden
        self.n_components = n_components
        self.reg = reg
        self.standardize = standardize
        self.prior_std = prior_std
        self.burn_in = burn_in
        self.n_samples = n_samples
        self.leapfrog_steps = leapfrog_steps
        self.step_size = step_size
        self.warm_start = warm_start
        self.map_maxiter = map_maxiter
        self.on_divergence = on_divergence
        self.random_state = random_state

    def _validate(self):
        if self.problem is None or self.layout is None:
            raise ValidationError("problem and layout are required")
        if self.warm_start not in ("map", "none"):
            raise ValidationError("warm_start must be 'map' or 'none'")
        self.layout.validate(self.problem)

    def build_model(self):
        arch = FfnArch(self.problem.dim, int(self.n_features), tuple(self.scales), tuple(self.hidden))
        rng = as_rng(self.random_state)
        return MultiHeadNet.build({h: arch for h in self.problem.heads}, rng.split("network"))

    def initial_theta(self, model, posterior):
        rng = as_rng(self.random_state)
        theta = model.init_theta(rng.split("theta0"), std=self.prior_std)
        if self.warm_start == "none":
            return theta, {}
        for name, net in model.heads.items():
            theta[model.slices[name]][net.output_slice()] = 0.0
        t0 = time.perf_counter()
        res = minimize(posterior.potential, theta, jac=True, method="L-BFGS-B",
                       options={"maxiter": int(self.map_maxiter), "maxfun": 2 * int(self.map_maxiter)})
        info = {"map_potential": float(res.fun), "map_iterations": int(res.nit),
                "map_seconds": time.perf_counter() - t0, "map_message": str(res.message)}
        return res.x, info

    def fit(self, X, y=None):
        self._validate()
        if isinstance(X, SnapshotDataset):
            if X.mode != self.problem.mode:
                raise ValidationError("dataset mode does not match the problem")
            X = X.rows
        X = check_array(X)
        want = self.layout.row_length(self.problem.mode)
        if X.shape[1] != want:
            raise ValidationError(f"snapshot rows have length {X.shape[1]}, layout needs {want}")
        rng = as_rng(self.random_state)
        timings = {}

        t0 = time.perf_counter()
        self.mixture_ = GaussianMixture(self.n_components, reg=self.reg, standardize=self.standardize,
                                        random_state=rng.split("gmm")).fit(X)
        timings["gmm_seconds"] = time.perf_counter() - t0

        self.model_ = self.build_model()
        self.posterior_ = Posterior(self.mixture_, self.problem, self.layout, self.model_, self.prior_std)
        self.theta0_, self.warm_start_info_ = self.initial_theta(self.model_, self.posterior_)

        cfg = hmc.HmcConfig(self.burn_in, self.n_samples, self.leapfrog_steps, self.step_size,
                            rng.split("hmc").child_seed(), self.on_divergence)
        t0 = time.perf_counter()
        self.chain_ = hmc.sample(self.posterior_.potential, cfg, self.theta0_)
        timings["hmc_seconds"] = time.perf_counter() - t0
        self.timings_ = timings
        return self

    def sample_fields(self, grid, field="u", n=None):
        """:class:`FieldSamples` of ``field`` on ``grid`` for the (first ``n``) chain samples."""
        check_is_fitted(self, "chain_")
        s = self.chain_.samples if n is None else self.chain_.samples[:n]
        return field_samples(s, self.model_, self.problem, grid, field)

    def predict(self, grid, field="u", return_std=False):
        fs = self.sample_fields(grid, field)
        mean, std = mean_std(fs)
        return (mean, std) if return_std else mean
