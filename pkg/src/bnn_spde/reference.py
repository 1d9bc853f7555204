"""Finite-difference solvers and Monte Carlo reference statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .exceptions import NewtonDiverged, NonPositiveCoefficient, SingularSystem, SolverFailed
from .gp import GpSpec, gram, lognormal_moments
from .numerics import as_rng, cholesky

__all__ = [
    "solve_poisson_1d",
    "solve_div_form_1d",
    "solve_allen_cahn_2d",
    "ReferenceStats",
    "MomentAccumulator",
    "mc_reference",
    "analytic_reference",
]


def _check_grid_1d(x, n_values):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 3:
        raise ValueError("grid needs at least 3 points")
    if n_values != x.size:
        raise ValueError("values and grid sizes differ")
    h = np.diff(x)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    return x, float(h[0])


def solve_div_form_1d(k, f, bc, x):
    """Solve ``-(k u')' = f`` with Dirichlet values ``bc = (u(x_0), u(x_end))``.

    Conservative three-point scheme with arithmetic midpoint coefficients
    ``k_{i+1/2} = (k_i + k_{i+1}) / 2``. ``f`` may be a single vector or a
    batch of shape ``(B, n)`` sharing one ``k``.
    """
    k = np.asarray(k, dtype=float)
    f = np.asarray(f, dtype=float)
    x, h = _check_grid_1d(x, f.shape[-1])
    if k.shape != x.shape:
        raise ValueError("k must be given on the grid")
    if np.min(k) <= 0:
        raise NonPositiveCoefficient("diffusion coefficient must be positive")
    km = 0.5 * (k[:-1] + k[1:])
    n = x.size
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = -km[1:-1]
    ab[1, :] = km[:-1] + km[1:]
    ab[2, :-1] = -km[1:-1]
    rhs = (h * h) * np.atleast_2d(f)[:, 1:-1].T.copy()
    rhs[0] += km[0] * bc[0]
    rhs[-1] += km[-1] * bc[1]
    try:
        inner = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    u = np.empty((rhs.shape[1], n))
    u[:, 0], u[:, -1] = bc[0], bc[1]
    u[:, 1:-1] = inner.T
    return u[0] if f.ndim == 1 else u


def solve_poisson_1d(f, bc, x):
    """Solve ``-u'' = f`` with Dirichlet values; second-order central differences."""
    x = np.asarray(x, dtype=float).ravel()
    return solve_div_form_1d(np.ones_like(x), f, bc, x)


def _laplacian_2d(n, h):
    """Five-point ``-Laplacian`` on the ``(n-2)^2`` interior nodes of an ``n x n`` grid."""
    m = n - 2
    t = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    eye = sp.identity(m)
    return ((sp.kron(eye, t) + sp.kron(t, eye)) / (h * h)).tocsc()


def solve_allen_cahn_2d(f, x, tol=1e-10, max_iter=50, u0=None, return_history=False):
    """Solve ``-Lap u + 3u(u^2-1) = f`` on a square tensor grid with ``u = 0`` on the boundary.

    Parameters
    ----------
    f : array of shape (n, n)
        Source on the grid, indexed ``[i2, i1]`` (row = second coordinate).
    x : array of shape (n,)
        Uniform 1D coordinates shared by both axes.

    Damped Newton iteration from ``u = 0`` (or ``u0``); the step is halved
    until the residual max-norm decreases.
    """
    f = np.asarray(f, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 3 or f.shape != (n, n):
        raise ValueError("f must be an n x n array on an n-point axis, n >= 3")
    _, h = _check_grid_1d(x, n)
    A = _laplacian_2d(n, h)
    rhs = f[1:-1, 1:-1].ravel()
    u = np.zeros_like(rhs) if u0 is None else np.asarray(u0, dtype=float)[1:-1, 1:-1].ravel().copy()

    def residual(v):
        return A @ v + 3.0 * v * (v * v - 1.0) - rhs

    r = residual(u)
    norm = np.max(np.abs(r))
    history = [norm]
    for _ in range(max_iter):
        if norm < tol:
            break
        J = A + sp.diags(9.0 * u * u - 3.0)
        try:
            step = splu(J.tocsc()).solve(-r)
        except RuntimeError as exc:
            raise SolverFailed(f"singular Newton system: {exc}") from exc
        lam = 1.0
        while True:
            cand = u + lam * step
            rc = residual(cand)
            nc = np.max(np.abs(rc))
            if nc < norm or lam < 1e-8:
                break
            lam *= 0.5
        u, r, norm = cand, rc, nc
        history.append(norm)
    if not norm < tol:
        raise NewtonDiverged(f"Newton did not converge in {max_iter} iterations", residual=norm)
    out = np.zeros((n, n))
    out[1:-1, 1:-1] = u.reshape(n - 2, n - 2)
    return (out, history) if return_history else out


# ---------------------------------------------------------------- statistics
class MomentAccumulator:
    """Streaming mean / covariance with associative pairwise batch merging."""

    def __init__(self, n_features, track_cov=False):
        self.n = 0
        self.mean = np.zeros(n_features)
        self.m2 = np.zeros(n_features)
        self.c2 = np.zeros((n_features, n_features)) if track_cov else None

    def update(self, batch):
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        nb = batch.shape[0]
        if nb == 0:
            return self
        mb = batch.mean(axis=0)
        d = batch - mb
        other = MomentAccumulator(len(mb), self.c2 is not None)
        other.n, other.mean, other.m2 = nb, mb, np.sum(d * d, axis=0)
        if self.c2 is not None:
            other.c2 = d.T @ d
        return self.merge(other)

    def merge(self, other):
        if other.n == 0:
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        w = self.n * other.n / n
        self.m2 = self.m2 + other.m2 + delta**2 * w
        if self.c2 is not None:
            self.c2 = self.c2 + other.c2 + np.outer(delta, delta) * w
        self.mean = self.mean + delta * other.n / n
        self.n = n
        return self

    def std(self, ddof=0):
        return np.sqrt(np.maximum(self.m2 / (self.n - ddof), 0.0))

    def cov(self, ddof=0):
        return None if self.c2 is None else self.c2 / (self.n - ddof)


@dataclass
class ReferenceStats:
    """Reference mean/STD (and optional covariance) of a field on a grid.

    File layout (written by :meth:`save`): ``<stem>.csv`` with columns
    ``x`` (or ``x1,x2``), ``mean``, ``std``; ``<stem>_cov.csv`` when a
    covariance is present; ``<stem>.json`` metadata (``n_mc``, ``seed``, ...).
    """

    grid: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    cov: np.ndarray | None = None
    n_mc: int = 0
    seed: object = None
    cov_index: np.ndarray | None = None
    field: str = "u"

    def save(self, stem):
        stem = str(stem)
        g = np.atleast_2d(self.grid.T).T
        cols = ["x"] if g.shape[1] == 1 else [f"x{i + 1}" for i in range(g.shape[1])]
        np.savetxt(f"{stem}.csv", np.column_stack([g, self.mean, self.std]), delimiter=",",
                   header=",".join(cols + ["mean", "std"]), comments="")
        if self.cov is not None:
            np.savetxt(f"{stem}_cov.csv", self.cov, delimiter=",")
        meta = {"n_mc": self.n_mc, "seed": self.seed, "field": self.field,
                "cov_index": None if self.cov_index is None else np.asarray(self.cov_index).tolist()}
        with open(f"{stem}.json", "w") as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, stem):
        stem = str(stem)
        data = np.loadtxt(f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
        with open(f"{stem}.json") as fh:
            meta = json.load(fh)
        try:
            cov = np.loadtxt(f"{stem}_cov.csv", delimiter=",", ndmin=2)
        except OSError:
            cov = None
        grid = data[:, :-2]
        return cls(grid[:, 0] if grid.shape[1] == 1 else grid, data[:, -2], data[:, -1], cov,
                   meta["n_mc"], meta["seed"], None if meta["cov_index"] is None else np.asarray(meta["cov_index"]),
                   meta.get("field", "u"))


class _GridSampler:
    """Draws a GpSpec on a solver grid reusing one factorization.

    Squared-exponential kernels on 2D tensor grids are separable, so the
    Cholesky factor of the full Gram is the Kronecker product of the 1D
    factors; draws use that structure instead of factoring the full matrix.
    """

    def __init__(self, spec: GpSpec, axes):
        self.spec = spec
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        if len(self.axes) == 1:
            self.points = self.axes[0][:, None]
            self.factors = [cholesky(gram(spec.kernel, self.points))[0]]
        else:
            X1, X2 = np.meshgrid(*self.axes)
            self.points = np.column_stack([X1.ravel(), X2.ravel()])
            if spec.kernel.kind != "squared_exponential":
                self.factors = [cholesky(gram(spec.kernel, self.points))[0]]
            else:
                # sigma^2 split evenly between the two axis factors
                k1 = type(spec.kernel)(spec.kernel.kind, np.sqrt(spec.kernel.sigma), spec.kernel.length)
                self.factors = [cholesky(gram(k1, a[:, None]))[0] for a in self.axes]
        self.mean = spec.mean(self.points)

    def draw(self, rng, n):
        if len(self.factors) == 1:
            z = rng.standard_normal((n, self.factors[0].shape[0])) @ self.factors[0].T
        else:
            L1, L2 = self.factors
            xi = rng.standard_normal((n, L2.shape[0], L1.shape[0]))
            z = np.einsum("ab,nbc,dc->nad", L2, xi, L1).reshape(n, -1)
        return self.spec.transform(self.mean[None, :] + z)


def _solve_batch(spec, axes, f, k):
    bc = (spec.boundary_value, spec.boundary_value)
    if spec.operator == "identity":
        return f
    if spec.operator == "neg_laplace_1d":
        return solve_poisson_1d(f, bc, axes[0])
    if spec.operator == "div_form_1d":
        return np.stack([solve_div_form_1d(k[j], f[j], bc, axes[0]) for j in range(len(f))])
    if spec.operator == "allen_cahn_2d":
        n = len(axes[0])
        out = np.empty_like(f)
        for j in range(len(f)):
            try:
                out[j] = solve_allen_cahn_2d(f[j].reshape(n, n), axes[0]).ravel()
            except SolverFailed as exc:
                raise SolverFailed(f"sample {j}: {exc}") from exc
        return out
    raise ValueError(f"no solver for operator {spec.operator}")


def _boundary_mask(spec, points):
    mask = np.zeros(len(points), dtype=bool)
    for j, (lo, hi) in enumerate(spec.domain):
        mask |= np.isclose(points[:, j], lo) | np.isclose(points[:, j], hi)
    return mask


def mc_reference(spec, n_grid, n_mc, rng=None, noise_std=None, batch=500, cov_stride=None):
    """Monte Carlo statistics of the solution ``u`` of a forward problem.

    Random inputs are drawn on a uniform solver grid with ``n_grid`` points
    per axis; each draw is solved deterministically and boundary nodes get
    ``N(0, noise_std^2)`` measurement noise (``noise_std`` defaults to
    ``spec.noise_std``). With ``cov_stride`` the covariance is accumulated on
    every ``cov_stride``-th grid node.
    """
    rng = as_rng(rng)
    noise_std = spec.noise_std if noise_std is None else noise_std
    axes = [np.linspace(lo, hi, n_grid) for lo, hi in spec.domain]
    fs = _GridSampler(spec.f_spec, axes)
    ks = _GridSampler(spec.k_spec, axes) if spec.uses_k else None
    points = fs.points
    bmask = _boundary_mask(spec, points)
    cov_index = None
    if cov_stride:
        sub = np.zeros(n_grid, dtype=bool)
        sub[::cov_stride] = True
        sub[-1] = True
        if len(axes) == 1:
            cov_index = np.flatnonzero(sub)
        else:
            cov_index = np.flatnonzero(np.logical_and.outer(sub, sub).ravel())
    acc = MomentAccumulator(len(points))
    cacc = MomentAccumulator(len(cov_index), track_cov=True) if cov_index is not None else None
    done, b = 0, 0
    while done < n_mc:
        m = min(batch, n_mc - done)
        brng = rng.split(b)
        f = fs.draw(brng.split("f"), m)
        k = ks.draw(brng.split("k"), m) if ks is not None else None
        try:
            u = _solve_batch(spec, axes, f, k)
        except SolverFailed as exc:
            raise SolverFailed(f"reference solve failed in batch starting at sample {done}: {exc}") from exc
        if noise_std > 0 and bmask.any():
            u = u.copy()
            u[:, bmask] += noise_std * brng.split("noise").standard_normal((m, int(bmask.sum())))
        acc.update(u)
        if cacc is not None:
            cacc.update(u[:, cov_index])
        done += m
        b += 1
    grid = points[:, 0] if len(axes) == 1 else points
    return ReferenceStats(grid, acc.mean, acc.std(), None if cacc is None else cacc.cov(),
                          n_mc, {"seed": rng.seed, "key": list(rng.key)}, cov_index, "u")


def analytic_reference(gp_spec: GpSpec, grid, field="k"):
    """Closed-form mean/STD/covariance of a (possibly log-shifted) GP on ``grid``."""
    mean, std, cov = lognormal_moments(gp_spec, grid)
    g = np.asarray(grid, dtype=float)
    return ReferenceStats(g, mean, std, cov, 0, None, np.arange(len(mean)), field)
