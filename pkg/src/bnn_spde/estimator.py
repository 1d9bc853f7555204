"""Monte Carlo statistics of sampled surrogate fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ZeroReference
from .numerics import eigvalsh
from .residual import apply_operator, k_field

__all__ = [
    "FieldSamples",
    "field_samples",
    "mean_std",
    "cov_kernel",
    "rel_error",
    "running_errors",
    "kernel_eigenvalues",
]


@dataclass
class FieldSamples:
    """``values[i, j]`` is the field at ``grid[j]`` under parameter sample ``i``."""

    grid: np.ndarray
    values: np.ndarray
    field: str = "u"

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))


def _field_at(model, spec, theta, grid, field):
    if field == "u":
        return model.forward(theta, grid, "u")
    if field == "k_head":
        return model.forward(theta, grid, "k")
    if field == "k":
        return k_field(model.eval_bundle(theta, grid, "k"), spec.k_shift).value
    if field == "f":
        ub = model.eval_bundle(theta, grid, "u")
        kb = k_field(model.eval_bundle(theta, grid, "k"), spec.k_shift) if spec.uses_k else None
        return apply_operator(spec.operator, ub, kb)
    raise ValueError(f"unknown field {field!r}; expected 'u', 'k', 'k_head' or 'f'")


def field_samples(samples, model, spec, grid, field="u"):
    """Evaluate a field for every parameter sample.

    ``field`` is ``"u"`` (solution head), ``"k"`` (parameter field after its
    positivity map), ``"k_head"`` (raw parameter head) or ``"f"`` (the
    interior operator applied to the surrogate).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    grid = np.asarray(grid, dtype=float)
    vals = np.stack([_field_at(model, spec, th, grid, field) for th in samples])
    return FieldSamples(grid, vals, field)


def _values(fs):
    return fs.values if isinstance(fs, FieldSamples) else np.atleast_2d(np.asarray(fs, dtype=float))


def mean_std(fs, ddof=0):
    """Pointwise sample mean and STD (``1/N`` normalization unless ``ddof=1``)."""
    v = _values(fs)
    mean = v.mean(axis=0)
    std = np.sqrt(np.sum((v - mean) ** 2, axis=0) / (v.shape[0] - ddof))
    return mean, std


def cov_kernel(fs, ddof=0):
    """Sample covariance between grid points, ``1/N`` normalized by default."""
    v = _values(fs)
    if v.shape[0] < 2:
        raise ValueError("cov_kernel needs at least two samples")
    d = v - v.mean(axis=0)
    c = d.T @ d / (v.shape[0] - ddof)
    return 0.5 * (c + c.T)


def kernel_eigenvalues(cov):
    """Descending eigenvalues of a covariance matrix."""
    return eigvalsh(cov)


def rel_error(pred, ref):
    """``||pred - ref||_2 / ||ref||_2`` (Frobenius for matrices)."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    nrm = np.linalg.norm(ref)
    if nrm == 0:
        raise ZeroReference("reference has zero norm")
    return float(np.linalg.norm(pred - ref) / nrm)


def running_errors(fs, ref_mean, ref_std, counts=None, mask=None):
    """Relative errors of the mean and STD from the first ``n`` samples, for each ``n``.

    Returns an array with columns ``n, rel_err_mean, rel_err_std``.
    """
    v = _values(fs)
    n_tot = v.shape[0]
    if counts is None:
        counts = np.unique(np.geomspace(min(10, n_tot), n_tot, 30).astype(int))
    sel = slice(None) if mask is None else mask
    rows = []
    for n in counts:
        m, s = mean_std(v[:n])
        rows.append((n, rel_error(m[sel], np.asarray(ref_mean)[sel]), rel_error(s[sel], np.asarray(ref_std)[sel])))
    return np.array(rows, dtype=float)
