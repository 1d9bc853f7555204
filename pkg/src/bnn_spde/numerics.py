"""Seeded random streams and the dense linear algebra used by the other modules."""

from __future__ import annotations

import zlib

import numpy as np

from .exceptions import NoConvergence, NotFactorizable

__all__ = ["Rng", "as_rng", "cholesky", "eigh", "standard_normal"]


class Rng:
    """Splittable random stream.

    A stream is identified by its root ``seed`` and a tuple of integer labels.
    ``split("name")`` derives a child whose state depends only on the parent's
    identity and the label, never on how much of the parent was consumed, so
    parallel workers can be handed independent streams without coordination.
    """

    def __init__(self, seed: int = 0, key: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def split(self, label) -> "Rng":
        if isinstance(label, str):
            label = zlib.crc32(label.encode("utf-8"))
        return Rng(self.seed, self.key + (int(label),))

    def standard_normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def child_seed(self) -> int:
        """A 32-bit integer seed derived from this stream (for foreign APIs)."""
        return int(self.split("child-seed").generator.integers(0, 2**32 - 1))

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self.key})"


def as_rng(random_state) -> Rng:
    """Coerce ``None``, an int, or an :class:`Rng` into an :class:`Rng`."""
    if isinstance(random_state, Rng):
        return random_state
    if random_state is None:
        return Rng(0)
    if isinstance(random_state, (int, np.integer)):
        return Rng(int(random_state))
    raise TypeError(f"cannot build an Rng from {type(random_state).__name__}")


def standard_normal(rng: Rng, n: int) -> np.ndarray:
    """``n`` iid standard normal variates drawn from ``rng``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal(n)


def cholesky(m, jitter_start: float = 0.0, max_retries: int = 8, cap: float | None = None):
    """Lower Cholesky factor with diagonal jitter escalation.

    Tries ``jitter_start`` first, then grows the jitter tenfold per retry
    (starting from ``1e-12 * max|diag|`` when ``jitter_start`` is zero).

    Parameters
    ----------
    m : array_like of shape (n, n)
        Symmetric matrix.
    jitter_start : float
        First diagonal shift to try.
    max_retries : int
        Number of escalations after the first attempt.
    cap : float, optional
        Largest admissible jitter. Defaults to ``1e-4 * max|diag|``.

    Returns
    -------
    L : ndarray
        Lower-triangular factor with ``L @ L.T == m + jitter * I``.
    jitter : float
        The jitter actually used.

    Raises
    ------
    NotFactorizable
        When no jitter up to ``cap`` yields a positive-definite matrix.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("cholesky expects a square matrix")
    if jitter_start < 0:
        raise ValueError("jitter_start must be non-negative")
    scale = float(np.max(np.abs(np.diag(m)))) if m.size else 0.0
    if not np.any(m):
        # the zero matrix is its own (degenerate) factor
        return np.zeros_like(m), 0.0
    if cap is None:
        cap = 1e-4 * scale
    if jitter_start > 0:
        schedule = [jitter_start * 10.0**k for k in range(max_retries + 1)]
    else:
        base = 1e-12 * (scale if scale > 0 else 1.0)
        schedule = [0.0] + [base * 10.0**k for k in range(max_retries)]
    eye = np.eye(m.shape[0])
    for jitter in schedule:
        if jitter > cap:
            break
        try:
            return np.linalg.cholesky(m + jitter * eye if jitter else m), float(jitter)
        except np.linalg.LinAlgError:
            continue
    raise NotFactorizable(
        f"matrix of size {m.shape[0]} is not positive definite within jitter cap {cap:.3g}"
    )


def eigh(m):
    """Symmetric eigendecomposition with eigenvalues in descending order.

    Returns ``(eigenvalues, eigenvectors)`` where column ``i`` of the second
    array is the unit eigenvector for ``eigenvalues[i]``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("eigh expects a square matrix")
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return w[::-1].copy(), v[:, ::-1].copy()


def eigvalsh(m):
    """Eigenvalues only, descending."""
    try:
        w = np.linalg.eigvalsh(np.asarray(m, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return w[::-1].copy()
