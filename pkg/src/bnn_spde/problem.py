"""Stochastic boundary-value problems, sensor layouts and snapshot datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SolverFailed, ValidationError
from .gp import GpSpec, sample_gp
from .numerics import Rng, as_rng

__all__ = [
    "OPERATORS",
    "ProblemSpec",
    "SensorLayout",
    "SnapshotDataset",
    "equidistant_1d",
    "tensor_grid_2d",
    "square_boundary",
    "synthesize_forward",
    "synthesize_inverse",
]

# operator -> (uses parameter field k, input dimension or None for any)
OPERATORS = {
    "identity": (False, None),
    "neg_laplace_1d": (False, 1),
    "allen_cahn_2d": (False, 2),
    "div_form_1d": (True, 1),
}


def _pts(p, dim):
    a = np.asarray(p, dtype=float)
    if a.size == 0:
        return np.zeros((0, dim))
    return a.reshape(len(a), -1) if a.ndim > 1 else a.reshape(-1, 1)


def equidistant_1d(n, domain=(-1.0, 1.0)):
    """``n`` equally spaced points including both endpoints, as an ``(n, 1)`` array."""
    return np.linspace(domain[0], domain[1], n)[:, None]


def tensor_grid_2d(n, domain=((-1.0, 1.0), (-1.0, 1.0))):
    """``n x n`` tensor grid (endpoints included) flattened row-major, ``x1`` fastest."""
    a = np.linspace(domain[0][0], domain[0][1], n)
    b = np.linspace(domain[1][0], domain[1][1], n)
    X1, X2 = np.meshgrid(a, b)
    return np.column_stack([X1.ravel(), X2.ravel()])


def square_boundary(n_per_side, domain=((-1.0, 1.0), (-1.0, 1.0))):
    """``4 * n_per_side`` equidistant points around a rectangle, corners counted once."""
    (x0, x1), (y0, y1) = domain
    t = np.arange(n_per_side) / n_per_side
    sides = [
        np.column_stack([x0 + (x1 - x0) * t, np.full_like(t, y0)]),
        np.column_stack([np.full_like(t, x1), y0 + (y1 - y0) * t]),
        np.column_stack([x1 - (x1 - x0) * t, np.full_like(t, y1)]),
        np.column_stack([np.full_like(t, x0), y1 - (y1 - y0) * t]),
    ]
    return np.concatenate(sides)


@dataclass
class ProblemSpec:
    """``L[u; k] = f`` in ``D``, Dirichlet ``u = g`` on the boundary.

    ``k_spec.log_shift`` (when set) also fixes how the network's parameter head
    is mapped to ``k``: ``K = shift + exp(head)``.
    """

    operator: str
    domain: tuple
    f_spec: GpSpec | None = None
    k_spec: GpSpec | None = None
    mode: str = "forward"
    noise_std: float = 0.0
    boundary_value: float = 0.0

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValidationError(f"unknown operator {self.operator!r}")
        if self.mode not in ("forward", "inverse"):
            raise ValidationError("mode must be 'forward' or 'inverse'")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        self.domain = tuple(tuple(float(v) for v in d) for d in np.atleast_2d(self.domain))
        want = OPERATORS[self.operator][1]
        if want is not None and want != self.dim:
            raise ValidationError(f"operator {self.operator} needs a {want}-D domain")
        if self.mode == "inverse" and (self.f_spec is None or self.k_spec is None):
            raise ValidationError("inverse problems need both f_spec and k_spec")
        if self.uses_k and self.k_spec is None:
            raise ValidationError(f"operator {self.operator} needs k_spec")

    @property
    def dim(self):
        return len(self.domain)

    @property
    def uses_k(self):
        return OPERATORS[self.operator][0]

    @property
    def heads(self):
        """Network outputs the problem needs."""
        return ("u", "k") if self.uses_k else ("u",)

    @property
    def k_shift(self):
        return None if self.k_spec is None else self.k_spec.log_shift


@dataclass
class SensorLayout:
    f_sensors: np.ndarray
    g_sensors: np.ndarray = None
    k_sensors: np.ndarray = None
    u_sensors: np.ndarray = None
    dim: int = field(default=None)

    def __post_init__(self):
        f = np.asarray(self.f_sensors, dtype=float)
        if self.dim is None:
            self.dim = 1 if f.ndim == 1 else f.shape[1]
        self.f_sensors = _pts(f, self.dim)
        for name in ("g_sensors", "k_sensors", "u_sensors"):
            v = getattr(self, name)
            setattr(self, name, _pts([] if v is None else v, self.dim))

    @property
    def counts(self):
        return {"f": len(self.f_sensors), "g": len(self.g_sensors),
                "k": len(self.k_sensors), "u": len(self.u_sensors)}

    def blocks(self, mode):
        """Ordered ``(name, length)`` pairs of a snapshot row."""
        c = self.counts
        last = "k" if mode == "forward" else "u"
        return [("f", c["f"]), ("g", c["g"]), (last, c[last])]

    def row_length(self, mode):
        return sum(n for _, n in self.blocks(mode))

    def validate(self, spec: ProblemSpec):
        for name in ("f_sensors", "g_sensors", "k_sensors", "u_sensors"):
            pts = getattr(self, name)
            if pts.shape[1] != spec.dim:
                raise ValidationError(f"{name} has dimension {pts.shape[1]}, problem has {spec.dim}")
            for j, (lo, hi) in enumerate(spec.domain):
                if len(pts) and (pts[:, j].min() < lo - 1e-12 or pts[:, j].max() > hi + 1e-12):
                    raise ValidationError(f"{name} leave the domain")
        if len(self.g_sensors):
            on = np.zeros(len(self.g_sensors), dtype=bool)
            for j, (lo, hi) in enumerate(spec.domain):
                on |= np.isclose(self.g_sensors[:, j], lo) | np.isclose(self.g_sensors[:, j], hi)
            if not on.all():
                raise ValidationError("g_sensors must lie on the boundary")
        if spec.mode == "inverse" and len(self.u_sensors) == 0:
            raise ValidationError("inverse problems need u_sensors")
        if spec.mode == "forward" and spec.uses_k and len(self.k_sensors) == 0:
            raise ValidationError(f"operator {spec.operator} needs k_sensors in forward mode")
        if len(self.k_sensors) and not (spec.mode == "forward" and spec.uses_k):
            raise ValidationError("k_sensors are only meaningful for forward problems with a parameter field")

    def to_dict(self):
        return {"dim": self.dim, **{n: getattr(self, n).tolist()
                                    for n in ("f_sensors", "g_sensors", "k_sensors", "u_sensors")}}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (np.asarray(v) if k != "dim" else v) for k, v in d.items()})


@dataclass
class SnapshotDataset:
    """``N`` snapshot rows ``[f, g, k]`` (forward) or ``[f, g, u]`` (inverse).

    File format (``.npz``): ``header`` holds a JSON object with keys
    ``mode``, ``blocks`` (ordered ``[name, length]`` pairs), ``counts``,
    ``layout`` (sensor coordinates), ``noise_std`` and ``seed``; ``rows``
    holds the ``(N, row_length)`` float64 matrix.
    """

    mode: str
    rows: np.ndarray
    layout: SensorLayout
    noise_std: dict
    seed: object = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.layout.row_length(self.mode):
            raise ValidationError("row length does not match the sensor layout")

    @property
    def blocks(self):
        return self.layout.blocks(self.mode)

    def block(self, name):
        pos = 0
        for b, n in self.blocks:
            if b == name:
                return self.rows[:, pos:pos + n]
            pos += n
        raise KeyError(name)

    def header(self):
        return {
            "mode": self.mode,
            "blocks": [[b, n] for b, n in self.blocks],
            "counts": self.layout.counts,
            "layout": self.layout.to_dict(),
            "noise_std": self.noise_std,
            "seed": self.seed,
            "n_snapshots": int(self.rows.shape[0]),
        }

    def save(self, path):
        np.savez(path, header=np.array(json.dumps(self.header())), rows=self.rows)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            h = json.loads(str(z["header"]))
            rows = z["rows"]
        return cls(h["mode"], rows, SensorLayout.from_dict(h["layout"]), h["noise_std"], h["seed"])


def _seed_of(rng):
    return {"seed": rng.seed, "key": list(rng.key)}


def synthesize_forward(spec: ProblemSpec, layout: SensorLayout, n_snapshots: int, rng=None):
    """Independent snapshots of the random inputs at the sensors.

    The ``g`` block is the (exact) Dirichlet value plus ``N(0, noise_std^2)``
    measurement noise drawn independently per snapshot and sensor.
    """
    if n_snapshots < 1:
        raise ValidationError("n_snapshots must be >= 1")
    layout.validate(spec)
    rng = as_rng(rng)
    c = layout.counts
    f = sample_gp(spec.f_spec, layout.f_sensors, rng.split("f"), n_snapshots)
    g = spec.boundary_value + spec.noise_std * rng.split("g-noise").standard_normal((n_snapshots, c["g"]))
    if c["k"]:
        k = sample_gp(spec.k_spec, layout.k_sensors, rng.split("k"), n_snapshots)
    else:
        k = np.zeros((n_snapshots, 0))
    rows = np.concatenate([f, g, k], axis=1)
    noise = {"f": 0.0, "g": spec.noise_std, "k": 0.0}
    return SnapshotDataset("forward", rows, layout, noise, _seed_of(rng))


def synthesize_inverse(spec: ProblemSpec, layout: SensorLayout, n_snapshots: int, rng=None,
                       solver=None, n_fine: int = 401):
    """Snapshots ``[f, g, u]`` obtained by solving the PDE for each draw of ``(k, f)``.

    ``k`` and ``f`` are drawn on a uniform fine grid of ``n_fine`` points; the
    PDE is solved there with ``solver(k, f, bc, x)`` (default: the
    divergence-form finite-difference solver) and ``f`` and ``u`` are linearly
    interpolated to their sensors. ``u`` receives ``N(0, noise_std^2)`` noise.
    """
    from . import reference

    if n_snapshots < 1:
        raise ValidationError("n_snapshots must be >= 1")
    if spec.dim != 1:
        raise ValidationError("inverse synthesis is implemented for 1D problems")
    layout.validate(spec)
    rng = as_rng(rng)
    if solver is None:
        solver = reference.solve_div_form_1d
    lo, hi = spec.domain[0]
    x = np.linspace(lo, hi, n_fine)
    k = sample_gp(spec.k_spec, x, rng.split("k"), n_snapshots)
    f = sample_gp(spec.f_spec, x, rng.split("f"), n_snapshots)
    bc = (spec.boundary_value, spec.boundary_value)
    u = np.empty_like(f)
    for j in range(n_snapshots):
        try:
            u[j] = solver(k[j], f[j], bc, x)
        except Exception as exc:  # noqa: BLE001 - reported with the snapshot index
            raise SolverFailed(f"deterministic solve failed for snapshot {j}: {exc}") from exc
    c = layout.counts
    fs = np.stack([np.interp(layout.f_sensors[:, 0], x, row) for row in f])
    us = np.stack([np.interp(layout.u_sensors[:, 0], x, row) for row in u])
    us = us + spec.noise_std * rng.split("u-noise").standard_normal(us.shape)
    g = spec.boundary_value + spec.noise_std * rng.split("g-noise").standard_normal((n_snapshots, c["g"]))
    rows = np.concatenate([fs, g, us], axis=1)
    noise = {"f": 0.0, "g": spec.noise_std, "u": spec.noise_std}
    return SnapshotDataset("inverse", rows, layout, noise, _seed_of(rng))
