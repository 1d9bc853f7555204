"""End-to-end experiment pipeline and the run-directory format.

A run directory holds::

    config.json           effective configuration
    dataset.npz           snapshot rows (see SnapshotDataset)
    gmm.npz               fitted mixture
    chain.npz             HMC samples and per-proposal bookkeeping
    network.json          architecture and frozen embedding matrices
    field_stats.csv       grid, predicted mean, predicted std
    reference.csv/.json   reference mean/std on the same grid (+ _cov.csv)
    cov_pred.csv          predicted covariance kernel (when requested)
    cov_exact.csv         prescribed covariance kernel on the same grid
    eigenvalues.csv       index, predicted, exact (descending)
    error_vs_n.csv        n, rel_err_mean, rel_err_std, rel_err_mean_vs_final
    summary.json          metrics; wall-clock figures live under "timing"
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import hmc
from .config import ExperimentConfig
from .estimator import cov_kernel, field_samples, kernel_eigenvalues, mean_std, rel_error, running_errors
from .exceptions import MissingArtifacts, ValidationError
from .gp import energy_dimension, gram, kl_dimension
from .numerics import Rng, eigvalsh
from .problem import SnapshotDataset, synthesize_forward, synthesize_inverse
from .reference import ReferenceStats, analytic_reference, mc_reference
from .solver import BayesianPdeSolver

__all__ = ["run_experiment", "build_reference", "report", "field_kl_dimension", "default_output_dir",
           "StageError"]

OUTPUT_ROOT_ENV = "BNN_SPDE_OUTPUT_ROOT"
N_EIG = 10


class StageError(Exception):
    """Wraps an exception with the name of the pipeline stage that raised it."""

    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


class _Stage:
    def __init__(self, name, timing):
        self.name, self.timing = name, timing

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, kind, exc, tb):
        self.timing[f"{self.name}_seconds"] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def default_output_dir(cfg: ExperimentConfig):
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return str(Path(root) / f"{cfg.preset}-{cfg.scale}-seed{cfg.seed}")


def field_kl_dimension(cfg: ExperimentConfig, grid_n=2048, energy=0.99):
    """KL dimension of the input random field that drives the problem.

    The parameter field for inverse problems, the source otherwise. On 2D
    squared-exponential kernels the spectrum is the outer product of the 1D
    spectra (separability), so a 1D eigenproblem suffices.
    """
    p = cfg.problem
    gp = p.k if p.mode == "inverse" else p.f
    k = gp.build().kernel
    dom = p.domain
    if len(dom) == 1:
        return kl_dimension(k, tuple(dom[0]), grid_n, energy)
    if k.kind != "squared_exponential":
        raise ValidationError("KL dimension in 2D is only available for squared-exponential kernels")
    lam = [eigvalsh(gram(k, np.linspace(lo, hi, grid_n // 4)[:, None])) for lo, hi in dom]
    both = np.sort(np.outer(lam[0], lam[1]).ravel())[::-1]
    return energy_dimension(both, energy)


def _interp(ref: ReferenceStats, values, grid):
    """Interpolate reference values onto ``grid`` (exact at shared nodes)."""
    rg = np.asarray(ref.grid, dtype=float)
    if rg.ndim == 2 and rg.shape[1] == 1:
        rg = rg[:, 0]
    grid = np.asarray(grid, dtype=float)
    if rg.ndim == 1:
        return np.interp(grid[:, 0], rg, values)
    a1, a2 = np.unique(rg[:, 0]), np.unique(rg[:, 1])
    f = RegularGridInterpolator((a2, a1), np.asarray(values).reshape(len(a2), len(a1)))
    return f(grid[:, ::-1])


def _boundary_mask(cfg, grid):
    mask = np.zeros(len(grid), dtype=bool)
    for j, (lo, hi) in enumerate(cfg.problem.domain):
        mask |= np.isclose(grid[:, j], lo) | np.isclose(grid[:, j], hi)
    return mask


def build_reference(cfg: ExperimentConfig, rng: Rng):
    """Reference statistics of the estimated field, per ``cfg.reference``."""
    spec = cfg.problem_spec()
    r = cfg.reference
    if r.kind == "analytic":
        gp = spec.k_spec if cfg.estimate.field in ("k", "k_head") else spec.f_spec
        if cfg.estimate.field == "k_head":
            gp = type(gp)(gp.mean, gp.kernel, None)
        return analytic_reference(gp, cfg.estimate_grid(), cfg.estimate.field)
    if spec.mode != "forward" or cfg.estimate.field != "u":
        raise ValidationError("reference.kind: Monte Carlo references cover the forward solution u only")
    return mc_reference(spec, r.n_grid, r.n_mc, rng, cov_stride=r.cov_stride)


def _kernel_samples(cfg, solver, grid):
    """Predicted samples of the field whose covariance is the prescribed kernel."""
    kf = cfg.estimate.kernel_field
    spec = solver.problem
    if kf == "log_f":
        u = solver.sample_fields(grid, "u").values
        return np.log(np.maximum(u - spec.f_spec.log_shift, np.finfo(float).tiny))
    if kf == "f":
        return solver.sample_fields(grid, "f").values
    if kf == "k_head":
        return solver.sample_fields(grid, "k_head").values
    return None


def _exact_kernel(cfg, grid):
    kf = cfg.estimate.kernel_field
    spec = cfg.problem_spec()
    gp = spec.k_spec if kf == "k_head" else spec.f_spec
    return gram(gp.kernel, grid)


def _save_csv(path, columns, names):
    np.savetxt(path, np.column_stack(columns), delimiter=",", header=",".join(names), comments="")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run_experiment(cfg: ExperimentConfig, output_dir=None, log=None):
    """Synthesize, fit, sample, estimate and compare; write the run directory.

    Returns the summary dictionary. Failures are re-raised as
    :class:`StageError` carrying the stage name.
    """
    log = log or (lambda msg: None)
    timing = {}
    with _Stage("validate", timing):
        cfg.validate()
        out = Path(output_dir or cfg.output_dir or default_output_dir(cfg))
    with _Stage("io", timing):
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
    root = Rng(cfg.seed)
    spec, layout = cfg.problem_spec(), cfg.layout()

    with _Stage("synthesize", timing):
        log(f"synthesizing {cfg.data.n_snapshots} snapshots")
        if spec.mode == "forward":
            ds = synthesize_forward(spec, layout, cfg.data.n_snapshots, root.split("data"))
        else:
            ds = synthesize_inverse(spec, layout, cfg.data.n_snapshots, root.split("data"),
                                    n_fine=cfg.data.n_fine)
        ds.save(out / "dataset.npz")

    solver = BayesianPdeSolver(spec, layout, random_state=root.split("solver"), **cfg.solver_kwargs())
    with _Stage("fit", timing):
        log("fitting mixture, warm start and HMC chain")
        solver.fit(ds)
        log(f"parameter count d = {solver.model_.n_params}, acceptance rate {solver.chain_.acceptance_rate:.3f}")
        solver.mixture_.save(out / "gmm.npz")
        solver.chain_.save(out / "chain.npz")
        (out / "network.json").write_text(json.dumps(solver.model_.to_dict()))

    with _Stage("estimate", timing):
        log("estimating field statistics")
        grid = cfg.estimate_grid()
        fs = solver.sample_fields(grid, cfg.estimate.field)
        mean, std = mean_std(fs)
        _save_csv(out / "field_stats.csv", [grid, mean, std],
                  (["x"] if grid.shape[1] == 1 else ["x1", "x2"]) + ["mean", "std"])
        eig = None
        if cfg.estimate.kernel_field is not None:
            ks = _kernel_samples(cfg, solver, grid)
            cp, ce = cov_kernel(ks), _exact_kernel(cfg, grid)
            ep, ee = kernel_eigenvalues(cp)[:N_EIG], kernel_eigenvalues(ce)[:N_EIG]
            np.savetxt(out / "cov_pred.csv", cp, delimiter=",")
            np.savetxt(out / "cov_exact.csv", ce, delimiter=",")
            _save_csv(out / "eigenvalues.csv", [np.arange(1, len(ep) + 1), ep, ee], ["index", "predicted", "exact"])
            eig = {"predicted": ep, "exact": ee, "ratio": ep / ee,
                   "cov_rel_error": rel_error(cp, ce)}

    with _Stage("reference", timing):
        log("building reference statistics")
        ref = build_reference(cfg, root.split("reference"))
        ref.save(out / "reference")
        ref_mean, ref_std = _interp(ref, ref.mean, grid), _interp(ref, ref.std, grid)

    with _Stage("compare", timing):
        bmask = _boundary_mask(cfg, grid)
        interior = ~bmask if cfg.estimate.field == "u" and bmask.any() and (~bmask).any() else None
        comparison = {"rel_error_mean": rel_error(mean, ref_mean), "rel_error_std": rel_error(std, ref_std)}
        if interior is not None:
            comparison["rel_error_std_interior"] = rel_error(std[interior], ref_std[interior])
            comparison["boundary_std"] = std[bmask]
        if eig is not None:
            comparison["kernel_eigenvalues"] = eig
        err = running_errors(fs, ref_mean, ref_std)
        final = fs.values.mean(axis=0)
        vs_final = [rel_error(fs.values[: int(n)].mean(axis=0), final) for n in err[:, 0]]
        _save_csv(out / "error_vs_n.csv", [err, vs_final],
                  ["n", "rel_err_mean", "rel_err_std", "rel_err_mean_vs_final"])
        diag = hmc.diagnostics(solver.chain_)
        timing["wall_time_per_sample"] = diag.pop("wall_time_per_sample_mean")
        timing["wall_time_per_sample_median"] = diag.pop("wall_time_per_sample_median")
        timing["hmc_total_seconds"] = diag.pop("wall_time_total")
        timing.update({k: v for k, v in solver.timings_.items()})
        warm = dict(solver.warm_start_info_)
        if "map_seconds" in warm:
            timing["map_seconds"] = warm.pop("map_seconds")

    summary = {
        "preset": cfg.preset,
        "scale": cfg.scale,
        "seed": cfg.seed,
        "operator": spec.operator,
        "mode": spec.mode,
        "field": cfg.estimate.field,
        "n_params": int(solver.model_.n_params),
        "kl_dimension": field_kl_dimension(cfg),
        "gmm": {"n_components": solver.mixture_.n_components, "reg": solver.mixture_.reg_,
                "n_iter": solver.mixture_.n_iter_},
        "warm_start": warm,
        "hmc": {k: v for k, v in diag.items() if k not in ("ess", "ess_coords")},
        **comparison,
        "timing": timing,
    }
    summary = _clean(summary)
    with _Stage("io", timing):
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    log(f"wrote {out}")
    return summary


def _read_summary(run_dir):
    p = Path(run_dir) / "summary.json"
    if not p.is_file():
        raise MissingArtifacts(f"{p} not found")
    return json.loads(p.read_text())


def report(run_dirs, out_dir):
    """Cost-vs-dimension table and error-vs-N curves across completed runs.

    Writes ``cost_vs_dimension.csv`` (normalized to the first run) and one
    ``error_vs_n_<i>.csv`` per run. Returns the table rows.
    """
    if not run_dirs:
        raise ValidationError("report needs at least one run directory")
    rows = []
    for i, d in enumerate(run_dirs):
        s = _read_summary(d)
        ev = Path(d) / "error_vs_n.csv"
        if not ev.is_file():
            raise MissingArtifacts(f"{ev} not found")
        if "timing" not in s or "wall_time_per_sample" not in s["timing"]:
            raise MissingArtifacts(f"{Path(d) / 'summary.json'} lacks timing.wall_time_per_sample")
        rows.append({"run": str(d), "preset": s.get("preset"), "kl_dimension": s["kl_dimension"],
                     "wall_time_per_sample": s["timing"]["wall_time_per_sample"], "error_vs_n": ev})
    base = rows[0]["wall_time_per_sample"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cost_vs_dimension.csv", "w") as fh:
        fh.write("run,preset,kl_dimension,wall_time_per_sample,normalized_cost\n")
        for r in rows:
            r["normalized_cost"] = r["wall_time_per_sample"] / base
            fh.write(f"{r['run']},{r['preset']},{r['kl_dimension']},{r['wall_time_per_sample']:.6g},"
                     f"{r['normalized_cost']:.6g}\n")
    for i, r in enumerate(rows):
        (out / f"error_vs_n_{i}.csv").write_text(Path(r.pop("error_vs_n")).read_text())
    return rows


def load_dataset(run_dir):
    p = Path(run_dir) / "dataset.npz"
    if not p.is_file():
        raise MissingArtifacts(f"{p} not found")
    return SnapshotDataset.load(p)
