"""Command-line interface.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numerical
failure, 4 I/O failure. On failure a JSON error report
``{"status": "error", "stage": ..., "error": ..., "message": ...}`` is
printed to stderr (and written to ``error.json`` in the run directory when
one exists).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PRESETS, apply_overrides, load_config, preset_config
from .exceptions import NumericalError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _exit_code(exc):
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ValidationError, ValueError, TypeError, KeyError)):
        return EXIT_VALIDATION
    if isinstance(exc, (ArithmeticError, FloatingPointError)):
        return EXIT_NUMERICAL
    return 1


def _config_from_args(args):
    from .runner import StageError

    try:
        return _build_config(args)
    except (ValidationError, ValueError, TypeError, OSError) as exc:
        raise StageError("validate", exc) from exc


def _build_config(args):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        if args.preset is not None or args.scale is not None:
            raise ValidationError("use either --config or --preset/--scale")
    else:
        cfg = preset_config(args.preset or "custom", args.scale or "paper")
    cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    return cfg.validate()


def _log(quiet):
    return (lambda msg: None) if quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))


def cmd_run(args):
    from .runner import default_output_dir, run_experiment

    cfg = _config_from_args(args)
    out = cfg.output_dir or default_output_dir(cfg)
    args._run_dir = out
    summary = run_experiment(cfg, out, log=_log(args.quiet))
    keys = ("rel_error_mean", "rel_error_std", "rel_error_std_interior")
    print(json.dumps({"output_dir": str(out), **{k: summary[k] for k in keys if k in summary},
                      "acceptance_rate": summary["hmc"]["acceptance_rate"]}, indent=2))


def cmd_report(args):
    from .runner import report

    rows = report(args.run_dirs, args.out)
    print(f"{'kl_dim':>7} {'s/sample':>10} {'norm_cost':>10}  run")
    for r in rows:
        print(f"{r['kl_dimension']:>7d} {r['wall_time_per_sample']:>10.4g} {r['normalized_cost']:>10.3f}  {r['run']}")


def cmd_kl_dim(args):
    from .gp import Kernel, kl_dimension

    rows = []
    for length in args.lengths:
        k = Kernel(args.kernel, args.sigma, length)
        rows.append((length, kl_dimension(k, (args.lo, args.hi), args.grid, args.energy)))
    if args.json:
        print(json.dumps({"kernel": args.kernel, "energy": args.energy, "grid": args.grid,
                          "dimensions": {str(l): d for l, d in rows}}))
    else:
        print("length,dimension")
        for length, d in rows:
            print(f"{length:g},{d}")


def cmd_reference(args):
    from .numerics import Rng
    from .runner import build_reference

    cfg = _config_from_args(args)
    ref = build_reference(cfg, Rng(cfg.seed).split("reference"))
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    ref.save(stem)
    print(json.dumps({"reference": str(stem) + ".csv", "n_points": len(ref.mean), "n_mc": ref.n_mc}))


def cmd_check(args):
    from .checks import run_all

    results = run_all(args.presets or None, n_theta=args.n_theta)
    if not all(ok for _, ok, _ in results):
        raise ArithmeticError("one or more property checks failed")


def _add_config_args(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--scale", choices=("paper", "desk"), default=None)
    p.add_argument("--config", help="JSON configuration file (replaces --preset/--scale)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration leaf, e.g. --set hmc.step_size=1e-4 (repeatable)")
    p.add_argument("--seed", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="bnn-spde", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP worker threads")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="synthesize data, fit, sample and compare against the reference",
                       epilog="The HMC step size is never adapted. When tuning hmc.step_size by hand, a "
                              "common heuristic scales it as d**-0.25 with the parameter count d; "
                              "the run log reports d.")
    _add_config_args(p)
    p.add_argument("--output-dir", default=None,
                   help="run directory (default: $BNN_SPDE_OUTPUT_ROOT/<preset>-<scale>-seed<seed>)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="cost-vs-dimension and error-vs-N tables across runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("kl-dim", help="KL dimension of a 1D covariance kernel")
    p.add_argument("--kernel", default="matern52", choices=("squared_exponential", "matern_unscaled", "matern52"))
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--lengths", type=float, nargs="+", default=[1.0, 0.3, 0.2, 0.1, 0.03])
    p.add_argument("--grid", type=int, default=2048)
    p.add_argument("--energy", type=float, default=0.99)
    p.add_argument("--lo", type=float, default=-1.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_kl_dim)

    p = sub.add_parser("reference", help="reference statistics only")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output stem (writes <stem>.csv, <stem>.json)")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("check", help="finite-difference gradient and leapfrog property suites")
    p.add_argument("--presets", nargs="*", choices=sorted(p for p in PRESETS if p != "custom"))
    p.add_argument("--n-theta", type=int, default=20)
    p.set_defaults(func=cmd_check)
    return parser


def _error_report(stage, exc):
    return {"status": "error", "stage": stage, "error": type(exc).__name__, "message": str(exc)}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    from .runner import StageError

    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except StageError as err:
        rep = _error_report(err.stage, err.exc)
        print(json.dumps(rep), file=sys.stderr)
        run_dir = getattr(args, "_run_dir", None)
        if run_dir and Path(run_dir).is_dir():
            try:
                (Path(run_dir) / "error.json").write_text(json.dumps(rep, indent=2))
            except OSError:
                pass
        return _exit_code(err.exc)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured report
        code = _exit_code(exc)
        if code == 1:
            raise
        print(json.dumps(_error_report(args.command, exc)), file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
