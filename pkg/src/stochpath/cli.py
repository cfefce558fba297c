"""Command-line interface.

    stochpath {classical|langevin|fokker-planck|path-mc|os-check|pipeline}
              [flags] [--config <file>]

Flag values override the config file, which overrides built-in defaults.
The output directory defaults to $STOCHPATH_OUTDIR (falling back to the
current directory).  Exit status: 0 if every declared check passed,
2 for usage errors, 1 otherwise.
"""

import argparse
import sys

from .errors import StochPathError, UsageError
from .harness import ExperimentConfig, load_config_file, run_experiment


def _add_common(sub):
    sub.add_argument("--config", help="sectioned key=value config file")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--outdir", help="output directory")
    sub.add_argument("--json-manifest", action="store_true",
                     help="write manifest.json instead of manifest.txt")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stochpath",
        description=("classical dynamics, Langevin ensembles, Fokker-Planck "
                     "solving, Euclidean path sampling, and reflection-"
                     "positivity checks"))
    subs = parser.add_subparsers(dest="experiment", required=True)

    s = subs.add_parser("classical", help="Hamilton-Jacobi residual tables")
    s.add_argument("--system", choices=["free", "harmonic", "quartic"])
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--hj-grid", help="NxM action-table grid")
    s.add_argument("--out", help="residual CSV name")
    _add_common(s)

    s = subs.add_parser("langevin", help="ensembles and Kramers-Moyal estimates")
    s.add_argument("--drift", choices=["zero", "linear", "cubic", "const"])
    s.add_argument("--gamma", type=float)
    s.add_argument("--diffusion", type=float)
    s.add_argument("--n-traj", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--km-bins", type=int)
    s.add_argument("--out")
    _add_common(s)

    s = subs.add_parser("fokker-planck", help="drift-diffusion density solver")
    s.add_argument("--drift", choices=["zero", "linear", "cubic", "const"])
    s.add_argument("--gamma", type=float)
    s.add_argument("--diffusion", type=float)
    s.add_argument("--grid", help="lo:hi:n cells")
    s.add_argument("--bc", choices=["zeroflux", "absorbing"])
    s.add_argument("--dt", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--stationary", action="store_const", const=True,
                   default=None, help="solve for the stationary density")
    s.add_argument("--x0", type=float)
    s.add_argument("--out")
    _add_common(s)

    s = subs.add_parser("path-mc", help="Metropolis path sampling")
    s.add_argument("--potential", choices=["harmonic", "quartic"])
    s.add_argument("--m", type=float)
    s.add_argument("--omega", type=float)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--hbar", type=float)
    s.add_argument("--n-slices", type=int)
    s.add_argument("--spacing", type=float)
    s.add_argument("--sweeps", type=int)
    s.add_argument("--therm", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--chains", type=int)
    s.add_argument("--out")
    _add_common(s)

    s = subs.add_parser("os-check", help="reflection-positivity certification")
    s.add_argument("--mass", type=float)
    s.add_argument("--lattice", help="T or TxL sites")
    s.add_argument("--n-test-functions", type=int)
    s.add_argument("--draws", type=int)
    s.add_argument("--tolerance", type=float)
    s.add_argument("--out")
    _add_common(s)

    s = subs.add_parser("pipeline", help="cross-module emergence pipeline")
    s.add_argument("--hbar", type=float)
    s.add_argument("--n-traj", type=int)
    s.add_argument("--sweeps", type=int)
    _add_common(s)

    return parser


_COMMON = {"config", "seed", "outdir", "json_manifest", "experiment"}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    overrides = {k: v for k, v in vars(args).items()
                 if k not in _COMMON and v is not None}
    try:
        file_cfg = load_config_file(args.config) if args.config else {}
        run_cfg = file_cfg.get("run", {})
        seed = args.seed if args.seed is not None else run_cfg.get("seed")
        outdir = args.outdir or run_cfg.get("outdir")
        raw = {**file_cfg.get(args.experiment, {}), **overrides}
        config = ExperimentConfig.resolve(args.experiment, raw,
                                          seed=seed, outdir=outdir)
        manifest = run_experiment(config, json_manifest=args.json_manifest)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except StochPathError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    for name, status in manifest.checks.items():
        print(f"[{status.upper() if status in ('pass', 'fail') else status}] {name}")
    print(f"outputs in {config.outdir} "
          f"({'manifest.json' if args.json_manifest else 'manifest.txt'})")
    return 0 if manifest.ok else 1


if __name__ == "__main__":
    sys.exit(main())
