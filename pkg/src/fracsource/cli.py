"""Command-line front end.

    fracsource simulate    --config run.yaml [--seed N] [--threads N] [--out-dir D]
    fracsource reconstruct --config run.yaml [--moments F] [--kcut K]
    fracsource instability --config run.yaml [--gamma G]
    fracsource selftest

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
Every output carries the master seed and the configuration hash, and contains
nothing that changes between identical runs.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys

import mpmath
import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .fintegral import QuadratureError
from .forward import (build_eigensystem, read_moments_csv, simulate_ensemble, summary_json,
                      write_covariance_csv, write_moments_csv)
from .inverse import (FactorPositivityError, compute_factors, dump_json, instability_report,
                      profile_to_json, reconstruct, write_rows_csv)
from .mlf import MLConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_NUMERIC_ERRORS = (QuadratureError, FactorPositivityError, MLConvergenceError,
                   FloatingPointError, np.linalg.LinAlgError)


def _versions():
    return {"fracsource": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "mpmath": mpmath.__version__, "python": platform.python_version()}


def _provenance(cfg: RunConfig):
    return [f"seed={cfg.sim.seed}", f"config_sha256={cfg.hash}", f"fracsource={__version__}"]


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def cmd_simulate(cfg: RunConfig, args) -> int:
    ens = simulate_ensemble(cfg.sim, cfg.source, cfg.domain, threads=args.threads,
                            keep_samples=False)
    head = _provenance(cfg)
    write_moments_csv(_out(cfg, "ensemble_moments.csv"), ens.moments, head)
    write_covariance_csv(_out(cfg, "covariance.csv"), ens.moments, head)
    summary_json(_out(cfg, "run_summary.json"), {
        "config": cfg.echo(), "config_sha256": cfg.hash, "seed": cfg.sim.seed,
        "versions": _versions(), "n_paths": ens.moments.n_paths,
        "deterministic_part": ens.deterministic.tolist(), "meta": ens.meta,
    })
    print(f"wrote {cfg.sim.K} modes from {cfg.sim.M} paths to {cfg.out_dir}")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    mpath = args.moments or os.path.join(cfg.out_dir, "ensemble_moments.csv")
    cpath = args.covariance or os.path.join(os.path.dirname(mpath) or ".", "covariance.csv")
    try:
        moments = read_moments_csv(mpath, cpath if os.path.exists(cpath) else None, cfg.sim.M)
    except OSError as exc:
        raise ConfigError(f"cannot read moments: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"moments file {mpath}: {exc}") from None
    if moments.K < cfg.kcut:
        raise ConfigError(f"moments file has {moments.K} modes, K_cut is {cfg.kcut}")
    eig = build_eigensystem(cfg.domain, moments.K)
    factors = compute_factors(cfg.sim, eig, cfg.source.h, cfg.source.c_h, tol=cfg.tol)
    rep = reconstruct(moments, factors, cfg.kcut, cfg.f_true, cfg.g_true)
    head = _provenance(cfg)
    write_rows_csv(_out(cfg, "reconstruction.csv"), rep.rows(), head)
    payload = rep.to_json()
    payload.update(config_sha256=cfg.hash, seed=cfg.sim.seed, moments_file=os.path.basename(mpath),
                   A=factors.A.tolist(), B=factors.B.tolist(), C1=factors.C1.tolist())
    dump_json(_out(cfg, "reconstruction.json"), payload)
    print(f"reconstructed {cfg.kcut} modes; clamped {rep.clamped}; "
          f"off-diagonal residual {rep.offdiag_residual:.3g}")
    return EXIT_OK


def cmd_instability(cfg: RunConfig, args) -> int:
    eig = build_eigensystem(cfg.domain, cfg.sim.K)
    inv = cfg.raw["inverse"]
    try:
        prof = instability_report(cfg.sim, eig, cfg.source.h, cfg.gamma, c_h=cfg.source.c_h,
                                  epsilon=float(inv["epsilon"]),
                                  use_2gamma_h=bool(inv["use_2gamma_h"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    head = _provenance(cfg) + [f"gamma={prof.gamma!r}", f"beta={prof.beta!r}",
                               f"slope_A={prof.slope_A!r}", f"slope_B={prof.slope_B!r}",
                               f"growth={prof.growth!r}"]
    write_rows_csv(_out(cfg, "instability.csv"), prof.rows(), head)
    payload = profile_to_json(prof)
    payload.update(config_sha256=cfg.hash, seed=cfg.sim.seed)
    dump_json(_out(cfg, "instability.json"), payload)
    print(f"beta={prof.beta:.4g} slope_A={prof.slope_A:.3f} slope_B={prof.slope_B:.3f} "
          f"growth={prof.growth:.3g}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    ok = True
    for name, passed, detail in run_all():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if ok else EXIT_NUMERIC


_COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
             "instability": cmd_instability}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracsource", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"fracsource {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed, overrides the file")
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("--out-dir", dest="out_dir", help="output directory")
    common.add_argument("--gamma", type=float, help="split exponent for the instability profile")
    common.add_argument("--kcut", type=int, help="spectral truncation index")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo ensemble of modal data")
    rec = sub.add_parser("reconstruct", parents=[common], help="recover f_k and |g_k|")
    rec.add_argument("--moments", help="ensemble_moments.csv (default: in the output dir)")
    rec.add_argument("--covariance", help="covariance.csv (default: next to the moments)")
    sub.add_parser("instability", parents=[common], help="decay of the inversion factors")
    sub.add_parser("selftest", help="quick numerical self-checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(args)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config, {"seed": args.seed, "output_dir": args.out_dir,
                                        "gamma": args.gamma, "kcut": args.kcut})
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
