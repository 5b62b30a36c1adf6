"""Command-line front end.

Subcommands: ``calibrate``, ``mean``, ``freq``, ``sweep``, ``audit`` and
``bounds``. Budgets are in nats; ``--eps-bits`` takes bits instead. The
``LDPC_SEED`` environment variable overrides ``--seed``.

Exit codes: 0 success, 2 usage error, 3 infeasible request, 4 numerical
degeneracy.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import __version__
from .audit import certify_pure_ldp, check_approx_ldp
from .errors import InfeasibleError, LdpcError, NumericalDegeneracyError
from .experiments import (
    FREQ_METHODS,
    MEAN_METHODS,
    MODES,
    SWEEP_AXES,
    FreqConfig,
    MeanConfig,
    results_to_csv,
    results_to_json,
    run,
    sweep,
)
from .mechanisms import as_cap_mechanism, calibrate_privunit, calibrate_ss
from .mmrc import (
    excess_error_bound,
    mmrc_pu_candidate_count,
    mmrc_ss_candidate_count,
    mmrc_scales,
    rho_from_n,
)
from .mrc import approx_dp_params, mrc_candidate_count, mrc_scales

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_DEGENERATE = 4

THEOREMS = ("mrc-n", "approx-dp", "rho", "mmrc-pu-n", "mmrc-ss-n", "all")


def _add_eps(p: argparse.ArgumentParser, default: float | None = None) -> None:
    g = p.add_mutually_exclusive_group(required=default is None)
    g.add_argument("--eps", type=float, default=default, help="privacy budget in nats")
    g.add_argument("--eps-bits", type=float, help="privacy budget in bits (converted with ln 2)")


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", "-o", default=None, help="write results here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format (default csv)")


def _add_run_flags(p: argparse.ArgumentParser, methods, default_method: str | None) -> None:
    _add_eps(p)
    p.add_argument("--d", type=int, required=True, help="dimension / alphabet size")
    p.add_argument("--n", type=int, required=True, help="number of users")
    p.add_argument("--method", choices=methods, default=default_method, help=f"default {default_method or 'mmrc for the task'}")
    p.add_argument(
        "--bits",
        type=int,
        default=None,
        help="index bits, N = 2^bits (default max(ceil(eps/ln 2) + 2, 8) for mean, +3 for freq)",
    )
    p.add_argument("--trials", type=int, default=10, help="independent repetitions (default 10)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0; LDPC_SEED overrides)")
    p.add_argument("--mode", choices=MODES, default="protocol", help="protocol or law-equivalent simulation")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads over trials")
    _add_output(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldpc", description="Compressed local differential privacy toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate a mechanism and print its parameters and scales")
    p.add_argument("--mech", choices=("privunit", "ss"), required=True)
    _add_eps(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--mu", type=float, default=0.5, help="PrivUnit2 budget split (default 0.5)")
    p.add_argument("--n-candidates", type=int, default=None, help="also report codec scales at this N")
    _add_output(p)

    p = sub.add_parser("mean", help="distributed mean estimation")
    _add_run_flags(p, MEAN_METHODS, "mmrc-pu")
    p.add_argument("--mu", type=float, default=0.5, help="PrivUnit2 budget split (default 0.5)")

    p = sub.add_parser("freq", help="distributed frequency estimation")
    _add_run_flags(p, FREQ_METHODS, "mmrc-ss")

    p = sub.add_parser("sweep", help="sweep one axis; one output row per grid value")
    p.add_argument("--task", choices=("mean", "freq"), default="mean")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--grid", required=True, help="comma-separated grid values")
    _add_run_flags(p, MEAN_METHODS + FREQ_METHODS, None)
    p.add_argument("--mu", type=float, default=0.5, help="PrivUnit2 budget split (default 0.5)")

    p = sub.add_parser("audit", help="certify the LDP guarantee of a codec")
    p.add_argument("--codec", choices=("raw", "mrc", "mmrc"), required=True)
    p.add_argument("--mech", choices=("privunit", "ss"), required=True)
    _add_eps(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--n-candidates", type=int, default=2, help="pool size N (default 2)")
    p.add_argument("--mode", choices=("exhaustive", "sampled", "approx"), default="exhaustive")
    p.add_argument("--trials", type=int, default=1000, help="pools for sampled/approx modes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c0", type=float, default=3.0, help="slack constant for approx mode")
    p.add_argument("--delta", type=float, default=1e-6, help="failure probability for approx mode")
    p.add_argument("--output", "-o", default=None)

    p = sub.add_parser("bounds", help="evaluate the candidate-count and privacy calculators")
    p.add_argument("--theorem", choices=THEOREMS, default="all")
    _add_eps(p, default=1.0)
    p.add_argument("--c", type=float, default=0.0, help="MRC utility constant c (mrc-n)")
    p.add_argument("--c0", type=float, default=3.0, help="slack constant c0 (approx-dp)")
    p.add_argument("--delta", type=float, default=1e-6, help="failure probability (approx-dp)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="relative slack (mmrc-*-n)")
    p.add_argument("--p0", type=float, default=0.8, help="PrivUnit2 cap probability (mmrc-pu-n)")
    p.add_argument("--n", type=float, default=1e4, help="candidate count (rho)")
    _add_output(p)
    return parser


def _eps(args) -> float:
    if getattr(args, "eps_bits", None) is not None:
        return args.eps_bits * math.log(2.0)
    return args.eps


def _seed(args) -> int:
    env = os.environ.get("LDPC_SEED")
    return int(env) if env not in (None, "") else args.seed


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _rows_to_text(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    lines += [",".join("" if r[k] is None else str(r[k]) for k in keys) for r in rows]
    return "\n".join(lines) + "\n"


def _config(args, task: str, method: str):
    common = dict(
        n=args.n,
        d=args.d,
        eps=_eps(args),
        method=method,
        bits=args.bits,
        trials=args.trials,
        master_seed=_seed(args),
        mode=args.mode,
    )
    if task == "mean":
        return MeanConfig(mu=args.mu, **common)
    return FreqConfig(**common)


def _cmd_run(args, task: str) -> None:
    cfg = _config(args, task, args.method)
    res = [run(cfg, threads=args.threads)]
    _emit(results_to_csv(res) if args.format == "csv" else results_to_json(res), args.output)


def _cmd_sweep(args) -> None:
    task = args.task
    methods = MEAN_METHODS if task == "mean" else FREQ_METHODS
    method = args.method or methods[-1]
    if method not in methods:
        raise ValueError(f"method {method!r} does not match task {task!r}")
    base = _config(args, task, method)
    grid = [g for g in args.grid.split(",") if g.strip()]
    res = sweep(args.axis, grid, base, threads=args.threads)
    _emit(results_to_csv(res) if args.format == "csv" else results_to_json(res), args.output)


def _params(args):
    eps = _eps(args)
    if args.mech == "privunit":
        return calibrate_privunit(eps, args.d, args.mu)
    return calibrate_ss(eps, args.d)


def _cmd_calibrate(args) -> None:
    params = _params(args)
    mech = as_cap_mechanism(params)
    native = mech.native_scales()
    row = dict(params.to_dict())
    row.update(cap_mass=mech.cap_mass, log_c1=mech.log_c1, log_c2=mech.log_c2, m=native.m, b=native.b)
    if args.n_candidates:
        n = args.n_candidates
        a, b = mrc_scales(params, n), mmrc_scales(params, n)
        row.update(N=n, m_mrc=a.m, b_mrc=a.b, p_mrc=a.p_cap, m_mmrc=b.m, b_mmrc=b.b, p_mmrc=b.p_cap)
    _emit(_rows_to_text([row], args.format), args.output)


def _cmd_audit(args) -> int:
    mech = as_cap_mechanism(_params(args))
    if args.mode == "approx":
        if args.codec != "mrc":
            raise ValueError("approx mode applies to the mrc codec")
        rep = check_approx_ldp(mech, args.n_candidates, approx_dp_params(mech.eps, args.c0, args.delta), args.trials, _seed(args))
        doc = dict(rep.__dict__)
        doc["pass"] = doc.pop("passed")
        doc.update(codec="mrc", mech=mech.kind)
        _emit(json.dumps(doc, sort_keys=True), args.output)
        return 0
    rep = certify_pure_ldp(args.codec, mech, args.n_candidates, args.mode, args.trials, _seed(args))
    _emit(rep.to_json(), args.output)
    return 0


def bounds_rows(args) -> list[dict]:
    eps = _eps(args)
    which = THEOREMS[:-1] if args.theorem == "all" else (args.theorem,)
    rows = []
    for th in which:
        if th == "mrc-n":
            r = mrc_candidate_count(eps, args.c)
            rows.append(dict(theorem=th, quantity="N", value=r.n, note=f"alpha={r.alpha:.6g} vacuous={r.vacuous}"))
        elif th == "approx-dp":
            r = approx_dp_params(eps, args.c0, args.delta)
            note = f"a0={r.a0:.6g} eps_total={r.eps_total:.6g} n_required={r.n_required}"
            rows.append(dict(theorem=th, quantity="eps0", value=f"{r.eps0:.6g}", note=note))
        elif th == "rho":
            rho = rho_from_n(eps, args.n)
            diag = excess_error_bound(eps, int(args.n), 4.0)
            rows.append(dict(theorem=th, quantity="rho", value=f"{rho:.6g}", note=f"excess_error_unit_diameter={diag:.6g}"))
        elif th == "mmrc-pu-n":
            rows.append(dict(theorem=th, quantity="N", value=mmrc_pu_candidate_count(eps, args.p0, args.lam), note=""))
        elif th == "mmrc-ss-n":
            rows.append(dict(theorem=th, quantity="N", value=mmrc_ss_candidate_count(eps, args.lam), note=""))
    return rows


def _cmd_bounds(args) -> None:
    rows = bounds_rows(args)
    _emit(_rows_to_text(rows, args.format), args.output)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "calibrate":
            _cmd_calibrate(args)
        elif args.command in ("mean", "freq"):
            _cmd_run(args, args.command)
        elif args.command == "sweep":
            _cmd_sweep(args)
        elif args.command == "audit":
            return _cmd_audit(args)
        elif args.command == "bounds":
            _cmd_bounds(args)
    except InfeasibleError as exc:
        print(f"ldpc: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalDegeneracyError as exc:
        print(f"ldpc: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValueError, LdpcError) as exc:
        print(f"ldpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
