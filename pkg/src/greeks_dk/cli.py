"""Command line driver: single runs, convergence sweeps, CLT screens, kernel checks."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import GreeksDkError
from .harness import clt_check, load_config, run_single, run_sweep, undersmoothed_h
from .kernels import _standard_factor, make_high_order_kernel, make_standard_kernel, verify_order
from .reports import emit_reports, render_clt_figure
from .streams import mix_seed


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="path to the JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; affects speed only, never results")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering, emit data files only")


def _load(args) -> tuple:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.base_seed = int(args.seed)
        cfg.raw.setdefault("sweep", {})["seeds"] = int(args.seed)
    out_dir = Path(args.out if args.out is not None else cfg.outputs)
    return cfg, out_dir


def _cmd_run(args) -> int:
    cfg, out_dir = _load(args)
    res = run_single(cfg, cfg.run_n, mix_seed(cfg.base_seed, cfg.run_n, 0))
    beta_true = cfg.true_greek()
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"h": res["h"], "seed": res["seed"], "beta_true": beta_true, "estimators": {}}
    print(f"n_draws={cfg.run_n}  h={res['h']:.6g}" +
          (f"  true={beta_true:.6g}" if beta_true is not None else ""))
    for name, report in res.items():
        if name in ("h", "seed", "errors"):
            continue
        payload["estimators"][name] = report.to_dict()
        est = report.beta_hat[0]
        line = f"  {name:16s} {est:+.6f}  (se {report.se[0]:.6f})"
        if beta_true is not None:
            line += f"  err {est - beta_true:+.6f}"
        print(line)
    for name, msg in res["errors"].items():
        payload["estimators"][name] = {"error": msg}
        print(f"  {name:16s} FAILED: {msg}")
    path = out_dir / "run_report.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    cfg, out_dir = _load(args)
    result = run_sweep(cfg, threads=args.threads)
    paths = emit_reports(result, out_dir, figures=not args.no_figures)
    for name, fit in result.slopes.items():
        print(f"  {name:16s} log-log MSE slope {fit['slope']:+.3f} +- {fit['slope_se']:.3f}")
    ratio = result.var_scaling_ratio
    if ratio is not None:
        print(f"  variance-scaling max/min ratio: {ratio:.3f}")
    if result.failed_cells:
        print(f"  note: {result.failed_cells}/{result.total_cells} cells had estimator errors")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def _cmd_clt(args) -> int:
    cfg, out_dir = _load(args)
    n_draws = args.n if args.n is not None else cfg.run_n
    h = args.h if args.h is not None else undersmoothed_h(cfg, n_draws)
    result = clt_check(cfg, n_draws, h, args.reps, threads=args.threads)
    pivots = np.array(result.pop("pivots"))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "clt.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if not args.no_figures:
        render_clt_figure(pivots, result, out_dir)
    print(
        f"N={result['n_draws']} h={result['h']:.4g} R={result['replications']}  "
        f"pivot mean={result['pivot_mean']:+.3f} var={result['pivot_var']:.3f} "
        f"skew={result['skewness']:+.3f} exkurt={result['excess_kurtosis']:+.3f}  "
        f"-> {'PASS' if result['pass'] else 'FAIL'}"
    )
    return 0 if result["pass"] else 1


def _cmd_kernels_verify(args) -> int:
    order = int(args.order)
    if order == 2:
        kernel = make_standard_kernel(args.name, 1)
    else:
        kernel = make_high_order_kernel(_standard_factor(args.name), order, 1)
    found = verify_order(kernel, max_order=8)
    ok = found == order
    print(f"kernel {args.name} declared order {order}: verified order {found} "
          f"-> {'OK' if ok else 'MISMATCH'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greeks-dk",
        description="Double-kernel Monte Carlo sensitivity estimation and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every estimator once at run.n_draws")
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="convergence sweep over sweep.Ns with replications")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_clt = sub.add_parser("clt", help="normality screen of the standardized pivot")
    _add_common(p_clt)
    p_clt.add_argument("--reps", type=int, default=200, help="replications (>= 200)")
    p_clt.add_argument("--n", type=int, default=None, help="sample size per replication")
    p_clt.add_argument("--h", type=float, default=None,
                       help="bandwidth (default: undersmoothed plan)")
    p_clt.set_defaults(func=_cmd_clt)

    p_k = sub.add_parser("kernels", help="kernel utilities")
    sub_k = p_k.add_subparsers(dest="kernels_command", required=True)
    p_kv = sub_k.add_parser("verify", help="verify a kernel's moment order")
    p_kv.add_argument("name", help="kernel family name (e.g. epanechnikov)")
    p_kv.add_argument("order", type=int, help="declared order (2, 4 or 6)")
    p_kv.set_defaults(func=_cmd_kernels_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GreeksDkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
