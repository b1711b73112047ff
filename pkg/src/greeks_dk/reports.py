"""Report emission: delimited data files, run metadata and rendered figures.

``emit_reports`` writes, per sweep: ``sweep.csv`` (one row per estimator,
size, replication), ``aggregate.csv`` (bias/variance/MSE per estimator and
size plus fitted slopes), ``run.json`` (config echo, versions, seeds,
derived quantities), gnuplot-ready ``.dat`` files for the log-log MSE plots,
and PNG figures of the same curves. All delimited output is deterministic:
repr-roundtrip floats, fixed row order, no timestamps.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import scipy

from . import __version__
from .harness import ESTIMATOR_ORDER, SweepResult

__all__ = ["emit_reports", "render_sweep_figures", "render_clt_figure"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write report file {path}: {exc}") from exc


def emit_reports(result: SweepResult, out_dir, figures: bool = True) -> list[Path]:
    """Write all sweep artifacts into ``out_dir``; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    d = result.rows[0]["estimate"].shape[0] if result.rows else 1
    est_cols = [f"estimate_{k}" for k in range(d)] if d > 1 else ["estimate"]
    se_cols = [f"se_{k}" for k in range(d)] if d > 1 else ["se"]

    sweep_path = out / "sweep.csv"
    rows = []
    for r in result.rows:
        rows.append(
            [r["estimator"], r["N"], r["rep"], r["seed"], r["h"]]
            + [float(x) for x in r["estimate"]]
            + [float(x) for x in r["se"]]
        )
    _write_csv(sweep_path, ["estimator", "N", "rep", "seed", "h"] + est_cols + se_cols, rows)
    written.append(sweep_path)

    agg_path = out / "aggregate.csv"
    agg_rows = []
    for a in result.aggregates:
        slope = result.slopes.get(a["estimator"], {})
        agg_rows.append(
            [
                a["estimator"],
                a["N"],
                a["h"],
                a["replications"],
                a["bias"],
                a["variance"],
                a["mse"],
                a["mse_se"],
                slope.get("slope"),
                slope.get("slope_se"),
                a["var_scaled"],
                a["pivot_mean"],
                a["pivot_var"],
            ]
        )
    _write_csv(
        agg_path,
        [
            "estimator",
            "N",
            "h",
            "replications",
            "bias",
            "variance",
            "mse",
            "mse_se",
            "slope",
            "slope_se",
            "var_scaled",
            "pivot_mean",
            "pivot_var",
        ],
        agg_rows,
    )
    written.append(agg_path)

    run_path = out / "run.json"
    payload = {
        "config": result.config_echo,
        "versions": {
            "greeks_dk": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "base_seed": result.base_seed,
        "beta_true": result.beta_true,
        "h_by_N": {str(k): v for k, v in result.h_by_n.items()},
        "slopes": result.slopes,
        "var_scaling_ratio": result.var_scaling_ratio,
        "failed_cells": result.failed_cells,
        "total_cells": result.total_cells,
    }
    try:
        run_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report file {run_path}: {exc}") from exc
    written.append(run_path)

    for name in ESTIMATOR_ORDER:
        pts = [a for a in result.aggregates if a["estimator"] == name]
        if not pts:
            continue
        dat_path = out / f"mse_loglog_{name}.dat"
        lines = ["# N mse bias variance"]
        for a in pts:
            lines.append(
                f'{a["N"]} {_fmt(a["mse"])} {_fmt(a["bias"])} {_fmt(a["variance"])}'
            )
        try:
            dat_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write report file {dat_path}: {exc}") from exc
        written.append(dat_path)

    if figures:
        written.extend(render_sweep_figures(result, out))
    return written


def render_sweep_figures(result: SweepResult, out_dir) -> list[Path]:
    """Render the log-log MSE curves and the variance-scaling table as PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    have_mse = [a for a in result.aggregates if a["mse"] is not None]
    if have_mse:
        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        for name in ESTIMATOR_ORDER:
            pts = sorted(
                (a for a in have_mse if a["estimator"] == name), key=lambda a: a["N"]
            )
            if not pts:
                continue
            ns = [a["N"] for a in pts]
            mse = [a["mse"] for a in pts]
            label = name
            slope = result.slopes.get(name)
            if slope:
                label += f' (slope {slope["slope"]:.2f})'
            ax.loglog(ns, mse, marker="o", label=label)
        ax.set_xlabel("sample size N")
        ax.set_ylabel("MSE")
        ax.set_title("MSE convergence")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
        path = out / "mse_loglog.png"
        fig.savefig(path, dpi=130, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    scaled = [
        a for a in result.aggregates if a["estimator"] == "beta_tilde" and a["var_scaled"]
    ]
    if scaled:
        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        ns = [a["N"] for a in scaled]
        vals = [a["var_scaled"] for a in scaled]
        ax.semilogx(ns, vals, marker="s")
        ax.set_xlabel("sample size N")
        ax.set_ylabel("Var * N * h^(d+2)")
        ax.set_title("variance scaling")
        ax.grid(True, which="both", alpha=0.3)
        path = out / "variance_scaling.png"
        fig.savefig(path, dpi=130, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def render_clt_figure(pivots: np.ndarray, stats_dict: dict, out_dir) -> Path:
    """Histogram of standardized pivots against the standard normal curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    ax.hist(pivots, bins=30, density=True, alpha=0.65, label="pivots")
    grid = np.linspace(-4, 4, 200)
    ax.plot(grid, np.exp(-0.5 * grid**2) / np.sqrt(2 * np.pi), "k--", label="standard normal")
    ax.set_title(
        f'pivot screen: mean {stats_dict["pivot_mean"]:.3f}, var {stats_dict["pivot_var"]:.3f}, '
        f'{"PASS" if stats_dict["pass"] else "FAIL"}'
    )
    ax.legend(fontsize=8)
    path = out / "clt_pivots.png"
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path
