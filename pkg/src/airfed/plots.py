"""Figure rendering for the CLI report path.

The harness itself emits CSV only; these helpers turn run results into
matplotlib figures saved next to the delimited output.  Headless by
construction (Agg backend).
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (6.4, 4.2),
        "font.size": 10,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "savefig.dpi": 130,
    }
)

_SCHEME_COLORS = {
    "coded": "tab:blue",
    "noisy": "tab:red",
    "postcode": "tab:orange",
    "sync": "tab:green",
    "ours": "tab:purple",
}


def _save(fig, out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_scheme_losses(runs_by_scheme: dict, out_dir: str,
                       name: str = "loss_vs_round.png") -> str:
    """Seed-averaged training loss per scheme over rounds."""
    fig, ax = plt.subplots()
    for scheme, runs in runs_by_scheme.items():
        rounds = runs[0].rounds
        mean = np.mean([r.loss for r in runs], axis=0)
        ax.plot(rounds, mean, label=scheme,
                color=_SCHEME_COLORS.get(scheme))
    ax.set_xlabel("round")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, out_dir, name)


def plot_scheme_costs(runs_by_scheme: dict, budget, out_dir: str,
                      name: str = "symbols_vs_round.png") -> str:
    """Cumulative symbol cost per scheme over rounds."""
    from airfed.harness import coded_symbols_per_scalar

    fig, ax = plt.subplots()
    cps = coded_symbols_per_scalar(budget)
    for scheme, runs in runs_by_scheme.items():
        r = runs[0]
        bps = budget.symbols_per_bits(r.bits_per_exponent)
        total = (r.phys_cum * budget.physical_symbol_factor
                 + r.coded_scalar_cum * cps + r.beta_coord_cum * bps)
        ax.plot(r.rounds, total, label=scheme,
                color=_SCHEME_COLORS.get(scheme))
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative channel symbols")
    ax.legend()
    return _save(fig, out_dir, name)


def plot_tail_decay(report, out_dir: str,
                    name: str = "sq_dist_decay.png") -> str:
    """Log-log squared-distance trajectory with the fitted tail slope."""
    fig, ax = plt.subplots()
    runs = report.runs_small_m
    rounds = runs[0].rounds
    mean = np.mean([r.sq_dist for r in runs], axis=0)
    pos = rounds > 0
    ax.loglog(rounds[pos], mean[pos], label="mean sq dist")
    tail = report.slope
    ax.loglog(
        tail.tail_rounds,
        np.exp(tail.intercept + tail.slope * np.log(tail.tail_rounds)),
        "--",
        label=f"tail fit, slope {tail.slope:.2f}",
    )
    ax.set_xlabel("round")
    ax.set_ylabel("E |theta - theta*|^2")
    ax.legend()
    return _save(fig, out_dir, name)


def plot_stationarity(report, out_dir: str,
                      name: str = "stationarity_scaling.png") -> str:
    """Expected squared gradient norm against n on log-log axes."""
    fig, ax = plt.subplots()
    n_small = int(report.runs_small_n[0].rounds[-1])
    n_large = int(report.runs_large_n[0].rounds[-1])
    ax.loglog(
        [n_small, n_large],
        [report.metric_small_n, report.metric_large_n],
        "o-",
        label="E |grad F(theta_R)|^2",
    )
    ref = report.metric_small_n * np.sqrt(n_small / np.array([n_small, n_large]))
    ax.loglog([n_small, n_large], ref, "--", label="1/sqrt(n) reference")
    ax.set_xlabel("rounds n")
    ax.set_ylabel("stationarity metric")
    ax.legend()
    return _save(fig, out_dir, name)


def plot_postcode_matrix(hm, grid, out_dir: str,
                         name: str = "postcode_matrix.png") -> str:
    """Heat map of the remap matrix with its certified spread."""
    fig, ax = plt.subplots()
    im = ax.imshow(hm.h, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xlabel("output level index")
    ax.set_ylabel("input level index")
    ax.set_title(f"post-coding H ({hm.source}), v* = {hm.v_star:.3e}")
    fig.colorbar(im, ax=ax, shrink=0.85)
    return _save(fig, out_dir, name)


def plot_pipeline_errors(u, errors_sq_mean, bound, out_dir: str,
                         name: str = "pipeline_errors.png") -> str:
    """Per-coordinate mean squared reconstruction error vs the bound."""
    fig, ax = plt.subplots()
    idx = np.arange(u.size)
    ax.bar(idx, errors_sq_mean, label="measured E(u_hat - u)^2")
    ax.axhline(bound / u.size, color="tab:red", linestyle="--",
               label="bound / d")
    ax.set_xlabel("coordinate")
    ax.set_ylabel("squared error")
    ax.legend()
    return _save(fig, out_dir, name)
