"""Command-line interface.

Subcommands: ``postcode`` (solve and certify the remap matrix),
``pipeline`` (Monte Carlo diagnostics of the end-to-end transmission),
``simulate`` (run experiments / scheme comparisons), ``verify``
(convergence and comparison acceptance suites).  Configuration comes from
one JSON file; flags override only the seed and the output directory.

Exit codes are a stable contract: 0 ok, 1 config error, 2 infeasible
post-coding program, 3 property violation, 4 schedule violation.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from airfed import rng as rngmod
from airfed.channel import AwgnChannel, make_grid, transition_matrix
from airfed.codec import ScaleCodec, encode_vector, assemble_many
from airfed.channel import adc_quantize_many, dac_randomize_many
from airfed.config import (
    ConfigError,
    LoadedExperiment,
    _Section,
    load_config,
    parse_experiment,
    parse_objective,
)
from airfed.fedsim import (
    ChannelInfeasible,
    ExperimentConfig,
    SchemeConfig,
    ScheduleViolation,
    StepsizeSchedule,
    build_postcode,
)
from airfed.harness import (
    atomic_write_text,
    compare_schemes,
    ledger_costs,
    run_seeds,
    verify_theorem1,
    verify_theorem2,
    write_comparison_csv,
    write_ledger_csv,
    write_metrics_csv,
    _csv_text,
)
from airfed.postcode import (
    apply_postcode_many,
    build_lp,
    certify,
    feasible_construction,
    solve_lp,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_PROPERTY = 3
EXIT_SCHEDULE = 4


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; that code means 'infeasible'
    here, so usage problems are remapped to the config error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _build_parser() -> _Parser:
    parser = _Parser(prog="airfed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("postcode", "solve and certify the post-coding matrix"),
        ("pipeline", "Monte Carlo diagnostics of the transmit pipeline"),
        ("simulate", "run experiments / scheme comparisons"),
        ("verify", "run a verification suite against its criteria"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs")
        p.add_argument("--quiet", action="store_true", help="suppress stdout")
        if name == "postcode":
            p.add_argument(
                "--crosscheck",
                action="store_true",
                help="also build the banded constructive solution and compare",
            )
    return parser


def _emit(quiet: bool, text: str) -> None:
    if not quiet:
        sys.stdout.write(text + "\n")


# ---------------------------------------------------------------------------
# postcode


def cmd_postcode(cfg: dict, out: str | None, quiet: bool, crosscheck: bool) -> int:
    grid_sec = _Section(cfg, "grid", {"q"})
    chan_sec = _Section(cfg, "channel", {"sigma_c"})
    q = grid_sec.get("q", int)
    sigma_c = chan_sec.get("sigma_c", float)
    grid = make_grid(q)
    tm = transition_matrix(grid, sigma_c)
    hm = solve_lp(build_lp(tm, grid))
    if hm is None:
        _emit(quiet, f"infeasible: no unbiased post-coding for q={q}, "
                     f"sigma_c={sigma_c}")
        return EXIT_INFEASIBLE
    report = certify(hm, tm, grid)

    h_rows = [
        {f"col_{j}": hm.h[i, j] for j in range(q)} for i in range(q)
    ]
    cert_rows = [
        {
            "level_index": i,
            "level": grid.levels[i],
            "mean": report.mean[i],
            "mse_about_level": report.mse[i],
            "constrained": bool(0 < i < q - 1),
        }
        for i in range(q)
    ]
    summary_rows = [
        {
            "v_star": hm.v_star,
            "source": hm.source,
            "mean_violation": report.mean_violation,
            "mse_excess": report.mse_excess,
            "certified": report.ok,
        }
    ]
    texts = {
        "h_matrix.csv": _csv_text(list(h_rows[0].keys()), h_rows),
        "certification.csv": _csv_text(list(cert_rows[0].keys()), cert_rows),
        "postcode_summary.csv": _csv_text(list(summary_rows[0].keys()), summary_rows),
    }
    if crosscheck:
        fc = feasible_construction(tm, grid)
        row = {
            "construction_feasible": fc is not None,
            "construction_v": float("nan") if fc is None else fc.v_star,
            "lp_v_star": hm.v_star,
            "lp_dominates": True if fc is None else hm.v_star <= fc.v_star + 1e-12,
        }
        texts["construction_crosscheck.csv"] = _csv_text(list(row.keys()), [row])
    for name, text in texts.items():
        _emit(quiet, f"# {name}\n{text}")
        if out:
            atomic_write_text(f"{out}/{name}", text)
    if out:
        from airfed import plots

        plots.plot_postcode_matrix(hm, grid, out)
    return EXIT_OK if report.ok else EXIT_PROPERTY


# ---------------------------------------------------------------------------
# pipeline


def cmd_pipeline(cfg: dict, out: str | None, seed: int | None, quiet: bool) -> int:
    grid_sec = _Section(cfg, "grid", {"q"})
    chan_sec = _Section(cfg, "channel", {"sigma_c"})
    codec_sec = _Section(cfg, "codec", {"omega", "beta_max"})
    pipe_sec = _Section(
        cfg,
        "pipeline",
        {"dim", "trials", "low", "high", "probe", "seed", "corrupt_h_row"},
    )
    q = grid_sec.get("q", int)
    sigma_c = chan_sec.get("sigma_c", float)
    trials = pipe_sec.get("trials", int, 100_000)
    base_seed = seed if seed is not None else pipe_sec.get("seed", int, 0)

    grid = make_grid(q)
    ch = AwgnChannel(sigma_c)
    try:
        hm = build_postcode(grid, sigma_c)
    except ChannelInfeasible as exc:
        _emit(quiet, f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    codec = ScaleCodec(
        codec_sec.get("omega", float),
        grid.delta,
        codec_sec.get("beta_max", int, 63),
    )

    probe_rng = rngmod.stream(base_seed, 5)
    if "probe" in pipe_sec.data:
        u = np.asarray([float(v) for v in pipe_sec.get("probe", list)])
    else:
        dim = pipe_sec.get("dim", int, 16)
        low = pipe_sec.get("low", float, -2.0)
        high = pipe_sec.get("high", float, 2.0)
        u = probe_rng.uniform(low, high, size=dim)

    row_cdf = hm.row_cdf()
    corrupt = pipe_sec.get("corrupt_h_row", int, -1)
    if corrupt >= 0:
        # negative control: damage one row's distribution without
        # renormalizing, so the diagnostics must flag the bias
        h_bad = hm.h.copy()
        h_bad.flags.writeable = True
        h_bad[corrupt] *= 0.9
        row_cdf = np.cumsum(h_bad, axis=1)

    mc_rng = rngmod.stream(base_seed, 6)
    enc = encode_vector(u, codec)
    d = u.size
    err_sum = np.zeros(d)
    err_sq_sum = np.zeros(d)
    total_sq = []
    chunk = max(1, min(trials, 200_000 // max(d, 1)))
    done = 0
    while done < trials:
        nb = min(chunk, trials - done)
        psi_tile = np.tile(enc.psi, (nb, 1))
        sent = dac_randomize_many(psi_tile, grid, mc_rng)
        received = adc_quantize_many(
            grid.levels[sent] + ch.sigma_c * mc_rng.standard_normal(sent.shape),
            grid,
        )
        remapped = apply_postcode_many(row_cdf, received, mc_rng)
        u_hat = assemble_many(
            grid.levels[remapped], np.tile(enc.beta, (nb, 1)), codec
        )
        err = u_hat - u[None, :]
        err_sum += err.sum(axis=0)
        err_sq_sum += (err**2).sum(axis=0)
        total_sq.append((err**2).sum(axis=1))
        done += nb
    mean_err = err_sum / trials
    err_sq_mean = err_sq_sum / trials
    per_coord_var = np.maximum(err_sq_mean - mean_err**2, 1e-300)
    se = np.sqrt(per_coord_var / trials)
    total_sq = np.concatenate(total_sq)
    mse = float(np.mean(total_sq))
    mse_se = float(np.std(total_sq, ddof=1) / np.sqrt(trials))
    bound = (4.0 * hm.v_star + grid.delta**2) * (
        4.0 * float(u @ u) + codec.omega**2 * d
    )

    mean_ok = bool(np.all(np.abs(mean_err) <= 5.0 * se))
    mse_ok = mse <= bound + 5.0 * mse_se
    rows = [
        {
            "coordinate": i,
            "u": u[i],
            "mean_error": mean_err[i],
            "stderr": se[i],
            "err_sq_mean": err_sq_mean[i],
        }
        for i in range(d)
    ]
    summary = [
        {
            "trials": trials,
            "mse": mse,
            "mse_stderr": mse_se,
            "bound": bound,
            "v_star": hm.v_star,
            "postcode_source": hm.source,
            "mean_within_5se": mean_ok,
            "mse_within_bound": mse_ok,
        }
    ]
    texts = {
        "pipeline.csv": _csv_text(list(rows[0].keys()), rows),
        "pipeline_summary.csv": _csv_text(list(summary[0].keys()), summary),
    }
    for name, text in texts.items():
        _emit(quiet, f"# {name}\n{text}")
        if out:
            atomic_write_text(f"{out}/{name}", text)
    if out:
        from airfed import plots

        plots.plot_pipeline_errors(u, err_sq_mean, bound, out)
    return EXIT_OK if (mean_ok and mse_ok) else EXIT_PROPERTY


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(
    cfg: dict, out: str | None, seed: int | None, jobs: int, quiet: bool
) -> int:
    loaded = parse_experiment(cfg, seed_override=seed)
    comparison = compare_schemes(
        loaded.experiment, loaded.schemes, loaded.seeds, loaded.budget, jobs=jobs
    )
    rows = comparison.summary_rows()
    text = _csv_text(list(rows[0].keys()), rows)
    _emit(quiet, f"# comparison.csv\n{text}")
    if out:
        write_comparison_csv(f"{out}/comparison.csv", comparison)
        for name, runs in comparison.runs.items():
            write_metrics_csv(f"{out}/metrics_{name}.csv", runs, loaded.budget)
            if loaded.experiment.keep_ledger:
                write_ledger_csv(
                    f"{out}/ledger_{name}.csv", runs[0], loaded.budget
                )
        from airfed import plots

        plots.plot_scheme_losses(comparison.runs, out)
        plots.plot_scheme_costs(comparison.runs, loaded.budget, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _verify_rows(checks: list[tuple[str, float, str, bool]]) -> list[dict]:
    return [
        {"criterion": name, "value": value, "requirement": req, "passed": ok}
        for name, value, req, ok in checks
    ]


def cmd_verify(
    cfg: dict, out: str | None, seed: int | None, jobs: int, quiet: bool
) -> int:
    ver_sec = _Section(
        cfg,
        "verify",
        {
            "suite",
            "workers_large",
            "rounds_pair",
            "eta_scale",
            "slope_range",
            "m_ratio_range",
            "ratio_range",
            "accuracy_gap_max",
            "symbol_ratio_max",
            "noisy_worse_min_fraction",
            "tail_start_fraction",
        },
    )
    suite = ver_sec.get("suite", str)
    loaded = parse_experiment(cfg, seed_override=seed)
    checks: list[tuple[str, float, str, bool]] = []
    runs_for_figures = None

    if suite == "theorem1":
        lo, hi = ver_sec.get("slope_range", list, [-1.3, -0.7])
        rlo, rhi = ver_sec.get("m_ratio_range", list, [1.5, 2.5])
        tail = ver_sec.get("tail_start_fraction", float, 0.25)
        workers_large = ver_sec.get(
            "workers_large", int, 2 * loaded.experiment.objective.workers
        )
        raw_large = dict(cfg)
        raw_large["objective"] = dict(cfg["objective"], workers=workers_large)
        obj_large = parse_objective(raw_large)
        config_large = replace(loaded.experiment, objective=obj_large)
        report = verify_theorem1(
            loaded.experiment, config_large, loaded.seeds, jobs=jobs,
            tail_start_fraction=tail,
        )
        checks.append(
            (
                "tail_slope",
                report.slope.slope,
                f"in [{lo}, {hi}]",
                lo <= report.slope.slope <= hi,
            )
        )
        checks.append(
            (
                "steady_state_m_ratio",
                report.m_ratio,
                f"in [{rlo}, {rhi}]",
                rlo <= report.m_ratio <= rhi,
            )
        )
        checks.append(
            ("sync_exact", float(report.sync_exact), "== 1", report.sync_exact)
        )
        if out:
            from airfed import plots

            plots.plot_tail_decay(report, out)
    elif suite == "theorem2":
        pair = ver_sec.get("rounds_pair", list, [4000, 16000])
        eta_scale = ver_sec.get("eta_scale", float, 1.0)
        rlo, rhi = ver_sec.get("ratio_range", list, [0.25, 1.0])
        n_small, n_large = int(pair[0]), int(pair[1])
        cfg_small = replace(
            loaded.experiment,
            rounds=n_small,
            record_every=1,
            schedule=StepsizeSchedule(
                kind="constant", eta=eta_scale / np.sqrt(n_small)
            ),
        )
        cfg_large = replace(
            loaded.experiment,
            rounds=n_large,
            record_every=1,
            schedule=StepsizeSchedule(
                kind="constant", eta=eta_scale / np.sqrt(n_large)
            ),
        )
        report = verify_theorem2(cfg_small, cfg_large, loaded.seeds, jobs=jobs)
        checks.append(
            (
                "stationarity_ratio",
                report.ratio,
                f"in [{rlo}, {rhi}]",
                rlo <= report.ratio <= rhi,
            )
        )
        if out:
            from airfed import plots

            plots.plot_stationarity(report, out)
    elif suite == "schemes":
        gap_max = ver_sec.get("accuracy_gap_max", float, 0.01)
        ratio_max = ver_sec.get("symbol_ratio_max", float, 1.0 / 3.0)
        worse_frac = ver_sec.get("noisy_worse_min_fraction", float, 0.9)
        comparison = compare_schemes(
            loaded.experiment, loaded.schemes, loaded.seeds, loaded.budget,
            jobs=jobs,
        )
        runs_for_figures = comparison
        s = comparison.summaries
        gap = abs(
            s["ours"].final_accuracy_mean - s["coded"].final_accuracy_mean
        )
        checks.append(
            ("accuracy_gap_ours_vs_coded", gap, f"<= {gap_max}", gap <= gap_max)
        )
        ratio = s["ours"].costs.total_symbols / s["coded"].costs.total_symbols
        checks.append(
            ("symbol_ratio_ours_vs_coded", ratio, f"<= {ratio_max}",
             ratio <= ratio_max)
        )
        noisy_losses = np.array(
            [r.loss[-1] for r in comparison.runs["noisy"]]
        )
        ours_losses = np.array([r.loss[-1] for r in comparison.runs["ours"]])
        frac = float(np.mean(noisy_losses > ours_losses))
        checks.append(
            (
                "noisy_worse_than_ours_fraction",
                frac,
                f">= {worse_frac}",
                frac >= worse_frac,
            )
        )
        ledger_ok = all(x.ledger_matches for x in s.values())
        checks.append(
            ("ledger_matches_prediction", float(ledger_ok), "== 1", ledger_ok)
        )
    else:
        raise ConfigError(
            f"verify.suite: unknown suite {suite!r} "
            "(expected theorem1 | theorem2 | schemes)"
        )

    rows = _verify_rows(checks)
    text = _csv_text(list(rows[0].keys()), rows)
    _emit(quiet, f"# verification_report.csv\n{text}")
    if out:
        atomic_write_text(f"{out}/verification_report.csv", text)
        if runs_for_figures is not None:
            from airfed import plots

            for name, runs in runs_for_figures.runs.items():
                write_metrics_csv(
                    f"{out}/metrics_{name}.csv", runs, loaded.budget
                )
            write_comparison_csv(f"{out}/comparison.csv", runs_for_figures)
            plots.plot_scheme_losses(runs_for_figures.runs, out)
            plots.plot_scheme_costs(runs_for_figures.runs, loaded.budget, out)
    return EXIT_OK if all(c[3] for c in checks) else EXIT_PROPERTY


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "postcode":
            return cmd_postcode(cfg, args.out, args.quiet, args.crosscheck)
        if args.command == "pipeline":
            return cmd_pipeline(cfg, args.out, args.seed, args.quiet)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.seed, args.jobs, args.quiet)
        return cmd_verify(cfg, args.out, args.seed, args.jobs, args.quiet)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except ScheduleViolation as exc:
        sys.stderr.write(f"schedule violation: {exc}\n")
        return EXIT_SCHEDULE
    except ChannelInfeasible as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
