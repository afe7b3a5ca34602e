"""JSON experiment configuration.

A config is one self-contained JSON document with sections
{grid, channel, codec, objective, schedule, sync, scheme, seeds, budget}
plus {run} for loop parameters and optional per-command sections
({pipeline}, {verify}).  Loading is strict: unknown sections or keys and
missing required fields raise ConfigError with the dotted field path, so
the CLI can print actionable diagnostics and exit with the config error
code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from airfed.fedsim import (
    ExperimentConfig,
    SchemeConfig,
    StepsizeSchedule,
    SyncSchedule,
)
from airfed.harness import ChannelBudget
from airfed.objectives import (
    make_logistic_objective,
    make_nonconvex_objective,
    make_quadratic_objective,
)


class ConfigError(ValueError):
    """Malformed configuration; the message carries the field path."""


_SECTIONS = {
    "grid",
    "channel",
    "codec",
    "objective",
    "schedule",
    "sync",
    "scheme",
    "seeds",
    "budget",
    "run",
    "pipeline",
    "verify",
    "meta",
}


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return raw


_MISSING = object()


class _Section:
    def __init__(self, cfg: dict, name: str, known: set[str], required: bool = True):
        self.name = name
        if name not in cfg:
            if required:
                raise ConfigError(f"{name}: missing required section")
            self.data: dict = {}
        else:
            self.data = cfg[name]
            if not isinstance(self.data, dict):
                raise ConfigError(f"{name}: must be a JSON object")
        bad = set(self.data) - known
        if bad:
            raise ConfigError(f"{name}: unknown fields {sorted(bad)}")

    def get(self, field: str, kind, default=_MISSING) -> Any:
        if field not in self.data:
            if default is _MISSING:
                raise ConfigError(f"{self.name}.{field}: missing required field")
            return default
        value = self.data[field]
        try:
            if kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise ValueError
                return int(value)
            if kind is float:
                if isinstance(value, bool):
                    raise ValueError
                return float(value)
            if kind is bool:
                if not isinstance(value, bool):
                    raise ValueError
                return value
            if kind is str:
                if not isinstance(value, str):
                    raise ValueError
                return value
            if kind is list:
                if not isinstance(value, list):
                    raise ValueError
                return value
        except (TypeError, ValueError):
            pass
        raise ConfigError(
            f"{self.name}.{field}: expected {kind.__name__}, got {value!r}"
        )


def parse_seeds(cfg: dict) -> list[int]:
    sec = _Section(cfg, "seeds", {"base", "count", "list"})
    if "list" in sec.data:
        values = sec.get("list", list)
        if not values or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in values
        ):
            raise ConfigError("seeds.list: expected a non-empty list of integers")
        return [int(v) for v in values]
    base = sec.get("base", int)
    count = sec.get("count", int)
    if count < 1:
        raise ConfigError("seeds.count: must be >= 1")
    return [base + i for i in range(count)]


def parse_budget(cfg: dict) -> ChannelBudget:
    sec = _Section(
        cfg,
        "budget",
        {"bits_per_real", "pam_bits", "fec_overhead", "iq_halving"},
        required=False,
    )
    try:
        return ChannelBudget(
            bits_per_real=sec.get("bits_per_real", int, 32),
            pam_bits=sec.get("pam_bits", int, 2),
            fec_overhead=sec.get("fec_overhead", float, 0.2),
            iq_halving=sec.get("iq_halving", bool, True),
        )
    except ValueError as exc:
        raise ConfigError(f"budget: {exc}") from exc


def parse_objective(cfg: dict):
    sec = _Section(
        cfg,
        "objective",
        {
            "kind",
            "dim",
            "workers",
            "heterogeneity",
            "noise",
            "spectrum",
            "amplitude",
            "frequency",
            "rho",
            "samples_per_worker",
            "skew",
            "theta_scale",
            "batch_size",
            "seed",
        },
    )
    kind = sec.get("kind", str)
    dim = sec.get("dim", int)
    workers = sec.get("workers", int)
    seed = sec.get("seed", int, 0)
    try:
        if kind == "quadratic":
            spectrum = sec.get("spectrum", list, [0.5, 1.5])
            return make_quadratic_objective(
                dim,
                workers,
                heterogeneity=sec.get("heterogeneity", float, 0.0),
                noise=sec.get("noise", float, 1.0),
                spectrum=(float(spectrum[0]), float(spectrum[1])),
                seed=seed,
            )
        if kind == "nonconvex":
            return make_nonconvex_objective(
                dim,
                workers,
                amplitude=sec.get("amplitude", float, 0.2),
                frequency=sec.get("frequency", float, 2.0),
                noise=sec.get("noise", float, 1.0),
                rho=sec.get("rho", float, 0.5),
                seed=seed,
            )
        if kind == "logistic":
            return make_logistic_objective(
                dim,
                workers,
                samples_per_worker=sec.get("samples_per_worker", int, 400),
                skew=sec.get("skew", float, 0.7),
                theta_scale=sec.get("theta_scale", float, 3.0),
                batch_size=sec.get("batch_size", int, 4),
                seed=seed,
            )
    except (ValueError, RuntimeError) as exc:
        raise ConfigError(f"objective: {exc}") from exc
    raise ConfigError(
        f"objective.kind: unknown kind {kind!r} "
        "(expected quadratic | nonconvex | logistic)"
    )


def parse_schedule(cfg: dict) -> StepsizeSchedule:
    sec = _Section(cfg, "schedule", {"kind", "eta", "c", "k0"})
    kind = sec.get("kind", str)
    if kind == "constant":
        return StepsizeSchedule(kind="constant", eta=sec.get("eta", float))
    if kind == "inverse_time":
        return StepsizeSchedule(
            kind="inverse_time",
            c=sec.get("c", float),
            k0=sec.get("k0", float, 0.0),
        )
    raise ConfigError(
        f"schedule.kind: unknown kind {kind!r} (expected constant | inverse_time)"
    )


def parse_sync(cfg: dict) -> SyncSchedule:
    sec = _Section(cfg, "sync", {"kind", "first", "ratio", "interval"}, required=False)
    kind = sec.get("kind", str, "none")
    if kind == "none":
        return SyncSchedule(kind="none")
    if kind == "fixed_interval":
        return SyncSchedule(kind="fixed_interval", interval=sec.get("interval", int))
    if kind == "geometric":
        return SyncSchedule(
            kind="geometric",
            first=sec.get("first", int),
            ratio=sec.get("ratio", float),
        )
    raise ConfigError(
        f"sync.kind: unknown kind {kind!r} "
        "(expected none | fixed_interval | geometric)"
    )


@dataclass
class LoadedExperiment:
    experiment: ExperimentConfig
    budget: ChannelBudget
    seeds: list[int]
    schemes: list[str]
    raw: dict


def parse_experiment(cfg: dict, seed_override: int | None = None) -> LoadedExperiment:
    grid_sec = _Section(cfg, "grid", {"q"})
    chan_sec = _Section(cfg, "channel", {"sigma_c"})
    codec_sec = _Section(cfg, "codec", {"omega", "beta_max"}, required=False)
    run_sec = _Section(
        cfg,
        "run",
        {
            "rounds",
            "record_every",
            "theta0_offset",
            "stepsize_c0",
            "keep_ledger",
        },
    )
    scheme_sec = _Section(cfg, "scheme", {"name", "compare"})
    if "compare" in scheme_sec.data:
        schemes = scheme_sec.get("compare", list)
        if not schemes or not all(isinstance(s, str) for s in schemes):
            raise ConfigError("scheme.compare: expected a non-empty list of names")
    else:
        schemes = [scheme_sec.get("name", str)]
    try:
        for s in schemes:
            SchemeConfig(s)
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from exc

    seeds = parse_seeds(cfg)
    if seed_override is not None:
        seeds = [int(seed_override)]
    objective = parse_objective(cfg)
    experiment = ExperimentConfig(
        objective=objective,
        scheme=SchemeConfig(schemes[0]),
        schedule=parse_schedule(cfg),
        sync=parse_sync(cfg),
        rounds=run_sec.get("rounds", int),
        seed=seeds[0],
        q=grid_sec.get("q", int),
        sigma_c=chan_sec.get("sigma_c", float),
        omega=codec_sec.get("omega", float, 0.05),
        beta_max=codec_sec.get("beta_max", int, 63),
        theta0_offset=run_sec.get("theta0_offset", float, 1.0),
        record_every=run_sec.get("record_every", int, 1),
        stepsize_c0=run_sec.get("stepsize_c0", float, 0.5),
        keep_ledger=run_sec.get("keep_ledger", bool, False),
    )
    return LoadedExperiment(
        experiment=experiment,
        budget=parse_budget(cfg),
        seeds=seeds,
        schemes=schemes,
        raw=cfg,
    )
