"""Adaptive over-the-air federated SGD.

Implements the worker/server round protocol over the simulated physical
path, the five transmission schemes compared in the experiments, stepsize
and synchronization schedules with their validity conditions, and the
round-by-round experiment driver.

Scheme definitions:
  coded     everything on the error-free coded channel (plain distributed
            SGD with exact payloads);
  noisy     values pushed straight through DAC/AWGN/ADC, no correction,
            no sync (saturates outside the grid range);
  postcode  scale-adaptive codec plus post-coding, no sync;
  sync      raw DAC/AWGN/ADC path plus periodic parameter sync;
  ours      codec, post-coding, and periodic sync together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from airfed import rng as rngmod
from airfed.channel import (
    AwgnChannel,
    QuantizationGrid,
    adc_quantize_many,
    dac_randomize_many,
    make_grid,
    transition_matrix,
)
from airfed.codec import ScaleCodec, assemble_many, beta_of_many, psi_of_many
from airfed.postcode import (
    PostcodeMatrix,
    apply_postcode_many,
    build_lp,
    feasible_construction,
    solve_lp,
)

SCHEMES = ("coded", "noisy", "postcode", "sync", "ours")


class ScheduleViolation(ValueError):
    """A stepsize or synchronization validity condition failed."""

    def __init__(self, report: "ValidationReport"):
        super().__init__(report.message)
        self.report = report


class ChannelInfeasible(RuntimeError):
    """No certified post-coding matrix exists for the configured channel."""


@dataclass(frozen=True)
class SchemeConfig:
    name: str

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValueError(f"unknown scheme {self.name!r}; expected one of {SCHEMES}")

    @property
    def uses_channel(self) -> bool:
        return self.name != "coded"

    @property
    def uses_codec(self) -> bool:
        return self.name in ("postcode", "ours")

    @property
    def uses_sync(self) -> bool:
        return self.name in ("sync", "ours")


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class StepsizeSchedule:
    """Constant eta, or inverse-time eta_k = c / (mu * (k + k0))."""

    kind: str
    eta: float = 0.0
    c: float = 0.0
    k0: float = 0.0

    def etas(self, n: int, mu: float) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=float)
        if self.kind == "constant":
            return np.full(n, float(self.eta))
        if self.kind == "inverse_time":
            if mu <= 0:
                raise ValueError("inverse-time stepsizes need mu > 0")
            return self.c / (mu * (k + self.k0))
        raise ValueError(f"unknown stepsize kind {self.kind!r}")


@dataclass(frozen=True)
class SyncSchedule:
    """Synchronization rounds: geometric, fixed-interval, or none."""

    kind: str
    first: int = 1
    ratio: float = 2.0
    interval: int = 1

    def rounds(self, n: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(0, dtype=np.int64)
        if self.kind == "fixed_interval":
            if self.interval < 1:
                raise ValueError("sync interval must be >= 1")
            return np.arange(self.interval, n + 1, self.interval, dtype=np.int64)
        if self.kind == "geometric":
            if self.first < 1 or self.ratio <= 1.0:
                raise ValueError("geometric sync needs first >= 1 and ratio > 1")
            out = []
            t = int(self.first)
            while t <= n:
                out.append(t)
                t = max(t + 1, int(np.ceil(self.ratio * t)))
            return np.asarray(out, dtype=np.int64)
        raise ValueError(f"unknown sync kind {self.kind!r}")


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    message: str
    violations: tuple = ()


def validate_stepsizes(
    schedule: StepsizeSchedule, objective, n: int, c0: float = 0.5
) -> ValidationReport:
    """Check the cap eta_k <= c0/(ell^2 + L) and the decay-compatibility
    condition eta_k <= (1 + eta_{k+1} mu / 8) eta_{k+1} for all k <= n."""
    mu = max(float(objective.mu), 0.0)
    etas = schedule.etas(n, objective.mu if objective.mu > 0 else 1.0)
    cap = c0 / (objective.ell**2 + objective.smoothness)
    bad = []
    over = np.nonzero(etas > cap * (1.0 + 1e-12))[0]
    for i in over[:5]:
        bad.append(
            f"eta_{i + 1}={etas[i]:.6g} exceeds c0/(ell^2+L)={cap:.6g}"
        )
    lhs = etas[:-1]
    rhs = (1.0 + etas[1:] * mu / 8.0) * etas[1:]
    grow = np.nonzero(lhs > rhs * (1.0 + 1e-12))[0]
    for i in grow[:5]:
        bad.append(
            f"eta_{i + 1}={lhs[i]:.6g} exceeds (1 + eta_{i + 2}*mu/8)*eta_{i + 2}"
            f"={rhs[i]:.6g}"
        )
    if bad:
        return ValidationReport(False, "; ".join(bad), tuple(bad))
    return ValidationReport(True, "stepsize schedule valid")


def validate_sync(
    sync: SyncSchedule, etas: np.ndarray, smoothness: float, n: int
) -> ValidationReport:
    """Check T(tau_i) - T(tau_{i-1}) <= 1/(2L) on every inter-sync gap,
    including the stretch from the last sync to round n."""
    t_cum = np.concatenate([[0.0], np.cumsum(etas)])
    taus = sync.rounds(n)
    bounds = np.concatenate([[0], taus, [n]]).astype(np.int64)
    budget = 1.0 / (2.0 * smoothness)
    bad = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        gap = t_cum[hi] - t_cum[lo]
        if gap > budget * (1.0 + 1e-12):
            bad.append(
                f"T({hi}) - T({lo}) = {gap:.6g} exceeds 1/(2L) = {budget:.6g}"
            )
            if len(bad) >= 5:
                break
    if bad:
        return ValidationReport(False, "; ".join(bad), tuple(bad))
    return ValidationReport(True, "sync schedule valid")


def sample_round_index(
    etas: np.ndarray, rng: np.random.Generator
) -> int:
    """Draw R in {0..n-1} with P(R = k) proportional to eta_{k+1}."""
    if etas.size < 1:
        raise ValueError("need at least one stepsize")
    cdf = np.cumsum(etas / etas.sum())
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), etas.size - 1))


# ---------------------------------------------------------------------------
# transmission kernels (batched over workers; rows are independent payloads)


def _physical_roundtrip(
    levels_in: np.ndarray,
    grid: QuantizationGrid,
    ch: AwgnChannel,
    row_cdf: np.ndarray | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """AWGN + ADC (+ optional post-coding) on an index array."""
    y = grid.levels[levels_in] + ch.sigma_c * rng.standard_normal(levels_in.shape)
    received = adc_quantize_many(y, grid)
    if row_cdf is None:
        return received
    return apply_postcode_many(row_cdf, received, rng)


@dataclass
class Transmission:
    """One side's physical/coded stack, shared by uplink and downlink."""

    scheme: SchemeConfig
    grid: QuantizationGrid | None
    channel: AwgnChannel | None
    codec: ScaleCodec | None
    postcode: PostcodeMatrix | None
    row_cdf: np.ndarray | None = None

    def __post_init__(self):
        if self.postcode is not None:
            self.row_cdf = self.postcode.row_cdf()

    def encode(self, values: np.ndarray, rng: np.random.Generator):
        """Sender side: values -> (payload, beta).  Consumes the DAC draw."""
        if not self.scheme.uses_channel:
            return values, None
        if self.scheme.uses_codec:
            beta = beta_of_many(values, self.codec)
            psi = psi_of_many(values, self.codec)
            return dac_randomize_many(psi, self.grid, rng), beta
        return dac_randomize_many(values, self.grid, rng), None

    def receive(self, payload, beta, rng: np.random.Generator) -> np.ndarray:
        """Receiver side: channel + decode back to real values."""
        if not self.scheme.uses_channel:
            return payload
        out_levels = _physical_roundtrip(
            payload, self.grid, self.channel, self.row_cdf, rng
        )
        if self.scheme.uses_codec:
            return assemble_many(self.grid.levels[out_levels], beta, self.codec)
        return self.grid.levels[out_levels]


# ---------------------------------------------------------------------------
# per-spec round operations (single-worker views of the kernels above)


@dataclass
class FedState:
    """Mutable state of one experiment run."""

    round: int
    theta: np.ndarray
    worker_thetas: np.ndarray  # (m, d)
    objective: object
    transmission: Transmission
    etas: np.ndarray
    sync_set: frozenset


@dataclass(frozen=True)
class WorkerPayload:
    physical: np.ndarray  # level indices (or raw values on the coded path)
    beta: np.ndarray | None


def worker_round(
    state: FedState, j: int, rng: np.random.Generator
) -> WorkerPayload:
    """Worker j's uplink: sample a local gradient, encode, hand to DAC.

    The raw gradient is sent verbatim when the scheme bypasses the
    physical path.
    """
    grad = state.objective.grad_sample(state.worker_thetas[j], j, rng)
    payload, beta = state.transmission.encode(grad, rng)
    return WorkerPayload(physical=payload, beta=beta)


def server_aggregate(
    state: FedState, payloads: list[np.ndarray], rng: np.random.Generator
):
    """Average decoded uplinks, step the server parameter, and emit the
    downlink broadcast (fresh DAC randomization on the aggregate)."""
    u = np.mean(payloads, axis=0)
    eta = state.etas[state.round - 1]
    state.theta = state.theta - eta * u
    payload, beta = state.transmission.encode(u, rng)
    return u, (payload, beta)


def worker_apply_downlink(
    state: FedState, j: int, downlink, rng: np.random.Generator
) -> np.ndarray:
    """Worker j decodes its independently-noised copy of the broadcast and
    applies the same-form update; on sync rounds the caller overwrites the
    local parameter with the server's exact value afterwards."""
    payload, beta = downlink
    u_hat = state.transmission.receive(payload, beta, rng)
    eta = state.etas[state.round - 1]
    state.worker_thetas[j] = state.worker_thetas[j] - eta * u_hat
    return state.worker_thetas[j]


# ---------------------------------------------------------------------------
# experiment driver


@dataclass(frozen=True)
class ExperimentConfig:
    objective: object
    scheme: SchemeConfig
    schedule: StepsizeSchedule
    sync: SyncSchedule
    rounds: int
    seed: int
    q: int = 8
    sigma_c: float = 0.1
    omega: float = 0.05
    beta_max: int = 63
    theta0_offset: float = 1.0
    record_every: int = 1
    stepsize_c0: float = 0.5
    keep_ledger: bool = False


@dataclass
class LedgerTotals:
    """Raw transmission counts; symbol-cost conversion happens in the
    reporting layer against a channel budget."""

    phys_uses: int = 0
    coded_scalars: int = 0
    beta_coords: int = 0

    def copy(self) -> "LedgerTotals":
        return LedgerTotals(self.phys_uses, self.coded_scalars, self.beta_coords)


@dataclass
class RunResult:
    scheme: str
    seed: int
    rounds: np.ndarray
    loss: np.ndarray
    sq_dist: np.ndarray
    grad_norm_sq: np.ndarray
    disagreement: np.ndarray
    phys_cum: np.ndarray
    coded_scalar_cum: np.ndarray
    beta_coord_cum: np.ndarray
    totals: LedgerTotals
    sync_rounds: np.ndarray
    sync_exact: bool
    postcode_source: str | None
    v_star: float | None
    bits_per_exponent: int
    final_theta: np.ndarray
    data_state: str
    ledger_records: list = field(default_factory=list)


def build_postcode(grid: QuantizationGrid, sigma_c: float) -> PostcodeMatrix:
    """LP-optimal post-coding when solvable, else the banded construction.

    The LP's feasibility condition is sufficient, not necessary, so a run
    proceeds on whichever certified matrix exists and records which.
    """
    tm = transition_matrix(grid, sigma_c)
    hm = solve_lp(build_lp(tm, grid))
    if hm is None:
        hm = feasible_construction(tm, grid)
    if hm is None:
        raise ChannelInfeasible(
            f"no unbiased post-coding exists for q={grid.q}, sigma_c={sigma_c}"
        )
    return hm


def run_experiment(config: ExperimentConfig) -> RunResult:
    obj = config.objective
    scheme = config.scheme
    m, d = obj.workers, obj.dim
    n = config.rounds

    rep = validate_stepsizes(config.schedule, obj, n, config.stepsize_c0)
    if not rep.ok:
        raise ScheduleViolation(rep)
    mu_for_eta = obj.mu if obj.mu > 0 else 1.0
    etas = config.schedule.etas(n, mu_for_eta)
    if scheme.uses_sync:
        rep = validate_sync(config.sync, etas, obj.smoothness, n)
        if not rep.ok:
            raise ScheduleViolation(rep)
        sync_rounds = config.sync.rounds(n)
    else:
        sync_rounds = np.zeros(0, dtype=np.int64)
    sync_set = frozenset(int(t) for t in sync_rounds)

    grid = channel = codec = hm = None
    if scheme.uses_channel:
        grid = make_grid(config.q)
        channel = AwgnChannel(config.sigma_c)
    if scheme.uses_codec:
        hm = build_postcode(grid, config.sigma_c)
        codec = ScaleCodec(config.omega, grid.delta, config.beta_max)
    tx = Transmission(scheme, grid, channel, codec, hm)

    init_rng = rngmod.stream(config.seed, rngmod.INIT)
    data_rng = rngmod.stream(config.seed, rngmod.DATA)
    up_rng = rngmod.stream(config.seed, rngmod.UPLINK)
    down_rng = rngmod.stream(config.seed, rngmod.DOWNLINK)

    direction = _unit(init_rng.standard_normal(d))
    anchor = obj.theta_star if obj.kind == "quadratic" else np.zeros(d)
    theta = anchor + config.theta0_offset * direction
    worker_thetas = np.tile(theta, (m, 1))

    ledger = LedgerTotals()
    beta_coord_cost = m * d if scheme.uses_codec else 0
    phys_cost = m * d if scheme.uses_channel else 0
    coded_payload_cost = m * d if not scheme.uses_channel else 0

    recorder = _Recorder(obj, config.record_every, n)
    recorder.record(0, theta, worker_thetas, ledger)
    sync_exact = True

    for k in range(1, n + 1):
        eta = etas[k - 1]

        # uplink: every worker samples, encodes, transmits
        grads = obj.grad_samples(worker_thetas, data_rng)
        payload, beta = tx.encode(grads, up_rng)
        ghat = tx.receive(payload, beta, up_rng)
        ledger.phys_uses += phys_cost
        ledger.beta_coords += beta_coord_cost
        ledger.coded_scalars += coded_payload_cost

        # server aggregate and step
        u = ghat.mean(axis=0)
        theta = theta - eta * u

        # downlink broadcast: one DAC realization, independent noise per
        # worker on the physical path
        dpayload, dbeta = tx.encode(u, down_rng)
        if scheme.uses_channel:
            stacked = np.tile(dpayload, (m, 1))
            dbeta_rows = None if dbeta is None else np.tile(dbeta, (m, 1))
            u_hats = tx.receive(stacked, dbeta_rows, down_rng)
        else:
            u_hats = np.tile(u, (m, 1))
        worker_thetas = worker_thetas - eta * u_hats
        ledger.phys_uses += phys_cost
        ledger.beta_coords += beta_coord_cost
        ledger.coded_scalars += coded_payload_cost

        synced = k in sync_set
        if synced:
            worker_thetas = np.tile(theta, (m, 1))
            ledger.coded_scalars += m * d
            sync_exact = sync_exact and bool(
                np.all(worker_thetas == theta[None, :])
            )

        if config.keep_ledger:
            _append_ledger_rows(
                recorder.ledger_records, k, m, d, scheme, synced
            )
        recorder.maybe_record(k, theta, worker_thetas, ledger)

    recorder.ensure_final(n, theta, worker_thetas, ledger)
    return RunResult(
        scheme=scheme.name,
        seed=config.seed,
        rounds=np.asarray(recorder.ks, dtype=np.int64),
        loss=np.asarray(recorder.loss),
        sq_dist=np.asarray(recorder.sq_dist),
        grad_norm_sq=np.asarray(recorder.grad_norm_sq),
        disagreement=np.asarray(recorder.disagreement),
        phys_cum=np.asarray(recorder.phys, dtype=np.int64),
        coded_scalar_cum=np.asarray(recorder.coded, dtype=np.int64),
        beta_coord_cum=np.asarray(recorder.betas, dtype=np.int64),
        totals=ledger,
        sync_rounds=sync_rounds,
        sync_exact=sync_exact,
        postcode_source=None if hm is None else hm.source,
        v_star=None if hm is None else hm.v_star,
        bits_per_exponent=0 if codec is None else codec.bits_per_exponent,
        final_theta=theta,
        data_state=rngmod.state_digest(data_rng),
        ledger_records=recorder.ledger_records,
    )


def _append_ledger_rows(records, k, m, d, scheme, synced):
    phys = d if scheme.uses_channel else 0
    betas = d if scheme.uses_codec else 0
    scalars = d if not scheme.uses_channel else 0
    for j in range(m):
        records.append((k, "up", j, phys, scalars, betas))
    for j in range(m):
        down_scalars = scalars + (d if synced else 0)
        records.append((k, "down", j, phys, down_scalars, betas))


class _Recorder:
    def __init__(self, objective, every: int, n: int):
        self.obj = objective
        self.every = max(int(every), 1)
        self.n = n
        self.ks = []
        self.loss = []
        self.sq_dist = []
        self.grad_norm_sq = []
        self.disagreement = []
        self.phys = []
        self.coded = []
        self.betas = []
        self.ledger_records = []

    def record(self, k, theta, worker_thetas, ledger: LedgerTotals):
        self.ks.append(k)
        self.loss.append(self.obj.value(theta))
        if self.obj.theta_star is not None:
            diff = theta - self.obj.theta_star
            self.sq_dist.append(float(diff @ diff))
        else:
            self.sq_dist.append(float("nan"))
        g = self.obj.grad_full(theta)
        self.grad_norm_sq.append(float(g @ g))
        dev = worker_thetas - theta[None, :]
        self.disagreement.append(float(np.mean(np.einsum("md,md->m", dev, dev))))
        self.phys.append(ledger.phys_uses)
        self.coded.append(ledger.coded_scalars)
        self.betas.append(ledger.beta_coords)

    def maybe_record(self, k, theta, worker_thetas, ledger):
        if k % self.every == 0:
            self.record(k, theta, worker_thetas, ledger)

    def ensure_final(self, n, theta, worker_thetas, ledger):
        if self.ks[-1] != n:
            self.record(n, theta, worker_thetas, ledger)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)
