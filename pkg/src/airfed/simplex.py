"""Dense two-phase simplex for small linear programs.

Solves   min c.x   s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.

The post-coding programs this serves are small (a few hundred columns)
but heavily degenerate, with structural coefficients spanning many orders
of magnitude, so a classic updated tableau drifts badly.  Instead each
iteration re-solves the current basis against the original data (revised
simplex with dense solves): primal feasibility and reduced costs are
always computed fresh, never accumulated.  The entering variable follows
Bland's anti-cycling rule (lowest index with negative reduced cost); the
leaving row uses a Harris-style two-pass ratio test with a 1e-11
feasibility slack, picking large pivot elements among admissible rows and
breaking exact ties by Bland's lowest basic index.  Optimality is
certified by nonnegative reduced costs recomputed from original data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_MAX_ITER = 50_000
#: bounded infeasibility admitted by the ratio test before cleanup
_FEAS_SLACK = 1e-11
#: basis condition ceilings: cond * eps bounds the noise in every solve
_COND_CEIL = 1e8
_COND_CEIL_LAX = 1e10


@dataclass
class SimplexResult:
    status: str
    x: np.ndarray | None
    fun: float | None
    iterations: int
    phase_one_objective: float
    min_reduced_cost: float | None
    #: final basis as indices into [variables | inequality slacks]
    basis_columns: np.ndarray | None = None


class SimplexError(RuntimeError):
    """Internal failure (iteration cap exceeded or singular basis)."""


def _iterate(
    a: np.ndarray,
    b: np.ndarray,
    costs: np.ndarray,
    basis: np.ndarray,
    tol: float,
    pivot_tol: float,
    defensive: bool = False,
) -> tuple[str, int]:
    """Pivot ``basis`` to optimality for min costs.x s.t. a x = b, x >= 0.

    Entering variable: lowest index with reduced cost below -tol, except
    that columns whose every admissible pivot would leave the basis
    numerically singular are skipped for the current basis.  Leaving row:
    normally a Harris-style two-pass ratio test (every genuinely positive
    direction entry blocks the step; among rows admissible within the
    feasibility slack, larger pivot elements are tried first).  If the
    objective stalls on a long run of degenerate pivots, the test
    downgrades permanently to Bland's anti-cycling rule: exact minimum
    ratio, ties to the lowest basic index.
    """
    iters = 0
    stall = 0
    bland_mode = False
    last_obj = None
    visits: dict[bytes, int] = {}
    while True:
        bmat = a[:, basis]
        try:
            xb = np.linalg.solve(bmat, b)
            y = np.linalg.solve(bmat.T, costs[basis])
        except np.linalg.LinAlgError as exc:
            raise SimplexError(f"singular basis at iteration {iters}") from exc
        obj = float(costs[basis] @ xb)
        if last_obj is None or obj < last_obj - 1e-14 * (1.0 + abs(last_obj)):
            stall = 0
            last_obj = obj
        else:
            stall += 1
            if stall > 64:
                bland_mode = True
            if stall > 2000 and not defensive:
                raise SimplexError("stalled; retry defensively")
        reduced = costs - a.T @ y
        reduced[basis] = 0.0
        improving = np.nonzero(reduced < -tol)[0]
        if improving.size == 0:
            return OPTIMAL, iters
        # floating-point noise voids Bland's exact-arithmetic guarantee, so
        # the iteration map can revisit a basis; the map is deterministic,
        # making revisits exactly detectable.  Escape by rotating which
        # improving column enters on each repeat visit.
        key = np.sort(basis).tobytes()
        seen = visits.get(key, 0)
        visits[key] = seen + 1
        if seen and defensive:
            shift = seen % improving.size
            improving = np.concatenate([improving[shift:], improving[:shift]])
        elif seen > 2:
            # non-defensive runs bail out quickly on a detected cycle so a
            # defensive restart can take over
            raise SimplexError("pivoting revisited a basis")
        pivoted = False
        # defensive mode: every committed pivot must keep the basis well
        # conditioned, or all later solves (and hence all pivoting
        # decisions) degrade into noise; the ceiling relaxes only if
        # nothing passes the tight one
        ceilings = (_COND_CEIL, _COND_CEIL_LAX) if defensive else (np.inf,)
        for ceiling in ceilings:
            for entering in improving:
                d = np.linalg.solve(bmat, a[:, entering])
                scale = max(1.0, float(np.max(np.abs(d))))
                eligible = np.nonzero(d > pivot_tol * scale)[0]
                if eligible.size == 0:
                    # a feasible improving ray: unbounded regardless of
                    # which column Bland's rule would have entered
                    return UNBOUNDED, iters
                ratios = xb[eligible] / d[eligible]
                if bland_mode:
                    # treat feasibility dust as exact zero, else a noise
                    # row with xb ~ -1e-12 posts a wildly negative ratio
                    # and monopolizes the tie set
                    ratios0 = np.maximum(xb[eligible], 0.0) / d[eligible]
                    best = float(np.min(ratios0))
                    cand = eligible[ratios0 <= best + 1e-15 * (1.0 + abs(best))]
                    order = cand[np.argsort(basis[cand], kind="stable")]
                else:
                    theta = float(
                        np.min((xb[eligible] + _FEAS_SLACK) / d[eligible])
                    )
                    cand = eligible[ratios <= theta]
                    order = cand[np.argsort(-d[cand], kind="stable")]
                for row in order:
                    if np.isinf(ceiling):
                        basis[row] = entering
                        pivoted = True
                        break
                    trial = basis.copy()
                    trial[row] = entering
                    if np.linalg.cond(a[:, trial]) <= ceiling:
                        basis[row] = entering
                        pivoted = True
                        break
                if pivoted:
                    break
            if pivoted:
                break
        if not pivoted:
            raise SimplexError("no numerically admissible pivot remains")
        iters += 1
        if iters > _MAX_ITER:
            raise SimplexError("pivot iteration cap exceeded")


def solve_dense(
    c: np.ndarray,
    a_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    *,
    tol: float = 1e-9,
    pivot_tol: float = 1e-12,
    warm_basis: np.ndarray | None = None,
) -> SimplexResult:
    """Solve with deterministic jittered restarts.

    Heavily degenerate instances can trap any single deterministic pivot
    path (floating-point noise voids the exact anti-cycling guarantees).
    Each restart perturbs the pivoting objectives by a seeded jitter far
    inside the certification tolerances, which reroutes the path; the
    final certificate is always checked against the original data.

    ``warm_basis`` (indices into [variables | inequality slacks]) skips
    phase 1 when it forms a primal-feasible basis, e.g. coming from a
    restricted version of the same program.
    """
    last_error: SimplexError | None = None
    for attempt in range(6):
        try:
            return _solve_once(
                c, a_ub, b_ub, a_eq, b_eq, tol=tol, pivot_tol=pivot_tol,
                attempt=attempt, warm_basis=warm_basis if attempt == 0 else None,
            )
        except SimplexError as err:
            last_error = err
    raise last_error


def _solve_once(
    c: np.ndarray,
    a_ub: np.ndarray | None,
    b_ub: np.ndarray | None,
    a_eq: np.ndarray | None,
    b_eq: np.ndarray | None,
    *,
    tol: float,
    pivot_tol: float,
    attempt: int,
    warm_basis: np.ndarray | None = None,
) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    a_ub = np.zeros((0, n)) if a_ub is None else np.asarray(a_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = a_ub.shape[0], a_eq.shape[0]
    m = m_ub + m_eq

    # standard form: one slack per inequality row
    a = np.zeros((m, n + m_ub))
    a[:m_ub, :n] = a_ub
    a[:m_ub, n : n + m_ub] = np.eye(m_ub)
    a[m_ub:, :n] = a_eq
    b = np.concatenate([b_ub, b_eq])
    flip = b < 0
    a[flip] *= -1.0
    b[flip] = -b[flip]
    costs = np.concatenate([c, np.zeros(m_ub)])
    ncols = n + m_ub

    # equilibrate: structural coefficients span ~20 orders of magnitude in
    # the post-coding programs, which wrecks basis conditioning; row then
    # column max-scaling brings every row/column peak to 1.  The solve
    # runs on the scaled data; x and the certificate are mapped back.
    rscale = np.max(np.abs(a), axis=1)
    rscale[rscale == 0.0] = 1.0
    a = a / rscale[:, None]
    b = b / rscale
    cscale = np.max(np.abs(a), axis=0)
    cscale[cscale == 0.0] = 1.0
    a = a / cscale[None, :]
    costs_scaled = costs / cscale

    # presolve: merge columns that double precision cannot tell apart
    # (coefficients far below resolution leave whole families of columns
    # identical; any basis mixing two of them is numerically singular).
    # Dropped duplicates are fixed at zero and restored after the solve.
    keep = np.ones(ncols, dtype=bool)
    rep = np.arange(ncols)
    for j in range(ncols):
        if not keep[j]:
            continue
        later = j + 1 + np.nonzero(keep[j + 1 :])[0]
        if later.size == 0:
            continue
        close = np.max(np.abs(a[:, later] - a[:, j : j + 1]), axis=0) <= 1e-13
        close &= np.abs(costs_scaled[later] - costs_scaled[j]) <= 1e-13
        keep[later[close]] = False
        rep[later[close]] = j
    kept = np.nonzero(keep)[0]
    a_full, costs_full = a, costs_scaled
    a = a[:, keep]
    costs_scaled = costs_scaled[keep]
    ncols_full = ncols
    ncols = kept.size

    # restart jitter: perturb only the costs used to steer pivoting
    pivot_costs = costs_scaled
    if attempt:
        jrng = np.random.default_rng(1000 + attempt)
        pivot_costs = costs_scaled + 10.0 * tol * jrng.uniform(
            0.5, 1.5, size=ncols
        )

    defensive = attempt > 0
    pos = {int(orig): idx for idx, orig in enumerate(kept)}
    basis = _warm_start_basis(warm_basis, rep, pos, a, b, m)
    iterations = 0
    phase1 = 0.0
    if basis is None:
        # phase 1 over [A | I_art]: artificial where no unflipped slack
        # exists on the row
        basis = np.full(m, -1, dtype=np.int64)
        needs_art = []
        for r in range(m):
            if r < m_ub and not flip[r] and (n + r) in pos:
                basis[r] = pos[n + r]
            else:
                needs_art.append(r)
        n_art = len(needs_art)
        a1 = np.zeros((m, ncols + n_art))
        a1[:, :ncols] = a
        for k, r in enumerate(needs_art):
            a1[r, ncols + k] = 1.0
            basis[r] = ncols + k
        costs1 = np.zeros(ncols + n_art)
        costs1[ncols:] = 1.0
        if attempt:
            jrng = np.random.default_rng(2000 + attempt)
            costs1[ncols:] += 1e-6 * jrng.uniform(0.0, 1.0, size=n_art)

        status, iterations = _iterate(
            a1, b, costs1, basis, tol, pivot_tol, defensive
        )
        xb = np.linalg.solve(a1[:, basis], b)
        phase1 = float(np.sum(np.abs(xb[basis >= ncols]))) if n_art else 0.0
        if status == UNBOUNDED or phase1 > tol:
            return SimplexResult(INFEASIBLE, None, None, iterations, phase1, None)

        # drive leftover zero-valued artificials out of the basis; rows
        # with no usable pivot column are redundant and get dropped
        drop_rows = []
        for r in range(m):
            if basis[r] >= ncols:
                body = np.linalg.solve(a1[:, basis], a)[r]
                pivots = np.nonzero(np.abs(body) > 1e-7)[0]
                usable = [int(j) for j in pivots if j not in set(basis)]
                if usable:
                    basis[r] = usable[0]
                    iterations += 1
                else:
                    drop_rows.append(r)
        if drop_rows:
            keep_rows = [r for r in range(m) if r not in drop_rows]
            basis = basis[keep_rows]
            a = a[keep_rows]
            b = b[keep_rows]
            m = len(keep_rows)

    # phase 2 on the (possibly jittered) pivoting objective
    status, it2 = _iterate(a, b, pivot_costs, basis, tol, pivot_tol, defensive)
    iterations += it2
    if status == UNBOUNDED:
        return SimplexResult(UNBOUNDED, None, None, iterations, phase1, None)

    x_red = np.zeros(ncols)
    x_red[basis] = np.linalg.solve(a[:, basis], b)
    x = np.zeros(ncols_full)
    x[kept] = x_red
    x /= cscale  # undo column scaling
    # degenerate basics are exactly zero in exact arithmetic; the basis
    # solve leaves tiny conditioning dust on them
    x[np.abs(x) < 1e-10] = 0.0
    if float(np.min(x)) < -1e-9:
        raise SimplexError(f"basic solution went negative: {float(np.min(x))}")
    np.clip(x, 0.0, None, out=x)
    y = np.linalg.solve(a[:, basis].T, costs_scaled[basis])
    min_rc_scaled = float(np.min(costs_full - a_full.T @ y))
    # jittered restarts steer to an optimum of a perturbed objective, so
    # the certificate slack widens with the jitter magnitude
    cert_slack = tol + 1e-12 + (20.0 * tol * attempt if attempt else 0.0)
    if min_rc_scaled < -cert_slack:
        raise SimplexError("could not certify optimality by reduced costs")
    return SimplexResult(
        OPTIMAL,
        x[:n],
        float(costs @ x),
        iterations,
        phase1,
        min_rc_scaled,
        basis_columns=kept[basis],
    )


def _warm_start_basis(warm_basis, rep, pos, a, b, m):
    """Map a caller-provided basis into the reduced column space; must be
    square, nonsingular, and primal feasible, else None (cold start)."""
    if warm_basis is None or len(warm_basis) != m:
        return None
    cols = []
    for idx in warm_basis:
        idx = int(rep[int(idx)])
        if idx not in pos:
            return None
        cols.append(pos[idx])
    if len(set(cols)) != m:
        return None
    basis = np.asarray(cols, dtype=np.int64)
    try:
        xb = np.linalg.solve(a[:, basis], b)
    except np.linalg.LinAlgError:
        return None
    if float(np.min(xb)) < -1e-8 or not np.all(np.isfinite(xb)):
        return None
    return basis
