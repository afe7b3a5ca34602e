"""Receiver-side stochastic post-coding.

The channel-plus-ADC composite is biased on the quantization grid.  A
row-stochastic matrix H, found by linear programming, remaps received
levels so the composite P@H is unbiased on every interior level while
minimizing the worst-case spread v.  Infeasibility is a meaningful
outcome (the noise level can simply be too large), reported as ``None``
rather than an exception.

``feasible_construction`` builds the banded matrix H(zeta) used to prove
that the program is feasible whenever sigma_c <= delta/2; it serves as an
independent cross-check on the LP path and as a fallback solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from airfed import simplex
from airfed.channel import QuantizationGrid, TransitionMatrix

#: entries this far below zero are treated as solver dust and clamped
CLAMP_TOL = 1e-12
#: tolerance on the certified equality/inequality constraints
CERT_TOL = 1e-8


@dataclass(frozen=True)
class PostcodeMatrix:
    """Row-stochastic q x q remap H with certified worst-case variance."""

    h: np.ndarray = field(repr=False)
    v_star: float
    source: str = "lp"  # "lp" | "construction" | "identity"

    def __post_init__(self):
        self.h.flags.writeable = False

    @property
    def q(self) -> int:
        return self.h.shape[0]

    def row_cdf(self) -> np.ndarray:
        return np.cumsum(self.h, axis=1)


@dataclass(frozen=True)
class LpInstance:
    """min v over (H, v): q row-sum equalities, q-2 unbiasedness
    equalities, q-2 worst-case-variance inequalities, all vars >= 0.

    Variable layout: H row-major (q*q entries), then v.
    """

    q: int
    c: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray

    @property
    def num_variables(self) -> int:
        return self.q * self.q + 1


def identity_postcode(grid: QuantizationGrid) -> PostcodeMatrix:
    """No-op post-coding (used by schemes that skip the correction)."""
    return PostcodeMatrix(h=np.eye(grid.q), v_star=0.0, source="identity")


def build_lp(p: TransitionMatrix, grid: QuantizationGrid) -> LpInstance:
    q = grid.q
    z = grid.levels
    nvar = q * q + 1

    a_eq = np.zeros((q + (q - 2), nvar))
    b_eq = np.zeros(q + (q - 2))
    for i in range(q):  # sum_j H[i, j] = 1
        a_eq[i, i * q : (i + 1) * q] = 1.0
        b_eq[i] = 1.0
    for k, j in enumerate(range(1, q - 1)):  # e_j' P H z = z_j
        row = q + k
        a_eq[row, : q * q] = np.outer(p.p[j], z).reshape(-1)
        b_eq[row] = z[j]

    a_ub = np.zeros((q - 2, nvar))
    for k, j in enumerate(range(1, q - 1)):  # sum_i (PH)[j, i] (z_i - z_j)^2 <= v
        a_ub[k, : q * q] = np.outer(p.p[j], (z - z[j]) ** 2).reshape(-1)
        a_ub[k, -1] = -1.0

    c = np.zeros(nvar)
    c[-1] = 1.0
    return LpInstance(q=q, c=c, a_eq=a_eq, b_eq=b_eq, a_ub=a_ub, b_ub=np.zeros(q - 2))


def _band_columns(q: int) -> np.ndarray:
    """Variable indices of the tridiagonal H entries plus v."""
    cols = [i * q + j for i in range(q) for j in range(q) if abs(i - j) <= 1]
    cols.append(q * q)
    return np.asarray(cols, dtype=np.int64)


def solve_lp(lp: LpInstance) -> PostcodeMatrix | None:
    """Optimal post-coding matrix, or None when the program is infeasible.

    The full program carries a large cloud of far-off-band variables whose
    coefficients sit many orders of magnitude below the leading ones, a
    numerically brutal combination for simplex pivoting.  The tridiagonal
    restriction contains none of them, is feasible whenever the banded
    existence construction is, and (empirically, across the supported
    channel range) already attains the full optimum -- so it is solved
    first and its basis warm-starts the full program, which then only has
    to confirm optimality via the reduced-cost certificate.
    """
    band = _band_columns(lp.q)
    warm = None
    band_res = simplex.solve_dense(
        lp.c[band],
        a_ub=lp.a_ub[:, band],
        b_ub=lp.b_ub,
        a_eq=lp.a_eq[:, band],
        b_eq=lp.b_eq,
    )
    if band_res.status == simplex.OPTIMAL and band_res.basis_columns is not None:
        nb = band.size
        warm = np.array(
            [
                band[idx] if idx < nb else lp.num_variables + (idx - nb)
                for idx in band_res.basis_columns
            ],
            dtype=np.int64,
        )
    res = simplex.solve_dense(
        lp.c, a_ub=lp.a_ub, b_ub=lp.b_ub, a_eq=lp.a_eq, b_eq=lp.b_eq,
        warm_basis=warm,
    )
    if res.status != simplex.OPTIMAL:
        return None
    h = res.x[: lp.q * lp.q].reshape(lp.q, lp.q)
    h = _clean_rows(h)
    return PostcodeMatrix(h=h, v_star=float(res.x[-1]), source="lp")


def _clean_rows(h: np.ndarray) -> np.ndarray:
    """Clamp solver dust in [-CLAMP_TOL, 0) to zero and renormalize rows
    so downstream inverse-CDF sampling sees exact distributions."""
    if np.min(h) < -CLAMP_TOL:
        raise ValueError(f"post-coding matrix has a negative entry: {np.min(h)}")
    h = np.clip(h, 0.0, None)
    return h / h.sum(axis=1, keepdims=True)


def feasible_construction(
    p: TransitionMatrix, grid: QuantizationGrid
) -> PostcodeMatrix | None:
    """Banded feasible point H(zeta*) built in closed form.

    Boundary rows are indicators; interior row i carries
    ((1 - zeta_i)/3, 1/3, (1 + zeta_i)/3) on columns (i-1, i, i+1).
    With H(0), the composite mean at interior j is exactly the raw
    channel mean, so the residual bias is linear in zeta with matrix
    (2*delta/3) P*; zeta* solves that system.  Returns None when P* is
    singular or the solution leaves the stochastic range |zeta| <= 1.
    """
    q = grid.q
    z = grid.levels
    bias = z[1:-1] - (p.p @ z)[1:-1]
    try:
        zeta = np.linalg.solve(p.interior(), 3.0 / (2.0 * grid.delta) * bias)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(zeta)) or np.max(np.abs(zeta)) > 1.0:
        return None
    h = np.zeros((q, q))
    h[0, 0] = 1.0
    h[q - 1, q - 1] = 1.0
    for k, i in enumerate(range(1, q - 1)):
        h[i, i - 1] = (1.0 - zeta[k]) / 3.0
        h[i, i] = 1.0 / 3.0
        h[i, i + 1] = (1.0 + zeta[k]) / 3.0
    h = _clean_rows(h)
    v = float(np.max(_level_mse(h, p, grid)[1:-1]))
    return PostcodeMatrix(h=h, v_star=v, source="construction")


def construction_zeta(p: TransitionMatrix, grid: QuantizationGrid) -> np.ndarray:
    """The zeta* vector of the constructive solution (diagnostics)."""
    bias = grid.levels[1:-1] - (p.p @ grid.levels)[1:-1]
    return np.linalg.solve(p.interior(), 3.0 / (2.0 * grid.delta) * bias)


def _level_mse(h: np.ndarray, p: TransitionMatrix, grid: QuantizationGrid) -> np.ndarray:
    """Per-level E[(output - z_j)^2] of the composite P@H (the LP's
    variance measure; equals the true variance wherever the mean is z_j)."""
    ph = p.p @ h
    z = grid.levels
    return np.array([float(ph[j] @ (z - z[j]) ** 2) for j in range(grid.q)])


def apply_postcode(
    hm: PostcodeMatrix, level_index: int, rng: np.random.Generator
) -> int:
    """Sample the remapped level by inverse-CDF on one uniform draw."""
    if not 0 <= level_index < hm.q:
        raise IndexError(f"level index {level_index} outside 0..{hm.q - 1}")
    u = rng.random()
    return int(
        min(np.searchsorted(np.cumsum(hm.h[level_index]), u, side="right"), hm.q - 1)
    )


def apply_postcode_many(
    row_cdf: np.ndarray, level_indices: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Vector form over precomputed ``PostcodeMatrix.row_cdf()`` rows."""
    u = rng.random(size=level_indices.shape)
    out = np.sum(u[..., None] >= row_cdf[level_indices], axis=-1)
    return np.minimum(out, row_cdf.shape[0] - 1)


@dataclass(frozen=True)
class CertifyReport:
    """Per-level composite means and spreads, with interior-level checks.

    Boundary levels are reported for completeness but carry no guarantee:
    the output range cannot extend past the extreme grid levels, so means
    at the boundary are biased toward the interior by construction.
    """

    mean: np.ndarray
    mse: np.ndarray
    v_star: float
    mean_violation: float  # max interior |mean - z_j|
    mse_excess: float  # max interior (mse - v_star)
    ok: bool


def certify(
    hm: PostcodeMatrix, p: TransitionMatrix, grid: QuantizationGrid
) -> CertifyReport:
    """Exact matrix-algebra check of the unbiasedness and variance claims."""
    ph = p.p @ hm.h
    mean = ph @ grid.levels
    mse = _level_mse(hm.h, p, grid)
    mean_violation = float(np.max(np.abs(mean[1:-1] - grid.levels[1:-1])))
    mse_excess = float(np.max(mse[1:-1] - hm.v_star))
    return CertifyReport(
        mean=mean,
        mse=mse,
        v_star=hm.v_star,
        mean_violation=mean_violation,
        mse_excess=mse_excess,
        ok=(mean_violation <= CERT_TOL and mse_excess <= CERT_TOL),
    )
