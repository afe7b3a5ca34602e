"""Built-in federated objectives with certified regularity constants.

Each objective knows its dimension, worker count, exact population value
and gradient, and the constants that the stepsize/sync validators need:
strong convexity mu, smoothness L, the state-dependent gradient-noise
constants (ell, per-worker sigma_star), and the optimum when available.
The quadratic's constants come from closed-form Gaussian moment algebra;
the cosine objective's from its diagonal Hessian; the logistic analog
certifies bounded-oracle constants numerically from its finite datasets.
"""

from __future__ import annotations

import numpy as np


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class QuadraticObjective:
    """Per-worker linear regression f(theta; x, y) = (x.theta - y)^2 / 2.

    Worker j draws x ~ N(mean_j, Sigma) and y = x.theta_dagger + xi with
    xi ~ N(0, noise^2).  The population loss is the quadratic
    F(theta) = (theta - theta*)' Sbar (theta - theta*) / 2 + noise^2 / 2
    with Sbar the pooled second-moment matrix, so mu and L are its extreme
    eigenvalues.  The gradient-noise constants are exact: with
    w = theta - theta*,

        E_j |grad f|^2 = w' M_j w + noise^2 tr(S_j),

    where M_j collects the Gaussian fourth-moment terms, which certifies
    sigma_star_j^2 = noise^2 tr(S_j) and ell^2 = 2 max_j lam_max of
    Sbar^{-1/2} M_j Sbar^{-1/2}.
    """

    kind = "quadratic"

    def __init__(self, dim: int, workers: int, heterogeneity: float = 0.0,
                 noise: float = 1.0, spectrum: tuple[float, float] = (0.5, 1.5),
                 seed: int = 0):
        if dim < 1 or workers < 1:
            raise ValueError("dim and workers must be >= 1")
        self.dim = dim
        self.workers = workers
        self.noise = float(noise)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(101,)))

        eigs = np.linspace(spectrum[0], spectrum[1], dim)
        qmat, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        self.sigma = (qmat * eigs) @ qmat.T
        self.sigma = 0.5 * (self.sigma + self.sigma.T)
        self.sigma_half = (qmat * np.sqrt(eigs)) @ qmat.T
        self.means = heterogeneity * np.array(
            [_unit(rng.standard_normal(dim)) for _ in range(workers)]
        )
        self.theta_star = _unit(rng.standard_normal(dim))

        s_j = [self.sigma + np.outer(mj, mj) for mj in self.means]
        self.s_bar = np.mean(s_j, axis=0)
        eigvals = np.linalg.eigvalsh(self.s_bar)
        self.mu = float(eigvals[0])
        self.smoothness = float(eigvals[-1])
        self.sigma_star = np.array(
            [self.noise * np.sqrt(np.trace(s)) for s in s_j]
        )
        self._moment_mats = [self._fourth_moment_matrix(mj) for mj in self.means]
        self.ell = self._certify_ell()
        self.lam = None
        self.f_min = 0.5 * self.noise**2

    def _fourth_moment_matrix(self, m: np.ndarray) -> np.ndarray:
        # quadratic form of E[<x, w>^2 |x|^2] for x ~ N(m, Sigma)
        sig, sm = self.sigma, self.sigma @ m
        scal = float(m @ m + np.trace(sig))
        return (
            scal * (np.outer(m, m) + sig)
            + 2.0 * (np.outer(m, sm) + np.outer(sm, m))
            + 2.0 * sig @ sig
        )

    def _certify_ell(self) -> float:
        evals, evecs = np.linalg.eigh(self.s_bar)
        inv_half = (evecs / np.sqrt(evals)) @ evecs.T
        worst = max(
            float(np.linalg.eigvalsh(inv_half @ mm @ inv_half)[-1])
            for mm in self._moment_mats
        )
        return float(np.sqrt(2.0 * worst))

    @property
    def sigma_star_sq_avg(self) -> float:
        return float(np.mean(self.sigma_star**2))

    def value(self, theta: np.ndarray) -> float:
        w = theta - self.theta_star
        return 0.5 * float(w @ self.s_bar @ w) + 0.5 * self.noise**2

    def grad_full(self, theta: np.ndarray) -> np.ndarray:
        return self.s_bar @ (theta - self.theta_star)

    def grad_full_worker(self, theta: np.ndarray, j: int) -> np.ndarray:
        s_j = self.sigma + np.outer(self.means[j], self.means[j])
        return s_j @ (theta - self.theta_star)

    def grad_sq_mean(self, theta: np.ndarray, j: int) -> float:
        """Exact E_j |grad f(theta, X)|^2 (test oracle)."""
        w = theta - self.theta_star
        return float(w @ self._moment_mats[j] @ w) + float(self.sigma_star[j] ** 2)

    def grad_samples(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One stochastic gradient per worker, row j at thetas[j].

        Consumes one (m, d) block plus one (m,) block of normals.
        """
        x = self.means + rng.standard_normal(thetas.shape) @ self.sigma_half
        xi = self.noise * rng.standard_normal(thetas.shape[0])
        resid = np.einsum("md,md->m", x, thetas - self.theta_star) - xi
        return resid[:, None] * x

    def grad_sample(self, theta: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray:
        x = self.means[j] + rng.standard_normal(self.dim) @ self.sigma_half
        xi = self.noise * rng.standard_normal()
        return (float(x @ (theta - self.theta_star)) - xi) * x


class CosineRippleObjective:
    """Smooth non-quadratic objective with analytic constants.

    F(theta) = |theta|^2 / 2 + a * sum_i cos(b * theta_i), requiring
    a b^2 < 1 so the diagonal Hessian entries 1 - a b^2 cos(b theta_i)
    stay in [1 - a b^2, 1 + a b^2].  Hence L = 1 + a b^2 exactly, the
    origin is the unique minimizer, and F_min = a * d.

    The per-worker oracle is grad F corrupted by a multiplicative factor
    (1 + rho * zeta) and additive isotropic noise, which satisfies the
    gradient-norm-proportional moment bound with lam = 1 + rho^2 exactly.
    ``ell`` is derived as sqrt(L * lam) so the generic stepsize cap
    c0 / (ell^2 + L) equals c0 / (L * (1 + lam)), the cap this oracle
    family needs.
    """

    kind = "cosine"

    def __init__(self, dim: int, workers: int, amplitude: float = 0.2,
                 frequency: float = 2.0, noise: float = 1.0, rho: float = 0.5,
                 seed: int = 0):
        if dim < 1 or workers < 1:
            raise ValueError("dim and workers must be >= 1")
        if amplitude < 0 or amplitude * frequency**2 >= 1.0:
            raise ValueError("need amplitude * frequency^2 < 1")
        self.dim = dim
        self.workers = workers
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.rho = float(rho)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(102,)))
        spread = 1.0 + 0.5 * (np.arange(workers) / max(workers - 1, 1) - 0.5)
        self.sigma_star = float(noise) * spread
        self.mu = 1.0 - self.amplitude * self.frequency**2
        self.smoothness = 1.0 + self.amplitude * self.frequency**2
        self.lam = 1.0 + self.rho**2
        self.ell = float(np.sqrt(self.smoothness * self.lam))
        self.theta_star = np.zeros(dim)
        self.f_min = self.amplitude * dim

    @property
    def sigma_star_sq_avg(self) -> float:
        return float(np.mean(self.sigma_star**2))

    def value(self, theta: np.ndarray) -> float:
        return 0.5 * float(theta @ theta) + self.amplitude * float(
            np.sum(np.cos(self.frequency * theta))
        )

    def grad_full(self, theta: np.ndarray) -> np.ndarray:
        return theta - self.amplitude * self.frequency * np.sin(
            self.frequency * theta
        )

    def grad_sq_mean(self, theta: np.ndarray, j: int) -> float:
        g = self.grad_full(theta)
        return self.lam * float(g @ g) + float(self.sigma_star[j] ** 2)

    def grad_samples(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m, d = thetas.shape
        grads = thetas - self.amplitude * self.frequency * np.sin(
            self.frequency * thetas
        )
        zeta = rng.standard_normal(m)
        g = rng.standard_normal((m, d))
        return (1.0 + self.rho * zeta)[:, None] * grads + (
            self.sigma_star[:, None] / np.sqrt(d)
        ) * g

    def grad_sample(self, theta: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray:
        grad = self.grad_full(theta)
        zeta = rng.standard_normal()
        g = rng.standard_normal(self.dim)
        return (1.0 + self.rho * zeta) * grad + (
            self.sigma_star[j] / np.sqrt(self.dim)
        ) * g


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


class LogisticObjective:
    """Synthetic label-skewed logistic regression over m worker datasets.

    Features are standard Gaussian, labels follow a fixed logistic model;
    worker j fills class quotas so its class-1 fraction equals pi_j
    (label-skew heterogeneity).  F is the pooled empirical logistic loss;
    theta_star comes from Newton iterations; accuracy is measured on a
    held-out balanced sample of 10^4 fresh points.

    The single-sample oracle is bounded (|sigmoid - y| <= 1), so
    Assumption-style constants are certified as ell = 0 with
    sigma_star_j^2 = max_i |x_i|^2 over worker j's dataset (conservative
    but exact).
    """

    kind = "logistic"

    def __init__(self, dim: int, workers: int, samples_per_worker: int = 400,
                 skew: float = 0.7, theta_scale: float = 3.0,
                 batch_size: int = 4, holdout: int = 10_000, seed: int = 0):
        if dim < 1 or workers < 1:
            raise ValueError("dim and workers must be >= 1")
        if not 0.0 <= skew < 1.0:
            raise ValueError("skew must lie in [0, 1)")
        self.dim = dim
        self.workers = workers
        self.batch_size = int(batch_size)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(103,)))
        self.theta_true = theta_scale * _unit(rng.standard_normal(dim))

        half = np.arange(workers) / max(workers - 1, 1) - 0.5
        self.class1_fractions = 0.5 + skew * half
        xs, ys = [], []
        for j in range(workers):
            quota1 = int(round(self.class1_fractions[j] * samples_per_worker))
            xs_j, ys_j = self._fill_quotas(
                rng, samples_per_worker - quota1, quota1
            )
            xs.append(xs_j)
            ys.append(ys_j)
        self.data_x = np.stack(xs)  # (m, n, d)
        self.data_y = np.stack(ys)  # (m, n)
        self.pool_x = self.data_x.reshape(-1, dim)
        self.pool_y = self.data_y.reshape(-1)

        n_pool = self.pool_x.shape[0]
        self.smoothness = float(
            np.linalg.eigvalsh(self.pool_x.T @ self.pool_x / (4.0 * n_pool))[-1]
        )
        self.ell = 0.0
        self.lam = None
        self.sigma_star = np.sqrt(
            np.max(np.einsum("mnd,mnd->mn", self.data_x, self.data_x), axis=1)
        )
        self.theta_star = self._newton()
        self.f_min = self.value(self.theta_star)
        hess = self._hessian(self.theta_star)
        self.mu = float(np.linalg.eigvalsh(hess)[0])

        self.test_x = rng.standard_normal((holdout, dim))
        self.test_y = (
            rng.random(holdout) < _sigmoid(self.test_x @ self.theta_true)
        ).astype(float)

    def _fill_quotas(self, rng, need0: int, need1: int):
        xs0, xs1 = [], []
        while need0 > len(xs0) or need1 > len(xs1):
            x = rng.standard_normal(self.dim)
            y = rng.random() < _sigmoid(np.array([x @ self.theta_true]))[0]
            if y and len(xs1) < need1:
                xs1.append(x)
            elif not y and len(xs0) < need0:
                xs0.append(x)
        xs = np.array(xs0 + xs1)
        ys = np.concatenate([np.zeros(len(xs0)), np.ones(len(xs1))])
        order = rng.permutation(len(ys))
        return xs[order], ys[order]

    @property
    def sigma_star_sq_avg(self) -> float:
        return float(np.mean(self.sigma_star**2))

    def value(self, theta: np.ndarray) -> float:
        s = self.pool_x @ theta
        return float(np.mean(np.logaddexp(0.0, s) - self.pool_y * s))

    def grad_full(self, theta: np.ndarray) -> np.ndarray:
        s = self.pool_x @ theta
        return self.pool_x.T @ (_sigmoid(s) - self.pool_y) / self.pool_x.shape[0]

    def _hessian(self, theta: np.ndarray) -> np.ndarray:
        p = _sigmoid(self.pool_x @ theta)
        w = p * (1.0 - p)
        return (self.pool_x * w[:, None]).T @ self.pool_x / self.pool_x.shape[0]

    def _newton(self, iters: int = 50, tol: float = 1e-12) -> np.ndarray:
        theta = np.zeros(self.dim)
        for _ in range(iters):
            g = self.grad_full(theta)
            if float(np.linalg.norm(g)) < tol:
                break
            theta = theta - np.linalg.solve(self._hessian(theta), g)
        else:
            raise RuntimeError("Newton failed to locate the pooled optimum")
        return theta

    def accuracy(self, theta: np.ndarray) -> float:
        return float(np.mean((self.test_x @ theta > 0) == (self.test_y > 0.5)))

    def grad_samples(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Minibatch gradient per worker; consumes one (m, B) index block."""
        m, n, d = self.data_x.shape
        idx = rng.integers(0, n, size=(m, self.batch_size))
        rows = np.arange(m)[:, None]
        xb = self.data_x[rows, idx]  # (m, B, d)
        yb = self.data_y[rows, idx]  # (m, B)
        s = np.einsum("mbd,md->mb", xb, thetas)
        return np.einsum("mb,mbd->md", _sigmoid(s) - yb, xb) / self.batch_size

    def grad_sample(self, theta: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.data_x.shape[1], size=self.batch_size)
        xb = self.data_x[j, idx]
        yb = self.data_y[j, idx]
        return xb.T @ (_sigmoid(xb @ theta) - yb) / self.batch_size


def make_quadratic_objective(dim, workers, heterogeneity=0.0, noise=1.0,
                             spectrum=(0.5, 1.5), seed=0) -> QuadraticObjective:
    return QuadraticObjective(dim, workers, heterogeneity, noise, spectrum, seed)


def make_nonconvex_objective(dim, workers, amplitude=0.2, frequency=2.0,
                             noise=1.0, rho=0.5, seed=0) -> CosineRippleObjective:
    return CosineRippleObjective(dim, workers, amplitude, frequency, noise, rho, seed)


def make_logistic_objective(dim, workers, samples_per_worker=400, skew=0.7,
                            theta_scale=3.0, batch_size=4,
                            seed=0) -> LogisticObjective:
    return LogisticObjective(dim, workers, samples_per_worker, skew,
                             theta_scale, batch_size, seed=seed)
