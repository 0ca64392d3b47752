"""Analytic target distributions: shared-precision Gaussian mixtures.

This family is closed under the forward noising kernel, so the law at any
intermediate time, its score, its Hessian of log density, and even third
derivatives are all available in closed form.  That makes it the exact
oracle against which every sampler and bound in this package is audited.

Derivative identities used throughout (pi_k are the posterior component
weights at x, m_k = Sigma^{-1}(mu_k - x), gbar = sum_k pi_k m_k):

    grad log p      = gbar
    hess log p      = -Sigma^{-1} + Cov_pi(m)
    third deriv     = third central moment of m under pi  (fully symmetric)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "GaussianMixtureDensity",
    "MixtureTarget",
    "MarginalLaw",
    "GrowthConstants",
    "gaussian_target",
    "symmetric_mixture",
    "growth_constants",
    "fokker_planck_residual",
    "default_axis",
    "save_target",
    "load_target",
]


@dataclass(frozen=True)
class GrowthConstants:
    """Gradient/Hessian envelope constants of the data density.

    c0 dominates both |grad log p + Qx| and |hess log p| (Frobenius norm),
    c1 strictly exceeds the largest eigenvalue of Q.
    """

    c0: float
    c1: float
    lambda_min: float


class GaussianMixtureDensity:
    """Mixture of Gaussians with one shared covariance matrix.

    All evaluation methods accept points of shape (..., d) and broadcast
    over the leading axes.  Instances are immutable and thread-safe.
    """

    def __init__(self, weights, means, covariance):
        w = np.asarray(weights, dtype=float)
        mu = np.atleast_2d(np.asarray(means, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if w.ndim != 1 or w.size != mu.shape[0]:
            raise ValueError("one weight per component required")
        if np.any(w <= 0.0):
            raise ValueError("weights must be positive")
        if cov.shape != (mu.shape[1], mu.shape[1]):
            raise ValueError("covariance shape must match the dimension")
        if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance must be symmetric")
        self.weights = w / w.sum()
        self.weights.flags.writeable = False
        self.means = mu.copy()
        self.means.flags.writeable = False
        self.covariance = 0.5 * (cov + cov.T)
        self.covariance.flags.writeable = False
        try:
            self._chol = np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        self.precision = np.linalg.inv(self.covariance)
        self.precision = 0.5 * (self.precision + self.precision.T)
        self.precision.flags.writeable = False
        self._log_norm = -0.5 * self.d * math.log(2.0 * math.pi) - np.log(
            np.diag(self._chol)
        ).sum()
        self._log_w = np.log(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def _component_logpdf(self, x):
        """Log density of each component at x; shape (..., K)."""
        x = np.asarray(x, dtype=float)
        diff = x[..., None, :] - self.means  # (..., K, d)
        sol = np.einsum("ij,...kj->...ki", self.precision, diff)
        return self._log_norm - 0.5 * np.einsum("...ki,...ki->...k", diff, sol)

    def logpdf(self, x):
        return logsumexp(self._component_logpdf(x) + self._log_w, axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def posterior_weights(self, x):
        """pi_k(x), summing to 1 at every x; shape (..., K)."""
        logits = self._component_logpdf(x) + self._log_w
        logits -= logsumexp(logits, axis=-1, keepdims=True)
        return np.exp(logits)

    def score(self, x):
        """grad log p(x), shape (..., d)."""
        x = np.asarray(x, dtype=float)
        pi = self.posterior_weights(x)
        mk = np.einsum("ij,...kj->...ki", self.precision, self.means - x[..., None, :])
        return np.einsum("...k,...ki->...i", pi, mk)

    def hessian_log(self, x):
        """hess log p(x), symmetric, shape (..., d, d)."""
        x = np.asarray(x, dtype=float)
        pi = self.posterior_weights(x)
        mk = np.einsum("ij,...kj->...ki", self.precision, self.means - x[..., None, :])
        gbar = np.einsum("...k,...ki->...i", pi, mk)
        second = np.einsum("...k,...ki,...kj->...ij", pi, mk, mk)
        return -self.precision + second - gbar[..., :, None] * gbar[..., None, :]

    def score_laplacian(self, x):
        """Componentwise Laplacian of the score, shape (..., d).

        Equals the (k, a, a)-trace of the third derivative tensor of log p,
        which is the third central moment of m_k under the posterior.
        """
        x = np.asarray(x, dtype=float)
        pi = self.posterior_weights(x)
        mk = np.einsum("ij,...kj->...ki", self.precision, self.means - x[..., None, :])
        gbar = np.einsum("...k,...ki->...i", pi, mk)
        cen = mk - gbar[..., None, :]
        # trace over the last two slots of the central third moment
        return np.einsum("...k,...ki,...ka,...ka->...i", pi, cen, cen, cen)

    def third_log_derivative(self, x):
        """Full third derivative tensor of log p, shape (..., d, d, d)."""
        x = np.asarray(x, dtype=float)
        pi = self.posterior_weights(x)
        mk = np.einsum("ij,...kj->...ki", self.precision, self.means - x[..., None, :])
        gbar = np.einsum("...k,...ki->...i", pi, mk)
        cen = mk - gbar[..., None, :]
        return np.einsum("...k,...ka,...kb,...kc->...abc", pi, cen, cen, cen)

    def grad_pdf(self, x):
        return self.pdf(x)[..., None] * self.score(x)

    def laplacian_pdf(self, x):
        """Laplacian of the density itself: p * (tr hess log p + |grad log p|^2)."""
        g = self.score(x)
        h = self.hessian_log(x)
        return self.pdf(x) * (np.trace(h, axis1=-2, axis2=-1) + np.sum(g * g, axis=-1))

    def second_moment(self) -> float:
        """E|X|^2 = sum_k w_k (|mu_k|^2 + tr Sigma)."""
        return float(
            np.dot(self.weights, np.sum(self.means**2, axis=1))
            + np.trace(self.covariance)
        )

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, generator, size: int) -> np.ndarray:
        """Draw samples; consumes `size` uniforms then `size*d` normals."""
        u = generator.random(size)
        comp = np.searchsorted(np.cumsum(self.weights), u)
        comp = np.minimum(comp, self.n_components - 1)
        z = generator.standard_normal((size, self.d))
        return self.means[comp] + z @ self._chol.T

    def cdf_1d(self, x):
        """Mixture CDF; only defined in dimension 1."""
        if self.d != 1:
            raise ValueError("cdf_1d requires d == 1")
        from scipy.stats import norm

        x = np.asarray(x, dtype=float)
        std = math.sqrt(self.covariance[0, 0])
        z = (x[..., None] - self.means[:, 0]) / std
        return norm.cdf(z) @ self.weights


class MixtureTarget(GaussianMixtureDensity):
    """Data distribution: shared-precision Gaussian mixture.

    Constructed from the precision matrix Q so the growth-envelope
    constants refer to the exact matrix used by the bounds.
    """

    def __init__(self, weights, means, precision):
        q = np.atleast_2d(np.asarray(precision, dtype=float))
        if np.max(np.abs(q - q.T)) > 1e-12 * max(1.0, np.max(np.abs(q))):
            raise ValueError("precision must be symmetric")
        eigvals = np.linalg.eigvalsh(0.5 * (q + q.T))
        if eigvals.min() <= 0.0:
            raise ValueError("precision must be positive definite")
        super().__init__(weights, means, np.linalg.inv(0.5 * (q + q.T)))
        self.q = 0.5 * (q + q.T)
        self.q.flags.writeable = False
        self._q_eigvals = eigvals

    def marginal_at(self, schedule, t: float) -> "MarginalLaw":
        """Law of the forward process at time t (exact OU pushforward)."""
        return MarginalLaw(self, schedule, t)

    def growth_constants(self) -> GrowthConstants:
        return growth_constants(self)


class MarginalLaw(GaussianMixtureDensity):
    """Time-t law of the noised target: means shrink by m, covariance
    becomes m^2 Sigma + s^2 I with (m, s) the bridge coefficients over [0, t].
    """

    def __init__(self, target: MixtureTarget, schedule, t: float):
        if not (0.0 <= t <= 1.0):
            raise ValueError("t must lie in [0, 1]")
        br = schedule.bridge(0.0, t)
        cov = br.m**2 * target.covariance + br.s**2 * np.eye(target.d)
        super().__init__(target.weights, br.m * target.means, cov)
        self.t = float(t)
        self.m = br.m
        self.s = br.s
        self.target = target


def gaussian_target(mean, precision=None) -> MixtureTarget:
    """Single-Gaussian target N(mean, Q^{-1}); defaults to identity precision."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if precision is None:
        precision = np.eye(mean.size)
    return MixtureTarget([1.0], mean[None, :], precision)


def symmetric_mixture(separation: float = 2.0, weight: float = 0.5) -> MixtureTarget:
    """1D two-component mixture w N(-a, 1) + (1-w) N(+a, 1) with unit precision."""
    return MixtureTarget([weight, 1.0 - weight], [[-separation], [separation]], [[1.0]])


def growth_constants(target: MixtureTarget, c1_margin: float = 1.1) -> GrowthConstants:
    """Conservative closed-form envelope constants for a mixture target.

    |grad log p + Qx| <= |Q|_F max_k |mu_k| and
    |hess log p| <= |Q|_F + |Q|_F^2 * (max pairwise mean spread)^2;
    c0 is the larger of the two, c1 = c1_margin * lambda_max(Q).
    """
    q_fro = float(np.linalg.norm(target.q, "fro"))
    mu_norm_max = float(np.sqrt(np.sum(target.means**2, axis=1)).max())
    diffs = target.means[:, None, :] - target.means[None, :, :]
    spread = float(np.sqrt(np.sum(diffs**2, axis=-1)).max())
    grad_bound = q_fro * mu_norm_max
    hess_bound = q_fro + q_fro**2 * spread**2
    return GrowthConstants(
        c0=max(grad_bound, hess_bound),
        c1=c1_margin * float(target._q_eigvals.max()),
        lambda_min=float(target._q_eigvals.min()),
    )


def default_axis(target: GaussianMixtureDensity, points: int = 2001) -> np.ndarray:
    """Evaluation axis over +/- (max |mu_k| + 6 sigma_max).

    sigma_max is taken as at least 1 so the same axis also covers every
    time marginal (whose covariance interpolates toward the identity).
    """
    mu_max = float(np.sqrt(np.sum(target.means**2, axis=1)).max())
    sig = math.sqrt(max(float(np.linalg.eigvalsh(target.covariance).max()), 1.0))
    half = mu_max + 6.0 * sig
    return np.linspace(-half, half, points)


def fokker_planck_residual(target: MixtureTarget, schedule, t: float, points,
                           dt: float = 1e-6):
    """Residual of the forward Kolmogorov equation at interior time t.

    d/dt p_t - beta/2 * sum_j d/dy_j (y_j p_t) - beta/2 * lap p_t, with the
    spatial terms analytic and d/dt by centered differences inside the same
    beta interval.  Returns (max_abs, rms, max_density).
    """
    if target.d > 2:
        raise ValueError("residual audit is restricted to d <= 2")
    knots = schedule.times
    if np.min(np.abs(knots - t)) <= 2.0 * dt:
        raise ValueError("t must be interior to a beta interval (away from knots)")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    beta = float(schedule.beta(t))
    law = target.marginal_at(schedule, t)
    p = law.pdf(pts)
    grad = law.grad_pdf(pts)
    lap = law.laplacian_pdf(pts)
    p_plus = target.marginal_at(schedule, t + dt).pdf(pts)
    p_minus = target.marginal_at(schedule, t - dt).pdf(pts)
    dp_dt = (p_plus - p_minus) / (2.0 * dt)
    divergence = target.d * p + np.einsum("...i,...i->...", pts, grad)
    res = dp_dt - 0.5 * beta * divergence - 0.5 * beta * lap
    return float(np.abs(res).max()), float(np.sqrt(np.mean(res**2))), float(p.max())


def save_target(target: MixtureTarget, path) -> None:
    """Plain-text block: d=, K=, one 'w,mu...' line per component, then Q rows."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"d={target.d}\n")
        fh.write(f"K={target.n_components}\n")
        for w, mu in zip(target.weights, target.means):
            fh.write(",".join(f"{v:.17g}" for v in (w, *mu)) + "\n")
        for row in target.q:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_target(path) -> MixtureTarget:
    with open(path) as fh:
        d = int(fh.readline().strip().split("=")[1])
        k = int(fh.readline().strip().split("=")[1])
        weights, means = [], []
        for _ in range(k):
            vals = [float(v) for v in fh.readline().split(",")]
            weights.append(vals[0])
            means.append(vals[1:])
        q = [[float(v) for v in fh.readline().split(",")] for _ in range(d)]
    return MixtureTarget(weights, means, q)
