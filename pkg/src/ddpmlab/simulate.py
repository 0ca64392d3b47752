"""Stochastic processes: forward chain, reverse-time SDE, DDPM sampler.

Noise contract: every path owns an independent Philox substream keyed by
(seed, path index) and consumes its draws in time order (one optional
uniform for the data draw, then standard normals step by step).  Results
are therefore bit-identical for a given (seed, paths, substeps) regardless
of how paths are chunked or scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .schedule import NoiseSchedule
from .target import GaussianMixtureDensity, GrowthConstants, MarginalLaw, MixtureTarget

__all__ = [
    "TrajectoryBatch",
    "ScoreModel",
    "growth_clip",
    "path_generator",
    "forward_chain",
    "reverse_sde",
    "ddpm_sample",
    "reverse_transition_density",
    "save_trajectories",
]

DIVERGENCE_LIMIT = 1e6
_CHUNK_BUDGET = 8_000_000  # floats per (chunk x steps x d) noise block


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based substream for one path."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunk_size(paths: int, steps: int, d: int, chunk=None) -> int:
    if chunk is not None:
        return max(1, int(chunk))
    return max(256, min(paths, _CHUNK_BUDGET // max(1, steps * d)))


def _draw_block(seed, start, count, steps, d, with_uniform=False):
    """Per-path draws for paths [start, start+count): normals (count, steps, d)
    and optionally one leading uniform per path."""
    normals = np.empty((count, steps, d))
    uniforms = np.empty(count) if with_uniform else None
    for j in range(count):
        gen = path_generator(seed, start + j)
        if with_uniform:
            uniforms[j] = gen.random()
        normals[j] = gen.standard_normal((steps, d))
    return uniforms, normals


@dataclass
class TrajectoryBatch:
    """Simulated paths on a time grid, with the driving noise retained.

    states has shape (paths, len(times), d); noises, when retained, holds the
    standard-normal step draws with shape (paths, len(times)-1, d).
    """

    times: np.ndarray
    states: np.ndarray
    noises: np.ndarray | None
    direction: str
    diverged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.diverged is None:
            self.diverged = np.zeros(self.states.shape[0], dtype=bool)

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def terminal_states(self) -> np.ndarray:
        return self.states[:, -1, :]

    def retained(self) -> np.ndarray:
        """States of the non-diverged paths."""
        return self.states[~self.diverged]

    def noise_sanity(self):
        """Empirical per-step noise mean and variance deviation (diagnostic)."""
        if self.noises is None:
            raise ValueError("batch was simulated without noise retention")
        p = self.paths
        mean_dev = float(np.abs(self.noises.mean(axis=0)).max())
        var_dev = float(np.abs(self.noises.var(axis=0) - 1.0).max())
        return mean_dev, var_dev, bool(
            mean_dev <= 5.0 / math.sqrt(p) and var_dev <= 5.0 * math.sqrt(2.0 / p)
        )


class ScoreModel:
    """Family of per-step denoisers z_i with the derived score forms.

    s_i(x) = -z_i(x)/sqrt(1-abar_i) targets grad log p_i; the interpolated
    s(t, x) = -(1+sqrt(alpha_i))/(2 sqrt(1-abar_i)) z_i(x) for t in
    (t_{i-1}, t_i] drives the piecewise-frozen reverse dynamics; s(0,.) = 0.

    Modes:
      exact      s_i is the true marginal score.
      perturbed  s_i = true + bias + amplitude * sin(omega x + phase_i).
      clipped    wraps another model, enforcing |s_i| <= B_i (see growth_clip).
      zero       z_i = s_i = 0 (degenerate denoiser, useful as an OU oracle).
    """

    def __init__(self, target: MixtureTarget, schedule: NoiseSchedule,
                 mode: str = "exact", bias=None, noise_amplitude: float = 0.0,
                 _clip=None):
        if mode not in ("exact", "perturbed", "clipped", "zero"):
            raise ValueError(f"unknown score model mode {mode!r}")
        self.target = target
        self.schedule = schedule
        self.mode = mode
        self.bias = None if bias is None else np.atleast_1d(np.asarray(bias, float))
        self.noise_amplitude = float(noise_amplitude)
        self._clip = _clip  # (inner_model, growth_constants, variant)
        self._marginals: dict[int, MarginalLaw] = {}

    def _marginal(self, i: int) -> MarginalLaw:
        law = self._marginals.get(i)
        if law is None:
            law = self.target.marginal_at(self.schedule, self.schedule.times[i])
            self._marginals[i] = law
        return law

    def growth_bound(self, i: int, x) -> np.ndarray:
        """Growth envelope B_i(x) = c0/sqrt(abar_i) + (c1/abar_i)|x|."""
        _, envelope, _ = self._clip
        abar = self.schedule.alpha_bars[i - 1]
        r = np.sqrt(np.sum(np.asarray(x, float) ** 2, axis=-1))
        return envelope.c0 / math.sqrt(abar) + (envelope.c1 / abar) * r

    def s_step(self, i: int, x) -> np.ndarray:
        """s_i(x) for step i in 1..n."""
        if not 1 <= i <= self.schedule.n:
            raise ValueError("step index out of range")
        x = np.asarray(x, dtype=float)
        if self.mode == "zero":
            return np.zeros_like(x)
        if self.mode == "clipped":
            inner, _, variant = self._clip
            s = inner.s_step(i, x)
            bound = self.growth_bound(i, x)
            norm = np.sqrt(np.sum(s * s, axis=-1))
            over = norm > bound
            if not np.any(over):
                return s
            s = s.copy()
            if variant == "oracle":
                s[over] = self._marginal(i).score(x[over])
            else:
                s[over] *= (bound[over] / norm[over])[..., None]
            return s
        s = self._marginal(i).score(x)
        if self.mode == "perturbed":
            if self.bias is not None:
                s = s + self.bias
            if self.noise_amplitude != 0.0:
                phase = 2.0 * math.pi * ((i * 0.6180339887498949) % 1.0)
                s = s + self.noise_amplitude * np.sin(2.0 * x + phase)
        return s

    def z_step(self, i: int, x) -> np.ndarray:
        """Denoiser z_i(x) = -sqrt(1-abar_i) s_i(x)."""
        abar = self.schedule.alpha_bars[i - 1]
        return -math.sqrt(1.0 - abar) * self.s_step(i, x)

    def s_frozen(self, i: int, x) -> np.ndarray:
        """s(t, x) for t in (t_{i-1}, t_i], addressed by the step index.

        Equals -(1+sqrt(alpha_i))/(2 sqrt(1-abar_i)) z_i(x).
        """
        alpha = self.schedule.alphas[i - 1]
        return 0.5 * (1.0 + math.sqrt(alpha)) * self.s_step(i, x)

    def s_interp(self, t: float, x) -> np.ndarray:
        """Piecewise score s(t, x); t = 0 returns zero."""
        x = np.asarray(x, dtype=float)
        if t == 0.0:
            return np.zeros_like(x)
        return self.s_frozen(int(self.schedule.interval_index(t)), x)


def growth_clip(score_model: ScoreModel, envelope: GrowthConstants,
            schedule: NoiseSchedule | None = None,
            variant: str = "oracle") -> ScoreModel:
    """Clip a model to the growth envelope B_i.

    variant="oracle" substitutes the true marginal score wherever the model
    exceeds B_i (never increases the pointwise error); variant="projection"
    rescales onto the boundary when no analytic target is available.
    """
    if variant not in ("oracle", "projection"):
        raise ValueError("variant must be 'oracle' or 'projection'")
    if variant == "oracle" and score_model.target is None:
        raise ValueError("oracle-variant clipping needs an attached analytic target")
    schedule = schedule or score_model.schedule
    return ScoreModel(score_model.target, schedule, mode="clipped",
                      _clip=(score_model, envelope, variant))


def forward_chain(target: MixtureTarget, schedule: NoiseSchedule, paths: int,
                  seed: int, record: str = "full", chunk=None) -> TrajectoryBatch:
    """Forward Markov chain x_i = sqrt(alpha_i) x_{i-1} + sqrt(1-alpha_i) Z_i."""
    if paths < 1:
        raise ValueError("paths must be >= 1")
    n, d = schedule.n, target.d
    sqrt_a = np.sqrt(schedule.alphas)
    sqrt_v = np.sqrt(1.0 - schedule.alphas)
    full = record == "full"
    states = np.empty((paths, n + 1, d)) if full else np.empty((paths, 2, d))
    noises = np.empty((paths, n, d)) if full else None
    csize = _chunk_size(paths, n + 1, d, chunk)
    chol = np.linalg.cholesky(target.covariance)
    for start in range(0, paths, csize):
        count = min(csize, paths - start)
        u, z = _draw_block(seed, start, count, n + 1, d, with_uniform=True)
        comp = np.minimum(np.searchsorted(np.cumsum(target.weights), u),
                          target.n_components - 1)
        x = target.means[comp] + z[:, 0, :] @ chol.T
        sl = slice(start, start + count)
        states[sl, 0] = x
        if full:
            noises[sl] = z[:, 1:, :]
        for i in range(1, n + 1):
            x = sqrt_a[i - 1] * x + sqrt_v[i - 1] * z[:, i, :]
            if full:
                states[sl, i] = x
        if not full:
            states[sl, 1] = x
    times = schedule.times if full else np.array([0.0, 1.0])
    return TrajectoryBatch(times=times, states=states, noises=noises,
                           direction="forward")


def _reverse_grid(schedule: NoiseSchedule, substeps: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, schedule.n * substeps + 1)


def _exact_marginals(target, schedule, grid):
    """Marginal laws p_{1-r} for every reverse grid point r."""
    return [target.marginal_at(schedule, 1.0 - r) for r in grid]


def reverse_sde(source, schedule: NoiseSchedule, substeps: int, paths: int,
                seed: int, score_mode: str = "exact", record: str = "full",
                chunk=None) -> TrajectoryBatch:
    """Integrate the reverse-time SDE from X*_0 ~ N(0, I).

    score_mode="exact": Euler-Maruyama with the true marginal score at the
    current state (source must be a MixtureTarget).  score_mode="model":
    `source` is a ScoreModel and the drift holds s(1 - tau_n(t), .) frozen at
    the interval-start state; with substeps == 1 each interval is advanced by
    the exact exponential-integrator update, which reproduces the DDPM
    recursion pathwise under shared noise.

    Paths whose state exceeds 1e6 in norm are frozen and flagged in
    `diverged` rather than aborting the batch.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if score_mode not in ("exact", "model"):
        raise ValueError("score_mode must be 'exact' or 'model'")
    if score_mode == "exact" and not isinstance(source, GaussianMixtureDensity):
        raise TypeError("exact mode integrates against an analytic target")
    if score_mode == "model" and not isinstance(source, ScoreModel):
        raise TypeError("model mode needs a ScoreModel")
    target = source if score_mode == "exact" else source.target
    n, d = schedule.n, target.d
    grid = _reverse_grid(schedule, substeps)
    nsteps = grid.size - 1
    h = 1.0 / nsteps
    # forward step index of the interval covering reverse substep k, and the
    # constant beta over that substep (index arithmetic, no knot rounding)
    step_interval = n - np.arange(nsteps) // substeps
    beta_rev = -n * schedule.log_alphas[step_interval - 1]
    marginals = _exact_marginals(target, schedule, grid) if score_mode == "exact" else None

    full = record == "full"
    states = np.empty((paths, grid.size, d)) if full else np.empty((paths, 2, d))
    noises = np.empty((paths, nsteps, d)) if full else None
    diverged = np.zeros(paths, dtype=bool)
    csize = _chunk_size(paths, nsteps + 1, d, chunk)
    for start in range(0, paths, csize):
        count = min(csize, paths - start)
        _, z = _draw_block(seed, start, count, nsteps + 1, d)
        x = z[:, 0, :].copy()
        alive = np.ones(count, dtype=bool)
        sl = slice(start, start + count)
        if full:
            states[sl, 0] = x
            noises[sl] = z[:, 1:, :]
        else:
            states[sl, 0] = x
        frozen = None
        for k in range(nsteps):
            beta = beta_rev[k]
            if score_mode == "exact":
                drift = 0.5 * beta * x + beta * marginals[k].score(x)
                x_new = x + drift * h + math.sqrt(beta * h) * z[:, k + 1, :]
            else:
                i = int(step_interval[k])
                if k % substeps == 0:
                    frozen = source.s_frozen(i, x)
                if substeps == 1:
                    alpha = schedule.alphas[i - 1]
                    ra = math.sqrt(alpha)
                    x_new = (x / ra + 2.0 * frozen * (1.0 - ra) / ra
                             + math.sqrt((1.0 - alpha) / alpha) * z[:, k + 1, :])
                else:
                    drift = 0.5 * beta * x + beta * frozen
                    x_new = x + drift * h + math.sqrt(beta * h) * z[:, k + 1, :]
            blown = np.sqrt(np.sum(x_new * x_new, axis=-1)) > DIVERGENCE_LIMIT
            newly = alive & blown
            if np.any(newly):
                alive &= ~blown
            x = np.where(alive[:, None], x_new, x)
            if full:
                states[sl, k + 1] = x
        if not full:
            states[sl, 1] = x
        diverged[sl] = ~alive
    times = grid if full else np.array([0.0, 1.0])
    return TrajectoryBatch(times=times, states=states, noises=noises,
                           direction="reverse", diverged=diverged)


def ddpm_sample(score_model: ScoreModel, schedule: NoiseSchedule, paths: int,
                seed: int, final_noise: bool = True, record: str = "full",
                chunk=None) -> TrajectoryBatch:
    """Run the discrete sampler x*_n = xi_n, then for i = n..1

        x*_{i-1} = (x*_i - (1-alpha_i)/sqrt(1-abar_i) z_i(x*_i))/sqrt(alpha_i)
                   + sigma_i xi_i,

    omitting the i = 1 noise when final_noise is False.  States are stored on
    the reverse-time grid: column j holds x*_{n-j}.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    n, d = schedule.n, score_model.target.d
    alphas = schedule.alphas
    abars = schedule.alpha_bars
    sigmas = schedule.sigmas
    full = record == "full"
    states = np.empty((paths, n + 1, d)) if full else np.empty((paths, 2, d))
    noises = np.empty((paths, n, d)) if full else None
    diverged = np.zeros(paths, dtype=bool)
    csize = _chunk_size(paths, n + 1, d, chunk)
    for start in range(0, paths, csize):
        count = min(csize, paths - start)
        _, z = _draw_block(seed, start, count, n + 1, d)
        x = z[:, 0, :].copy()
        alive = np.ones(count, dtype=bool)
        sl = slice(start, start + count)
        states[sl, 0] = x
        if full:
            noises[sl] = z[:, 1:, :]
        for j in range(n):
            i = n - j
            coeff = (1.0 - alphas[i - 1]) / math.sqrt(1.0 - abars[i - 1])
            x_new = (x - coeff * score_model.z_step(i, x)) / math.sqrt(alphas[i - 1])
            if i > 1 or final_noise:
                x_new = x_new + sigmas[i - 1] * z[:, j + 1, :]
            blown = np.sqrt(np.sum(x_new * x_new, axis=-1)) > DIVERGENCE_LIMIT
            alive &= ~blown
            x = np.where(alive[:, None], x_new, x)
            if full:
                states[sl, j + 1] = x
        if not full:
            states[sl, 1] = x
        diverged[sl] = ~alive
    times = schedule.times if full else np.array([0.0, 1.0])
    return TrajectoryBatch(times=times, states=states, noises=noises,
                           direction="ddpm", diverged=diverged)


def reverse_transition_density(target: MixtureTarget, schedule: NoiseSchedule,
                               t: float, x, r: float, y) -> np.ndarray:
    """Transition density p*(t, x, r, y) of the exact reverse-time diffusion.

    p* = exp((d/2) int_t^r beta_{1-u} du) * p_{1-r}(y)/p_{1-t}(x) * q(t,x,r,y)
    with q the expanding-OU kernel; evaluated in log space for stability.
    """
    if not (0.0 < t < r < 1.0):
        raise ValueError("need 0 < t < r < 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = target.d
    br = schedule.bridge(1.0 - r, 1.0 - t)
    m, s2 = br.m, br.s**2
    int_beta = schedule.integrated_beta(1.0 - t) - schedule.integrated_beta(1.0 - r)
    log_pref = 0.5 * d * int_beta
    log_q = (d * math.log(m) - 0.5 * d * math.log(2.0 * math.pi * s2)
             - 0.5 * (m**2 / s2) * np.sum((y - x / m) ** 2, axis=-1))
    log_ratio = (target.marginal_at(schedule, 1.0 - r).logpdf(y)
                 - target.marginal_at(schedule, 1.0 - t).logpdf(x))
    return np.exp(log_pref + log_ratio + log_q)


def save_trajectories(batch: TrajectoryBatch, path) -> None:
    """CSV dump: path,time_index,t,dim_0..dim_{d-1} at 17 significant digits."""
    d = batch.d
    header = "path,time_index,t," + ",".join(f"dim_{j}" for j in range(d))
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for p in range(batch.paths):
            for k, t in enumerate(batch.times):
                vals = ",".join(f"{v:.17g}" for v in batch.states[p, k])
                fh.write(f"{p},{k},{t:.17g},{vals}\n")
