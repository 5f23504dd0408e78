"""Noise schedules, the truncated forward process, and path sampling.

The sampler never starts from pure noise: it fuses a selected motion
primitive with Gaussian noise at the truncation step, then runs a short
deterministic DDIM sweep under the clean-path parameterization. A vanilla
ancestral DDPM sampler over the full schedule exists for baseline runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import net
from .path import Path, TASK
from .rngs import seeded_rng


@dataclass(eq=False)
class NoiseSchedule:
    t_max: int
    t_trunc: int
    betas: np.ndarray          # (t_max,), beta^1..beta^{t_max}
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t):
        """Cumulative product at step t; t = 0 is the identity (no noise)."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def alpha(self, t):
        return float(self.alphas[t - 1])

    def beta(self, t):
        return float(self.betas[t - 1])


def build_schedule(kind="scaled_linear", t_max=1200, t_trunc=50, beta_min=1e-4, beta_max=2e-2):
    """Scaled-linear schedule (linear in sqrt(beta)); truncation must be proper."""
    if kind != "scaled_linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if not (0.0 < beta_min < beta_max < 1.0):
        raise ValueError("need 0 < beta_min < beta_max < 1")
    if not (1 <= t_trunc < t_max):
        raise ValueError(f"truncation {t_trunc} must lie in [1, t_max) = [1, {t_max})")
    betas = np.linspace(math.sqrt(beta_min), math.sqrt(beta_max), t_max) ** 2
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(t_max=int(t_max), t_trunc=int(t_trunc), betas=betas,
                         alphas=alphas, alpha_bars=alpha_bars)


def schedule_from_alphas(alphas, t_trunc):
    """Schedule from explicit per-step alphas (tests and hand examples)."""
    alphas = np.asarray(alphas, dtype=float)
    return NoiseSchedule(t_max=len(alphas), t_trunc=int(t_trunc), betas=1.0 - alphas,
                         alphas=alphas, alpha_bars=np.cumprod(alphas))


# ---------------------------------------------------------------------------
# forward processes


def forward_truncated(prim_states, schedule, eps, t=None):
    """Fuse the primitive with Gaussian noise at the truncation step."""
    if t is None:
        t = schedule.t_trunc
    if not 1 <= t <= schedule.t_trunc:
        raise ValueError(f"truncated forward needs t in [1, {schedule.t_trunc}]")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * np.asarray(prim_states) + math.sqrt(1.0 - ab) * np.asarray(eps)


def forward_marginal(x0, schedule, t, eps):
    """Closed-form marginal of the stepwise kernel; t = 0 returns x0."""
    if not 0 <= t <= schedule.t_max:
        raise ValueError(f"t must lie in [0, {schedule.t_max}]")
    if t == 0:
        return np.array(x0, copy=True)
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(eps)


def forward_step(x_prev, schedule, t, eps):
    """One application of the per-step noising kernel."""
    a = schedule.alpha(t)
    return math.sqrt(a) * np.asarray(x_prev) + math.sqrt(1.0 - a) * np.asarray(eps)


# ---------------------------------------------------------------------------
# primitive selection


def select_primitives(enc, lib, n, weights, den_cfg):
    """Top-n primitives by classifier probability, without replacement.

    Descending probability; exact ties resolve to the lower index.
    """
    if n > lib.k:
        raise ValueError(f"cannot select {n} of {lib.k} primitives")
    logits = net.classify(weights, den_cfg, enc)
    z = logits - logits.max()
    probs = np.exp(z) / np.exp(z).sum()
    order = np.lexsort((np.arange(lib.k), -probs))[:n]
    return [(int(i), lib.centroid_path(int(i))) for i in order]


def ddim_step_sequence(t_trunc, n_steps):
    """Evenly spaced descending timesteps ending with a jump to 0."""
    if not 1 <= n_steps <= t_trunc:
        raise ValueError(f"DDIM step count must lie in [1, {t_trunc}]")
    ts = sorted({int(math.ceil(t_trunc * (n_steps - i) / n_steps)) for i in range(n_steps)},
                reverse=True)
    return [(t, t_next) for t, t_next in zip(ts, ts[1:] + [0])]


def _project_headings(states):
    out = states.astype(float)
    norm = np.hypot(out[..., 2], out[..., 3])
    norm = np.where(norm < 1e-12, 1.0, norm)
    out[..., 2] /= norm
    out[..., 3] /= norm
    return out


# ---------------------------------------------------------------------------
# samplers


def sample_ptdm(enc, lib, schedule, weights, den_cfg, n_samples, ddim_steps=2, seed=0,
                denoise_fn=None):
    """Primitive-anchored truncated sampling.

    Per selected primitive, draw the noisy-primitive state at the truncation
    step, then run the deterministic DDIM sweep (eta = 0) with the network
    predicting the clean path at each step. Returns (paths, primitive
    indices, denoiser call count); paths live in the task frame with unit
    heading pairs.
    """
    if denoise_fn is None:
        denoise_fn = lambda x, t: net.denoise(weights, den_cfg, x.astype(np.float32), t, enc)[0]
    chosen = select_primitives(enc, lib, n_samples, weights, den_cfg)
    prims = np.stack([c.states for _, c in chosen])
    rng = seeded_rng(seed, 606)
    eps = rng.standard_normal(prims.shape)
    x = forward_truncated(prims, schedule, eps)
    calls = 0
    for t, t_next in ddim_step_sequence(schedule.t_trunc, ddim_steps):
        x0_hat = np.asarray(denoise_fn(x, t), dtype=float)
        calls += 1
        ab_t = schedule.alpha_bar(t)
        ab_n = schedule.alpha_bar(t_next)
        eps_hat = (x - math.sqrt(ab_t) * x0_hat) / math.sqrt(1.0 - ab_t)
        x = math.sqrt(ab_n) * x0_hat + math.sqrt(1.0 - ab_n) * eps_hat
    paths = [Path(_project_headings(row), TASK) for row in x]
    return paths, [i for i, _ in chosen], calls


def sample_vanilla_ddpm(enc, schedule, weights, den_cfg, n_samples, path_shape, seed=0,
                        denoise_fn=None):
    """Ancestral sampling from pure Gaussian noise over the full schedule.

    Runs exactly t_max denoiser calls under the same clean-path
    parameterization as the truncated sampler; baseline use only.
    """
    if denoise_fn is None:
        denoise_fn = lambda x, t: net.denoise(weights, den_cfg, x.astype(np.float32), t, enc)[0]
    rng = seeded_rng(seed, 707)
    x = rng.standard_normal((n_samples,) + tuple(path_shape))
    calls = 0
    for t in range(schedule.t_max, 0, -1):
        x0_hat = np.asarray(denoise_fn(x, t), dtype=float)
        calls += 1
        ab_t = schedule.alpha_bar(t)
        ab_p = schedule.alpha_bar(t - 1)
        beta = schedule.beta(t)
        alpha = schedule.alpha(t)
        mu = (math.sqrt(ab_p) * beta / (1.0 - ab_t)) * x0_hat \
            + (math.sqrt(alpha) * (1.0 - ab_p) / (1.0 - ab_t)) * x
        if t > 1:
            sigma = math.sqrt((1.0 - ab_p) / (1.0 - ab_t) * beta)
            x = mu + sigma * rng.standard_normal(x.shape)
        else:
            x = mu
    paths = [Path(_project_headings(row), TASK) for row in x]
    return paths, calls
