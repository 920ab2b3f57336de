"""Differentially private SGD: per-sample clipping, Gaussian noise, accounting.

Each training step computes one gradient per example, clips every gradient
to L2 norm ``clip_norm``, sums the clipped gradients, perturbs the sum with
i.i.d. Gaussian noise of standard deviation ``noise_multiplier * clip_norm``
per coordinate, and applies the averaged result with plain SGD.

Accounting composes the Gaussian mechanism's curve, ``alpha / (2 m^2)`` at
order ``alpha`` for noise multiplier ``m``, across steps and converts with
the tightest order. The composition deliberately ignores subsampling
amplification: the bound stays valid for any batch selection rule, and the
sampling rate is surfaced so the slack is visible to callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from privadapt import nets
from privadapt.privacy import (
    DEFAULT_ALPHAS,
    PrivacyBudget,
    RdpCurve,
    best_dp,
    compose_repeated,
)

__all__ = [
    "DpsgdConfig",
    "clip_gradient",
    "clip_per_sample",
    "noisy_step",
    "per_step_rdp",
    "dpsgd_account",
    "calibrate_noise_multiplier",
    "max_steps_within",
    "dpsgd_train",
]


@dataclass(frozen=True)
class DpsgdConfig:
    clip_norm: float
    noise_multiplier: float
    batch_size: int
    dataset_size: int
    learning_rate: float
    steps: int

    def __post_init__(self) -> None:
        if not self.clip_norm > 0.0:  # math.inf is a legal no-clipping sentinel
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if not self.noise_multiplier > 0.0:
            raise ValueError(f"noise_multiplier must be positive, got {self.noise_multiplier}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.batch_size > self.dataset_size:
            raise ValueError("need 1 <= batch_size <= dataset_size")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")

    @property
    def sampling_rate(self) -> float:
        return self.batch_size / self.dataset_size

    @property
    def noise_std(self) -> float:
        """Per-coordinate noise on the summed gradient."""
        return self.noise_multiplier * self.clip_norm


def clip_gradient(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``grad`` by ``min(1, clip_norm / ||grad||)``; a projection."""
    if not clip_norm > 0.0:
        raise ValueError(f"clip_norm must be positive, got {clip_norm}")
    if math.isinf(clip_norm):
        return np.array(grad, dtype=float)
    norm = float(np.linalg.norm(grad))
    factor = min(1.0, clip_norm / norm) if norm > 0.0 else 1.0
    return np.asarray(grad, dtype=float) * factor


def clip_per_sample(per_sample_grads: Sequence[np.ndarray], clip_norm: float) -> list[np.ndarray]:
    """Clip every per-example gradient to L2 norm at most ``clip_norm``."""
    return [clip_gradient(g, clip_norm) for g in per_sample_grads]


def noisy_step(
    clipped_grads: Sequence[np.ndarray],
    config: DpsgdConfig,
    params: np.ndarray,
    rng: np.random.Generator,
    noise_free: bool = False,
) -> np.ndarray:
    """One private update on a flat parameter vector.

    Applies ``params - lr * (sum(grads) + noise) / batch_size`` where the
    noise is i.i.d. Gaussian with std ``noise_multiplier * clip_norm``.
    ``noise_free`` skips the draw entirely (debugging aid); combined with an
    infinite ``clip_norm`` the step is exactly vanilla minibatch SGD.
    """
    if len(clipped_grads) == 0:
        raise ValueError("need at least one gradient")
    total = np.zeros_like(params)
    for grad in clipped_grads:
        if grad.shape != params.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match params {params.shape}")
        total = total + grad
    if not noise_free:
        total = total + rng.normal(0.0, config.noise_std, size=params.shape)
    return params - config.learning_rate * total / config.batch_size


def per_step_rdp(noise_multiplier: float, alphas: Sequence[float] = DEFAULT_ALPHAS) -> RdpCurve:
    """Gaussian-mechanism curve for one step: ``alpha / (2 m^2)``."""
    if not noise_multiplier > 0.0:
        raise ValueError(f"noise_multiplier must be positive, got {noise_multiplier}")
    grid = tuple(float(a) for a in alphas)
    return RdpCurve(grid, tuple(a / (2.0 * noise_multiplier**2) for a in grid))


def dpsgd_account(
    config: DpsgdConfig, delta: float, alphas: Sequence[float] = DEFAULT_ALPHAS
) -> PrivacyBudget:
    """Privacy spent by ``config.steps`` updates, via plain composition."""
    if config.steps == 0:
        return PrivacyBudget(0.0, delta)
    curve = compose_repeated(per_step_rdp(config.noise_multiplier, alphas), config.steps)
    return best_dp(curve, delta).budget


def calibrate_noise_multiplier(
    steps: int,
    delta: float,
    target_epsilon: float,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
) -> float:
    """Smallest noise multiplier whose ``steps``-step account fits the target.

    Bisection over the multiplier; the account is monotone decreasing in it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not target_epsilon > 0.0:
        raise ValueError("target_epsilon must be positive")

    def eps(multiplier: float) -> float:
        curve = compose_repeated(per_step_rdp(multiplier, alphas), steps)
        return best_dp(curve, delta).budget.epsilon

    lo, hi = 1e-3, 1.0
    while eps(hi) > target_epsilon:
        hi *= 2.0
        if hi > 1e9:
            raise RuntimeError("calibration diverged")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if eps(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
    return hi


def max_steps_within(
    noise_multiplier: float,
    batch_size: int,
    dataset_size: int,
    learning_rate: float,
    delta: float,
    target_epsilon: float,
    clip_norm: float = 1.0,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    cap: int = 10**6,
) -> int:
    """Largest step count whose account stays within ``target_epsilon``."""
    def fits(steps: int) -> bool:
        cfg = DpsgdConfig(clip_norm, noise_multiplier, batch_size, dataset_size,
                          learning_rate, steps)
        return dpsgd_account(cfg, delta, alphas).epsilon <= target_epsilon

    lo, hi = 0, 1
    while hi <= cap and fits(hi):
        lo, hi = hi, hi * 2
    while lo < hi - 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo


def dpsgd_train(
    model: nets.Classifier,
    dataset,
    mode: str,
    config: DpsgdConfig,
    rng: np.random.Generator,
    noise_free: bool = False,
) -> tuple[nets.Classifier, dict[str, list[float]]]:
    """Run ``config.steps`` private updates on the mode-selected parameters.

    Per-sample gradients come from one backward pass per example. Frozen
    parameters are untouched by construction: only the trainable vector is
    ever rewritten.
    """
    features = np.asarray(dataset.features, dtype=float)
    labels = np.asarray(dataset.labels)
    if len(features) != config.dataset_size:
        raise ValueError(
            f"config says dataset_size={config.dataset_size}, got {len(features)} rows"
        )

    work = nets.clone(model)
    names = nets.trainable_names(work, mode)
    template = work.all_params()
    flat = nets.pack_params(template, names)
    history: dict[str, list[float]] = {"loss": []}

    for _ in range(config.steps):
        idx = rng.choice(len(features), size=config.batch_size, replace=False)
        grads = []
        losses = []
        for row in idx:
            loss, g = nets.loss_and_grads(work, features[row], labels[row], mode)
            losses.append(loss)
            grads.append(nets.pack_params(g, names))
        clipped = clip_per_sample(grads, config.clip_norm)
        flat = noisy_step(clipped, config, flat, rng, noise_free=noise_free)
        for name, value in nets.unpack_params(flat, template, names).items():
            work.set_param(name, value)
        history["loss"].append(float(np.mean(losses)))
    return work, history
