"""Noise mechanisms and a Renyi-divergence privacy accountant.

Privacy guarantees are tracked as curves mapping Renyi orders (alpha) to
divergence bounds. Curves add pointwise under composition and convert to an
(epsilon, delta) guarantee by scanning the grid for the tightest order.

An order of ``math.inf`` encodes a pure-DP bound: the conversion penalty
``log(1/delta) / (alpha - 1)`` vanishes there, so mechanisms with a finite
worst-case loss (e.g. Laplace vote aggregation) keep their exact epsilon
through composition and conversion while still benefiting from the finite
orders when many invocations compose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "DEFAULT_ALPHAS",
    "PrivacyBudget",
    "RdpCurve",
    "DiscreteDistribution",
    "NoiseSpec",
    "BestDp",
    "renyi_divergence",
    "rdp_to_dp",
    "compose",
    "compose_repeated",
    "best_dp",
    "sample_noise",
]

# Default grid of Renyi orders: dense below 8 for low-noise regimes, powers
# of two up to 256 for high-noise ones. Callers may supply their own grid.
DEFAULT_ALPHAS: tuple[float, ...] = (
    1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0,
)


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential-privacy guarantee.

    ``epsilon`` bounds the privacy loss in nats; ``delta`` is the slack
    probability. ``delta == 1`` is admitted as a degenerate edge so that
    conversions with no slack requirement stay total.
    """

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class RdpCurve:
    """A finite map from Renyi order to a divergence bound.

    Orders must be strictly increasing and > 1. A final order of
    ``math.inf`` carries a pure-DP bound. Bounds of ``math.inf`` are legal
    and poison composition (infinity plus anything is infinity).
    """

    alphas: tuple[float, ...]
    eps: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.alphas) != len(self.eps):
            raise ValueError("alphas and eps must have the same length")
        for a in self.alphas:
            if not a > 1.0:
                raise ValueError(f"every order must be > 1, got {a}")
        for a, b in zip(self.alphas, self.alphas[1:]):
            if not a < b:
                raise ValueError("orders must be strictly increasing")
        for e in self.eps:
            if math.isnan(e) or e < 0.0:
                raise ValueError(f"divergence bounds must be >= 0, got {e}")

    def __len__(self) -> int:
        return len(self.alphas)

    @classmethod
    def zero(cls, alphas: Sequence[float] = DEFAULT_ALPHAS) -> "RdpCurve":
        """The additive identity on the given grid."""
        return cls(tuple(float(a) for a in alphas), (0.0,) * len(alphas))

    def finite_points(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """The (orders, bounds) restricted to finite orders."""
        pairs = [(a, e) for a, e in zip(self.alphas, self.eps) if math.isfinite(a)]
        return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)

    def pure_eps(self) -> float | None:
        """The pure-DP bound stored at order infinity, if present."""
        if self.alphas and math.isinf(self.alphas[-1]):
            return self.eps[-1]
        return None


@dataclass(frozen=True)
class DiscreteDistribution:
    """A probability vector over finitely many outcomes."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if np.any(probs < 0.0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {probs.sum()}")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return int(self.probs.size)


@dataclass(frozen=True)
class NoiseSpec:
    """Which additive noise to draw: Laplace or Gaussian, with its scale."""

    kind: str
    scale: float

    def __post_init__(self) -> None:
        if self.kind not in ("laplace", "gaussian"):
            raise ValueError(f"kind must be 'laplace' or 'gaussian', got {self.kind!r}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")


class BestDp(NamedTuple):
    budget: PrivacyBudget
    alpha: float


def _as_distribution(p) -> DiscreteDistribution:
    return p if isinstance(p, DiscreteDistribution) else DiscreteDistribution(np.asarray(p, dtype=float))


def renyi_divergence(p, q, alpha: float) -> float:
    """Renyi divergence of order ``alpha`` between two discrete distributions.

    Computes ``log(sum(p_i**alpha * q_i**(1-alpha))) / (alpha - 1)`` in log
    space. Returns ``math.inf`` when ``p`` puts mass where ``q`` has none;
    the infinity propagates through downstream sums rather than raising.

    Args:
        p, q: probability vectors of equal length (``DiscreteDistribution``
            or anything convertible to one).
        alpha: divergence order, > 1.

    Raises:
        ValueError: on mismatched lengths or ``alpha <= 1``.
    """
    p = _as_distribution(p)
    q = _as_distribution(q)
    if len(p) != len(q):
        raise ValueError(f"distributions differ in length: {len(p)} vs {len(q)}")
    if not (alpha > 1.0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be a finite value > 1, got {alpha}")
    support = p.probs > 0.0
    if np.any(q.probs[support] == 0.0):
        return math.inf
    pp = p.probs[support]
    qq = q.probs[support]
    terms = alpha * np.log(pp) + (1.0 - alpha) * np.log(qq)
    peak = float(terms.max())
    total = peak + math.log(float(np.exp(terms - peak).sum()))
    return max(total / (alpha - 1.0), 0.0)


def rdp_to_dp(alpha: float, eps_rdp: float, delta: float) -> PrivacyBudget:
    """Convert an order-``alpha`` divergence bound into an (epsilon, delta) one.

    Uses ``eps = eps_rdp + log(1/delta) / (alpha - 1)``. At ``alpha == inf``
    the penalty term is zero and the pure bound passes through unchanged.
    """
    if not alpha > 1.0:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if eps_rdp < 0.0:
        raise ValueError(f"eps_rdp must be >= 0, got {eps_rdp}")
    penalty = 0.0 if math.isinf(alpha) else math.log(1.0 / delta) / (alpha - 1.0)
    return PrivacyBudget(eps_rdp + penalty, delta)


def _interp_eps(alphas: Sequence[float], curve: RdpCurve) -> np.ndarray:
    grid, vals = curve.finite_points()
    return np.interp(np.asarray(alphas, dtype=float), np.asarray(grid), np.asarray(vals))


def compose(curve_a: RdpCurve, curve_b: RdpCurve) -> RdpCurve:
    """Pointwise sum of two curves, the accountant's composition rule.

    Curves on different grids are re-gridded by linear interpolation onto
    the union of their finite orders (clamped at the ends). The order-
    infinity point survives only when both operands carry one, since a
    missing pure bound means the composed worst case is unknown.
    """
    fa, _ = curve_a.finite_points()
    fb, _ = curve_b.finite_points()
    union = sorted(set(fa) | set(fb))
    eps = []
    if union:
        eps = list(_interp_eps(union, curve_a) + _interp_eps(union, curve_b))
    pa, pb = curve_a.pure_eps(), curve_b.pure_eps()
    if pa is not None and pb is not None:
        union.append(math.inf)
        eps.append(pa + pb)
    return RdpCurve(tuple(union), tuple(float(e) for e in eps))


def compose_repeated(curve: RdpCurve, times: int) -> RdpCurve:
    """Compose ``times`` copies of ``curve`` (scalar multiply, loop-free)."""
    if times < 0:
        raise ValueError(f"times must be >= 0, got {times}")
    return RdpCurve(curve.alphas, tuple(times * e for e in curve.eps))


def best_dp(curve: RdpCurve, delta: float) -> BestDp:
    """Tightest (epsilon, delta) conversion over the curve's grid.

    Returns the minimizing budget together with the order that achieved it.
    """
    if len(curve) == 0:
        raise ValueError("cannot convert an empty curve")
    candidates = [rdp_to_dp(a, e, delta).epsilon for a, e in zip(curve.alphas, curve.eps)]
    idx = int(np.argmin(candidates))
    return BestDp(PrivacyBudget(candidates[idx], delta), curve.alphas[idx])


def sample_noise(spec: NoiseSpec, shape, rng: np.random.Generator) -> np.ndarray:
    """Draw i.i.d. noise of the requested shape; deterministic given ``rng``."""
    if spec.kind == "laplace":
        return rng.laplace(0.0, spec.scale, size=shape)
    return rng.normal(0.0, spec.scale, size=shape)
