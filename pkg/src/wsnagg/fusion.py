"""Fusion of a local reading with the current global estimate (max aggregation).

The higher-mean distribution enters with unit weight, the lower one is
multiplied by a 0/1 step weight that switches on above a 3-sigma derived
threshold.  The resulting two-component density is moment-matched back to
a single Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from scipy.special import erfcx

from .estimate import Estimate

SQRT2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SUPPORT_SIGMAS = 3.0
MIN_MASS = 1e-12


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)) or self.std <= 0.0:
            raise ValueError(f"invalid Gaussian1D(mean={self.mean}, std={self.std})")

    @property
    def var(self) -> float:
        return self.std * self.std

    @property
    def support_lo(self) -> float:
        return self.mean - SUPPORT_SIGMAS * self.std

    @property
    def support_hi(self) -> float:
        return self.mean + SUPPORT_SIGMAS * self.std

    def to_estimate(self) -> Estimate:
        return Estimate.scalar(self.mean, self.var)

    @classmethod
    def from_estimate(cls, est: Estimate) -> "Gaussian1D":
        if est.dim != 1:
            raise ValueError(f"expected a scalar estimate, got dimension {est.dim}")
        return cls(float(est.mean[0]), math.sqrt(float(est.cov[0, 0])))

    def negated(self) -> "Gaussian1D":
        return Gaussian1D(-self.mean, self.std)


@dataclass(frozen=True)
class StepWeight:
    """0 at or below ``threshold``, 1 above it."""

    threshold: float
    low_value: float = 0.0
    high_value: float = 1.0

    def __call__(self, x: float) -> float:
        return self.high_value if x > self.threshold else self.low_value


@dataclass(frozen=True)
class TruncatedMoments:
    """Mass, mean and variance of a Gaussian restricted to an interval."""

    mass: float
    mean: float
    variance: float

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean * self.mean


@dataclass(frozen=True)
class FusionConfig:
    # None means 3 * std of the global estimate
    sharp_fall_threshold: Optional[float] = None
    # restrict every component to [mean - 3 std, mean + 3 std]
    hard_truncate: bool = False


DEFAULT_FUSION = FusionConfig()


def case1_threshold(local: Gaussian1D) -> StepWeight:
    return StepWeight(local.mean - SUPPORT_SIGMAS * local.std)


def case2_threshold(local: Gaussian1D, global_: Gaussian1D) -> StepWeight:
    return StepWeight(max(local.mean - SUPPORT_SIGMAS * local.std,
                          global_.mean - SUPPORT_SIGMAS * global_.std))


def _phi(z: float) -> float:
    return INV_SQRT_2PI * math.exp(-0.5 * z * z)


def _upper_tail(z: float) -> float:
    # P(Z > z) without cancellation for large z
    return 0.5 * math.erfc(z / SQRT2)


def _cdf_between(a: float, b: float) -> float:
    if a >= 0.0:
        return _upper_tail(a) - _upper_tail(b)
    if b <= 0.0:
        return _upper_tail(-b) - _upper_tail(-a)
    return 1.0 - _upper_tail(-a) - _upper_tail(b)


def _interval_moments(mu: float, sigma: float, lo: float, hi: float) -> TruncatedMoments:
    """Moments of N(mu, sigma^2) restricted to (lo, hi); ``hi`` may be +inf."""
    if not lo < hi:
        return TruncatedMoments(0.0, min(max(mu, lo), hi), 0.0)
    a = (lo - mu) / sigma
    if math.isinf(hi):
        if a == -math.inf:
            return TruncatedMoments(1.0, mu, sigma * sigma)
        mass = _upper_tail(a)
        # inverse Mills ratio via the scaled complementary error function
        lam = SQRT_2_OVER_PI / float(erfcx(a / SQRT2))
        mean = mu + sigma * lam
        var = sigma * sigma * (1.0 + a * lam - lam * lam)
        return TruncatedMoments(mass, mean, max(var, 0.0))
    b = (hi - mu) / sigma
    mass = _cdf_between(a, b) if a != -math.inf else 1.0 - _upper_tail(b)
    if mass <= 0.0:
        return TruncatedMoments(0.0, 0.5 * (lo + hi), 0.0)
    pa = 0.0 if a == -math.inf else _phi(a)
    pb = _phi(b)
    apa = 0.0 if a == -math.inf else a * pa
    r = (pa - pb) / mass
    mean = mu + sigma * r
    var = sigma * sigma * (1.0 + (apa - b * pb) / mass - r * r)
    width = hi - lo
    var = min(max(var, 0.0), width * width / 4.0)
    return TruncatedMoments(mass, min(max(mean, lo), hi), var)


def truncated_moments(g: Gaussian1D, t: float) -> TruncatedMoments:
    """Moments of ``g`` restricted to ``x > t``; mass is relative to the whole of ``g``."""
    return _interval_moments(g.mean, g.std, t, math.inf)


def _bounded_moments(g: Gaussian1D, t: float) -> TruncatedMoments:
    # g limited to its 3-sigma support and renormalised, then cut at t
    z = _cdf_between(-SUPPORT_SIGMAS, SUPPORT_SIGMAS)
    m = _interval_moments(g.mean, g.std, max(t, g.support_lo), g.support_hi)
    return TruncatedMoments(m.mass / z, m.mean, m.variance)


def mixture_components(local: Gaussian1D, global_: Gaussian1D,
                       prev_local: Optional[Gaussian1D] = None,
                       cfg: FusionConfig = DEFAULT_FUSION):
    """Pick the unit-weight (high) and step-weighted (low) distributions.

    Returns ``(high, low, step)``.
    """
    if local.mean >= global_.mean:
        return local, global_, case1_threshold(local)
    limit = cfg.sharp_fall_threshold
    if limit is None:
        limit = SUPPORT_SIGMAS * global_.std
    if prev_local is not None and abs(prev_local.mean - global_.mean) <= limit:
        # the node itself held the maximum a moment ago: trust the new reading
        return local, global_, case1_threshold(local)
    return global_, local, case2_threshold(local, global_)


def fuse_local(local: Gaussian1D, global_: Gaussian1D,
               prev_local: Optional[Gaussian1D] = None,
               cfg: FusionConfig = DEFAULT_FUSION) -> Gaussian1D:
    """New global estimate after sensing ``local``."""
    high, low, step = mixture_components(local, global_, prev_local, cfg)
    if cfg.hard_truncate:
        h = _bounded_moments(high, -math.inf)
        lo = _bounded_moments(low, step.threshold)
    else:
        h = TruncatedMoments(1.0, high.mean, high.var)
        lo = truncated_moments(low, step.threshold)
    total = h.mass + lo.mass
    if total < MIN_MASS:
        raise ValueError("mixture has no mass")
    mean = (h.mass * h.mean + lo.mass * lo.mean) / total
    dh = h.mean - mean
    dl = lo.mean - mean
    var = (h.mass * (h.variance + dh * dh) + lo.mass * (lo.variance + dl * dl)) / total
    return Gaussian1D(mean, math.sqrt(var))


def fuse_local_min(local: Gaussian1D, global_: Gaussian1D,
                   prev_local: Optional[Gaussian1D] = None,
                   cfg: FusionConfig = DEFAULT_FUSION) -> Gaussian1D:
    """Min aggregation by running the max rule on negated values."""
    prev = prev_local.negated() if prev_local is not None else None
    return fuse_local(local.negated(), global_.negated(), prev, cfg).negated()
