"""Mean/covariance estimates and covariance-intersection (CI) fusion.

Two estimates with unknown cross-correlation are combined as

    P_CC = (w * P_AA^-1 + (1 - w) * P_BB^-1)^-1
    C    = P_CC (w * P_AA^-1 A + (1 - w) * P_BB^-1 B)

with the weight ``w`` picked to minimise the size of ``P_CC``.  In the
scalar case the optimum is always an endpoint, so the fused estimate is
simply whichever input has the smaller variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

SYMMETRY_TOL = 1e-12
GRID_POINTS = 101
GOLDEN_TOL = 1e-12
OBJECTIVES = ("trace", "det")

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class FusionError(ValueError):
    """Raised on malformed or non-invertible estimates."""


@dataclass(frozen=True, eq=False)
class Estimate:
    """A ``(mean, cov)`` pair of dimension ``d``.

    Scalars are accepted for ``d == 1`` and promoted to arrays of shape
    ``(1,)`` and ``(1, 1)``.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or mean.size < 1:
            raise FusionError(f"mean must be a non-empty vector, got shape {mean.shape}")
        d = mean.size
        if cov.shape != (d, d):
            raise FusionError(f"cov shape {cov.shape} does not match mean dimension {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise FusionError("estimate contains non-finite values")
        if np.any(np.abs(cov - cov.T) > SYMMETRY_TOL):
            raise FusionError("cov is not symmetric")
        if d == 1:
            if cov[0, 0] <= 0.0:
                raise FusionError(f"variance must be positive, got {cov[0, 0]}")
        elif np.linalg.eigvalsh(cov)[0] <= 0.0:
            raise FusionError("cov is not positive definite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def scalar(cls, mean: float, var: float) -> "Estimate":
        return cls(np.array([mean]), np.array([[var]]))

    def __eq__(self, other):
        if not isinstance(other, Estimate):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    def __repr__(self):
        if self.dim == 1:
            return f"Estimate(mean={float(self.mean[0])!r}, var={float(self.cov[0, 0])!r})"
        return f"Estimate(mean={self.mean.tolist()!r}, cov={self.cov.tolist()!r})"


def _check_omega(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise FusionError(f"omega must lie in [0, 1], got {w}")
    return w


def _check_pair(a: Estimate, b: Estimate) -> None:
    if a.dim != b.dim:
        raise FusionError(f"dimension mismatch: {a.dim} vs {b.dim}")


def inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric matrix; closed form up to 3x3."""
    d = m.shape[0]
    if d == 1:
        det = m[0, 0]
        if not det > 0.0 or not math.isfinite(det):
            raise FusionError("singular covariance")
        return np.array([[1.0 / det]])
    if d == 2:
        a, b, c = m[0, 0], m[0, 1], m[1, 1]
        det = a * c - b * b
        if not det > 0.0 or not math.isfinite(det):
            raise FusionError("singular covariance")
        return np.array([[c, -b], [-b, a]]) / det
    if d == 3:
        a, b, c = m[0, 0], m[0, 1], m[0, 2]
        e, f, i = m[1, 1], m[1, 2], m[2, 2]
        c00 = e * i - f * f
        c01 = c * f - b * i
        c02 = b * f - c * e
        c11 = a * i - c * c
        c12 = b * c - a * f
        c22 = a * e - b * b
        det = a * c00 + b * c01 + c * c02
        if not det > 0.0 or not math.isfinite(det):
            raise FusionError("singular covariance")
        return np.array([[c00, c01, c02], [c01, c11, c12], [c02, c12, c22]]) / det
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise FusionError("singular covariance") from exc
    return 0.5 * (inv + inv.T)


def _fused_cov(ia: np.ndarray, ib: np.ndarray, w: float) -> np.ndarray:
    p = inverse(w * ia + (1.0 - w) * ib)
    return 0.5 * (p + p.T)


def ci_fuse(a: Estimate, b: Estimate, w: float) -> Estimate:
    """Fuse ``a`` and ``b`` by covariance intersection with weight ``w`` on ``a``."""
    _check_pair(a, b)
    w = _check_omega(w)
    if w == 1.0:
        return a
    if w == 0.0:
        return b
    ia, ib = inverse(a.cov), inverse(b.cov)
    p = _fused_cov(ia, ib, w)
    c = p @ (w * (ia @ a.mean) + (1.0 - w) * (ib @ b.mean))
    return Estimate(c, p)


def ci_scalar_omega(mean_a: float, var_a: float, mean_b: float, var_b: float) -> float:
    """Optimal CI weight for scalar estimates: 1 keeps ``a``, 0 keeps ``b``.

    Equal variances keep the larger mean.
    """
    if var_a < var_b:
        return 1.0
    if var_b < var_a:
        return 0.0
    return 1.0 if mean_a >= mean_b else 0.0


def ci_fuse_scalar(mean_a: float, var_a: float, mean_b: float, var_b: float) -> Tuple[float, float]:
    """Optimal scalar CI on plain floats; returns ``(mean, var)``."""
    if ci_scalar_omega(mean_a, var_a, mean_b, var_b) == 1.0:
        return mean_a, var_a
    return mean_b, var_b


def _size(p: np.ndarray, objective: str) -> float:
    if objective == "trace":
        return float(np.trace(p))
    return float(np.linalg.det(p))


def ci_objective(a: Estimate, b: Estimate, w: float, objective: str = "trace") -> float:
    """Size of the fused covariance at weight ``w`` (trace or determinant)."""
    _check_pair(a, b)
    w = _check_omega(w)
    if w == 1.0:
        return _size(a.cov, objective)
    if w == 0.0:
        return _size(b.cov, objective)
    return _size(_fused_cov(inverse(a.cov), inverse(b.cov), w), objective)


def ci_optimal_omega(a: Estimate, b: Estimate, objective: str = "trace") -> float:
    """Weight in [0, 1] minimising the trace (or determinant) of the fused covariance.

    Scalars resolve analytically to an endpoint.  Otherwise a uniform grid
    brackets the minimum, which golden-section search then refines.
    """
    _check_pair(a, b)
    if objective not in OBJECTIVES:
        raise FusionError(f"unknown objective {objective!r}")
    if a.dim == 1:
        return ci_scalar_omega(a.mean[0], a.cov[0, 0], b.mean[0], b.cov[0, 0])

    ia, ib = inverse(a.cov), inverse(b.cov)

    def f(w):
        if w == 1.0:
            return _size(a.cov, objective)
        if w == 0.0:
            return _size(b.cov, objective)
        return _size(_fused_cov(ia, ib, w), objective)

    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    values = [f(w) for w in grid]
    k = int(np.argmin(values))
    best_w, best_f = float(grid[k]), values[k]

    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[min(k + 1, GRID_POINTS - 1)])
    x1 = hi - _INV_PHI * (hi - lo)
    x2 = lo + _INV_PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > GOLDEN_TOL:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INV_PHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INV_PHI * (hi - lo)
            f2 = f(x2)
    w_star = 0.5 * (lo + hi)
    f_star = f(w_star)
    if f_star < best_f:
        return w_star
    return best_w


def ci_fuse_optimal(a: Estimate, b: Estimate, objective: str = "trace") -> Estimate:
    return ci_fuse(a, b, ci_optimal_omega(a, b, objective))
