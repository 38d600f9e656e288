"""Joint and per-bus chance constraints on the voltage band.

The band event {v_lo <= R P + X Q + eps <= v_hi} is standardized by
shifting out the lower bound and scaling each row by the band width
u = v_hi - v_lo.  With U = diag(u), A = U^-1 X, b = U^-1 (R P - v_lo)
and eps' = U^-1 eps, the event becomes {0 <= A Q + b + eps' <= 1};
reflecting eps' through the origin (valid because it is symmetric)
turns this into the unit-width box probability

    g(Q) = F(A Q + b)   under   sigma' = U^-1 sigma U^-1.

F is log-concave and A has full rank, so g is log-concave in Q and its
superlevel sets are convex.

The per-bus baseline uses only the marginal of each coordinate: bus i's
two-sided probability is exact in the mean m_i = R_i P + X_i Q, and the
tolerance eta translates into an interval of admissible means.  This
deliberately ignores cross-bus correlation, which is exactly the
modeling gap the joint constraint closes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import mvnprob
from .errors import DegenerateBounds, DimensionMismatch
from .mvnprob import ProbEstimate
from .network import SensitivityMatrices
from .uncertainty import GaussianUncertainty, ScaledUncertainty, scale


@dataclass(frozen=True)
class VoltageBounds:
    """Per-bus voltage deviation band, v_lo < v_hi elementwise."""

    v_lo: np.ndarray
    v_hi: np.ndarray

    def __post_init__(self):
        v_lo = np.asarray(self.v_lo, dtype=float)
        v_hi = np.asarray(self.v_hi, dtype=float)
        if v_lo.shape != v_hi.shape or v_lo.ndim != 1:
            raise DimensionMismatch("voltage bounds must be equal-length vectors")
        if np.any(v_lo >= v_hi):
            raise DegenerateBounds("need v_lo < v_hi at every bus")
        object.__setattr__(self, "v_lo", v_lo)
        object.__setattr__(self, "v_hi", v_hi)


@dataclass(frozen=True)
class DispatchProblem:
    """One reactive-dispatch instance.

    ``alpha`` is the joint-mode tolerance, ``eta`` the per-bus-mode
    tolerance; either may be None when that mode is unused.
    """

    sens: SensitivityMatrices
    p: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    vbounds: VoltageBounds
    unc: GaussianUncertainty
    alpha: float | None = None
    eta: float | None = None

    def __post_init__(self):
        n = self.sens.n
        p = np.asarray(self.p, dtype=float)
        q_lo = np.asarray(self.q_lo, dtype=float)
        q_hi = np.asarray(self.q_hi, dtype=float)
        for name, v in (("p", p), ("q_lo", q_lo), ("q_hi", q_hi)):
            if v.shape != (n,):
                raise DimensionMismatch(f"{name} must have shape ({n},)")
        if self.vbounds.v_lo.shape != (n,):
            raise DimensionMismatch(f"voltage bounds must have shape ({n},)")
        if self.unc.dim != n:
            raise DimensionMismatch(f"covariance must be {n}x{n}")
        if np.any(q_lo > q_hi):
            raise ValueError("need q_lo <= q_hi at every bus")
        for name, tol in (("alpha", self.alpha), ("eta", self.eta)):
            if tol is not None and not (0.0 < tol < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {tol}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q_lo", q_lo)
        object.__setattr__(self, "q_hi", q_hi)

    @property
    def n(self) -> int:
        return self.sens.n


@dataclass(frozen=True)
class StandardizedBox:
    """Affine map z = A Q + b plus the scaled covariance: g(Q) = F(z)."""

    A: np.ndarray
    b: np.ndarray
    sigma_prime: ScaledUncertainty
    u: np.ndarray

    @property
    def n(self) -> int:
        return self.b.size


def standardize(prob: DispatchProblem) -> StandardizedBox:
    """Build the working representation of g from a dispatch problem."""
    u = prob.vbounds.v_hi - prob.vbounds.v_lo
    if np.any(u <= 0.0):
        raise DegenerateBounds("voltage band width must be positive")
    A = prob.sens.X / u[:, None]
    b = (prob.sens.R @ prob.p - prob.vbounds.v_lo) / u
    sigma_prime = scale(prob.unc, u)
    return StandardizedBox(A=A, b=b, sigma_prime=sigma_prime, u=u)


def joint_probability(
    box: StandardizedBox,
    Q,
    target_error: float = mvnprob.DEFAULT_TARGET_ERROR,
) -> ProbEstimate:
    """g(Q): probability that every bus voltage stays inside the band."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (box.n,):
        raise DimensionMismatch(f"Q must have shape ({box.n},)")
    return mvnprob.unit_box_F(box.A @ Q + box.b, box.sigma_prime, target_error)


def joint_probability_gradient(
    box: StandardizedBox,
    Q,
    target_error: float = mvnprob.DEFAULT_TARGET_ERROR,
    method: str = "analytic",
) -> np.ndarray:
    """grad g(Q) = A^T grad F(A Q + b)."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (box.n,):
        raise DimensionMismatch(f"Q must have shape ({box.n},)")
    z = box.A @ Q + box.b
    return box.A.T @ mvnprob.unit_box_F_gradient(
        z, box.sigma_prime, target_error, method=method
    )


def _marginal_sd(prob: DispatchProblem, i: int) -> float:
    return math.sqrt(prob.unc.sigma[i - 1, i - 1])


def _two_sided(prob: DispatchProblem, i: int, m: float) -> float:
    sd = _marginal_sd(prob, i)
    lo = prob.vbounds.v_lo[i - 1]
    hi = prob.vbounds.v_hi[i - 1]
    return float(ndtr((hi - m) / sd) - ndtr((lo - m) / sd))


def per_bus_probability(prob: DispatchProblem, i: int, Q) -> float:
    """Marginal band probability of bus i (ids 1..N), exact via the CDF.

    Uses only the diagonal entry of the covariance, as the per-bus
    framework prescribes.
    """
    if not (1 <= i <= prob.n):
        raise DimensionMismatch(f"bus id {i} outside 1..{prob.n}")
    Q = np.asarray(Q, dtype=float)
    m = float(prob.sens.R[i - 1] @ prob.p + prob.sens.X[i - 1] @ Q)
    return _two_sided(prob, i, m)


BISECTION_WIDTH = 1e-10
SEARCH_SIGMAS = 12.0


def per_bus_mean_interval(prob: DispatchProblem, i: int, eta: float):
    """Admissible voltage means for bus i at tolerance eta, or None.

    Returns the interval {m : Pr{v_lo_i <= m + eps_i <= v_hi_i} >= eta}
    (an interval by unimodality of the two-sided probability in m),
    located by bisection to 1e-10 width.  None means the tolerance
    exceeds the best achievable marginal probability.
    """
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if not (1 <= i <= prob.n):
        raise DimensionMismatch(f"bus id {i} outside 1..{prob.n}")
    sd = _marginal_sd(prob, i)
    center = 0.5 * (prob.vbounds.v_lo[i - 1] + prob.vbounds.v_hi[i - 1])
    if _two_sided(prob, i, center) < eta:
        return None

    def bisect(lo: float, hi: float, rising: bool) -> float:
        # crossing point of the eta level; if the whole segment is
        # feasible (tiny eta) this collapses to the window edge
        while hi - lo > BISECTION_WIDTH:
            mid = 0.5 * (lo + hi)
            feasible = _two_sided(prob, i, mid) >= eta
            if feasible == rising:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    window = SEARCH_SIGMAS * sd
    left = bisect(center - window, center, rising=True)
    right = bisect(center, center + window, rising=False)
    return (left, right)
