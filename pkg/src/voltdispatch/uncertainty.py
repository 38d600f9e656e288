"""Correlated zero-mean Gaussian voltage noise.

The noise model is a single covariance matrix over the N non-reference
buses; correlations across buses are expected and fully supported.  The
probability engine requires a strict density, so the covariance must be
positive definite (its Cholesky factor is cached at validation time).

Only the Gaussian family is implemented end to end.  The box-probability
reformulation needs a distribution that is symmetric about the origin in
addition to log-concave; any future family with those two properties can
be slotted in by providing the same ``sigma``/``cholesky`` pair plus a
sampler, which is the entire surface consumed downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonPositiveScale, NotPositiveDefinite, NotSymmetric

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class GaussianUncertainty:
    """Zero-mean Gaussian noise with covariance ``sigma`` = L L^T."""

    sigma: np.ndarray
    cholesky: np.ndarray

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class ScaledUncertainty:
    """Noise after coordinate scaling: sigma' = U^-1 sigma U^-1, U = diag(u)."""

    sigma_prime: np.ndarray
    cholesky: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return self.sigma_prime

    @property
    def dim(self) -> int:
        return self.sigma_prime.shape[0]


def _cholesky_or_raise(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            "covariance must be strictly positive definite"
        ) from None


def validate_covariance(sigma) -> GaussianUncertainty:
    """Check symmetry and positive definiteness; cache the Cholesky factor.

    Raises NotSymmetric, NotPositiveDefinite or DimensionMismatch.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got shape {sigma.shape}")
    scale = max(np.max(np.abs(sigma)), 1.0)
    if np.max(np.abs(sigma - sigma.T)) > SYMMETRY_TOL * scale:
        raise NotSymmetric("covariance is not symmetric within 1e-12")
    sigma = 0.5 * (sigma + sigma.T)
    return GaussianUncertainty(sigma=sigma, cholesky=_cholesky_or_raise(sigma))


def scale(unc: GaussianUncertainty, u) -> ScaledUncertainty:
    """Rescale coordinate i by 1/u[i]:  sigma'[i,j] = sigma[i,j]/(u[i] u[j])."""
    u = np.asarray(u, dtype=float)
    if u.shape != (unc.dim,):
        raise DimensionMismatch(f"scale vector must have shape ({unc.dim},)")
    if np.any(u <= 0.0):
        raise NonPositiveScale("all scale entries must be strictly positive")
    sp = unc.sigma / np.outer(u, u)
    sp = 0.5 * (sp + sp.T)
    return ScaledUncertainty(sigma_prime=sp, cholesky=_cholesky_or_raise(sp))


def sample(unc, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. noise vectors as rows of an (n, N) array.

    Draws are L @ w with w standard normal from a PCG64 stream, so the
    output is bit-reproducible given (seed, n).
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.standard_normal((n, unc.cholesky.shape[0]))
    return w @ unc.cholesky.T
