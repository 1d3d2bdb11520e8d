"""Gaussian mixtures with exact densities, for unconditional flow-matching checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MixtureSpec:
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        K, d = self.means.shape
        self.covs = np.asarray(self.covs, dtype=np.float64).reshape(K, d, d)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(K)
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        try:
            self._chol = np.linalg.cholesky(self.covs)
        except np.linalg.LinAlgError:
            raise ValueError("mixture covariances must be positive definite") from None

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        dev = self.means - mu
        return np.einsum("k,kij->ij", self.weights, self.covs) + np.einsum("k,ki,kj->ij", self.weights, dev, dev)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        d = self.dim
        out = []
        for k in range(self.num_components):
            L = self._chol[k]
            z = np.linalg.solve(L, (x - self.means[k]).T).T
            logdet = 2.0 * np.log(np.diag(L)).sum()
            out.append(np.log(self.weights[k] + 1e-300) - 0.5 * (z * z).sum(-1)
                       - 0.5 * logdet - 0.5 * d * np.log(2 * np.pi))
        return np.logaddexp.reduce(np.stack(out), axis=0)


def eight_gaussians(radius: float = 2.0, std: float = 0.3) -> MixtureSpec:
    angles = 2 * np.pi * np.arange(8) / 8
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    covs = np.tile(np.eye(2) * std ** 2, (8, 1, 1))
    return MixtureSpec(means, covs, np.full(8, 1 / 8))


def gaussian_1d(mean: float = 3.0, var: float = 0.25) -> MixtureSpec:
    return MixtureSpec(np.array([[mean]]), np.array([[[var]]]), np.array([1.0]))


def standard_normal(dim: int = 2) -> MixtureSpec:
    return MixtureSpec(np.zeros((1, dim)), np.eye(dim)[None], np.array([1.0]))


def gen_mixture(spec: MixtureSpec, n: int, rng: np.random.Generator, return_labels: bool = False):
    """Draw ``n`` i.i.d. samples (and optionally their component labels)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = rng.choice(spec.num_components, size=n, p=spec.weights)
    z = rng.standard_normal((n, spec.dim))
    x = spec.means[labels] + np.einsum("nij,nj->ni", spec._chol[labels], z)
    return (x, labels) if return_labels else x
