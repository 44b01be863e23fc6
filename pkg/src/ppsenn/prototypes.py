"""Per-class full-covariance Gaussian distributions over the latent space.

Each class owns a location vector and an unconstrained lower-triangular
matrix; the effective Cholesky factor applies softplus plus a small floor
to the diagonal, so the covariance L L^T stays positive definite under
arbitrary gradient steps. Sampling is reparameterized (location + L z), so
draws stay differentiable with respect to both parameter groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

DIAG_FLOOR = 1e-6
# raw value whose softplus lands the effective diagonal at 1.0
_RAW_UNIT_DIAG = float(np.log(np.expm1(1.0 - DIAG_FLOOR)))
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PrototypeSet:
    """One latent vector per class, drawn jointly as inference sample n."""

    samples: np.ndarray
    sample_id: int = 0


class PrototypeDistribution:
    def __init__(self, class_index: int, latent_dim: int, rng):
        self.class_index = class_index
        self.latent_dim = latent_dim
        self.mean = Tensor(0.1 * rng.standard_normal((1, latent_dim)), requires_grad=True)
        raw = np.zeros((latent_dim, latent_dim))
        np.fill_diagonal(raw, _RAW_UNIT_DIAG)
        self.chol_raw = Tensor(raw, requires_grad=True)
        eye = np.eye(latent_dim)
        self._diag_mask = Tensor(eye)
        self._strict_lower = Tensor(np.tril(np.ones((latent_dim, latent_dim)), -1))

    def parameters(self):
        return [self.mean, self.chol_raw]

    def chol(self) -> Tensor:
        """Effective Cholesky factor as a graph node."""
        diag = (T.softplus(self.chol_raw) + DIAG_FLOOR) * self._diag_mask
        return self.chol_raw * self._strict_lower + diag

    def chol_np(self) -> np.ndarray:
        raw = self.chol_raw.values
        l_f = np.tril(raw, -1)
        sp = np.log1p(np.exp(-np.abs(raw.diagonal()))) + np.maximum(raw.diagonal(), 0.0)
        np.fill_diagonal(l_f, sp + DIAG_FLOOR)
        return l_f

    def covariance(self) -> np.ndarray:
        l_f = self.chol_np()
        return l_f @ l_f.T

    def log_density(self, z: np.ndarray) -> float:
        """Exact multivariate normal log-density via forward substitution."""
        l_f = self.chol_np()
        d = np.asarray(z, dtype=np.float64).reshape(self.latent_dim) - self.mean.values[0]
        u = np.empty_like(d)
        for i in range(self.latent_dim):
            u[i] = (d[i] - l_f[i, :i] @ u[:i]) / l_f[i, i]
        return float(-0.5 * self.latent_dim * _LOG_2PI
                     - np.log(l_f.diagonal()).sum() - 0.5 * u @ u)

    def log_density_batch(self, zs: np.ndarray) -> np.ndarray:
        l_f = self.chol_np()
        d = np.atleast_2d(zs) - self.mean.values
        u = np.linalg.solve(l_f, d.T)
        return (-0.5 * self.latent_dim * _LOG_2PI - np.log(l_f.diagonal()).sum()
                - 0.5 * (u * u).sum(axis=0))

    def log_density_sum_graph(self, embeddings: Tensor) -> Tensor:
        """Differentiable sum of log-densities over the rows of `embeddings`."""
        n = embeddings.values.shape[0]
        l_f = self.chol()
        diff = T.transpose(embeddings - self.mean)
        u = T.triangular_solve(l_f, diff)
        quad = T.sum_(T.square(u))
        log_det = T.sum_(T.log(T.diag_part(l_f)))
        return (-0.5 * n * self.latent_dim * _LOG_2PI) + (log_det * -n) + quad * -0.5


def sample_set(dists, rng, sample_id: int = 0) -> PrototypeSet:
    """Draw one prototype per class: r_i = mean_i + L_i z, z ~ N(0, I)."""
    c = len(dists)
    l = dists[0].latent_dim
    z = rng.standard_normal((c, l))
    rows = np.empty((c, l))
    for i, dist in enumerate(dists):
        rows[i] = dist.mean.values[0] + dist.chol_np() @ z[i]
    return PrototypeSet(samples=rows, sample_id=sample_id)


def differentiable_sample(dists, noise: np.ndarray) -> Tensor:
    """Reparameterized draw as a graph node: (c, l) with caller-supplied noise."""
    rows = []
    for i, dist in enumerate(dists):
        z = Tensor(noise[i].reshape(-1, 1))
        rows.append(dist.mean + T.transpose(T.matmul(dist.chol(), z)))
    return T.concat(rows, axis=0)


class PointPrototypes:
    """Plain point prototypes for the deterministic-training ablation."""

    def __init__(self, class_count: int, latent_dim: int, rng):
        self.class_count = class_count
        self.latent_dim = latent_dim
        self.rows = Tensor(0.1 * rng.standard_normal((class_count, latent_dim)),
                           requires_grad=True)

    def parameters(self):
        return [self.rows]

    def sample(self, rng=None, sample_id: int = 0) -> PrototypeSet:
        return PrototypeSet(samples=self.rows.values.copy(), sample_id=sample_id)
