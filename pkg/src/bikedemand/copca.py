"""Joint PCA over the stacked source and target feature matrices.

Fitting both cities' features together gives them one shared latent space,
so a model trained on the source latents applies directly to the target.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix
from .grid import InvalidInputError

DEFAULT_LATENT_DIM = 16
_RANK_TOL = 1e-10


class SchemaMismatchError(InvalidInputError):
    pass


@dataclass(frozen=True)
class CoPcaTransform:
    columns: tuple[str, ...]
    means: np.ndarray
    scales: np.ndarray
    projection: np.ndarray  # (d, d')
    explained_variance: np.ndarray  # (d',)
    total_variance: float

    @property
    def latent_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def explained_ratio(self) -> np.ndarray:
        return self.explained_variance / self.total_variance

    def transform(self, values, columns=None) -> np.ndarray:
        if isinstance(values, FeatureMatrix):
            values, columns = values.values, values.columns
        if columns is not None and tuple(columns) != self.columns:
            raise SchemaMismatchError("feature columns differ from the fitted schema")
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise SchemaMismatchError(f"expected {len(self.columns)} columns, got shape {values.shape}")
        return ((values - self.means) / self.scales) @ self.projection

    def inverse_transform(self, latent) -> np.ndarray:
        return (np.asarray(latent) @ self.projection.T) * self.scales + self.means

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "projection_shape": list(self.projection.shape),
            "projection": self.projection.ravel().tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CoPcaTransform":
        proj = np.asarray(d["projection"], dtype=float).reshape(d["projection_shape"])
        return cls(tuple(d["columns"]), np.asarray(d["means"], dtype=float),
                   np.asarray(d["scales"], dtype=float), proj,
                   np.asarray(d["explained_variance"], dtype=float), float(d["total_variance"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "CoPcaTransform":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _as_values(F, columns):
    if isinstance(F, FeatureMatrix):
        return F.values, tuple(F.columns)
    F = np.asarray(F, dtype=float)
    return F, tuple(columns) if columns is not None else tuple(f"f{c}" for c in range(F.shape[1]))


def fit_joint(F_src, F_tgt, latent_dim: int = DEFAULT_LATENT_DIM, columns=None):
    """Fit PCA on the row-stack of both matrices; return (transform, latent_src, latent_tgt).

    Columns are z-scored first (zero-variance columns keep scale 1). Each
    component's largest-magnitude loading is made positive.
    """
    A, cols_a = _as_values(F_src, columns)
    B, cols_b = _as_values(F_tgt, columns)
    if cols_a != cols_b or A.shape[1] != B.shape[1]:
        raise SchemaMismatchError("source and target feature schemas differ")
    H = np.vstack([A, B])
    d = H.shape[1]
    if not 1 <= latent_dim <= d:
        raise InvalidInputError(f"latent dim must be in [1, {d}], got {latent_dim}")
    if H.shape[0] < latent_dim:
        raise InvalidInputError(f"{H.shape[0]} stacked rows cannot support {latent_dim} components")
    means = H.mean(axis=0)
    std = H.std(axis=0)
    scales = np.where(std > 0, std, 1.0)
    Z = (H - means) / scales
    cov = Z.T @ Z / Z.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    rank = int(np.sum(evals > _RANK_TOL * max(evals[0], np.finfo(float).tiny)))
    if latent_dim > rank:
        raise InvalidInputError(f"latent dim {latent_dim} exceeds the data rank; achievable rank is {rank}")
    proj = evecs[:, :latent_dim].copy()
    for c in range(latent_dim):
        if proj[np.argmax(np.abs(proj[:, c])), c] < 0:
            proj[:, c] *= -1
    t = CoPcaTransform(cols_a, means, scales, proj, evals[:latent_dim].copy(), float(np.trace(cov)))
    latent = t.transform(H)
    return t, latent[:len(A)], latent[len(A):]
