"""Reference predictors: ridge regression and cosine-similarity KNN on latent features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divergence import DEFAULT_EPS
from .dwt import lowpass_matrix
from .grid import InvalidInputError
from .model import check_prob, decode, encode_target

DEFAULT_RIDGE_LAMBDA = 0.1
DEFAULT_KNN_K = 10


@dataclass
class RidgeModel:
    """Linear map from latent features to the k/2 approximation coefficients of the head."""

    weights: np.ndarray  # (d', k/2)
    bias: np.ndarray  # (k/2,)
    lam: float = DEFAULT_RIDGE_LAMBDA
    wavelet: str = "db2"
    eps: float = DEFAULT_EPS

    @property
    def k(self) -> int:
        return 2 * self.weights.shape[1]

    def coefficients(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return decode(self.coefficients(X), lowpass_matrix(self.wavelet, self.k), self.eps)

    def to_json(self, seed=None) -> dict:
        return {"method": "lr", "config": {"lambda": self.lam, "wavelet": self.wavelet, "eps": self.eps},
                "seed": seed,
                "params": {"weights": {"shape": list(self.weights.shape), "data": self.weights.ravel().tolist()},
                           "bias": {"shape": list(self.bias.shape), "data": self.bias.tolist()}}}

    @classmethod
    def from_json(cls, d: dict) -> "RidgeModel":
        if d.get("method") != "lr":
            raise InvalidInputError(f"not a ridge checkpoint: method {d.get('method')!r}")
        p, c = d["params"], d["config"]
        w = np.asarray(p["weights"]["data"], dtype=float).reshape(p["weights"]["shape"])
        return cls(w, np.asarray(p["bias"]["data"], dtype=float), c["lambda"], c["wavelet"], c["eps"])


def ridge_solve(X, Y, lam: float = DEFAULT_RIDGE_LAMBDA) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ridge with an unpenalized intercept.

    Centering X and Y removes the intercept from the penalized system, so
    ``(Xc^T Xc + lam I) W = Xc^T Yc`` and ``bias = mean(Y) - mean(X) W``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or len(X) < 1 or len(X) != len(Y):
        raise InvalidInputError("ridge needs matching, nonempty X and Y")
    if lam <= 0:
        raise InvalidInputError("ridge lambda must be positive")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    W = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ Yc)
    return W, my - mx @ W


def ridge_fit(X, patterns, lam: float = DEFAULT_RIDGE_LAMBDA, wavelet: str = "db2",
              eps: float = DEFAULT_EPS) -> RidgeModel:
    """Fit ridge from latent features to the coefficient encoding of each target pattern."""
    patterns = check_prob(np.asarray(patterns, dtype=float), "target pattern")
    Y = encode_target(patterns, lowpass_matrix(wavelet, patterns.shape[1]))
    W, b = ridge_solve(X, Y, lam)
    return RidgeModel(W, b, lam, wavelet, eps)


def knn_predict(query, train_X, train_patterns, K: int = DEFAULT_KNN_K):
    """Mean pattern of the K training rows most cosine-similar to each query row.

    Ties in similarity go to the lower training index. A zero-norm query
    gets the uniform pattern and is flagged. Returns (patterns, flags).
    """
    Q = np.atleast_2d(np.asarray(query, dtype=float))
    X = np.asarray(train_X, dtype=float)
    P = np.asarray(train_patterns, dtype=float)
    if len(X) == 0 or len(X) != len(P):
        raise InvalidInputError("KNN needs a nonempty training set with one pattern per row")
    if K < 1:
        raise InvalidInputError("K must be at least 1")
    K = min(K, len(X))
    xn = np.linalg.norm(X, axis=1)
    qn = np.linalg.norm(Q, axis=1)
    sim = (Q @ X.T) / np.where(xn > 0, xn, 1.0)[None, :] / np.where(qn > 0, qn, 1.0)[:, None]
    order = np.argsort(-sim, axis=1, kind="stable")[:, :K]
    out = P[order].mean(axis=1)
    out /= out.sum(axis=1, keepdims=True)
    flags = qn == 0
    out[flags] = 1.0 / P.shape[1]
    return out, flags


@dataclass
class KnnModel:
    """Stored training set for KNN; ``predict`` matches :func:`knn_predict`."""

    X: np.ndarray
    patterns: np.ndarray
    K: int = DEFAULT_KNN_K

    def predict(self, Q) -> np.ndarray:
        return knn_predict(Q, self.X, self.patterns, self.K)[0]

    def to_json(self, seed=None) -> dict:
        return {"method": "knn", "config": {"K": self.K}, "seed": seed,
                "params": {"X": {"shape": list(self.X.shape), "data": self.X.ravel().tolist()},
                           "patterns": {"shape": list(self.patterns.shape),
                                        "data": self.patterns.ravel().tolist()}}}

    @classmethod
    def from_json(cls, d: dict) -> "KnnModel":
        if d.get("method") != "knn":
            raise InvalidInputError(f"not a KNN checkpoint: method {d.get('method')!r}")
        p = d["params"]
        return cls(np.asarray(p["X"]["data"], dtype=float).reshape(p["X"]["shape"]),
                   np.asarray(p["patterns"]["data"], dtype=float).reshape(p["patterns"]["shape"]),
                   int(d["config"]["K"]))
