"""Attention-merged multi-scale local CNN with analytic gradients.

Each branch sees a ``w x w`` window of latent features around the target
cell: a valid convolution, then two fully connected layers with batch norm,
ReLU and dropout. Branch outputs are merged with softmax weights scored
bilinearly against the cell's own features. The merged vector is mapped to
``k/2`` wavelet approximation coefficients, reconstructed to ``k`` slots by
the fixed low-pass synthesis matrix, and turned into a distribution with
softplus and additive normalization.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .divergence import DEFAULT_EPS
from .dwt import lowpass_matrix
from .grid import InvalidInputError


@dataclass
class ModelConfig:
    latent_dim: int = 16
    k: int = 48
    scales: tuple[int, ...] = (1, 3, 5, 7, 9)
    filters: int = 32
    hidden: int = 64
    max_kernel: int = 5
    dropout: float = 0.1
    wavelet: str = "db2"
    eps: float = DEFAULT_EPS
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    kl_direction: str = "target||pred"

    def __post_init__(self):
        self.scales = tuple(int(w) for w in self.scales)
        if not self.scales or any(w < 1 or w % 2 == 0 for w in self.scales):
            raise InvalidInputError(f"scales must be positive odd integers, got {self.scales}")
        if not 0 <= self.dropout < 1:
            raise InvalidInputError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.k % 2:
            raise InvalidInputError(f"k must be even, got {self.k}")
        if self.kl_direction not in ("target||pred", "pred||target"):
            raise InvalidInputError(f"unknown KL direction {self.kl_direction!r}")

    def kernel(self, w: int) -> int:
        return min(self.max_kernel, w)

    def conv_out(self, w: int) -> int:
        return w - self.kernel(w) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d


# ---------------------------------------------------------------- local regions

@dataclass
class LocalRegion:
    tensor: np.ndarray  # (w, w, d')
    center_features: np.ndarray  # (d',)
    scale: int


def extract_local_region(F: np.ndarray, cell: tuple[int, int], w: int) -> LocalRegion:
    """``w x w`` window of the (n, m, d') latent tensor around 1-based ``cell``, zero-padded at borders."""
    if w < 1 or w % 2 == 0:
        raise InvalidInputError(f"window size must be odd, got {w}")
    n, m, d = F.shape
    i, j = cell[0] - 1, cell[1] - 1
    if not (0 <= i < n and 0 <= j < m):
        raise InvalidInputError(f"cell {cell} outside the {n}x{m} grid")
    r = w // 2
    out = np.zeros((w, w, d))
    i0, i1 = max(0, i - r), min(n, i + r + 1)
    j0, j1 = max(0, j - r), min(m, j + r + 1)
    out[i0 - (i - r):i1 - (i - r), j0 - (j - r):j1 - (j - r)] = F[i0:i1, j0:j1]
    return LocalRegion(out, F[i, j].copy(), w)


def all_regions(F: np.ndarray, w: int) -> np.ndarray:
    """Windows for every cell at once, shape (n*m, w, w, d') in row-major cell order."""
    n, m, d = F.shape
    r = w // 2
    padded = np.pad(F, ((r, r), (r, r), (0, 0)))
    win = sliding_window_view(padded, (w, w), axis=(0, 1))  # (n, m, d, w, w)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(n * m, w, w, d)


# ---------------------------------------------------------------- output decoding

def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def decode(u: np.ndarray, M: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Approximation coefficients (B, k/2) to probability vectors (B, k)."""
    s = softplus(u @ M) + eps
    return s / s.sum(axis=1, keepdims=True)


def encode_target(p: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Coefficients whose decoding approximates ``p``: project softplus^-1(k p) onto the low-pass band."""
    p = np.asarray(p, dtype=float)
    return softplus_inv(p.shape[-1] * p) @ M.T


# ---------------------------------------------------------------- loss

def _kl_rows(p, q):
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


def check_prob(p, name="vector"):
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p <= 0) or np.any(np.abs(p.sum(axis=-1) - 1) > 1e-6):
        raise InvalidInputError(f"{name} is not a strictly positive probability vector")
    return p


def klmse_loss(pred, target, direction: str = "target||pred") -> float:
    """Mean over rows of the squared KL divergence between target and prediction."""
    pred = check_prob(np.atleast_2d(pred), "prediction")
    target = check_prob(np.atleast_2d(target), "target")
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {target.shape}")
    kl = _kl_rows(target, pred) if direction == "target||pred" else _kl_rows(pred, target)
    return float(np.mean(kl ** 2))


def klmse_grad(pred, target, direction: str = "target||pred"):
    """(loss, d loss / d pred)."""
    B = pred.shape[0]
    if direction == "target||pred":
        kl = _kl_rows(target, pred)
        dkl = -target / pred
    else:
        kl = _kl_rows(pred, target)
        dkl = np.log(pred) - np.log(target) + 1.0
    loss = float(np.mean(kl ** 2))
    return loss, (2.0 * kl / B)[:, None] * dkl


# ---------------------------------------------------------------- network

@dataclass
class ForwardCache:
    train: bool
    branches: list = field(default_factory=list)
    center: np.ndarray | None = None
    proj: np.ndarray | None = None  # center @ W_att, (B, q)
    raw_scores: np.ndarray | None = None
    score_mask: np.ndarray | None = None
    alpha: np.ndarray | None = None
    Z2: np.ndarray | None = None  # (nb, B, q)
    h: np.ndarray | None = None
    x: np.ndarray | None = None  # reconstructed pre-softplus values (B, k)
    pred: np.ndarray | None = None
    s_sum: np.ndarray | None = None


def im2col(T: np.ndarray, kk: int) -> np.ndarray:
    """Valid-convolution patches of (B, w, w, d) regions: (B, o*o, kk*kk*d), rows (kr, kc, d)-ordered."""
    B, w, _, d = T.shape
    o = w - kk + 1
    win = sliding_window_view(T, (kk, kk), axis=(1, 2))  # (B, o, o, d, kk, kk)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B, o * o, kk * kk * d)


def _dropout_mask(rng, shape, p):
    if p <= 0:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)


class ALCNN:
    """Parameters, batch-norm running statistics and the forward/backward passes."""

    def __init__(self, config: ModelConfig, params: dict | None = None, state: dict | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.M = lowpass_matrix(config.wavelet, config.k)
        if params is None:
            params, state = self._init(rng if rng is not None else np.random.default_rng(0))
        self.params = params
        self.state = state if state is not None else self._init_state()
        self._check_shapes()

    # -- construction

    def _param_shapes(self) -> dict:
        c = self.config
        shapes = {}
        for b, w in enumerate(c.scales):
            kk, o = c.kernel(w), c.conv_out(w)
            shapes[f"b{b}.K"] = (kk, kk, c.latent_dim, c.filters)
            shapes[f"b{b}.b0"] = (c.filters,)
            shapes[f"b{b}.W1"] = (o * o * c.filters, c.hidden)
            shapes[f"b{b}.g1"] = (c.hidden,)
            shapes[f"b{b}.beta1"] = (c.hidden,)
            shapes[f"b{b}.W2"] = (c.hidden, c.hidden)
            shapes[f"b{b}.g2"] = (c.hidden,)
            shapes[f"b{b}.beta2"] = (c.hidden,)
        shapes["att.W"] = (c.latent_dim, c.hidden)
        shapes["out.W"] = (c.hidden, c.k // 2)
        shapes["out.b"] = (c.k // 2,)
        return shapes

    def _init(self, rng):
        params = {}
        for name, shape in self._param_shapes().items():
            kind = name.split(".")[1]
            if kind == "K":
                fan_in = shape[0] * shape[1] * shape[2]
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
            elif kind in ("W1", "W2"):
                params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), shape)
            elif name == "att.W":
                params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0] * shape[1]), shape)
            elif name == "out.W":
                params[name] = rng.normal(0.0, 0.1 / np.sqrt(shape[0]), shape)
            elif kind in ("g1", "g2"):
                params[name] = np.ones(shape)
            else:
                params[name] = np.zeros(shape)
        return params, self._init_state()

    def _init_state(self):
        state = {}
        for b in range(len(self.config.scales)):
            for layer in (1, 2):
                state[f"b{b}.mean{layer}"] = np.zeros(self.config.hidden)
                state[f"b{b}.var{layer}"] = np.ones(self.config.hidden)
        return state

    def _check_shapes(self):
        expected = self._param_shapes()
        if set(expected) != set(self.params):
            raise InvalidInputError(f"parameter set mismatch: {sorted(set(expected) ^ set(self.params))}")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise InvalidInputError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "ALCNN":
        return ALCNN(self.config, {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.state.items()})

    # -- forward

    def patches(self, regions: list[np.ndarray]) -> list[np.ndarray]:
        """im2col of each branch's regions: (B, o*o, kk*kk*d') per branch."""
        c = self.config
        if len(regions) != len(c.scales):
            raise InvalidInputError(f"expected {len(c.scales)} region tensors, got {len(regions)}")
        out = []
        for b, (w, T) in enumerate(zip(c.scales, regions)):
            B = T.shape[0]
            if T.shape != (B, w, w, c.latent_dim):
                raise InvalidInputError(f"region tensor {b} has shape {T.shape}, expected {(B, w, w, c.latent_dim)}")
            out.append(im2col(T, c.kernel(w)))
        return out

    def forward(self, regions: list[np.ndarray], center: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None, patches: list[np.ndarray] | None = None):
        """Return (prediction (B, k), attention (B, n_branches), cache).

        ``regions[b]`` has shape (B, w_b, w_b, d'); ``center`` is (B, d').
        Precomputed ``patches`` (see :meth:`patches`) replace ``regions``.
        Train mode uses batch statistics and dropout drawn from ``rng``.
        """
        c, P = self.config, self.params
        if patches is None:
            patches = self.patches(regions)
        center = np.asarray(center, dtype=float)
        B = center.shape[0]
        if center.shape != (B, c.latent_dim):
            raise InvalidInputError(f"center features have shape {center.shape}, expected ({B}, {c.latent_dim})")
        p_drop = c.dropout if train else 0.0
        if train and p_drop > 0 and rng is None:
            raise InvalidInputError("train mode with dropout needs an rng")
        cache = ForwardCache(train=train, center=center)
        Z2s = []
        for b, (w, pt) in enumerate(zip(c.scales, patches)):
            kk, o = c.kernel(w), c.conv_out(w)
            if pt.shape != (B, o * o, kk * kk * c.latent_dim):
                raise InvalidInputError(f"patch tensor {b} has shape {pt.shape}, expected {(B, o * o, kk * kk * c.latent_dim)}")
            pt = pt.reshape(B * o * o, -1)
            conv = pt @ P[f"b{b}.K"].reshape(-1, c.filters) + P[f"b{b}.b0"]
            Z0 = np.maximum(conv, 0.0).reshape(B, o * o * c.filters)
            br = {"patches": pt, "conv": conv, "Z0": Z0}
            Z = Z0
            for layer in (1, 2):
                # no bias before batch norm: the shift beta already plays that role
                W = P[f"b{b}.W{layer}"]
                g, beta = P[f"b{b}.g{layer}"], P[f"b{b}.beta{layer}"]
                a = Z @ W
                if train:
                    mu = a.mean(axis=0)
                    var = a.var(axis=0)
                    self._update_running(b, layer, mu, var, B)
                else:
                    mu, var = self.state[f"b{b}.mean{layer}"], self.state[f"b{b}.var{layer}"]
                inv_std = 1.0 / np.sqrt(var + c.bn_eps)
                xhat = (a - mu) * inv_std
                y = g * xhat + beta
                act = np.maximum(y, 0.0)
                mask = _dropout_mask(rng, act.shape, p_drop) if train else None
                out = act * mask if mask is not None else act
                br[f"in{layer}"] = Z
                br[f"xhat{layer}"] = xhat
                br[f"inv_std{layer}"] = inv_std
                br[f"y{layer}"] = y
                br[f"mask{layer}"] = mask
                Z = out
            cache.branches.append(br)
            Z2s.append(Z)
        Z2 = np.stack(Z2s)  # (nb, B, q)
        proj = center @ P["att.W"]  # (B, q)
        raw = np.einsum("bq,nbq->bn", proj, Z2)
        smask = _dropout_mask(rng, raw.shape, p_drop) if train else None
        scores = raw * smask if smask is not None else raw
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        alpha = e / e.sum(axis=1, keepdims=True)
        h = np.einsum("bn,nbq->bq", alpha, Z2)
        u = h @ P["out.W"] + P["out.b"]
        x = u @ self.M
        s = softplus(x) + c.eps
        s_sum = s.sum(axis=1, keepdims=True)
        pred = s / s_sum
        cache.proj, cache.raw_scores, cache.score_mask = proj, raw, smask
        cache.alpha, cache.Z2, cache.h, cache.x, cache.pred, cache.s_sum = alpha, Z2, h, x, pred, s_sum
        return pred, alpha, cache

    def _update_running(self, b, layer, mu, var, B):
        mom = self.config.bn_momentum
        unbiased = var * B / (B - 1) if B > 1 else var
        rm, rv = f"b{b}.mean{layer}", f"b{b}.var{layer}"
        self.state[rm] = (1 - mom) * self.state[rm] + mom * mu
        self.state[rv] = (1 - mom) * self.state[rv] + mom * unbiased

    # -- backward

    def backward(self, cache: ForwardCache, dpred: np.ndarray) -> dict:
        """Gradients of a scalar loss w.r.t. every parameter, given d loss / d prediction."""
        if not cache.train:
            raise InvalidInputError("backward needs a train-mode forward cache")
        c, P = self.config, self.params
        grads = {}
        pred = cache.pred
        ds = (dpred - np.sum(dpred * pred, axis=1, keepdims=True)) / cache.s_sum
        dx = ds * sigmoid(cache.x)
        du = dx @ self.M.T
        grads["out.W"] = cache.h.T @ du
        grads["out.b"] = du.sum(axis=0)
        dh = du @ P["out.W"].T  # (B, q)
        alpha, Z2 = cache.alpha, cache.Z2
        dZ2 = alpha.T[:, :, None] * dh[None, :, :]  # (nb, B, q)
        dalpha = np.einsum("bq,nbq->bn", dh, Z2)
        dscores = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
        draw = dscores * cache.score_mask if cache.score_mask is not None else dscores
        dZ2 += draw.T[:, :, None] * cache.proj[None, :, :]
        dproj = np.einsum("bn,nbq->bq", draw, Z2)
        grads["att.W"] = cache.center.T @ dproj
        for b, (w, br) in enumerate(zip(c.scales, cache.branches)):
            dZ = dZ2[b]
            for layer in (2, 1):
                mask = br[f"mask{layer}"]
                dact = dZ * mask if mask is not None else dZ
                dy = dact * (br[f"y{layer}"] > 0)
                xhat, inv_std = br[f"xhat{layer}"], br[f"inv_std{layer}"]
                grads[f"b{b}.beta{layer}"] = dy.sum(axis=0)
                grads[f"b{b}.g{layer}"] = np.sum(dy * xhat, axis=0)
                dxhat = dy * P[f"b{b}.g{layer}"]
                Bn = dxhat.shape[0]
                da = inv_std / Bn * (Bn * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
                grads[f"b{b}.W{layer}"] = br[f"in{layer}"].T @ da
                dZ = da @ P[f"b{b}.W{layer}"].T
            dconv = dZ.reshape(br["conv"].shape) * (br["conv"] > 0)
            grads[f"b{b}.K"] = (br["patches"].T @ dconv).reshape(P[f"b{b}.K"].shape)
            grads[f"b{b}.b0"] = dconv.sum(axis=0)
        return grads

    # -- convenience

    def loss_and_grads(self, regions, center, target, rng=None):
        pred, _, cache = self.forward(regions, center, train=True, rng=rng)
        loss, dpred = klmse_grad(pred, target, self.config.kl_direction)
        return loss, self.backward(cache, dpred)

    def predict(self, regions, center, patches=None):
        pred, alpha, _ = self.forward(regions, center, train=False, patches=patches)
        return pred, alpha

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))
