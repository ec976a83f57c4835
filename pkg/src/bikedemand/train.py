"""Training, cross-city inference, evaluation and checkpoints for the attention CNN."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .divergence import DEFAULT_EPS
from .grid import InvalidInputError
from .model import ALCNN, ModelConfig, all_regions, check_prob, im2col, klmse_grad, klmse_loss


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    dropout: float = 0.1
    max_kernel: int = 5
    scales: tuple[int, ...] = (1, 3, 5, 7, 9)
    filters: int = 32
    hidden: int = 64
    patience: int = 50
    max_epochs: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rng_seed: int = 0
    validation_fraction: float = 0.2
    wavelet: str = "db2"
    eps: float = DEFAULT_EPS
    kl_direction: str = "target||pred"

    def __post_init__(self):
        self.scales = tuple(int(w) for w in self.scales)
        if not 0 <= self.validation_fraction < 1:
            raise InvalidInputError("validation_fraction must be in [0, 1)")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise InvalidInputError("batch_size, patience and max_epochs must be positive")

    def model_config(self, latent_dim: int, k: int) -> ModelConfig:
        return ModelConfig(latent_dim=latent_dim, k=k, scales=self.scales, filters=self.filters,
                           hidden=self.hidden, max_kernel=self.max_kernel, dropout=self.dropout,
                           wavelet=self.wavelet, eps=self.eps, kl_direction=self.kl_direction)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d


@dataclass
class InstanceSet:
    """Training instances: one local region per scale plus the target pattern, per cell.

    ``patches`` holds the im2col expansion of each scale's regions so it is
    computed once rather than every epoch.
    """

    cells: list[tuple[int, int]]
    regions: list[np.ndarray]  # per scale, (N, w, w, d')
    center: np.ndarray  # (N, d')
    target: np.ndarray | None  # (N, k)
    scales: tuple[int, ...]
    max_kernel: int = 5
    patches: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.patches:
            self.patches = [im2col(r, min(self.max_kernel, w)) for r, w in zip(self.regions, self.scales)]

    def __len__(self):
        return len(self.cells)

    def subset(self, idx) -> "InstanceSet":
        idx = np.asarray(idx, dtype=np.int64)
        return InstanceSet([self.cells[i] for i in idx], [r[idx] for r in self.regions],
                           self.center[idx], None if self.target is None else self.target[idx],
                           self.scales, self.max_kernel, [p[idx] for p in self.patches])


def latent_tensor(latent: np.ndarray, n: int, m: int) -> np.ndarray:
    """Reshape a (n*m, d') row-major latent matrix into the (n, m, d') tensor."""
    latent = np.asarray(latent, dtype=float)
    if latent.shape[0] != n * m:
        raise InvalidInputError(f"{latent.shape[0]} latent rows for a {n}x{m} grid")
    if not np.all(np.isfinite(latent)):
        raise InvalidInputError("latent features contain NaN or Inf")
    return latent.reshape(n, m, -1)


def build_instances(F: np.ndarray, scales, cells=None, targets=None, max_kernel: int = 5) -> InstanceSet:
    """Instances for the given 1-based cells (all cells when None) of latent tensor ``F``."""
    n, m, _ = F.shape
    if cells is None:
        cells = [(i, j) for i in range(1, n + 1) for j in range(1, m + 1)]
    cells = [tuple(int(v) for v in c) for c in cells]
    flat = np.array([(i - 1) * m + (j - 1) for i, j in cells], dtype=np.int64)
    regions = [all_regions(F, w)[flat] for w in scales]
    center = F.reshape(n * m, -1)[flat]
    if targets is not None:
        targets = check_prob(np.asarray(targets, dtype=float), "target pattern")
        if len(targets) != len(cells):
            raise InvalidInputError("one target pattern per cell required")
    return InstanceSet(cells, regions, center, targets, tuple(int(w) for w in scales), max_kernel)


class Adam:
    def __init__(self, params: dict, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def predict_instances(model: ALCNN, inst: InstanceSet, batch: int = 1024):
    preds, alphas = [], []
    for s in range(0, len(inst), batch):
        sub = slice(s, s + batch)
        p, a = model.predict(None, inst.center[sub], [pt[sub] for pt in inst.patches])
        preds.append(p)
        alphas.append(a)
    if not preds:
        return np.zeros((0, model.config.k)), np.zeros((0, len(model.config.scales)))
    return np.vstack(preds), np.vstack(alphas)


@dataclass
class TrainResult:
    model: ALCNN
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")
    train_cells: list = field(default_factory=list)
    val_cells: list = field(default_factory=list)


def split_instances(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = int(round(n * fraction))
    if fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    else:
        n_val = 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(inst: InstanceSet, cfg: TrainConfig, seed: int | None = None, log_every=None) -> TrainResult:
    """Mini-batch Adam on the KLMSE loss with patience-based early stopping.

    A seeded ``validation_fraction`` of instances is held out; with fraction
    0 the training instances double as the validation set. Returns the model
    from the epoch with the lowest validation loss.
    """
    if len(inst) == 0 or inst.target is None:
        raise InvalidInputError("no training instances")
    seed = cfg.rng_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    tr_idx, va_idx = split_instances(len(inst), cfg.validation_fraction, rng)
    tr = inst.subset(tr_idx)
    va = inst.subset(va_idx) if len(va_idx) else tr
    model = ALCNN(cfg.model_config(inst.center.shape[1], inst.target.shape[1]), rng=rng)
    if model.config.scales != inst.scales or model.config.max_kernel != inst.max_kernel:
        raise InvalidInputError(f"instances built for scales {inst.scales} and max kernel {inst.max_kernel}, "
                                f"config has {model.config.scales} and {model.config.max_kernel}")
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best = TrainResult(model.copy(), train_cells=tr.cells, val_cells=va.cells)
    wait = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(tr))
        total = 0.0
        for s in range(0, len(tr), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            pred, _, cache = model.forward(None, tr.center[b], train=True, rng=rng,
                                           patches=[pt[b] for pt in tr.patches])
            loss, dpred = klmse_grad(pred, tr.target[b], model.config.kl_direction)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            opt.step(model.params, model.backward(cache, dpred))
            total += loss * len(b)
        val_pred, _ = predict_instances(model, va)
        val = klmse_loss(val_pred, va.target, model.config.kl_direction)
        best.log.append({"epoch": epoch, "train_klmse": total / len(tr), "val_klmse": val,
                         "lr": cfg.learning_rate, "elapsed_ms": int((time.perf_counter() - t0) * 1000)})
        if log_every and epoch % log_every == 0:
            print(f"epoch {epoch}: train {total / len(tr):.5f} val {val:.5f}")
        if val < best.best_val:
            best.best_val, best.best_epoch = val, epoch
            best.model = model.copy()
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    return best


def write_log(log: list[dict], path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_klmse", "val_klmse", "lr", "elapsed_ms"])
        w.writeheader()
        for row in log:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def infer_city(model: ALCNN, F_target: np.ndarray):
    """Eval-mode predictions for every cell of a (n, m, d') latent tensor.

    Returns (patterns (n*m, k), attention (n*m, n_branches)) in row-major order.
    """
    if F_target.shape[2] != model.config.latent_dim:
        raise InvalidInputError(f"latent dim {F_target.shape[2]} does not match model's {model.config.latent_dim}")
    inst = build_instances(F_target, model.config.scales, max_kernel=model.config.max_kernel)
    return predict_instances(model, inst)


@dataclass
class EvalResult:
    klmse: float
    per_cell_kl: dict
    n_cells: int
    skipped: int


def evaluate(predicted: dict, truth: dict, direction: str = "target||pred") -> EvalResult:
    """KLMSE over cells present in both maps; cells in only one map are counted as skipped."""
    common = sorted(set(predicted) & set(truth))
    if not common:
        raise InvalidInputError("prediction and ground truth share no cells")
    P = check_prob(np.array([predicted[c] for c in common]), "prediction")
    T = check_prob(np.array([truth[c] for c in common]), "ground truth")
    if direction == "target||pred":
        kl = np.sum(T * (np.log(T) - np.log(P)), axis=1)
    else:
        kl = np.sum(P * (np.log(P) - np.log(T)), axis=1)
    skipped = len(set(predicted) ^ set(truth))
    return EvalResult(float(np.mean(kl ** 2)), dict(zip(common, kl.tolist())), len(common), skipped)


# ---------------------------------------------------------------- checkpoints

def _pack(arrays: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": np.asarray(v, dtype=float).ravel().tolist()}
            for k, v in sorted(arrays.items())}


def _unpack(d: dict) -> dict:
    return {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d.items()}


def model_to_json(model: ALCNN, seed: int | None = None, train_config: TrainConfig | None = None,
                  extra: dict | None = None) -> dict:
    out = {"method": "alcnn", "config": model.config.to_dict(), "seed": seed,
           "params": _pack(model.params), "state": _pack(model.state)}
    if train_config is not None:
        out["train_config"] = train_config.to_dict()
    if extra:
        out.update(extra)
    return out


def model_from_json(d: dict) -> ALCNN:
    if d.get("method") != "alcnn":
        raise InvalidInputError(f"not an ALCNN checkpoint: method {d.get('method')!r}")
    cfg = dict(d["config"])
    cfg["scales"] = tuple(cfg["scales"])
    return ALCNN(ModelConfig(**cfg), _unpack(d["params"]), _unpack(d["state"]))


def dumps_checkpoint(d: dict) -> str:
    return json.dumps(d, sort_keys=True)
