"""In-memory pipeline pieces shared by the CLI and the synthetic transfer experiment."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import DEFAULT_KNN_K, DEFAULT_RIDGE_LAMBDA, KnnModel, ridge_fit
from .copca import fit_joint
from .divergence import DEFAULT_EPS
from .dwt import DEFAULT_BETA, InsufficientDataError, mine_pattern
from .features import build_feature_matrix
from .grid import DemandSet
from .synth import SyntheticCitySpec, city_pair, counts_to_demand, sample_counts
from .train import TrainConfig, build_instances, evaluate, infer_city, latent_tensor, train


def mine_demands(demands: DemandSet, wavelet="db2", beta=DEFAULT_BETA, eps=DEFAULT_EPS,
                 min_total: int = 1) -> dict:
    """Mined pattern for every cell with at least two days of demand, keyed by 1-based cell."""
    out = {}
    for i, j in demands.grid.cell_labels():
        _, days = demands.cell_days(i, j, min_total)
        try:
            out[(i, j)] = mine_pattern(days, wavelet, beta, eps, (i, j))
        except InsufficientDataError:
            continue
    return out


def training_targets(mined: dict, accepted_only: bool = False) -> dict:
    return {c: p.pattern for c, p in sorted(mined.items()) if p.accepted or not accepted_only}


@dataclass
class TransferResult:
    seed: int
    klmse: dict  # method -> KLMSE on the target city
    fixed: dict = field(default_factory=dict)  # scale -> KLMSE of the single-scale model
    attention: np.ndarray | None = None
    checkpoint: dict | None = None
    elapsed_s: float = 0.0


def prepare_transfer(seed: int, spec: SyntheticCitySpec | None = None, latent_dim: int = 16,
                     wavelet="db2", eps=DEFAULT_EPS):
    """Source/target synthetic pair, joint latents and mined source training targets."""
    spec = spec or SyntheticCitySpec()
    src, tgt = city_pair(spec, seed)
    Fs = build_feature_matrix(src.data, src.grid)
    Ft = build_feature_matrix(tgt.data, tgt.grid)
    t, Ls, Lt = fit_joint(Fs, Ft, latent_dim)
    counts = sample_counts(src.planted, spec.intensity, spec.days, seed=10_000 + seed)
    mined = mine_demands(counts_to_demand(src, counts), wavelet, eps=eps)
    return src, tgt, t, latent_tensor(Ls, spec.n, spec.m), latent_tensor(Lt, spec.n, spec.m), mined


def _pattern_map(grid, patterns) -> dict:
    return {c: patterns[r] for r, c in enumerate(grid.cell_labels())}


def run_transfer(seed: int, spec: SyntheticCitySpec | None = None, cfg: TrainConfig | None = None,
                 latent_dim: int = 16, fixed_scales=(), ridge_lambda=DEFAULT_RIDGE_LAMBDA,
                 knn_k=DEFAULT_KNN_K) -> TransferResult:
    """Train on the source city, infer the target, and score ALCNN, LR and KNN against planted patterns."""
    from .train import model_to_json

    t0 = time.perf_counter()
    cfg = cfg or TrainConfig()
    cfg = replace(cfg, rng_seed=seed)
    src, tgt, _, Fs, Ft, mined = prepare_transfer(seed, spec, latent_dim, cfg.wavelet, cfg.eps)
    targets = training_targets(mined)
    cells = list(targets)
    P = np.array([targets[c] for c in cells])
    truth = tgt.planted_map()

    inst = build_instances(Fs, cfg.scales, cells, P, cfg.max_kernel)
    res = train(inst, cfg, seed)
    pred, alpha = infer_city(res.model, Ft)
    klmse = {"ALCNN": evaluate(_pattern_map(tgt.grid, pred), truth, cfg.kl_direction).klmse}

    flat = np.array([(i - 1) * src.grid.m + (j - 1) for i, j in cells])
    Xs = Fs.reshape(-1, latent_dim)[flat]
    Xt = Ft.reshape(-1, latent_dim)
    lr = ridge_fit(Xs, P, ridge_lambda, cfg.wavelet, cfg.eps)
    klmse["LR"] = evaluate(_pattern_map(tgt.grid, lr.predict(Xt)), truth, cfg.kl_direction).klmse
    knn = KnnModel(Xs, P, knn_k)
    klmse["KNN"] = evaluate(_pattern_map(tgt.grid, knn.predict(Xt)), truth, cfg.kl_direction).klmse

    fixed = {}
    for w in fixed_scales:
        c1 = replace(cfg, scales=(w,))
        r1 = train(build_instances(Fs, (w,), cells, P, cfg.max_kernel), c1, seed)
        p1, _ = infer_city(r1.model, Ft)
        fixed[w] = evaluate(_pattern_map(tgt.grid, p1), truth, cfg.kl_direction).klmse
    return TransferResult(seed, klmse, fixed, alpha, model_to_json(res.model, seed, cfg),
                          time.perf_counter() - t0)
