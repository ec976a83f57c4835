"""Central finite-difference check of the analytic ALCNN gradients on the tiny network."""
import numpy as np

from bikedemand.divergence import normalize
from bikedemand.model import ALCNN, ModelConfig, klmse_grad, klmse_loss

TINY = dict(latent_dim=3, k=8, scales=(1, 3), filters=2, hidden=4)


def tiny_problem(seed, direction="target||pred", batch=8):
    cfg = ModelConfig(**TINY, kl_direction=direction)
    rng = np.random.default_rng(seed)
    net = ALCNN(cfg, rng=rng)
    # move zero-initialized shifts off zero so every block has a generic gradient
    for name in net.params:
        if name.endswith(("b0", "beta1", "beta2", "out.b")):
            net.params[name] = rng.normal(0, 0.3, net.params[name].shape)
    regions = [rng.normal(size=(batch, w, w, 3)) for w in cfg.scales]
    center = regions[1][:, 1, 1, :].copy()
    target = normalize(rng.dirichlet(np.full(8, 0.3), batch), 1e-6)
    return net, regions, center, target


def max_relative_errors(seed, step=1e-5, direction="target||pred"):
    """Per-block relative error ||num - ana|| / max(||num||, ||ana||)."""
    net, regions, center, target = tiny_problem(seed, direction)

    def loss():
        pred, _, _ = net.forward(regions, center, True, np.random.default_rng(99))
        return klmse_loss(pred, target, direction)

    pred, _, cache = net.forward(regions, center, True, np.random.default_rng(99))
    _, dpred = klmse_grad(pred, target, direction)
    grads = net.backward(cache, dpred)
    out = {}
    for name, P in net.params.items():
        num = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + step
            a = loss()
            P[idx] = old - step
            b = loss()
            P[idx] = old
            num[idx] = (a - b) / (2 * step)
        denom = max(np.linalg.norm(num), np.linalg.norm(grads[name]), 1e-300)
        out[name] = float(np.linalg.norm(num - grads[name]) / denom)
    return out
