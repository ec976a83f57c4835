import json

import numpy as np
import pytest

from bikedemand.divergence import kl_divergence, normalize
from bikedemand.grid import InvalidInputError
from bikedemand.pipeline import mine_demands, training_targets
from bikedemand.synth import SyntheticCitySpec, counts_to_demand, generate_city, sample_counts
from bikedemand.train import (TrainConfig, build_instances, dumps_checkpoint, evaluate, infer_city,
                              latent_tensor, model_from_json, model_to_json, predict_instances,
                              split_instances, train)

SMALL = dict(filters=4, hidden=8, patience=5, max_epochs=30, batch_size=16)


def _toy(seed=0, n=6, m=6, d=3, k=8, scales=(1, 3)):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(n, m, d))
    # targets depend smoothly on the cell's own first feature
    phase = np.tanh(F[:, :, 0]).reshape(-1, 1)
    slots = np.arange(k)
    T = normalize(np.exp(np.cos(2 * np.pi * slots / k + phase)))
    return F, build_instances(F, scales, targets=T)


def test_latent_tensor_checks():
    with pytest.raises(InvalidInputError):
        latent_tensor(np.zeros((5, 2)), 2, 3)
    with pytest.raises(InvalidInputError):
        latent_tensor(np.full((6, 2), np.nan), 2, 3)


def test_build_instances_shapes():
    F, inst = _toy()
    assert len(inst) == 36
    assert inst.regions[1].shape == (36, 3, 3, 3)
    np.testing.assert_array_equal(inst.center[7], F[1, 1])
    sub = inst.subset([7, 3])
    assert sub.cells == [(2, 2), (1, 4)]
    with pytest.raises(InvalidInputError):
        build_instances(F, (1,), cells=[(1, 1)], targets=np.full((2, 8), 1 / 8))


def test_split_is_seeded_and_disjoint():
    a = split_instances(50, 0.2, np.random.default_rng(1))
    b = split_instances(50, 0.2, np.random.default_rng(1))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert len(a[1]) == 10 and not set(a[0]) & set(a[1])
    assert len(split_instances(1, 0.2, np.random.default_rng(0))[1]) == 0


def test_overfit_single_instance():
    _, inst = _toy()
    one = inst.subset([5])
    cfg = TrainConfig(scales=(1, 3), validation_fraction=0.0, learning_rate=0.01, dropout=0.0,
                      **{**SMALL, "max_epochs": 60, "patience": 60})
    res = train(one, cfg)
    assert res.log[-1]["train_klmse"] < res.log[0]["train_klmse"]
    assert res.best_val < res.log[0]["val_klmse"]


def test_same_seed_bit_identical():
    _, inst = _toy()
    cfg = TrainConfig(scales=(1, 3), **SMALL)
    a, b = train(inst, cfg, seed=3), train(inst, cfg, seed=3)
    for name in a.model.params:
        assert np.array_equal(a.model.params[name], b.model.params[name])
    strip = [{k: v for k, v in row.items() if k != "elapsed_ms"} for row in a.log]
    assert strip == [{k: v for k, v in row.items() if k != "elapsed_ms"} for row in b.log]
    c = train(inst, cfg, seed=4)
    assert not np.array_equal(a.model.params["out.W"], c.model.params["out.W"])


def test_best_epoch_model_returned():
    _, inst = _toy()
    res = train(inst, TrainConfig(scales=(1, 3), **SMALL))
    assert res.best_val == min(row["val_klmse"] for row in res.log)
    va = inst.subset([inst.cells.index(c) for c in res.val_cells])
    pred, _ = predict_instances(res.model, va)
    from bikedemand.model import klmse_loss
    assert klmse_loss(pred, va.target) == pytest.approx(res.best_val, rel=1e-12)
    assert len(res.log) <= res.best_epoch + SMALL["patience"]


def test_training_errors():
    F, inst = _toy()
    with pytest.raises(InvalidInputError):
        train(inst.subset([]), TrainConfig(scales=(1, 3)))
    with pytest.raises(InvalidInputError):
        train(inst, TrainConfig(scales=(1, 5), **SMALL))
    with pytest.raises(InvalidInputError):
        TrainConfig(validation_fraction=1.0)


def test_infer_matches_instance_forward_and_checkpoint():
    F, inst = _toy()
    res = train(inst, TrainConfig(scales=(1, 3), **SMALL))
    pred, alpha = infer_city(res.model, F)
    p2, a2 = res.model.predict(inst.regions, inst.center)
    assert np.array_equal(pred, p2) and np.array_equal(alpha, a2)
    assert np.all(pred > 0)
    np.testing.assert_allclose(pred.sum(axis=1), 1, atol=1e-12)
    text = dumps_checkpoint(model_to_json(res.model, 0))
    back = model_from_json(json.loads(text))
    p3, _ = infer_city(back, F)
    assert np.array_equal(pred, p3)
    assert dumps_checkpoint(model_to_json(back, 0)) == text
    with pytest.raises(InvalidInputError):
        infer_city(res.model, F[:, :, :2])
    with pytest.raises(InvalidInputError):
        model_from_json({"method": "lr"})


def test_evaluate_formulas():
    rng = np.random.default_rng(0)
    truth = {(1, c): normalize(rng.random(8)) for c in range(1, 6)}
    assert evaluate(dict(truth), truth).klmse == 0.0
    pred = dict(truth)
    pred[(1, 3)] = normalize(rng.random(8))
    x = kl_divergence(truth[(1, 3)], pred[(1, 3)])
    assert evaluate(pred, truth).klmse == pytest.approx(x * x / 5, rel=1e-12)
    rand = {c: normalize(rng.random(8)) for c in truth}
    brute = np.mean([kl_divergence(truth[c], rand[c]) ** 2 for c in truth])
    assert evaluate(rand, truth).klmse == pytest.approx(brute, rel=1e-12)
    rand[(9, 9)] = rand.pop((1, 1))
    r = evaluate(rand, truth)
    assert r.n_cells == 4 and r.skipped == 2
    with pytest.raises(InvalidInputError):
        evaluate({(7, 7): truth[(1, 2)]}, truth)


def test_prefers_wider_scale_when_signal_is_three_cells_away():
    rng = np.random.default_rng(1)
    n = m = 14
    F = rng.normal(size=(n, m, 2))
    pad = np.pad(F[:, :, 0], 3)
    ring = np.zeros((n, m))
    for di in range(-3, 4):
        for dj in range(-3, 4):
            if max(abs(di), abs(dj)) == 3:
                ring += pad[3 + di:3 + di + n, 3 + dj:3 + dj + m]
    phase = np.tanh(ring / 4).reshape(-1, 1)
    T = normalize(np.exp(1.5 * np.cos(2 * np.pi * np.arange(8) / 8 + 2 * phase)))
    inst = build_instances(F, (1, 7), targets=T)
    cfg = TrainConfig(scales=(1, 7), filters=4, hidden=8, patience=30, max_epochs=300, batch_size=32,
                      learning_rate=0.003)
    res = train(inst, cfg)
    _, alpha = infer_city(res.model, F)
    assert alpha[:, 1].mean() > alpha[:, 0].mean()


def test_validation_loss_near_oracle_floor():
    spec = SyntheticCitySpec(n=8, m=8, n_transit=3, n_business=2, n_residential=3, n_park=2)
    city = generate_city(spec, 5)
    counts = sample_counts(city.planted, spec.intensity, spec.days, seed=1)
    mined = training_targets(mine_demands(counts_to_demand(city, counts)))
    cells = list(mined)
    P = np.array([mined[c] for c in cells])
    truth = city.planted_map()
    floor = float(np.mean([kl_divergence(truth[c], mined[c]) ** 2 for c in cells]))
    rng = np.random.default_rng(0)
    F = latent_tensor(rng.normal(size=(64, 4)) + city.weights @ rng.normal(size=(5, 4)) * 3, 8, 8)
    res = train(build_instances(F, (1, 3), cells, P), TrainConfig(scales=(1, 3), **{**SMALL, "max_epochs": 200,
                                                                                   "patience": 30}))
    assert res.best_val - floor < 0.05
