from dataclasses import dataclass

import numpy as np
import pytest

from spectralnet import ndtensor as nd
from spectralnet.hsidata import extract_patches, stratified_split
from spectralnet.model import ModelConfig, build_model
from spectralnet.ndtensor import Tensor
from spectralnet.synthetic import signature_cube
from spectralnet.training import (
    TrainConfig,
    TrainingDivergedError,
    TrainingHistory,
    as_network_input,
    evaluate,
    fit,
    predict,
)


def toy_patchset(seed=0, size=12, classes=3):
    """Cube whose band 0 equals the class id, so a center readout predicts perfectly."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, classes + 1, size=(size, size))
    data = np.concatenate([labels[..., None].astype(float), rng.normal(size=(size, size, 1))], axis=2)
    return extract_patches(data, labels, 4)


def toy_net(seed=0, dropout=(0.0, 0.0), classes=3):
    cfg = ModelConfig(4, 2, classes, stage_channels=(4,), dense_width=8, dropout_rates=dropout)
    return build_model(cfg, seed)


@dataclass
class CenterReadout:
    """Stub network: one-hot logits from the band-0 value at the patch center."""

    config: ModelConfig
    constant: int | None = None

    def eval(self):
        return self

    def __call__(self, x):
        k = self.config.class_count
        if self.constant is not None:
            pred = np.full(x.shape[0], self.constant)
        else:
            pred = np.rint(x[:, 0, 2, 2]).astype(int) - 1
        return Tensor(np.eye(k)[pred] * 5.0)


@pytest.mark.parametrize("seed", range(3))
def test_overfit_single_batch(seed):
    ps = toy_patchset()
    net = toy_net(seed)
    idx = np.arange(16)
    x, y = as_network_input(ps.batch(idx)), ps.labels[idx]
    # plain gradient steps; momentum may overshoot on a single repeated batch
    state = nd.OptimizerState(net.parameters(), 0.01, 0.0)
    losses = []
    for _ in range(50):
        net.zero_grad()
        loss = nd.softmax_cross_entropy(net(x), y)
        nd.backward(loss)
        nd.sgd_momentum_step(net.parameters(), state)
        losses.append(float(loss.data))
    assert all(b < a for a, b in zip(losses[:10], losses[1:11]))
    assert losses[-1] < losses[0]


def test_zero_learning_rate_is_null_update():
    ps = toy_patchset()
    net = toy_net(2)
    before = {k: p.data.copy() for k, p in net.params.items()}
    hist = fit(net, ps, TrainConfig(epochs=3, learning_rate=0.0, shuffle=False, batch_size=len(ps)))
    for k, p in net.params.items():
        np.testing.assert_array_equal(p.data, before[k])
    assert hist.loss[0] == hist.loss[1] == hist.loss[2]


def test_same_seed_identical_history():
    def run():
        ps = stratified_split(toy_patchset(3), 0.5, seed=0).train_set()
        return fit(toy_net(4, dropout=(0.4, 0.4)), ps, TrainConfig(epochs=3, seed=9, batch_size=8)).to_csv()

    assert run() == run()


def test_training_learns_toy_task():
    data, labels = signature_cube(size=16, bands=2, noise=0.2, seed=5)
    ps = stratified_split(extract_patches(data, labels, 4), 0.5, seed=1)
    net = build_model(ModelConfig(4, 2, 4, stage_channels=(4,), dense_width=8, dropout_rates=(0.0, 0.0)), 6)
    hist = fit(net, ps.train_set(), TrainConfig(epochs=15, batch_size=16, seed=2))
    assert hist.train_acc[-1] > hist.train_acc[0]
    cm, loss = evaluate(net, ps.test_set())
    assert cm.total == len(ps.test_set())
    assert np.trace(cm.counts) / cm.total > 0.8
    assert np.isfinite(loss)


def test_epoch_callback_and_history_csv():
    seen = []
    hist = fit(toy_net(7), toy_patchset(7), TrainConfig(epochs=2, batch_size=32), on_epoch=lambda *a: seen.append(a))
    assert [s[0] for s in seen] == [1, 2]
    text = hist.to_csv()
    assert text.splitlines()[0] == "epoch,loss,train_acc" and len(text.splitlines()) == 3
    assert TrainingHistory.from_csv(text) == hist


def test_divergence_reports_coordinates():
    net = toy_net(8)
    net.params["head.weight"].data[:] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        fit(net, toy_patchset(8), TrainConfig(epochs=2))
    assert (info.value.epoch, info.value.batch) == (1, 1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-0.1)


def test_evaluate_perfect_and_constant_predictors():
    ps = toy_patchset(9)
    cfg = ModelConfig(4, 2, 3, stage_channels=(4,))
    cm, _ = evaluate(CenterReadout(cfg), ps)
    np.testing.assert_array_equal(cm.counts, np.diag(np.bincount(ps.labels, minlength=3)))
    cm, _ = evaluate(CenterReadout(cfg, constant=0), ps)
    assert cm.counts[:, 1:].sum() == 0
    assert cm.total == len(ps)


def test_evaluate_tie_goes_to_lowest_index():
    @dataclass
    class Flat:
        config: ModelConfig

        def eval(self):
            return self

        def __call__(self, x):
            return Tensor(np.zeros((x.shape[0], self.config.class_count)))

    cm, loss = evaluate(Flat(ModelConfig(4, 2, 3, stage_channels=(4,))), toy_patchset(10))
    assert cm.counts[:, 0].sum() == cm.total
    assert loss == pytest.approx(np.log(3), rel=1e-12)


@pytest.mark.parametrize("workers", [2, 3, 7])
def test_sharded_evaluation_matches_single(workers):
    ps = toy_patchset(11)
    net = toy_net(12)
    fit(net, ps, TrainConfig(epochs=1, batch_size=32))
    cm1, loss1 = evaluate(net, ps, batch_size=10)
    cmk, lossk = evaluate(net, ps, batch_size=10, workers=workers)
    np.testing.assert_array_equal(cm1.counts, cmk.counts)
    assert lossk == pytest.approx(loss1, rel=1e-12)
    pred = predict(net, ps)
    np.testing.assert_array_equal(np.bincount(pred, minlength=3), cm1.counts.sum(axis=0))


def test_empty_sets_rejected():
    ps = toy_patchset(13)
    empty = ps.subset(np.zeros(len(ps), dtype=bool))
    with pytest.raises(ValueError):
        fit(toy_net(), empty, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        evaluate(toy_net(), empty)
