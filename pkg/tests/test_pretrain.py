import numpy as np
import pytest

from ddnn_vad.exceptions import ConfigError, DataError, NumericalError, ShapeError
from ddnn_vad.network import LayerParams, init_layer, load_model
from ddnn_vad.pretrain import (RBM, PretrainConfig, PretrainState, _rng, cd1_pretrain_level,
                               cd1_update, iterate_minibatches, pretrain_clean_level,
                               pretrain_level, propagate_clean, propagate_noisy,
                               run_dbn_pretraining, run_pretraining, train_autoencoder,
                               train_rbm)

from oracles import scalar_layer, scalar_xent


def toy_pairs(n=600, d=20, seed=0, noise=0.15):
    """Low-rank clean patterns in [0, 1] and a noisy, clipped copy."""
    rng = np.random.default_rng(seed)
    basis = rng.random((3, d))
    codes = rng.random((n, 3))
    clean = np.clip(codes @ basis / 1.5, 0, 1)
    noisy = np.clip(clean + noise * rng.normal(size=clean.shape), 0, 1)
    return noisy, clean


def small_config(**kw):
    base = dict(layer_sizes=(8, 4, 3), learning_rate=0.1, max_epochs=5, batch_size=64, seed=0)
    base.update(kw)
    return PretrainConfig(**base)


# --- propagation -----------------------------------------------------------------------------

def test_propagate_upto_zero_is_identity():
    x = np.random.default_rng(1).random(273)
    state = PretrainState([init_layer(273, 54, np.random.default_rng(0))])
    np.testing.assert_array_equal(propagate_noisy(state, x, 0), x)
    np.testing.assert_array_equal(propagate_clean(state, x, 0), x)


def test_zero_weights_give_half():
    state = PretrainState([LayerParams(np.zeros((54, 273)), np.zeros(54))])
    out = propagate_noisy(state, np.random.default_rng(2).random(273), 1)
    np.testing.assert_array_equal(out, np.full(54, 0.5))


def test_depth2_composition_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    l1 = LayerParams(rng.normal(size=(6, 10)), rng.normal(size=6))
    l2 = LayerParams(rng.normal(size=(4, 6)), rng.normal(size=4))
    x = rng.random(10)
    ref = scalar_layer(l2.weights.tolist(), l2.bias.tolist(),
                       scalar_layer(l1.weights.tolist(), l1.bias.tolist(), x.tolist()))
    got = propagate_noisy(PretrainState([l1, l2]), x, 2)
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)
    got = propagate_clean(PretrainState([], [l1, l2]), x, 2)
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


def test_propagate_beyond_trained_levels():
    state = PretrainState([init_layer(5, 3, np.random.default_rng(0))])
    with pytest.raises(DataError):
        propagate_noisy(state, np.zeros(5), 2)
    with pytest.raises(DataError):
        propagate_clean(state, np.zeros(5), 1)


def test_propagate_clean_width_mismatch():
    state = PretrainState([], [init_layer(7, 3, np.random.default_rng(0))])
    with pytest.raises(ShapeError):
        propagate_clean(state, np.zeros(5), 1)


def test_zero_epoch_clean_path_is_seeded_init():
    noisy, clean = toy_pairs()
    cfg = small_config(max_epochs=0)
    a = pretrain_clean_level(PretrainState([init_layer(20, 8, np.random.default_rng(0))]),
                             clean, cfg)
    b = pretrain_clean_level(PretrainState([init_layer(20, 8, np.random.default_rng(0))]),
                             clean, cfg)
    assert a.clean_path[0] == b.clean_path[0]
    np.testing.assert_array_equal(propagate_clean(a, clean), propagate_clean(b, clean))


# --- minibatches -----------------------------------------------------------------------------------

def test_minibatches_keep_remainder():
    batches = list(iterate_minibatches(1030, 512, np.random.default_rng(0)))
    assert [len(b) for b in batches] == [512, 512, 6]
    assert sorted(np.concatenate(batches).tolist()) == list(range(1030))


# --- noisy level -------------------------------------------------------------------------------------

def test_zero_epochs_equals_seeded_init():
    noisy, clean = toy_pairs()
    cfg = small_config(max_epochs=0)
    state = pretrain_level(PretrainState(), noisy, clean, cfg)
    expected = init_layer(20, 8, _rng(cfg.seed, 1, 1))
    assert state.noisy_path[0] == expected
    assert state.noisy_losses[0].size == 0


def test_identity_corpus_training_helps():
    _, clean = toy_pairs()
    cfg = small_config(max_epochs=30)
    _, _, losses = train_autoencoder(clean, clean, 8, cfg, 1, 1)
    untrained_enc, untrained_dec, _ = train_autoencoder(clean, clean, 8,
                                                        small_config(max_epochs=0), 1, 1)
    h = 1 / (1 + np.exp(-(clean @ untrained_enc.weights.T + untrained_enc.bias)))
    z = 1 / (1 + np.exp(-(h @ untrained_dec.weights.T + untrained_dec.bias)))
    before = np.mean([scalar_xent(t, r) for t, r in zip(clean, z)])
    assert losses[-1] <= before


def test_denoising_reduces_loss_to_clean():
    noisy, clean = toy_pairs(n=1000, noise=0.25)
    cfg = small_config(max_epochs=60, learning_rate=0.5)
    enc, dec, _ = train_autoencoder(noisy, clean, 8, cfg, 1, 1)
    h = 1 / (1 + np.exp(-(noisy @ enc.weights.T + enc.bias)))
    z = 1 / (1 + np.exp(-(h @ dec.weights.T + dec.bias)))
    recon = np.mean([scalar_xent(t, r) for t, r in zip(clean, z)])
    raw = np.mean([scalar_xent(t, r) for t, r in zip(clean, noisy)])
    assert recon < raw


def test_empty_stream_rejected():
    with pytest.raises(DataError):
        pretrain_level(PretrainState(), np.zeros((0, 5)), np.zeros((0, 5)), small_config())


def test_nan_aborts():
    noisy, clean = toy_pairs(n=100)
    noisy[3, 4] = np.nan
    with pytest.raises(NumericalError):
        pretrain_level(PretrainState(), noisy, clean, small_config(max_epochs=1))


def test_level_requires_clean_levels():
    noisy, clean = toy_pairs(n=100)
    state = pretrain_level(PretrainState(), noisy, clean, small_config(max_epochs=1))
    with pytest.raises(DataError):
        pretrain_level(state, noisy, clean, small_config(max_epochs=1))


# --- clean level -------------------------------------------------------------------------------------

def test_constant_half_corpus_reconstructed():
    data = np.full((64, 20), 0.5)
    cfg = small_config(max_epochs=200, learning_rate=0.5)
    enc, dec, _ = train_autoencoder(data, data, 5, cfg, 2, 1)
    h = scalar_layer(enc.weights.tolist(), enc.bias.tolist(), [0.5] * 20)
    z = scalar_layer(dec.weights.tolist(), dec.bias.tolist(), h)
    assert np.max(np.abs(np.array(z) - 0.5)) <= 0.05


def test_clean_level_guard():
    _, clean = toy_pairs(n=100)
    with pytest.raises(ConfigError):
        pretrain_clean_level(PretrainState(), clean, small_config(layer_sizes=(8,)))


# --- full runs ------------------------------------------------------------------------------------------

def test_depth1_has_no_clean_training():
    noisy, clean = toy_pairs(n=200)
    state = run_pretraining(noisy, clean, small_config(layer_sizes=(8,), max_epochs=2))
    assert state.events == [("noisy", 1)]
    assert state.clean_path == []


def test_depth3_event_order_and_counts():
    noisy, clean = toy_pairs(n=200)
    state = run_pretraining(noisy, clean, small_config(max_epochs=2))
    assert state.events == [("noisy", 1), ("clean", 1), ("noisy", 2), ("clean", 2), ("noisy", 3)]
    assert len(state.clean_path) == 2
    assert [l.n_out for l in state.noisy_path] == [8, 4, 3]
    assert [l.n_out for l in state.clean_path] == [8, 4]


def test_lower_levels_frozen():
    noisy, clean = toy_pairs(n=200)
    cfg = small_config(max_epochs=3)
    s1 = pretrain_level(PretrainState(), noisy, clean, cfg)
    s2 = pretrain_level(pretrain_clean_level(s1, clean, cfg), noisy, clean, cfg)
    assert s2.noisy_path[0] == s1.noisy_path[0]
    assert s1.level == 1 and s2.level == 2


def test_pretraining_deterministic():
    noisy, clean = toy_pairs(n=300)
    cfg = small_config(max_epochs=3)
    a = run_pretraining(noisy, clean, cfg)
    b = run_pretraining(noisy, clean, cfg)
    assert a.noisy_path == b.noisy_path and a.clean_path == b.clean_path
    for la, lb in zip(a.noisy_losses, b.noisy_losses):
        assert la.tobytes() == lb.tobytes()
    c = run_pretraining(noisy, clean, small_config(max_epochs=3, seed=1))
    assert c.noisy_path != a.noisy_path


def test_cd1_clean_path_interchangeable():
    noisy, clean = toy_pairs(n=300)
    state = run_pretraining(noisy, clean, small_config(max_epochs=2, clean_method="cd1"))
    assert len(state.clean_path) == 2
    out = propagate_clean(state, clean)
    assert out.shape == (300, 4)
    assert np.all((out > 0) & (out < 1))


def test_checkpoints_written(tmp_path):
    noisy, clean = toy_pairs(n=100)
    run_pretraining(noisy, clean, small_config(max_epochs=1), checkpoint_dir=tmp_path)
    for level in (1, 2, 3):
        model = load_model(tmp_path / f"level{level}.ddnn")
        assert model.level == level and model.classifier is None
        assert model.depth == level


def test_unaligned_inputs():
    with pytest.raises(ShapeError):
        run_pretraining(np.zeros((10, 5)), np.zeros((9, 5)), small_config())


def test_config_validation():
    with pytest.raises(ConfigError):
        PretrainConfig(layer_sizes=(0,))
    with pytest.raises(ConfigError):
        PretrainConfig(clean_method="pca")
    assert PretrainConfig().depth == 3


# --- CD-1 ----------------------------------------------------------------------------------------------

def free_energy_oracle(rbm, v):
    import math
    total = -sum(b * x for b, x in zip(rbm.visible_bias, v))
    for j in range(len(rbm.hidden_bias)):
        act = rbm.hidden_bias[j] + sum(rbm.weights[j][k] * v[k] for k in range(len(v)))
        total -= math.log1p(math.exp(act))
    return total


def test_cd1_zero_learning_rate_unchanged():
    rng = np.random.default_rng(0)
    rbm = RBM(rng.normal(size=(3, 5)), rng.normal(size=3), rng.normal(size=5))
    new, _ = cd1_update(rbm, rng.random((10, 5)), 0.0, rng)
    assert new.weights.tobytes() == rbm.weights.tobytes()
    assert new.hidden_bias.tobytes() == rbm.hidden_bias.tobytes()
    assert new.visible_bias.tobytes() == rbm.visible_bias.tobytes()
    cfg = small_config(max_epochs=3)
    trained, _ = train_rbm(rng.random((50, 5)), 3, cfg, 9, learning_rate=0.0)
    init, _ = train_rbm(rng.random((50, 5)), 3, cfg, 9, epochs=0)
    assert trained.weights.tobytes() == init.weights.tobytes()


def test_cd1_free_energy_prefers_training_point():
    data = np.ones((32, 2))
    cfg = PretrainConfig(layer_sizes=(1,), learning_rate=0.1, max_epochs=100, batch_size=8)
    rbm, _ = train_rbm(data, 1, cfg, 1)
    f11 = free_energy_oracle(rbm, [1.0, 1.0])
    f00 = free_energy_oracle(rbm, [0.0, 0.0])
    assert f11 < f00
    assert rbm.free_energy([1.0, 1.0]) == pytest.approx(f11, abs=1e-12)


def test_cd1_reconstruction_improves():
    _, clean = toy_pairs(n=400)
    cfg = small_config(learning_rate=0.1)

    def recon_error(rbm):
        return float(np.mean(np.sum((clean - rbm.reconstruct(clean)) ** 2, axis=1)))
    before, _ = train_rbm(clean, 8, cfg, 7, epochs=0)
    after, errors = train_rbm(clean, 8, cfg, 7, epochs=50)
    assert recon_error(after) < recon_error(before)
    assert errors[-1] < errors[0]


def test_cd1_level_and_dbn_baseline():
    noisy, _ = toy_pairs(n=200)
    cfg = small_config(max_epochs=2)
    layer = cd1_pretrain_level(noisy, 8, cfg)
    assert (layer.n_in, layer.n_out) == (20, 8)
    state = run_dbn_pretraining(noisy, cfg)
    assert [l.n_out for l in state.noisy_path] == [8, 4, 3]
    assert state.clean_path == []
